#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <ostream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "kblab/rng.hpp"
#include "kblab/triplet.hpp"

namespace kblab {

struct Dataset {
  std::string name;
  std::vector<Triplet> triplets;
};

struct BridgeJoin {
  std::string a, b, c;
  bool operator==(const BridgeJoin&) const = default;
};

// Deduplicated triplet store: at most one triplet per (subject, relation)
// key, with membership and join indexes kept consistent with the triplet
// list. Immutable after build; concurrent reads are safe.
class KnowledgeBase {
 public:
  KnowledgeBase() = default;

  // Deduplicates by (subject, relation). When a key has several candidate
  // objects, one is chosen uniformly at random with the seeded RNG; keys are
  // processed in first-occurrence order and a draw is consumed only for keys
  // with two or more candidates. The retained triplet sits at the position
  // where its key first appeared.
  static KnowledgeBase build(const std::vector<Triplet>& raw, std::uint64_t seed) {
    for (std::size_t i = 0; i < raw.size(); ++i) {
      if (auto problem = triplet_problem(raw[i])) {
        throw std::invalid_argument("build_kb: triplet " + std::to_string(i + 1) + ": " + *problem);
      }
    }
    std::unordered_map<std::string, std::size_t> first_slot;
    std::vector<std::vector<std::string>> candidates;  // objects per key, input order
    std::vector<const Triplet*> representative;        // first triplet per key
    first_slot.reserve(raw.size());
    for (const Triplet& t : raw) {
      auto [it, inserted] = first_slot.emplace(key_of(t), candidates.size());
      if (inserted) {
        candidates.emplace_back();
        representative.push_back(&t);
      }
      candidates[it->second].push_back(t.object);
    }

    Rng rng(seed);
    KnowledgeBase kb;
    kb.triplets_.reserve(candidates.size());
    for (std::size_t k = 0; k < candidates.size(); ++k) {
      const auto& objs = candidates[k];
      const std::size_t pick = objs.size() > 1 ? static_cast<std::size_t>(rng.below(objs.size())) : 0;
      kb.triplets_.push_back(
          Triplet{representative[k]->subject, representative[k]->relation, objs[pick]});
    }
    kb.rebuild_indexes();
    return kb;
  }

  std::size_t size() const { return triplets_.size(); }
  bool empty() const { return triplets_.empty(); }
  const Triplet& triplet(std::size_t i) const { return triplets_.at(i); }
  const std::vector<Triplet>& triplets() const { return triplets_; }

  bool contains_key(std::string_view subject, std::string_view relation) const {
    return key_index_.count(key_of(subject, relation)) != 0;
  }

  // The unique triplet under (subject, relation), or nullptr.
  const Triplet* find(std::string_view subject, std::string_view relation) const {
    auto it = key_index_.find(key_of(subject, relation));
    return it == key_index_.end() ? nullptr : &triplets_[it->second];
  }

  bool contains_triplet(const Triplet& t) const { return triplet_set_.count(full_key_of(t)) != 0; }

  const std::vector<std::size_t>* positions_with_object(std::string_view object) const {
    auto it = object_index_.find(std::string(object));
    return it == object_index_.end() ? nullptr : &it->second;
  }

  // All (A, B, C) with (A, r1, B) and (B, r2, C) stored, in triplet order of
  // the (A, r1, B) leg. Key dedup makes the continuation unique per bridge.
  std::vector<BridgeJoin> join_on_bridge(std::string_view r1, std::string_view r2) const {
    std::vector<BridgeJoin> out;
    for (const Triplet& t : triplets_) {
      if (t.relation != r1) continue;
      if (const Triplet* next = find(t.object, r2)) {
        out.push_back(BridgeJoin{t.subject, t.object, next->object});
      }
    }
    return out;
  }

  // Index consistency check: rebuild from the triplet list and compare.
  bool indexes_consistent() const {
    KnowledgeBase fresh;
    fresh.triplets_ = triplets_;
    fresh.rebuild_indexes();
    return fresh.key_index_ == key_index_ && fresh.object_index_ == object_index_ &&
           fresh.triplet_set_ == triplet_set_;
  }

 private:
  void rebuild_indexes() {
    key_index_.clear();
    object_index_.clear();
    triplet_set_.clear();
    key_index_.reserve(triplets_.size());
    triplet_set_.reserve(triplets_.size());
    for (std::size_t i = 0; i < triplets_.size(); ++i) {
      const Triplet& t = triplets_[i];
      auto [it, inserted] = key_index_.emplace(key_of(t), i);
      if (!inserted) {
        throw std::logic_error("KnowledgeBase: duplicate key " + key_of(t));
      }
      object_index_[t.object].push_back(i);
      triplet_set_.insert(full_key_of(t));
    }
  }

  std::vector<Triplet> triplets_;
  std::unordered_map<std::string, std::size_t> key_index_;
  std::unordered_map<std::string, std::vector<std::size_t>> object_index_;
  std::unordered_set<std::string> triplet_set_;
};

// Entity counts sum subject and object appearances; relation counts are per
// triplet. Ordered maps keep downstream ranking and export deterministic.
struct OccurrenceIndex {
  std::map<std::string, std::size_t> entity_counts;
  std::map<std::string, std::size_t> relation_counts;
};

inline OccurrenceIndex occurrence_counts(const KnowledgeBase& kb) {
  OccurrenceIndex idx;
  for (const Triplet& t : kb.triplets()) {
    ++idx.entity_counts[t.subject];
    ++idx.entity_counts[t.object];
    ++idx.relation_counts[t.relation];
  }
  return idx;
}

// TSV export: name<TAB>count, count descending then name ascending.
inline void write_occurrence_tsv(std::ostream& os, const std::map<std::string, std::size_t>& counts) {
  std::vector<std::pair<std::string, std::size_t>> rows(counts.begin(), counts.end());
  std::sort(rows.begin(), rows.end(), [](const auto& x, const auto& y) {
    if (x.second != y.second) return x.second > y.second;
    return x.first < y.first;
  });
  for (const auto& [name, count] : rows) {
    os << name << '\t' << count << '\n';
  }
}

inline void write_occurrence_tsv(const std::string& path,
                                 const std::map<std::string, std::size_t>& counts) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open " + path + " for writing");
  write_occurrence_tsv(os, counts);
}

enum class StratumAxis { Entity, Relation };

// Occurrence-percentile stratum. tail=true ranks counts ascending (the rare
// end); tail=false ranks descending (the popular end).
struct StratumSpec {
  StratumAxis axis = StratumAxis::Entity;
  bool tail = false;
  double percentile = 0.05;  // conventional defaults: 0.15 tail, 0.05 popular
  std::size_t sample_size = 1000;

  static StratumSpec popular(StratumAxis axis, std::size_t sample_size) {
    return StratumSpec{axis, false, 0.05, sample_size};
  }
  static StratumSpec long_tail(StratumAxis axis, std::size_t sample_size) {
    return StratumSpec{axis, true, 0.15, sample_size};
  }

  std::string name() const {
    std::string n = tail ? "tail" : "pop";
    n += axis == StratumAxis::Entity ? "_ent" : "_rel";
    return n;
  }

  void validate() const {
    if (!(percentile > 0.0 && percentile <= 1.0)) {
      throw std::invalid_argument("StratumSpec: percentile must be in (0,1]");
    }
  }
};

struct StratifyResult {
  Dataset dataset;
  std::size_t available = 0;               // candidates before sampling
  std::vector<std::string> qualifying;     // names that define the stratum
};

// ceil(p * n) with a guard against FP noise on exact products (0.05 * 20
// must give 1, not 2).
inline std::size_t percentile_cut(double percentile, std::size_t n) {
  const double x = percentile * static_cast<double>(n);
  const double r = std::nearbyint(x);
  if (std::abs(x - r) < 1e-9) return static_cast<std::size_t>(r);
  return static_cast<std::size_t>(std::ceil(x));
}

// Rank on the chosen axis (count ascending for tail, descending for popular,
// name as tie-break), cut at ceil(percentile * items), gather every triplet
// touching the qualifying names, then sample uniformly without replacement.
inline StratifyResult stratify(const KnowledgeBase& kb, const OccurrenceIndex& index,
                               const StratumSpec& spec, std::uint64_t seed) {
  spec.validate();
  const auto& counts =
      spec.axis == StratumAxis::Entity ? index.entity_counts : index.relation_counts;

  std::vector<std::pair<std::string, std::size_t>> ranked(counts.begin(), counts.end());
  std::sort(ranked.begin(), ranked.end(), [&](const auto& x, const auto& y) {
    if (x.second != y.second) return spec.tail ? x.second < y.second : x.second > y.second;
    return x.first < y.first;
  });

  StratifyResult result;
  result.dataset.name = spec.name();
  const std::size_t cut = percentile_cut(spec.percentile, ranked.size());
  std::unordered_set<std::string> qualifying;
  for (std::size_t i = 0; i < cut && i < ranked.size(); ++i) {
    result.qualifying.push_back(ranked[i].first);
    qualifying.insert(ranked[i].first);
  }

  std::vector<std::size_t> pool;
  for (std::size_t i = 0; i < kb.size(); ++i) {
    const Triplet& t = kb.triplet(i);
    const bool hit = spec.axis == StratumAxis::Entity
                         ? (qualifying.count(t.subject) || qualifying.count(t.object))
                         : qualifying.count(t.relation) != 0;
    if (hit) pool.push_back(i);
  }
  result.available = pool.size();

  Rng rng(seed);
  const std::size_t k = std::min(spec.sample_size, pool.size());
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.below(pool.size() - i));
    std::swap(pool[i], pool[j]);
    result.dataset.triplets.push_back(kb.triplet(pool[i]));
  }
  return result;
}

}  // namespace kblab
