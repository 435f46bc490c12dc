#pragma once

#include <fstream>
#include <map>
#include <ostream>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "kblab/evaluate.hpp"
#include "kblab/formatting.hpp"
#include "kblab/ingest.hpp"
#include "kblab/knowledge_base.hpp"
#include "kblab/rng.hpp"

namespace kblab {

// r holds between (A, B) exactly when r_inv holds between (B, A).
// Self-inverse rules (r == r_inv) are allowed.
struct InverseRule {
  std::string r;
  std::string r_inv;

  std::string id() const { return r + "->" + r_inv; }

  InverseRule remapped(const AliasMap& aliases) const {
    return InverseRule{aliases.resolve(r), aliases.resolve(r_inv)};
  }
};

// (A, r1, B) and (B, r2, C) together imply (A, r3, C).
struct CompositionRule {
  std::string r1;
  std::string r2;
  std::string r3;

  std::string id() const { return r1 + "^" + r2 + "=>" + r3; }

  CompositionRule remapped(const AliasMap& aliases) const {
    return CompositionRule{aliases.resolve(r1), aliases.resolve(r2), aliases.resolve(r3)};
  }
};

inline std::vector<InverseRule> builtin_inverse_rules() {
  return {
      {"sibling", "sibling"},
      {"shares border with", "shares border with"},
      {"father", "child"},
      {"mother", "child"},
      {"capital", "capital of"},
      {"part of", "has part"},
      {"country", "contains"},
  };
}

inline std::vector<CompositionRule> builtin_composition_rules() {
  return {
      {"place of birth", "country", "country of birth"},
      {"place of burial", "country", "country of burial"},
      {"place of publication", "country", "country of publication"},
      {"place of death", "country", "country of death"},
      {"performer", "languages spoken, written or signed", "language of work or name"},
      {"author", "languages spoken, written or signed", "language of work or name"},
      {"father", "father", "grandfather"},
      {"mother", "mother", "grandmother"},
  };
}

enum class ProbeKind { InverseForward, InverseQuery, CompConditions, CompConclusion, MissingFact };

inline const char* probe_kind_name(ProbeKind k) {
  switch (k) {
    case ProbeKind::InverseForward: return "inverse_forward";
    case ProbeKind::InverseQuery: return "inverse_query";
    case ProbeKind::CompConditions: return "comp_conditions";
    case ProbeKind::CompConclusion: return "comp_conclusion";
    case ProbeKind::MissingFact: return "missing_fact";
  }
  return "?";
}

inline ProbeKind parse_probe_kind(const std::string& s) {
  for (ProbeKind k : {ProbeKind::InverseForward, ProbeKind::InverseQuery,
                      ProbeKind::CompConditions, ProbeKind::CompConclusion,
                      ProbeKind::MissingFact}) {
    if (s == probe_kind_name(k)) return k;
  }
  throw std::invalid_argument("unknown probe kind '" + s + "'");
}

// One query: ask the model for the object of (subject, relation), score
// against the gold candidates. Provenance lists the source triplets the item
// was derived from (the forward twin for inverse queries, the two conditions
// for conclusions).
struct ProbeItem {
  ProbeKind kind = ProbeKind::MissingFact;
  std::string rule_id;
  std::string subject;
  std::string relation;
  std::vector<std::string> golds;
  std::vector<Triplet> provenance;

  Triplet query_triplet() const { return Triplet{subject, relation, golds.at(0)}; }
};

struct ProbeSet {
  ProbeKind kind = ProbeKind::MissingFact;
  std::vector<ProbeItem> items;
};

// Per-rule candidate pool before sampling or cross-rule dedup: every stored
// (A, r, B) whose inverse (B, r_inv, A) is absent.
inline std::vector<std::size_t> inverse_pool(const KnowledgeBase& kb, const InverseRule& rule) {
  std::vector<std::size_t> pool;
  for (std::size_t i = 0; i < kb.size(); ++i) {
    const Triplet& t = kb.triplet(i);
    if (t.relation != rule.r) continue;
    if (kb.contains_triplet(Triplet{t.object, rule.r_inv, t.subject})) continue;
    pool.push_back(i);
  }
  return pool;
}

struct InverseProbes {
  ProbeSet forward{ProbeKind::InverseForward, {}};
  ProbeSet inverse{ProbeKind::InverseQuery, {}};
  std::map<std::string, std::size_t> available;  // post-dedup pool size per rule
};

namespace detail {

inline std::vector<std::size_t> sample_indices(std::vector<std::size_t> pool, std::size_t k,
                                               Rng& rng) {
  k = std::min(k, pool.size());
  std::vector<std::size_t> out;
  out.reserve(k);
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.below(pool.size() - i));
    std::swap(pool[i], pool[j]);
    out.push_back(pool[i]);
  }
  return out;
}

}  // namespace detail

// Paired forward/inverse sets: per rule, sample from the inverse_pool and
// emit the stored fact as a forward query and its flip as the inverse query.
// Exact query triplets are deduplicated globally across rules (a pair is
// dropped whole when either side collides).
inline InverseProbes gen_inverse(const KnowledgeBase& kb, const std::vector<InverseRule>& rules,
                                 std::size_t per_rule, std::uint64_t seed) {
  if (per_rule < 1) throw std::invalid_argument("gen_inverse: per_rule must be >= 1");
  InverseProbes out;
  Rng rng(seed);
  std::set<std::string> seen_forward, seen_inverse;
  for (const InverseRule& rule : rules) {
    std::vector<std::size_t> pool;
    for (std::size_t i : inverse_pool(kb, rule)) {
      const Triplet& t = kb.triplet(i);
      const Triplet flipped{t.object, rule.r_inv, t.subject};
      if (seen_forward.count(full_key_of(t)) || seen_inverse.count(full_key_of(flipped))) continue;
      pool.push_back(i);
    }
    out.available[rule.id()] = pool.size();
    for (std::size_t i : detail::sample_indices(std::move(pool), per_rule, rng)) {
      const Triplet& t = kb.triplet(i);
      const Triplet flipped{t.object, rule.r_inv, t.subject};
      seen_forward.insert(full_key_of(t));
      seen_inverse.insert(full_key_of(flipped));
      out.forward.items.push_back(
          ProbeItem{ProbeKind::InverseForward, rule.id(), t.subject, t.relation, {t.object}, {t}});
      out.inverse.items.push_back(ProbeItem{ProbeKind::InverseQuery, rule.id(), flipped.subject,
                                            flipped.relation, {flipped.object}, {t}});
    }
  }
  return out;
}

// Per-rule candidate pool before sampling or dedup: bridge joins whose
// conclusion (A, r3, C) is absent and whose endpoints differ.
inline std::vector<BridgeJoin> composition_pool(const KnowledgeBase& kb,
                                                const CompositionRule& rule) {
  std::vector<BridgeJoin> pool;
  for (const BridgeJoin& j : kb.join_on_bridge(rule.r1, rule.r2)) {
    if (j.a == j.c) continue;
    if (kb.contains_triplet(Triplet{j.a, rule.r3, j.c})) continue;
    pool.push_back(j);
  }
  return pool;
}

struct CompositionProbes {
  ProbeSet conditions{ProbeKind::CompConditions, {}};
  ProbeSet conclusions{ProbeKind::CompConclusion, {}};
  std::map<std::string, std::size_t> available;
};

// Conclusions query (A, r3) for C; conditions query both stored legs. When
// several bridges support one (A, C) conclusion, one conclusion item carries
// every condition pair in its provenance. Condition and conclusion query
// triplets are deduplicated globally.
inline CompositionProbes gen_composition(const KnowledgeBase& kb,
                                         const std::vector<CompositionRule>& rules,
                                         std::size_t per_rule, std::uint64_t seed) {
  if (per_rule < 1) throw std::invalid_argument("gen_composition: per_rule must be >= 1");
  CompositionProbes out;
  Rng rng(seed);
  std::set<std::string> seen_conclusions, seen_conditions;
  for (const CompositionRule& rule : rules) {
    // group bridges by (A, C) in first-occurrence order
    std::vector<std::pair<std::string, std::vector<std::string>>> grouped;  // "A\tC" -> bridges
    std::map<std::string, std::size_t> slot;
    for (const BridgeJoin& j : composition_pool(kb, rule)) {
      const std::string key = j.a + "\t" + j.c;
      auto [it, inserted] = slot.emplace(key, grouped.size());
      if (inserted) grouped.push_back({key, {}});
      grouped[it->second].second.push_back(j.b);
    }

    std::vector<std::size_t> pool;
    for (std::size_t g = 0; g < grouped.size(); ++g) {
      const std::size_t tab = grouped[g].first.find('\t');
      const Triplet conclusion{grouped[g].first.substr(0, tab), rule.r3,
                               grouped[g].first.substr(tab + 1)};
      if (seen_conclusions.count(full_key_of(conclusion))) continue;
      pool.push_back(g);
    }
    out.available[rule.id()] = pool.size();

    std::vector<std::size_t> chosen = detail::sample_indices(std::move(pool), per_rule, rng);
    std::sort(chosen.begin(), chosen.end());  // emit in pool order
    for (std::size_t g : chosen) {
      const std::size_t tab = grouped[g].first.find('\t');
      const std::string a = grouped[g].first.substr(0, tab);
      const std::string c = grouped[g].first.substr(tab + 1);

      ProbeItem conclusion{ProbeKind::CompConclusion, rule.id(), a, rule.r3, {c}, {}};
      for (const std::string& b : grouped[g].second) {
        const Triplet leg1{a, rule.r1, b};
        const Triplet leg2{b, rule.r2, c};
        conclusion.provenance.push_back(leg1);
        conclusion.provenance.push_back(leg2);
        for (const Triplet& leg : {leg1, leg2}) {
          if (!seen_conditions.insert(full_key_of(leg)).second) continue;
          out.conditions.items.push_back(ProbeItem{ProbeKind::CompConditions, rule.id(),
                                                   leg.subject, leg.relation, {leg.object},
                                                   {leg}});
        }
      }
      seen_conclusions.insert(full_key_of(Triplet{a, rule.r3, c}));
      out.conclusions.items.push_back(std::move(conclusion));
    }
  }
  return out;
}

// -------- probe and rule file IO --------
// Probe TSV columns: kind, rule_id, subject, relation, golds joined with
// '|', provenance triplets as s|r|o joined with ';'. '|' and ';' are
// reserved characters in probe files.

inline std::string join_golds(const std::vector<std::string>& golds) {
  std::string out;
  for (std::size_t i = 0; i < golds.size(); ++i) {
    if (i) out += '|';
    out += golds[i];
  }
  return out;
}

inline void write_probeset_tsv(std::ostream& os, const ProbeSet& set) {
  for (const ProbeItem& item : set.items) {
    os << probe_kind_name(item.kind) << '\t' << item.rule_id << '\t' << item.subject << '\t'
       << item.relation << '\t' << join_golds(item.golds) << '\t';
    for (std::size_t i = 0; i < item.provenance.size(); ++i) {
      if (i) os << ';';
      const Triplet& t = item.provenance[i];
      os << t.subject << '|' << t.relation << '|' << t.object;
    }
    os << '\n';
  }
}

inline void write_probeset_tsv(const std::string& path, const ProbeSet& set) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open " + path + " for writing");
  write_probeset_tsv(os, set);
}

inline std::vector<std::string> split_on(const std::string& s, char sep) {
  std::vector<std::string> parts;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = s.find(sep, start);
    if (pos == std::string::npos) {
      parts.push_back(s.substr(start));
      return parts;
    }
    parts.push_back(s.substr(start, pos - start));
    start = pos + 1;
  }
}

inline ProbeSet read_probeset_tsv(std::istream& in) {
  ProbeSet set;
  std::string line;
  std::size_t line_no = 0;
  bool first = true;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty()) continue;
    const auto fields = split_tabs(line);
    if (fields.size() != 6) {
      throw std::runtime_error("probe TSV line " + std::to_string(line_no) + ": expected 6 fields, got " +
                               std::to_string(fields.size()));
    }
    ProbeItem item;
    item.kind = parse_probe_kind(fields[0]);
    item.rule_id = fields[1];
    item.subject = fields[2];
    item.relation = fields[3];
    for (auto& g : split_on(fields[4], '|')) {
      if (!g.empty()) item.golds.push_back(g);
    }
    if (item.golds.empty()) {
      throw std::runtime_error("probe TSV line " + std::to_string(line_no) + ": empty gold list");
    }
    if (!fields[5].empty()) {
      for (const auto& enc : split_on(fields[5], ';')) {
        const auto parts = split_on(enc, '|');
        if (parts.size() != 3) {
          throw std::runtime_error("probe TSV line " + std::to_string(line_no) +
                                   ": malformed provenance '" + enc + "'");
        }
        item.provenance.push_back(Triplet{parts[0], parts[1], parts[2]});
      }
    }
    if (first) {
      set.kind = item.kind;
      first = false;
    }
    set.items.push_back(std::move(item));
  }
  return set;
}

inline ProbeSet read_probeset_tsv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  return read_probeset_tsv(in);
}

struct MissingFactLoad {
  ProbeSet set{ProbeKind::MissingFact, {}};
  std::vector<ParseIssue> issues;
};

// Missing-fact TSV: subject<TAB>relation<TAB>gold1|gold2|... Malformed lines
// and lines with an empty gold list are skipped with a diagnostic.
inline MissingFactLoad load_missing_facts(std::istream& in) {
  MissingFactLoad out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty()) continue;
    const auto fields = split_tabs(line);
    if (fields.size() != 3) {
      out.issues.push_back({line_no, "field count " + std::to_string(fields.size())});
      continue;
    }
    ProbeItem item;
    item.kind = ProbeKind::MissingFact;
    item.rule_id = "missing";
    item.subject = trim(fields[0]);
    item.relation = trim(fields[1]);
    if (item.subject.empty() || item.relation.empty()) {
      out.issues.push_back({line_no, "empty field"});
      continue;
    }
    for (auto& g : split_on(fields[2], '|')) {
      const std::string gold = trim(g);
      if (!gold.empty()) item.golds.push_back(gold);
    }
    if (item.golds.empty()) {
      out.issues.push_back({line_no, "empty gold list"});
      continue;
    }
    out.set.items.push_back(std::move(item));
  }
  return out;
}

inline MissingFactLoad load_missing_facts(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  return load_missing_facts(in);
}

inline std::vector<InverseRule> load_inverse_rules(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::vector<InverseRule> rules;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty()) continue;
    const auto fields = split_tabs(line);
    if (fields.size() != 2 || trim(fields[0]).empty() || trim(fields[1]).empty()) {
      throw std::runtime_error(path + ":" + std::to_string(line_no) + ": expected r<TAB>r_inv");
    }
    rules.push_back(InverseRule{trim(fields[0]), trim(fields[1])});
  }
  return rules;
}

inline void save_inverse_rules(const std::string& path, const std::vector<InverseRule>& rules) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open " + path + " for writing");
  for (const auto& r : rules) os << r.r << '\t' << r.r_inv << '\n';
}

inline std::vector<CompositionRule> load_composition_rules(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::vector<CompositionRule> rules;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty()) continue;
    const auto fields = split_tabs(line);
    if (fields.size() != 3 || trim(fields[0]).empty() || trim(fields[1]).empty() ||
        trim(fields[2]).empty()) {
      throw std::runtime_error(path + ":" + std::to_string(line_no) + ": expected r1<TAB>r2<TAB>r3");
    }
    rules.push_back(CompositionRule{trim(fields[0]), trim(fields[1]), trim(fields[2])});
  }
  return rules;
}

inline void save_composition_rules(const std::string& path,
                                   const std::vector<CompositionRule>& rules) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open " + path + " for writing");
  for (const auto& r : rules) os << r.r1 << '\t' << r.r2 << '\t' << r.r3 << '\n';
}

// Fixed-form or question-format scoring of a probe set with best-of-many
// golds and a per-rule breakdown in the report's strata.
inline EvalReport eval_probeset(const Parameters& params, const ModelConfig& cfg,
                                const Vocab& vocab, const ProbeSet& set, PromptMode mode,
                                int max_new, const TemplateTable* templates = nullptr) {
  std::vector<EvalItem> items;
  items.reserve(set.items.size());
  for (const ProbeItem& probe : set.items) {
    EvalItem item;
    const Triplet q{probe.subject, probe.relation, probe.golds.at(0)};
    if (mode == PromptMode::Question) {
      if (!templates) throw std::invalid_argument("question mode needs a template table");
      item.prompt = templates->format_question(q);
    } else {
      item.prompt = format_input(q);
    }
    item.golds = probe.golds;
    item.group = probe.rule_id;
    items.push_back(std::move(item));
  }
  return evaluate_items(params, cfg, vocab, items, probe_kind_name(set.kind), max_new);
}

}  // namespace kblab
