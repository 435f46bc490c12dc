#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <stdexcept>
#include <string>
#include <vector>

#include "kblab/rng.hpp"
#include "kblab/triplet.hpp"

namespace kblab {

// Desk-scale stand-in for a real dump: entity and relation picks follow a
// Zipf law so occurrence statistics show the usual heavy tail.
struct SynthSpec {
  std::size_t n_entities = 1000;
  std::size_t n_relations = 50;
  std::size_t n_triplets = 10000;
  double zipf_exponent = 1.1;
  std::uint64_t seed = 0;

  void validate() const {
    if (n_entities < 2) throw std::invalid_argument("SynthSpec: need at least 2 entities");
    if (n_relations < 1) throw std::invalid_argument("SynthSpec: need at least 1 relation");
    if (n_triplets < 1) throw std::invalid_argument("SynthSpec: need at least 1 triplet");
    if (!(zipf_exponent > 0.0)) throw std::invalid_argument("SynthSpec: zipf exponent must be positive");
  }
};

// Zipf over ranks 1..n (index 0 is the most frequent item), sampled by
// inverting a cumulative table with one uniform draw.
class ZipfSampler {
 public:
  ZipfSampler(std::size_t n, double exponent) {
    if (n == 0) throw std::invalid_argument("ZipfSampler: empty range");
    cdf_.resize(n);
    double total = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
      total += std::pow(static_cast<double>(k + 1), -exponent);
      cdf_[k] = total;
    }
    for (double& c : cdf_) c /= total;
    cdf_.back() = 1.0;
  }

  std::size_t draw(Rng& rng) const {
    const double u = rng.uniform01();
    std::size_t lo = 0, hi = cdf_.size() - 1;
    while (lo < hi) {
      const std::size_t mid = (lo + hi) / 2;
      if (cdf_[mid] > u) {
        hi = mid;
      } else {
        lo = mid + 1;
      }
    }
    return lo;
  }

 private:
  std::vector<double> cdf_;
};

namespace detail {

inline std::string zero_padded(char prefix, std::size_t value, std::size_t width) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%c%0*zu", prefix, static_cast<int>(width), value);
  return buf;
}

inline std::size_t name_width(std::size_t n, std::size_t min_width) {
  std::size_t width = 1, v = n > 0 ? n - 1 : 0;
  while (v >= 10) {
    v /= 10;
    ++width;
  }
  return width < min_width ? min_width : width;
}

}  // namespace detail

// Draw order per triplet is subject, relation, then object (object redrawn
// until it differs from the subject), which pins the output for a given
// seed. Duplicate (subject, relation) keys are expected; dedup is the KB
// builder's job.
inline std::vector<Triplet> gen_synthetic(const SynthSpec& spec) {
  spec.validate();
  const std::size_t ew = detail::name_width(spec.n_entities, 4);
  const std::size_t rw = detail::name_width(spec.n_relations, 2);

  std::vector<std::string> entities(spec.n_entities);
  for (std::size_t i = 0; i < spec.n_entities; ++i) entities[i] = detail::zero_padded('e', i, ew);
  std::vector<std::string> relations(spec.n_relations);
  for (std::size_t i = 0; i < spec.n_relations; ++i) relations[i] = detail::zero_padded('r', i, rw);

  ZipfSampler entity_dist(spec.n_entities, spec.zipf_exponent);
  ZipfSampler relation_dist(spec.n_relations, spec.zipf_exponent);
  Rng rng(spec.seed);

  std::vector<Triplet> out;
  out.reserve(spec.n_triplets);
  for (std::size_t i = 0; i < spec.n_triplets; ++i) {
    const std::size_t s = entity_dist.draw(rng);
    const std::size_t r = relation_dist.draw(rng);
    std::size_t o = entity_dist.draw(rng);
    while (o == s) o = entity_dist.draw(rng);
    out.push_back(Triplet{entities[s], relations[r], entities[o]});
  }
  return out;
}

}  // namespace kblab
