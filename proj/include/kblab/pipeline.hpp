#pragma once

#include <numeric>
#include <string>
#include <vector>

#include "kblab/formatting.hpp"
#include "kblab/knowledge_base.hpp"
#include "kblab/model.hpp"
#include "kblab/rng.hpp"

namespace kblab {

// Every string the tokenizer must know: formatted prompts, objects, and
// optionally the question-template words (with the placeholder removed).
inline std::vector<std::string> vocab_corpus(const std::vector<Triplet>& triplets,
                                             const TemplateTable* templates = nullptr) {
  std::vector<std::string> corpus;
  corpus.reserve(triplets.size() * 2 + 32);
  for (const auto& t : triplets) {
    corpus.push_back(format_input(t));
    corpus.push_back(t.object);
  }
  if (templates) {
    for (const auto& [rel, text] : templates->entries()) {
      std::string stripped = text;
      const auto pos = stripped.find("$subject$");
      if (pos != std::string::npos) stripped.erase(pos, std::string("$subject$").size());
      corpus.push_back(stripped);
    }
  }
  return corpus;
}

inline std::vector<EncodedSample> encode_triplets(const std::vector<Triplet>& triplets,
                                                  const Vocab& vocab, int max_seq_len) {
  std::vector<EncodedSample> samples;
  samples.reserve(triplets.size());
  for (std::size_t i = 0; i < triplets.size(); ++i) {
    samples.push_back(
        make_sample(vocab, format_input(triplets[i]), triplets[i].object, i, max_seq_len));
  }
  return samples;
}

// Uniform sample of k triplets without replacement (all of them if k >= n).
inline Dataset sample_triplets(const std::vector<Triplet>& triplets, std::size_t k,
                               std::uint64_t seed, const std::string& name = "eval") {
  Rng rng(seed);
  std::vector<std::size_t> idx(triplets.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  Dataset ds;
  ds.name = name;
  const std::size_t take = std::min(k, triplets.size());
  for (std::size_t i = 0; i < take; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.below(idx.size() - i));
    std::swap(idx[i], idx[j]);
    ds.triplets.push_back(triplets[idx[i]]);
  }
  return ds;
}

}  // namespace kblab
