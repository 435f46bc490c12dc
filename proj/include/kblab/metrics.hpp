#pragma once

#include <algorithm>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace kblab {

namespace detail {

inline bool is_ascii_space(unsigned char c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
}

inline bool is_ascii_punct(unsigned char c) {
  return (c >= 33 && c <= 47) || (c >= 58 && c <= 64) || (c >= 91 && c <= 96) ||
         (c >= 123 && c <= 126);
}

}  // namespace detail

// Lowercase (ASCII), collapse whitespace, strip surrounding ASCII punctuation
// per token. Articles are kept: gold objects are entity names where they
// matter. Idempotent.
inline std::string normalize(std::string_view text) {
  std::string out;
  out.reserve(text.size());
  std::size_t i = 0;
  const std::size_t n = text.size();
  while (i < n) {
    while (i < n && detail::is_ascii_space(static_cast<unsigned char>(text[i]))) ++i;
    std::size_t j = i;
    while (j < n && !detail::is_ascii_space(static_cast<unsigned char>(text[j]))) ++j;
    std::size_t b = i, e = j;
    while (b < e && detail::is_ascii_punct(static_cast<unsigned char>(text[b]))) ++b;
    while (e > b && detail::is_ascii_punct(static_cast<unsigned char>(text[e - 1]))) --e;
    if (e > b) {
      if (!out.empty()) out.push_back(' ');
      for (std::size_t k = b; k < e; ++k) {
        char c = text[k];
        if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
        out.push_back(c);
      }
    }
    i = j;
  }
  return out;
}

inline std::vector<std::string> normalized_tokens(std::string_view text) {
  const std::string norm = normalize(text);
  std::vector<std::string> tokens;
  std::size_t start = 0;
  while (start < norm.size()) {
    std::size_t space = norm.find(' ', start);
    if (space == std::string::npos) space = norm.size();
    tokens.push_back(norm.substr(start, space - start));
    start = space + 1;
  }
  return tokens;
}

inline double exact_match(std::string_view pred, std::string_view gold) {
  return normalize(pred) == normalize(gold) ? 1.0 : 0.0;
}

// Token-level F1 with multiset overlap, the standard extractive-QA scoring.
inline double token_f1(std::string_view pred, std::string_view gold) {
  const auto p = normalized_tokens(pred);
  const auto g = normalized_tokens(gold);
  if (p.empty() && g.empty()) return 1.0;
  if (p.empty() || g.empty()) return 0.0;
  std::unordered_map<std::string, std::size_t> gold_counts;
  for (const auto& t : g) ++gold_counts[t];
  std::size_t overlap = 0;
  for (const auto& t : p) {
    auto it = gold_counts.find(t);
    if (it != gold_counts.end() && it->second > 0) {
      --it->second;
      ++overlap;
    }
  }
  if (overlap == 0) return 0.0;
  const double precision = static_cast<double>(overlap) / static_cast<double>(p.size());
  const double recall = static_cast<double>(overlap) / static_cast<double>(g.size());
  return 2.0 * precision * recall / (precision + recall);
}

inline double best_f1(std::string_view pred, const std::vector<std::string>& golds) {
  if (golds.empty()) throw std::invalid_argument("best_f1: empty gold list");
  double best = 0.0;
  for (const auto& g : golds) best = std::max(best, token_f1(pred, g));
  return best;
}

inline double best_em(std::string_view pred, const std::vector<std::string>& golds) {
  if (golds.empty()) throw std::invalid_argument("best_em: empty gold list");
  double best = 0.0;
  for (const auto& g : golds) best = std::max(best, exact_match(pred, g));
  return best;
}

}  // namespace kblab
