#pragma once

#include <algorithm>
#include <cctype>
#include <set>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace kblab {

// Whitespace word tokenizer over a closed vocabulary. Specials occupy ids
// 0..4; real tokens follow in sorted order so the mapping is canonical for a
// given corpus regardless of how it was assembled.
class Vocab {
 public:
  static constexpr int kPad = 0;
  static constexpr int kBos = 1;
  static constexpr int kEos = 2;
  static constexpr int kUnk = 3;
  static constexpr int kSep = 4;
  static constexpr int kNumSpecials = 5;

  Vocab() = default;

  static std::vector<std::string> split_words(std::string_view text) {
    std::vector<std::string> words;
    std::size_t i = 0;
    const std::size_t n = text.size();
    while (i < n) {
      while (i < n && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
      std::size_t j = i;
      while (j < n && !std::isspace(static_cast<unsigned char>(text[j]))) ++j;
      if (j > i) words.emplace_back(text.substr(i, j - i));
      i = j;
    }
    return words;
  }

  static Vocab build(const std::vector<std::string>& texts) {
    std::set<std::string> unique;
    for (const auto& text : texts) {
      for (auto& w : split_words(text)) unique.insert(std::move(w));
    }
    return from_tokens(std::vector<std::string>(unique.begin(), unique.end()));
  }

  // Rebuild from the non-special token list, e.g. when loading a checkpoint.
  // The list must be exactly what tokens() returned.
  static Vocab from_tokens(const std::vector<std::string>& words) {
    Vocab v;
    v.id_to_token_ = {"<pad>", "<bos>", "<eos>", "<unk>", "<sep>"};
    for (const auto& w : words) {
      if (w.empty()) throw std::invalid_argument("Vocab: empty token");
      auto [it, inserted] = v.token_to_id_.emplace(w, static_cast<int>(v.id_to_token_.size()));
      if (!inserted) throw std::invalid_argument("Vocab: duplicate token '" + w + "'");
      v.id_to_token_.push_back(w);
    }
    return v;
  }

  int size() const { return static_cast<int>(id_to_token_.size()); }

  int id(std::string_view token) const {
    auto it = token_to_id_.find(std::string(token));
    return it == token_to_id_.end() ? kUnk : it->second;
  }

  const std::string& token(int id) const { return id_to_token_.at(static_cast<std::size_t>(id)); }

  std::vector<int> encode(std::string_view text) const {
    std::vector<int> ids;
    for (const auto& w : split_words(text)) ids.push_back(id(w));
    return ids;
  }

  // Joins with single spaces, specials dropped.
  std::string decode(const std::vector<int>& ids) const {
    std::string out;
    for (int id : ids) {
      if (id < kNumSpecials) continue;
      if (id >= size()) throw std::out_of_range("Vocab::decode: id out of range");
      if (!out.empty()) out.push_back(' ');
      out += id_to_token_[static_cast<std::size_t>(id)];
    }
    return out;
  }

  // Non-special tokens in id order (for serialization).
  std::vector<std::string> tokens() const {
    return std::vector<std::string>(id_to_token_.begin() + kNumSpecials, id_to_token_.end());
  }

 private:
  std::vector<std::string> id_to_token_;
  std::unordered_map<std::string, int> token_to_id_;
};

}  // namespace kblab
