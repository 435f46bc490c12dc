#pragma once

#include <fstream>
#include <map>
#include <ostream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "kblab/triplet.hpp"

namespace kblab {

// The training-time prompt. The expected model output is the object text.
inline std::string format_input(const Triplet& t) {
  return "Subject: " + t.subject + ". Relation: " + t.relation + ". Object:";
}

inline std::string format_input(std::string_view subject, std::string_view relation) {
  return format_input(Triplet{std::string(subject), std::string(relation), "_"});
}

class UnsupportedRelation : public std::runtime_error {
 public:
  explicit UnsupportedRelation(const std::string& relation)
      : std::runtime_error("no question template for relation '" + relation + "'"),
        relation_(relation) {}
  const std::string& relation() const { return relation_; }

 private:
  std::string relation_;
};

// Maps canonical relation names onto a KB's local relation names, so rule
// and template files written against the built-in vocabulary can drive
// synthetic KBs.
class AliasMap {
 public:
  AliasMap() = default;

  void add(std::string canonical, std::string local) {
    map_[std::move(canonical)] = std::move(local);
  }

  bool empty() const { return map_.empty(); }

  const std::string& resolve(const std::string& canonical) const {
    auto it = map_.find(canonical);
    if (it == map_.end()) {
      throw std::runtime_error("alias map has no entry for relation '" + canonical + "'");
    }
    return it->second;
  }

  const std::map<std::string, std::string>& entries() const { return map_; }

  static AliasMap load_tsv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path);
    AliasMap m;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (trim(line).empty()) continue;
      const std::size_t tab = line.find('\t');
      if (tab == std::string::npos) {
        throw std::runtime_error(path + ":" + std::to_string(line_no) + ": expected canonical<TAB>local");
      }
      m.add(trim(line.substr(0, tab)), trim(line.substr(tab + 1)));
    }
    return m;
  }

 private:
  std::map<std::string, std::string> map_;
};

// Relation -> question text with a $subject$ placeholder; the answer is the
// object. Ships with a built-in table and round-trips through TSV so the set
// stays editable data.
class TemplateTable {
 public:
  TemplateTable() = default;

  void add(std::string relation, std::string question) {
    table_[std::move(relation)] = std::move(question);
  }

  bool has(const std::string& relation) const { return table_.count(relation) != 0; }
  std::size_t size() const { return table_.size(); }
  const std::map<std::string, std::string>& entries() const { return table_; }

  std::string format_question(const Triplet& t) const {
    auto it = table_.find(t.relation);
    if (it == table_.end()) throw UnsupportedRelation(t.relation);
    std::string out = it->second;
    const std::string placeholder = "$subject$";
    const std::size_t pos = out.find(placeholder);
    if (pos == std::string::npos) {
      throw std::runtime_error("template for '" + t.relation + "' lacks $subject$ placeholder");
    }
    out.replace(pos, placeholder.size(), t.subject);
    return out;
  }

  // Re-key templates onto a KB's local relation names. Canonical relations
  // absent from the alias map are dropped; the result speaks the KB's names
  // only.
  TemplateTable remapped(const AliasMap& aliases) const {
    TemplateTable out;
    for (const auto& [canonical, local] : aliases.entries()) {
      auto it = table_.find(canonical);
      if (it != table_.end()) out.add(local, it->second);
    }
    return out;
  }

  static TemplateTable builtin() {
    TemplateTable t;
    t.add("sibling", "the sibling of $subject$ is");
    t.add("shares border with", "$subject$ shares border with");
    t.add("child", "$subject$ has child");
    t.add("capital of", "$subject$ is capital of");
    t.add("has part", "$subject$ has part");
    t.add("contains", "$subject$ contains");
    t.add("father", "the father of $subject$ is");
    t.add("mother", "the mother of $subject$ is");
    t.add("capital", "the capital of $subject$ is");
    t.add("part of", "$subject$ is part of");
    t.add("country", "the country $subject$ belongs to is");
    t.add("place of birth", "the place of birth of $subject$ is");
    t.add("place of burial", "the place of burial of $subject$ is");
    t.add("place of publication", "the place of publication of $subject$ is");
    t.add("place of death", "the place of death of $subject$ is");
    t.add("author", "the author of $subject$ is");
    t.add("languages spoken, written or signed",
          "the languages spoken, written or signed by $subject$ is");
    t.add("country of birth", "the country of birth of $subject$ is");
    t.add("country of burial", "the country of burial of $subject$ is");
    t.add("country of publication", "the country of publication of $subject$ is");
    t.add("country of death", "the country of death of $subject$ is");
    t.add("language of work or name", "the language of $subject$ is");
    t.add("grandfather", "the grandfather of $subject$ is");
    t.add("grandmother", "the grandmother of $subject$ is");
    return t;
  }

  static TemplateTable load_tsv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path);
    TemplateTable t;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (trim(line).empty()) continue;
      const std::size_t tab = line.find('\t');
      if (tab == std::string::npos) {
        throw std::runtime_error(path + ":" + std::to_string(line_no) +
                                 ": expected relation<TAB>question");
      }
      t.add(trim(line.substr(0, tab)), trim(line.substr(tab + 1)));
    }
    return t;
  }

  void save_tsv(std::ostream& os) const {
    for (const auto& [relation, question] : table_) os << relation << '\t' << question << '\n';
  }

  void save_tsv(const std::string& path) const {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot open " + path + " for writing");
    save_tsv(os);
  }

 private:
  std::map<std::string, std::string> table_;
};

}  // namespace kblab
