#pragma once

#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace kblab {

// One (subject, relation, object) fact. Fields are whitespace-trimmed and may
// not contain tab or newline, which the TSV interchange format reserves.
struct Triplet {
  std::string subject;
  std::string relation;
  std::string object;

  bool operator==(const Triplet&) const = default;
};

inline std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && (s[b] == ' ' || s[b] == '\t' || s[b] == '\r' || s[b] == '\n')) ++b;
  while (e > b && (s[e - 1] == ' ' || s[e - 1] == '\t' || s[e - 1] == '\r' || s[e - 1] == '\n')) --e;
  return std::string(s.substr(b, e - b));
}

inline bool has_reserved_char(std::string_view s) {
  return s.find('\t') != std::string_view::npos || s.find('\n') != std::string_view::npos ||
         s.find('\r') != std::string_view::npos;
}

// Empty result means the triplet is valid.
inline std::optional<std::string> triplet_problem(const Triplet& t) {
  if (t.subject.empty()) return "empty subject";
  if (t.relation.empty()) return "empty relation";
  if (t.object.empty()) return "empty object";
  if (has_reserved_char(t.subject)) return "reserved character in subject";
  if (has_reserved_char(t.relation)) return "reserved character in relation";
  if (has_reserved_char(t.object)) return "reserved character in object";
  return std::nullopt;
}

inline Triplet make_triplet(std::string_view subject, std::string_view relation,
                            std::string_view object) {
  Triplet t{trim(subject), trim(relation), trim(object)};
  if (auto problem = triplet_problem(t)) {
    throw std::invalid_argument("invalid triplet: " + *problem);
  }
  return t;
}

// Tab-free fields make the tab-joined key unambiguous.
inline std::string key_of(std::string_view subject, std::string_view relation) {
  std::string k;
  k.reserve(subject.size() + relation.size() + 1);
  k.append(subject);
  k.push_back('\t');
  k.append(relation);
  return k;
}

inline std::string key_of(const Triplet& t) { return key_of(t.subject, t.relation); }

inline std::string full_key_of(const Triplet& t) {
  std::string k = key_of(t);
  k.push_back('\t');
  k.append(t.object);
  return k;
}

inline std::string to_tsv_line(const Triplet& t) {
  return t.subject + "\t" + t.relation + "\t" + t.object;
}

}  // namespace kblab
