#pragma once

#include <fstream>
#include <functional>
#include <istream>
#include <optional>
#include <ostream>
#include <regex>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "kblab/triplet.hpp"

namespace kblab {

struct ParseIssue {
  std::size_t line = 0;
  std::string reason;
};

struct ParseStats {
  std::size_t kept = 0;
  std::size_t skipped = 0;
};

inline std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> fields;
  std::size_t start = 0;
  while (true) {
    const std::size_t tab = line.find('\t', start);
    if (tab == std::string::npos) {
      fields.push_back(line.substr(start));
      break;
    }
    fields.push_back(line.substr(start, tab - start));
    start = tab + 1;
  }
  return fields;
}

// Streaming TSV parse: subject<TAB>relation<TAB>object per line. Malformed
// lines (wrong field count, empty field) are logged with their line number
// and skipped; dumps are dirty and the clean majority is what matters.
inline ParseStats parse_stream_lines(std::istream& in,
                                     const std::function<void(Triplet, std::size_t)>& sink,
                                     std::vector<ParseIssue>* issues = nullptr) {
  ParseStats stats;
  std::string line;
  std::size_t line_no = 0;
  auto log = [&](const std::string& reason) {
    ++stats.skipped;
    if (issues) issues->push_back(ParseIssue{line_no, reason});
  };
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty()) {
      log("empty line");
      continue;
    }
    const auto fields = split_tabs(line);
    if (fields.size() != 3) {
      log("field count " + std::to_string(fields.size()));
      continue;
    }
    Triplet t{trim(fields[0]), trim(fields[1]), trim(fields[2])};
    if (auto problem = triplet_problem(t)) {
      log(*problem);
      continue;
    }
    ++stats.kept;
    sink(std::move(t), line_no);
  }
  if (in.bad()) throw std::runtime_error("parse_stream: read failure at line " + std::to_string(line_no));
  return stats;
}

inline ParseStats parse_stream(std::istream& in, const std::function<void(Triplet)>& sink,
                               std::vector<ParseIssue>* issues = nullptr) {
  return parse_stream_lines(in, [&sink](Triplet t, std::size_t) { sink(std::move(t)); }, issues);
}

struct ParsedTriplets {
  std::vector<Triplet> triplets;
  std::vector<ParseIssue> issues;
  ParseStats stats;
};

inline ParsedTriplets read_triplets_tsv(std::istream& in) {
  ParsedTriplets out;
  out.stats = parse_stream(in, [&](Triplet t) { out.triplets.push_back(std::move(t)); }, &out.issues);
  return out;
}

inline ParsedTriplets read_triplets_tsv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  return read_triplets_tsv(in);
}

inline void write_triplets_tsv(std::ostream& os, const std::vector<Triplet>& triplets) {
  for (const Triplet& t : triplets) os << to_tsv_line(t) << '\n';
}

inline void write_triplets_tsv(const std::string& path, const std::vector<Triplet>& triplets) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open " + path + " for writing");
  write_triplets_tsv(os, triplets);
}

// Surface-form filters standing in for datatype-based cleanup: URLs,
// degree-notation or decimal coordinate pairs, image filenames, and an
// optional subject allow-list.
struct FilterRules {
  bool drop_url_objects = true;
  bool drop_coordinate_objects = true;
  bool drop_image_objects = true;
  std::optional<std::set<std::string>> subject_allowlist;

  void validate() const {
    if (subject_allowlist && subject_allowlist->empty()) {
      throw std::invalid_argument("FilterRules: subject allow-list must be non-empty when set");
    }
  }
};

enum class FilterReason { Kept, Url, Coordinate, Image, Subject };

inline const char* filter_reason_name(FilterReason r) {
  switch (r) {
    case FilterReason::Kept: return "kept";
    case FilterReason::Url: return "url";
    case FilterReason::Coordinate: return "coordinate";
    case FilterReason::Image: return "image";
    case FilterReason::Subject: return "subject";
  }
  return "?";
}

namespace detail {

inline bool ends_with_ci(const std::string& s, const std::string& suffix) {
  if (s.size() < suffix.size()) return false;
  for (std::size_t i = 0; i < suffix.size(); ++i) {
    char a = s[s.size() - suffix.size() + i];
    char b = suffix[i];
    if (a >= 'A' && a <= 'Z') a = static_cast<char>(a - 'A' + 'a');
    if (a != b) return false;
  }
  return true;
}

inline bool looks_like_coordinate(const std::string& s) {
  // 48.15°N, 11.57°E  (degree sign is two bytes in UTF-8)
  static const std::regex degree_pair(
      R"(^\s*[-+]?[0-9]+(\.[0-9]+)?°[A-Za-z]\s*,\s*[-+]?[0-9]+(\.[0-9]+)?°[A-Za-z]\s*$)");
  // 48.15, 11.57
  static const std::regex decimal_pair(
      R"(^\s*[-+]?[0-9]+\.[0-9]+\s*,\s*[-+]?[0-9]+\.[0-9]+\s*$)");
  return std::regex_match(s, degree_pair) || std::regex_match(s, decimal_pair);
}

}  // namespace detail

inline FilterReason apply_filters(const Triplet& t, const FilterRules& rules) {
  if (rules.drop_url_objects &&
      (t.object.rfind("http://", 0) == 0 || t.object.rfind("https://", 0) == 0)) {
    return FilterReason::Url;
  }
  if (rules.drop_coordinate_objects && detail::looks_like_coordinate(t.object)) {
    return FilterReason::Coordinate;
  }
  if (rules.drop_image_objects) {
    for (const char* suffix : {".jpg", ".jpeg", ".png", ".svg", ".gif"}) {
      if (detail::ends_with_ci(t.object, suffix)) return FilterReason::Image;
    }
  }
  if (rules.subject_allowlist && rules.subject_allowlist->count(t.subject) == 0) {
    return FilterReason::Subject;
  }
  return FilterReason::Kept;
}

struct FilterLogEntry {
  std::size_t line = 0;
  FilterReason reason = FilterReason::Kept;
};

inline void write_filter_log(std::ostream& os, const std::vector<FilterLogEntry>& entries) {
  for (const auto& e : entries) os << e.line << '\t' << filter_reason_name(e.reason) << '\n';
}

}  // namespace kblab
