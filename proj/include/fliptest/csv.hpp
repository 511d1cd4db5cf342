#pragma once

#include <charconv>
#include <fstream>
#include <iomanip>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "fliptest/core_data.hpp"

namespace fliptest {

/// CSV ingestion for grouped data.
///
/// The first line is a header. `label` (0/1) and `group` (exactly two distinct
/// string values) are reserved; every other column is a numeric feature.
/// The lexicographically smaller group becomes group_a unless
/// `source_group` names the other one.
struct LoadedCsv {
  GroupedDataset data;
  std::string source_group;
  std::string target_group;
};

namespace csv_detail {

inline std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char ch = line[i];
    if (quoted) {
      if (ch == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur.push_back('"');
        ++i;
      } else if (ch == '"') {
        quoted = false;
      } else {
        cur.push_back(ch);
      }
    } else if (ch == '"') {
      quoted = true;
    } else if (ch == ',') {
      fields.push_back(std::move(cur));
      cur.clear();
    } else if (ch != '\r') {
      cur.push_back(ch);
    }
  }
  fields.push_back(std::move(cur));
  for (auto& f : fields) {
    const auto b = f.find_first_not_of(" \t");
    const auto e = f.find_last_not_of(" \t");
    f = b == std::string::npos ? std::string() : f.substr(b, e - b + 1);
  }
  return fields;
}

inline double parse_double(const std::string& text, std::size_t line, const std::string& column) {
  double value = 0.0;
  const char* begin = text.data();
  const char* end = begin + text.size();
  if (!text.empty() && *begin == '+') ++begin;
  auto [ptr, ec] = std::from_chars(begin, end, value);
  if (ec != std::errc() || ptr != end || text.empty()) {
    throw Error(Errc::kParse, "line " + std::to_string(line) + ", column '" + column +
                                  "': cannot parse '" + text + "' as a number");
  }
  if (!std::isfinite(value)) {
    throw Error(Errc::kNonFinite, "line " + std::to_string(line) + ", column '" + column +
                                      "' is not finite");
  }
  return value;
}

}  // namespace csv_detail

inline LoadedCsv read_grouped_csv(std::istream& in,
                                  const std::optional<std::string>& source_group = std::nullopt) {
  std::string line;
  if (!std::getline(in, line)) throw Error(Errc::kParse, "empty CSV (missing header)");
  const auto header = csv_detail::split_line(line);

  std::optional<std::size_t> label_col, group_col;
  std::vector<std::size_t> feature_cols;
  std::vector<std::string> names;
  for (std::size_t k = 0; k < header.size(); ++k) {
    if (header[k] == "label") {
      label_col = k;
    } else if (header[k] == "group") {
      group_col = k;
    } else {
      feature_cols.push_back(k);
      names.push_back(header[k]);
    }
  }
  if (!group_col) throw Error(Errc::kSchemaMismatch, "CSV has no 'group' column");
  if (names.empty()) throw Error(Errc::kSchemaMismatch, "CSV has no feature columns");

  struct Part {
    std::vector<double> values;
    std::vector<int> labels;
    std::vector<std::int64_t> ids;
  };
  std::map<std::string, Part> parts;
  std::size_t line_no = 1;
  std::int64_t data_row = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    const auto fields = csv_detail::split_line(line);
    if (fields.size() != header.size()) {
      throw Error(Errc::kParse, "line " + std::to_string(line_no) + " has " +
                                    std::to_string(fields.size()) + " fields, header has " +
                                    std::to_string(header.size()));
    }
    Part& part = parts[fields[*group_col]];
    for (std::size_t k = 0; k < feature_cols.size(); ++k) {
      part.values.push_back(
          csv_detail::parse_double(fields[feature_cols[k]], line_no, names[k]));
    }
    if (label_col) {
      const auto& f = fields[*label_col];
      if (f != "0" && f != "1") {
        throw Error(Errc::kParse, "line " + std::to_string(line_no) + ": label must be 0 or 1");
      }
      part.labels.push_back(f == "1" ? 1 : 0);
    }
    part.ids.push_back(data_row++);
  }
  if (parts.size() != 2) {
    throw Error(Errc::kSchemaMismatch, "'group' column must have exactly two distinct values, found " +
                                           std::to_string(parts.size()));
  }
  auto it = parts.begin();
  std::string first = it->first;
  std::string second = std::next(it)->first;
  if (source_group) {
    if (*source_group == second) {
      std::swap(first, second);
    } else if (*source_group != first) {
      throw Error(Errc::kBadConfig, "source group '" + *source_group + "' not present in data");
    }
  }

  auto build = [&](const std::string& key) {
    Part& p = parts[key];
    const std::size_t rows = p.ids.size();
    FeatureMatrix m(rows, names, std::move(p.values));
    m.set_row_ids(std::move(p.ids));
    return m;
  };
  std::optional<std::vector<int>> la, lb;
  if (label_col) {
    la = parts[first].labels;
    lb = parts[second].labels;
  }
  FeatureMatrix a = build(first);
  FeatureMatrix b = build(second);
  return LoadedCsv{GroupedDataset(std::move(a), std::move(b), std::move(la), std::move(lb)),
                   first, second};
}

inline LoadedCsv read_grouped_csv(const std::string& path,
                                  const std::optional<std::string>& source_group = std::nullopt) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::kParse, "cannot open '" + path + "'");
  return read_grouped_csv(in, source_group);
}

/// Shortest text that parses back to the same double.
inline std::string format_double(double v) {
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

/// Writes features, then `label` when present, then `group`. Rows of group_a
/// come first.
inline void write_grouped_csv(std::ostream& out, const GroupedDataset& data,
                              const std::string& name_a, const std::string& name_b) {
  const auto& names = data.group_a.feature_names();
  for (std::size_t j = 0; j < names.size(); ++j) out << (j ? "," : "") << names[j];
  if (data.has_labels()) out << ",label";
  out << ",group\n";
  auto emit = [&](const FeatureMatrix& m, const std::optional<std::vector<int>>& labels,
                  const std::string& group) {
    for (std::size_t i = 0; i < m.rows(); ++i) {
      for (std::size_t j = 0; j < m.cols(); ++j) out << (j ? "," : "") << format_double(m(i, j));
      if (data.has_labels()) out << ',' << (*labels)[i];
      out << ',' << group << '\n';
    }
  };
  emit(data.group_a, data.labels_a, name_a);
  emit(data.group_b, data.labels_b, name_b);
}

}  // namespace fliptest
