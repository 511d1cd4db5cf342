#pragma once

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <memory>
#include <sstream>
#include <string>
#include <thread>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "fliptest/fliptest.hpp"

namespace fliptest::cli {

namespace fs = std::filesystem;

/// Flags shared by every command.
struct Globals {
  std::uint64_t seed = 0;
  std::string out = ".";
  bool no_normalize = false;
  std::string cost = "sql1";

  CostFunction cost_function() const {
    const auto kind = parse_cost_kind(cost);
    if (!kind) throw Error(Errc::kBadConfig, "--cost must be sql1, l1 or sql2, got '" + cost + "'");
    return CostFunction{*kind};
  }
};

/// Worker cap: FLIPTEST_THREADS when set, otherwise the hardware count.
inline unsigned thread_budget() {
  if (const char* env = std::getenv("FLIPTEST_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end == env || *end != '\0' || v < 1) {
      throw Error(Errc::kBadConfig, "FLIPTEST_THREADS must be a positive integer, got '" + std::string(env) + "'");
    }
    return static_cast<unsigned>(v);
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

inline std::string hex64(std::uint64_t v) {
  std::ostringstream s;
  s << std::hex << std::setw(16) << std::setfill('0') << v;
  return s.str();
}

inline std::string file_digest(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream buf;
  buf << in.rdbuf();
  return hex64(fnv1a64(buf.str()));
}

inline void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error(Errc::kBadConfig, "cannot create output directory '" + dir.string() + "': " + ec.message());
}

inline std::ofstream open_output(const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(Errc::kBadConfig, "cannot write '" + path.string() + "'");
  return out;
}

inline void write_json(const fs::path& path, const json& j) {
  auto out = open_output(path);
  out << j.dump(2) << '\n';
}

/// Collects the resolved configuration and the files a command wrote, then
/// emits run.json. Nothing time- or host-dependent goes in, so reruns with
/// the same inputs produce the same file.
class RunRecord {
 public:
  RunRecord(std::string command, const Globals& g) {
    doc_["command"] = std::move(command);
    doc_["seed"] = g.seed;
    doc_["cost"] = g.cost;
    doc_["normalize"] = !g.no_normalize;
    doc_["out"] = g.out;
    doc_["config"] = json::object();
  }

  json& config() { return doc_["config"]; }

  void input(const std::string& key, const fs::path& path) {
    doc_["inputs"][key] = json{{"path", path.string()}, {"fnv1a64", file_digest(path)}};
  }
  void artifact(const fs::path& path) { artifacts_.push_back(path); }

  void write(const fs::path& dir) {
    json files = json::object();
    for (const auto& p : artifacts_) files[p.filename().string()] = file_digest(p);
    doc_["artifacts"] = files;
    doc_["digest"] = "fnv1a64";
    write_json(dir / "run.json", doc_);
  }

 private:
  json doc_ = json::object();
  std::vector<fs::path> artifacts_;
};

inline std::vector<double> parse_list(const std::string& text, const char* what) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(csv_detail::parse_double(item, 0, what));
  if (out.empty()) throw Error(Errc::kBadConfig, std::string(what) + " is empty");
  return out;
}

/// Data plus the normalizer fitted jointly on both groups.
struct Loaded {
  LoadedCsv csv;
  Normalizer normalizer;
};

inline Loaded load_input(const std::string& path, const std::optional<std::string>& source_group) {
  Loaded l{read_grouped_csv(path, source_group), {}};
  l.normalizer = fit_normalizer(l.csv.data);
  return l;
}

/// Builds a classifier from its spec:
///   arrests                 0 / seeded coin / 1 on the `arrests` column
///   linear:w1,w2,...:t      w.x > t on raw features
///   hiring_fair             1.2 work + 1.4 hair on standardized features,
///                           27% of the `male` (else target) group hired
///   ssl_age_narc            -53 age + 25 narc > 65 on standardized features
///   ssl_multi_feature       Appendix-style multi-feature model, 10% positive
///   predictions             fixed outputs from --predictions FILE
inline std::shared_ptr<const Classifier> make_classifier(const std::string& spec, const Loaded& in,
                                                         std::uint64_t seed,
                                                         const std::string& predictions_path) {
  const auto& data = in.csv.data;
  const auto& names = data.group_a.feature_names();
  if (spec == "arrests") {
    auto j = data.group_a.feature_index("arrests");
    if (!j && names.size() == 1) j = 0;
    if (!j) throw Error(Errc::kSchemaMismatch, "arrests classifier needs an `arrests` column");
    return std::make_shared<ArrestsModel>(substream_seed(seed, "classifier"), *j);
  }
  if (spec.rfind("linear:", 0) == 0) {
    const auto second = spec.find(':', 7);
    if (second == std::string::npos) throw Error(Errc::kBadConfig, "linear classifier spec is linear:w1,...,wd:threshold");
    auto w = parse_list(spec.substr(7, second - 7), "linear weights");
    const double t = csv_detail::parse_double(spec.substr(second + 1), 0, "linear threshold");
    if (w.size() != names.size()) {
      throw Error(Errc::kBadConfig, "linear classifier has " + std::to_string(w.size()) + " weights for " +
                                        std::to_string(names.size()) + " features");
    }
    return std::make_shared<LinearThresholdModel>(std::move(w), t);
  }
  if (spec == "hiring_fair") {
    // Calibrated on the `male` group, or on the target group when no group has that name.
    const bool source_is_male = in.csv.source_group == "male";
    const FeatureMatrix& men = source_is_male ? data.group_a : data.group_b;
    auto model = std::make_shared<LinearThresholdModel>(hiring_fair_model(in.normalizer.transform(men)));
    return std::make_shared<NormalizedInputModel>(std::move(model), in.normalizer);
  }
  if (spec == "ssl_age_narc" || spec == "ssl_multi_feature") {
    const GroupedDataset z = in.normalizer.transform(data);
    FeatureMatrix pooled(z.group_a.rows() + z.group_b.rows(), names);
    for (std::size_t i = 0; i < z.group_a.rows(); ++i)
      for (std::size_t j = 0; j < names.size(); ++j) pooled(i, j) = z.group_a(i, j);
    for (std::size_t i = 0; i < z.group_b.rows(); ++i)
      for (std::size_t j = 0; j < names.size(); ++j) pooled(z.group_a.rows() + i, j) = z.group_b(i, j);
    const SslModels models = ssl_style_models(pooled);
    auto model = std::make_shared<LinearThresholdModel>(spec == "ssl_age_narc" ? models.age_narc
                                                                              : models.multi_feature);
    return std::make_shared<NormalizedInputModel>(std::move(model), in.normalizer);
  }
  if (spec == "predictions") {
    if (predictions_path.empty()) throw Error(Errc::kBadConfig, "--classifier predictions needs --predictions FILE");
    return std::make_shared<PredictionsFileModel>(load_predictions_csv(predictions_path));
  }
  throw Error(Errc::kBadConfig, "unknown classifier '" + spec + "'");
}

/// A mapping artifact resolved against the input data: the source rows it
/// covers and their counterparts, both in raw units.
struct ResolvedMap {
  GroupedDataset data;  // group_a restricted to mapped rows
  FeatureMatrix counterparts;
  std::string kind;  // identity | exact | gan
};

inline FeatureMatrix rows_by_id(const FeatureMatrix& m, const std::vector<std::int64_t>& ids, const char* which) {
  std::unordered_map<std::int64_t, std::size_t> where;
  for (std::size_t i = 0; i < m.rows(); ++i) where[m.row_id(i)] = i;
  std::vector<std::size_t> idx;
  idx.reserve(ids.size());
  for (auto id : ids) {
    auto it = where.find(id);
    if (it == where.end()) {
      throw Error(Errc::kShapeMismatch, std::string("assignment refers to row ") + std::to_string(id) +
                                            " which is not in the " + which + " group");
    }
    idx.push_back(it->second);
  }
  return m.select_rows(idx);
}

inline std::pair<std::vector<std::int64_t>, std::vector<std::int64_t>> read_assignment_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::kParse, "cannot open '" + path + "'");
  std::string line;
  std::getline(in, line);
  if (csv_detail::split_line(line) != std::vector<std::string>{"source_index", "target_index"}) {
    throw Error(Errc::kParse, "'" + path + "' is not an assignment file (header source_index,target_index)");
  }
  std::vector<std::int64_t> src, tgt;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto f = csv_detail::split_line(line);
    if (f.size() != 2) throw Error(Errc::kParse, "line " + std::to_string(line_no) + " of '" + path + "' needs 2 fields");
    src.push_back(static_cast<std::int64_t>(csv_detail::parse_double(f[0], line_no, "source_index")));
    tgt.push_back(static_cast<std::int64_t>(csv_detail::parse_double(f[1], line_no, "target_index")));
  }
  return {src, tgt};
}

/// `path` is `identity`, an assignment CSV or a generator JSON.
inline ResolvedMap resolve_map(const std::string& path, const GroupedDataset& data) {
  if (path == "identity") return {data, data.group_a, "identity"};
  if (fs::path(path).extension() == ".json") {
    const GeneratorModel model = load_generator_model(path);
    if (model.feature_names != data.group_a.feature_names()) {
      throw Error(Errc::kSchemaMismatch, "generator features do not match the input columns");
    }
    return {data, model.map_raw(data.group_a), "gan"};
  }
  const auto [src, tgt] = read_assignment_csv(path);
  FeatureMatrix a = rows_by_id(data.group_a, src, "source");
  FeatureMatrix b = rows_by_id(data.group_b, tgt, "target");
  // The matched target rows form the target group, so the parity counts
  // refer to the same subsample the map was solved on.
  GroupedDataset mapped(std::move(a), b);
  return {std::move(mapped), std::move(b), "exact"};
}

inline json side_json(const std::optional<TransparencyReport>& r) {
  if (!r) return "empty";
  json mean_diff = json::object(), mean_sign = json::object();
  for (std::size_t j = 0; j < r->feature_names.size(); ++j) {
    mean_diff[r->feature_names[j]] = r->mean_diff[j];
    mean_sign[r->feature_names[j]] = r->mean_sign[j];
  }
  return json{{"size", r->size},
              {"mean_diff", mean_diff},
              {"mean_sign", mean_sign},
              {"ranking_by_diff", r->ranking_by_diff},
              {"ranking_by_sign", r->ranking_by_sign}};
}

inline json audit_json(const AuditResult& a) {
  return json{{"n_source", a.flipset.n_source},
              {"positives_source", a.parity.positives_a},
              {"positives_target", a.parity.positives_b},
              {"flip_pos", a.parity.flip_pos},
              {"flip_neg", a.parity.flip_neg},
              {"net", a.parity.net()},
              {"per_side", {{"positive", side_json(a.positive_report)}, {"negative", side_json(a.negative_report)}}}};
}

/// One line per flipped source row: side, file row ids, the row and its counterpart.
inline void write_flipped_rows(const fs::path& path, const GroupedDataset& data, const AuditResult& a) {
  auto out = open_output(path);
  const auto& names = data.group_a.feature_names();
  const auto& cp = a.flipset.counterpart_rows;
  out << "side,source_row,counterpart_row";
  for (const auto& n : names) out << ',' << n;
  for (const auto& n : names) out << ",counterpart_" << n;
  out << '\n';
  auto emit = [&](const char* side, const std::vector<std::size_t>& rows) {
    for (auto i : rows) {
      out << side << ',' << data.group_a.row_id(i) << ',' << cp.row_id(i);
      for (std::size_t j = 0; j < names.size(); ++j) out << ',' << format_double(data.group_a(i, j));
      for (std::size_t j = 0; j < names.size(); ++j) out << ',' << format_double(cp(i, j));
      out << '\n';
    }
  };
  emit("positive", a.flipset.positive);
  emit("negative", a.flipset.negative);
}

inline void write_histogram(const fs::path& path, const std::vector<HistogramBin>& bins) {
  auto out = open_output(path);
  out << "feature,bin_left,bin_right,count_population,count_flipset\n";
  for (const auto& b : bins) {
    out << b.feature << ',' << format_double(b.bin_left) << ',' << format_double(b.bin_right) << ','
        << b.count_population << ',' << b.count_flipset << '\n';
  }
}

}  // namespace fliptest::cli
