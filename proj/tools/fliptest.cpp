// fliptest command-line interface.
//
// Every command writes its artifacts plus run.json into --out (synth writes a
// single CSV to --out and run.json next to it). Exit codes: 0 success,
// 2 configuration error, 3 data error, 4 numeric failure.

#include <CLI11.hpp>

#include <iostream>

#include "cli_support.hpp"

namespace fliptest::cli {
namespace {

/// Records every option of a subcommand as resolved (given or default).
void record_options(const CLI::App& sub, json& config) {
  for (const CLI::Option* opt : sub.get_options()) {
    if (opt == sub.get_help_ptr()) continue;
    const std::string name = opt->get_name();
    const std::string key = name.substr(name.find_first_not_of('-'));
    const bool flag = opt->get_expected_max() == 0;
    if (flag) {
      config[key] = opt->count() > 0;
    } else if (opt->count() > 0) {
      const auto& r = opt->results();
      config[key] = opt->get_expected_max() > 1 ? json(r) : json(r.back());
    } else if (!opt->get_default_str().empty()) {
      config[key] = opt->get_default_str();
    } else {
      config[key] = nullptr;
    }
  }
}

struct TrainFlags {
  TrainConfig cfg;
  bool verbose = false;

  void add(CLI::App* sub) {
    sub->add_option("--lambda", cfg.lambda, "cost penalty weight")->capture_default_str();
    sub->add_option("--batch", cfg.batch_size, "batch size")->capture_default_str();
    sub->add_option("--steps", cfg.generator_steps, "generator steps")->capture_default_str();
    sub->add_option("--critic-steps", cfg.critic_steps_per_gen, "critic steps per generator step")
        ->capture_default_str();
    sub->add_option("--lr", cfg.learning_rate, "RMSProp learning rate")->capture_default_str();
    sub->add_option("--clip", cfg.clip, "critic parameter clip")->capture_default_str();
    sub->add_option("--hidden", cfg.hidden_width, "hidden layer width")->capture_default_str();
    sub->add_flag("--verbose", verbose, "print training progress to stderr");
  }

  TrainObserver observer() const {
    if (!verbose) return {};
    const std::size_t every = std::max<std::size_t>(1, cfg.generator_steps / 20);
    return [every, total = cfg.generator_steps](const TrainProgress& p) {
      if (p.step % every == 0 || p.step + 1 == total) {
        std::cerr << "step " << p.step + 1 << "/" << total << "  critic " << p.critic_loss << "  generator "
                  << p.generator_loss << '\n';
      }
    };
  }
};

std::vector<std::size_t> parse_sizes(const std::string& text, const char* what) {
  std::vector<std::size_t> out;
  for (double v : parse_list(text, what)) {
    if (!(v >= 1.0) || v != std::floor(v)) throw Error(Errc::kBadConfig, std::string(what) + " must be positive integers");
    out.push_back(static_cast<std::size_t>(v));
  }
  return out;
}

// ---------------------------------------------------------------------------
// synth

struct SynthArgs {
  std::string kind = "hiring";
  std::size_t n = 1000;
  std::string mean_a = "0";
  std::string mean_b = "1";
};

void cmd_synth(const Globals& g, const SynthArgs& a, const CLI::App& sub) {
  GeneratorSpec spec;
  if (a.kind == "hiring") spec.kind = SynthKind::kHiring;
  else if (a.kind == "geometric") spec.kind = SynthKind::kGeometric;
  else if (a.kind == "control") spec.kind = SynthKind::kControl;
  else if (a.kind == "gaussian") spec.kind = SynthKind::kGaussian;
  else throw Error(Errc::kBadConfig, "--kind must be hiring, geometric, control or gaussian");
  spec.n_per_group = a.n;
  spec.seed = substream_seed(g.seed, "data");
  spec.mean_a = parse_list(a.mean_a, "--mean-a");
  spec.mean_b = parse_list(a.mean_b, "--mean-b");

  const GroupedDataset data = generate(spec);
  const auto [name_a, name_b] = synth_group_names(spec.kind);
  const fs::path file = g.out == "." ? fs::path("synth.csv") : fs::path(g.out);
  const fs::path dir = file.has_parent_path() ? file.parent_path() : fs::path(".");
  ensure_dir(dir);
  {
    auto out = open_output(file);
    write_grouped_csv(out, data, name_a, name_b);
  }
  RunRecord run("synth", g);
  record_options(sub, run.config());
  run.artifact(file);
  run.write(dir);
}

// ---------------------------------------------------------------------------
// map

struct MapArgs {
  std::string input;
  std::string method = "exact";
  std::string source_group;
  int stratum = -1;
  std::size_t subsample = 0;
  TrainFlags train;
};

GroupedDataset restrict_stratum(const GroupedDataset& data, int stratum) {
  if (stratum < 0) return data;
  if (stratum > 1) throw Error(Errc::kBadConfig, "--stratum must be 0 or 1");
  return label_stratum(data, stratum);
}

void cmd_map(const Globals& g, MapArgs& a, const CLI::App& sub) {
  const fs::path out_dir(g.out);
  ensure_dir(out_dir);
  const std::optional<std::string> source =
      a.source_group.empty() ? std::nullopt : std::optional<std::string>(a.source_group);
  const LoadedCsv csv = read_grouped_csv(a.input, source);
  const CostFunction cost = g.cost_function();
  const GroupedDataset raw = restrict_stratum(csv.data, a.stratum);
  std::optional<Normalizer> norm;
  if (!g.no_normalize) norm = fit_normalizer(raw);
  const GroupedDataset data = norm ? norm->transform(raw) : raw;

  RunRecord run("map", g);
  record_options(sub, run.config());
  run.config()["source_group"] = csv.source_group;
  run.config()["target_group"] = csv.target_group;
  run.input("input", a.input);

  if (a.method == "exact") {
    const std::size_t na = data.group_a.rows(), nb = data.group_b.rows();
    std::size_t k = std::min(na, nb);
    if (a.subsample > 0) {
      if (a.subsample > k) {
        throw Error(Errc::kKTooLarge, "--subsample " + std::to_string(a.subsample) + " exceeds the smaller group (" +
                                          std::to_string(k) + " rows)");
      }
      k = a.subsample;
    }
    const bool full = k == na && k == nb;
    const GroupedDataset solved = full ? data : subsample_groups(data, k, substream_seed(g.seed, "subsample"));
    const ExactMap map = solve_exact(solved, cost, thread_budget());

    const fs::path assignment = out_dir / "assignment.csv";
    {
      auto out = open_output(assignment);
      out << "source_index,target_index\n";
      for (std::size_t i = 0; i < map.size(); ++i) {
        out << solved.group_a.row_id(i) << ',' << solved.group_b.row_id(map.assignment[i]) << '\n';
      }
    }
    const fs::path summary = out_dir / "map_summary.json";
    write_json(summary, json{{"n", map.size()},
                             {"total_cost", map.total_cost},
                             {"mean_cost", map.mean_cost},
                             {"cost", g.cost},
                             {"normalized", norm.has_value()},
                             {"subsampled", !full},
                             {"source_group", csv.source_group},
                             {"target_group", csv.target_group}});
    run.artifact(assignment);
    run.artifact(summary);
  } else if (a.method == "gan") {
    TrainConfig tc = a.train.cfg;
    tc.seed = substream_seed(g.seed, "train");
    GeneratorModel model;
    model.generator = train(data, tc, cost, a.train.observer());
    model.config = tc;
    model.normalizer = norm;
    model.cost = cost.kind;
    model.feature_names = data.group_a.feature_names();
    model.source_group = csv.source_group;
    model.target_group = csv.target_group;
    const fs::path file = out_dir / "generator.json";
    save_generator_model(model, file.string());
    run.artifact(file);
  } else {
    throw Error(Errc::kBadConfig, "--method must be exact or gan, got '" + a.method + "'");
  }
  run.write(out_dir);
}

// ---------------------------------------------------------------------------
// flipset / audit / report

struct AuditArgs {
  std::string input;
  std::string map = "identity";
  std::string map_neg;
  std::string source_group;
  std::string classifier = "arrests";
  std::string predictions;
  std::string mode = "demographic_parity";
  std::vector<std::string> exclude;
  bool histogram = false;
  std::size_t bins = 20;
};

/// A generator file fixes which group is the source.
std::optional<std::string> audit_source_group(const AuditArgs& a) {
  if (!a.source_group.empty()) return a.source_group;
  if (fs::path(a.map).extension() == ".json") {
    const GeneratorModel m = load_generator_model(a.map);
    if (!m.source_group.empty()) return m.source_group;
  }
  return std::nullopt;
}

void write_bundle(const fs::path& dir, const std::string& suffix, const ResolvedMap& rm, const AuditResult& result,
                  const AuditArgs& a, bool report, RunRecord& run) {
  json j = audit_json(result);
  j["map"] = rm.kind;
  j["classifier"] = a.classifier;
  j["excluded_features"] = a.exclude;
  const fs::path json_path = dir / ((report ? "report" : "flipset") + suffix + ".json");
  write_json(json_path, j);
  run.artifact(json_path);
  const fs::path rows_path = dir / ("flipped_rows" + suffix + ".csv");
  write_flipped_rows(rows_path, rm.data, result);
  run.artifact(rows_path);
  if (report && a.histogram) {
    const auto& f = result.flipset;
    const fs::path pos = dir / ("histogram_positive" + suffix + ".csv");
    const fs::path neg = dir / ("histogram_negative" + suffix + ".csv");
    write_histogram(pos, marginal_histograms(rm.data.group_a, f.positive, a.bins));
    write_histogram(neg, marginal_histograms(rm.data.group_a, f.negative, a.bins));
    run.artifact(pos);
    run.artifact(neg);
  }
}

void cmd_audit(const Globals& g, const AuditArgs& a, const CLI::App& sub, bool report) {
  const fs::path out_dir(g.out);
  ensure_dir(out_dir);
  const Loaded in = load_input(a.input, audit_source_group(a));
  const auto h = make_classifier(a.classifier, in, g.seed, a.predictions);

  RunRecord run(report ? "report" : "flipset", g);
  record_options(sub, run.config());
  run.config()["source_group"] = in.csv.source_group;
  run.config()["target_group"] = in.csv.target_group;
  run.input("input", a.input);
  if (a.map != "identity") run.input("map", a.map);
  if (!a.predictions.empty()) run.input("predictions", a.predictions);

  if (a.mode == "demographic_parity") {
    const ResolvedMap rm = resolve_map(a.map, in.csv.data);
    const AuditResult result = demographic_parity_audit(rm.data, *h, rm.counterparts, a.exclude);
    write_bundle(out_dir, "", rm, result, a, report, run);
  } else if (a.mode == "equalized_odds") {
    if (!in.csv.data.has_labels()) throw Error(Errc::kMissingLabels, "equalized_odds mode needs a `label` column");
    if (a.map_neg.empty()) throw Error(Errc::kBadConfig, "equalized_odds mode needs --map-neg for the label-0 stratum");
    if (a.map_neg != "identity") run.input("map_neg", a.map_neg);
    const std::pair<int, const std::string*> strata[] = {{1, &a.map}, {0, &a.map_neg}};
    for (const auto& [label, path] : strata) {
      const ResolvedMap rm = resolve_map(*path, label_stratum(in.csv.data, label));
      const AuditResult result = demographic_parity_audit(rm.data, *h, rm.counterparts, a.exclude);
      write_bundle(out_dir, "_label" + std::to_string(label), rm, result, a, report, run);
    }
  } else {
    throw Error(Errc::kBadConfig, "--mode must be demographic_parity or equalized_odds, got '" + a.mode + "'");
  }
  run.write(out_dir);
}

// ---------------------------------------------------------------------------
// validate

struct ValidateArgs {
  std::string input;
  std::string generator = "identity";
  std::string source_group;
  std::string resample = "bootstrap";
  std::size_t trials = 10;
  std::size_t subset = 2000;
};

void cmd_validate(const Globals& g, const ValidateArgs& a, const CLI::App& sub) {
  const fs::path out_dir(g.out);
  ensure_dir(out_dir);
  std::optional<GeneratorModel> model;
  if (a.generator != "identity") model = load_generator_model(a.generator);
  std::optional<std::string> source;
  if (!a.source_group.empty()) source = a.source_group;
  else if (model && !model->source_group.empty()) source = model->source_group;
  const LoadedCsv csv = read_grouped_csv(a.input, source);

  // Statistics are computed where the generator operates: its own normalized
  // space, or the joint normalization of the input for the identity map.
  Generator gen;
  std::optional<Normalizer> norm;
  if (model) {
    if (model->feature_names != csv.data.group_a.feature_names()) {
      throw Error(Errc::kSchemaMismatch, "generator features do not match the input columns");
    }
    gen = model->generator;
    norm = model->normalizer;
  } else {
    gen = identity_generator(csv.data.dims());
    if (!g.no_normalize) norm = fit_normalizer(csv.data);
  }
  const GroupedDataset base = norm ? norm->transform(csv.data) : csv.data;

  if (a.trials == 0) throw Error(Errc::kBadConfig, "--trials must be at least 1");
  std::vector<GroupedDataset> trials;
  if (a.resample == "bootstrap") trials = bootstrap_trials(base, a.trials, substream_seed(g.seed, "bootstrap"));
  else if (a.resample == "none") trials.assign(a.trials, base);
  else throw Error(Errc::kBadConfig, "--resample must be bootstrap or none");

  const ValidationReport r = validate_generator(base, trials, gen, g.cost_function(), a.subset,
                                                substream_seed(g.seed, "subsample"), thread_budget());

  const fs::path table = out_dir / "validation.csv";
  {
    auto out = open_output(table);
    out << "feature,ks_mean,ks_std,msediff_mean,msediff_std\n";
    for (std::size_t j = 0; j < r.feature_names.size(); ++j) {
      out << r.feature_names[j] << ',' << format_double(r.ks_summary[j].mean) << ','
          << format_double(r.ks_summary[j].std_dev) << ',' << format_double(r.mse_summary[j].mean) << ','
          << format_double(r.mse_summary[j].std_dev) << '\n';
    }
  }
  const fs::path details = out_dir / "validation.json";
  write_json(details, json{{"trials", r.trials},
                           {"resample", a.resample},
                           {"normalized", norm.has_value()},
                           {"feature_names", r.feature_names},
                           {"dist_exact", r.dist_exact},
                           {"dist_gan", r.dist_gan},
                           {"ks", r.ks_stat},
                           {"msediff", r.mse_diff}});

  RunRecord run("validate", g);
  record_options(sub, run.config());
  run.config()["source_group"] = csv.source_group;
  run.config()["target_group"] = csv.target_group;
  run.input("input", a.input);
  if (model) run.input("generator", a.generator);
  run.artifact(table);
  run.artifact(details);
  run.write(out_dir);
}

// ---------------------------------------------------------------------------
// stability

struct StabilityArgs {
  std::string dims = "2,4,8";
  std::size_t n = 500;
  std::size_t draws = 100;
  std::string probe = "zeros";
  TrainFlags train;
};

void cmd_stability(const Globals& g, const StabilityArgs& a, const CLI::App& sub) {
  const fs::path out_dir(g.out);
  ensure_dir(out_dir);
  if (a.probe != "zeros" && a.probe != "ones") throw Error(Errc::kBadConfig, "--probe must be zeros or ones");
  a.train.cfg.validate();

  const fs::path table = out_dir / "stability.csv";
  json details = json::array();
  std::ostringstream csv_text;
  csv_text << "dim,feature_index,variance_exact,variance_gan\n";
  for (std::size_t d : parse_sizes(a.dims, "--dims")) {
    StabilityConfig cfg;
    cfg.dims = d;
    cfg.n = a.n;
    cfg.draws = a.draws;
    cfg.probe.assign(d, a.probe == "ones" ? 1.0 : 0.0);
    cfg.train = a.train.cfg;
    cfg.cost = g.cost_function();
    cfg.seed = g.seed;
    cfg.threads = thread_budget();
    cfg.method = MapMethod::kExact;
    const StabilityResult exact = stability_harness(cfg);
    cfg.method = MapMethod::kGan;
    const StabilityResult gan = stability_harness(cfg);
    for (std::size_t j = 0; j < d; ++j) {
      csv_text << d << ',' << j << ',' << format_double(exact.variance[j]) << ',' << format_double(gan.variance[j])
               << '\n';
    }
    details.push_back(json{{"dim", d},
                           {"probe", exact.probe},
                           {"mean_exact", exact.mean},
                           {"mean_gan", gan.mean},
                           {"variance_exact", exact.variance},
                           {"variance_gan", gan.variance}});
  }
  {
    auto out = open_output(table);
    out << csv_text.str();
  }
  const fs::path summary = out_dir / "stability.json";
  write_json(summary, details);

  RunRecord run("stability", g);
  record_options(sub, run.config());
  run.artifact(table);
  run.artifact(summary);
  run.write(out_dir);
}

// ---------------------------------------------------------------------------
// control

struct ControlArgs {
  std::size_t n = 10000;
  std::size_t anchors = 2000;
  TrainFlags train;
};

void cmd_control(const Globals& g, const ControlArgs& a, const CLI::App& sub) {
  const fs::path out_dir(g.out);
  ensure_dir(out_dir);
  ControlConfig cfg;
  cfg.n = a.n;
  cfg.anchors = a.anchors;
  cfg.train = a.train.cfg;
  cfg.train.seed = substream_seed(g.seed, "train");
  cfg.cost = g.cost_function();
  cfg.seed = g.seed;
  const ControlResult r = control_experiment(cfg);

  const fs::path file = out_dir / "control.json";
  write_json(file, json{{"n", cfg.n},
                        {"anchors", cfg.anchors},
                        {"flip_pos", r.flip_pos},
                        {"flip_neg", r.flip_neg},
                        {"classified_positive", r.classified_positive},
                        {"classified_negative", r.classified_negative},
                        {"mean_abs_displacement", r.mean_abs_displacement}});
  RunRecord run("control", g);
  record_options(sub, run.config());
  run.artifact(file);
  run.write(out_dir);
}

int exit_code(const Error& e) {
  switch (e.category()) {
    case ErrorCategory::kConfig: return 2;
    case ErrorCategory::kData: return 3;
    case ErrorCategory::kNumeric: return 4;
  }
  return 1;
}

int run(int argc, char** argv) {
  CLI::App app{"Counterfactual flipset audits of binary classifiers via optimal transport"};
  app.require_subcommand(1);
  app.fallthrough();

  Globals g;
  app.add_option("--seed", g.seed, "root seed for every random substream")->capture_default_str();
  app.add_option("--out", g.out, "output directory (synth: output CSV file)")->capture_default_str();
  app.add_flag("--no-normalize", g.no_normalize, "work on raw features instead of jointly standardized ones");
  app.add_option("--cost", g.cost, "transport cost: sql1, l1 or sql2")
      ->check(CLI::IsMember({"sql1", "l1", "sql2"}))
      ->capture_default_str();

  SynthArgs synth;
  auto* s = app.add_subcommand("synth", "write a synthetic two-group CSV");
  s->add_option("--kind", synth.kind, "hiring, geometric, control or gaussian")->capture_default_str();
  s->add_option("--n", synth.n, "rows per group")->capture_default_str();
  s->add_option("--mean-a", synth.mean_a, "gaussian: source mean, comma separated")->capture_default_str();
  s->add_option("--mean-b", synth.mean_b, "gaussian: target mean, comma separated")->capture_default_str();

  MapArgs map;
  auto* m = app.add_subcommand("map", "fit an exact or GAN transport map");
  m->add_option("--input", map.input, "grouped CSV")->required();
  m->add_option("--method", map.method, "exact or gan")->capture_default_str();
  m->add_option("--source-group", map.source_group, "group mapped from (default: lexicographically first)");
  m->add_option("--stratum", map.stratum, "restrict to rows with this label (0 or 1)");
  m->add_option("--subsample", map.subsample, "exact: solve on K rows per group");
  map.train.add(m);

  AuditArgs audit;
  auto add_audit = [&](CLI::App* sub, bool report) {
    sub->add_option("--input", audit.input, "grouped CSV")->required();
    sub->add_option("--map", audit.map, "assignment.csv, generator.json or identity")->capture_default_str();
    sub->add_option("--map-neg", audit.map_neg, "equalized_odds: map for the label-0 stratum");
    sub->add_option("--source-group", audit.source_group, "source group (default: from the map, else first)");
    sub->add_option("--classifier", audit.classifier,
                    "arrests, linear:w1,...,wd:t, hiring_fair, ssl_age_narc, ssl_multi_feature or predictions")
        ->capture_default_str();
    sub->add_option("--predictions", audit.predictions, "CSV of fixed predictions keyed by row");
    sub->add_option("--mode", audit.mode, "demographic_parity or equalized_odds")->capture_default_str();
    sub->add_option("--exclude-feature", audit.exclude, "leave a feature out of the reports (repeatable)");
    if (report) {
      sub->add_flag("--histogram", audit.histogram, "write per-feature marginal histograms");
      sub->add_option("--bins", audit.bins, "histogram bins")->capture_default_str();
    }
  };
  auto* f = app.add_subcommand("flipset", "compute flipsets and transparency reports");
  f->alias("audit");
  add_audit(f, false);
  auto* r = app.add_subcommand("report", "flipset audit plus marginal histograms");
  add_audit(r, true);

  ValidateArgs val;
  auto* v = app.add_subcommand("validate", "KS, mse_diff and distance checks of a generator");
  v->add_option("--input", val.input, "grouped CSV")->required();
  v->add_option("--generator", val.generator, "generator.json or identity")->capture_default_str();
  v->add_option("--source-group", val.source_group, "source group (default: from the generator)");
  v->add_option("--trials", val.trials, "number of trials")->capture_default_str();
  v->add_option("--resample", val.resample, "bootstrap or none")->capture_default_str();
  v->add_option("--subset", val.subset, "rows per group for the exact distance")->capture_default_str();

  StabilityArgs stab;
  auto* st = app.add_subcommand("stability", "probe-image variance of exact and GAN maps");
  st->add_option("--dims", stab.dims, "comma separated dimensions")->capture_default_str();
  st->add_option("--n", stab.n, "points per group")->capture_default_str();
  st->add_option("--draws", stab.draws, "independent draws")->capture_default_str();
  st->add_option("--probe", stab.probe, "zeros or ones")->capture_default_str();
  stab.train.add(st);

  ControlArgs ctl;
  auto* c = app.add_subcommand("control", "random-label classifier control experiment");
  c->add_option("--n", ctl.n, "rows per group")->capture_default_str();
  c->add_option("--anchors", ctl.anchors, "nearest-neighbour anchors")->capture_default_str();
  ctl.train.add(c);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (s->parsed()) cmd_synth(g, synth, *s);
    else if (m->parsed()) cmd_map(g, map, *m);
    else if (f->parsed()) cmd_audit(g, audit, *f, false);
    else if (r->parsed()) cmd_audit(g, audit, *r, true);
    else if (v->parsed()) cmd_validate(g, val, *v);
    else if (st->parsed()) cmd_stability(g, stab, *st);
    else if (c->parsed()) cmd_control(g, ctl, *c);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_code(e);
  }
  return 0;
}

}  // namespace
}  // namespace fliptest::cli

int main(int argc, char** argv) { return fliptest::cli::run(argc, argv); }
