#pragma once

#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "fliptest/core_data.hpp"
#include "fliptest/neural_transport.hpp"

namespace fliptest {

using json = nlohmann::ordered_json;

inline json to_json(const TrainConfig& c) {
  return json{{"lambda", c.lambda},
              {"batch_size", c.batch_size},
              {"generator_steps", c.generator_steps},
              {"critic_steps_per_gen", c.critic_steps_per_gen},
              {"learning_rate", c.learning_rate},
              {"clip", c.clip},
              {"seed", c.seed},
              {"init_scale", c.init_scale},
              {"hidden_width", c.hidden_width}};
}

inline TrainConfig train_config_from_json(const json& j) {
  TrainConfig c;
  c.lambda = j.at("lambda").get<double>();
  c.batch_size = j.at("batch_size").get<std::size_t>();
  c.generator_steps = j.at("generator_steps").get<std::size_t>();
  c.critic_steps_per_gen = j.at("critic_steps_per_gen").get<std::size_t>();
  c.learning_rate = j.at("learning_rate").get<double>();
  c.clip = j.at("clip").get<double>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.init_scale = j.value("init_scale", 0.05);
  c.hidden_width = j.value("hidden_width", kHiddenWidth);
  return c;
}

inline json to_json(const Normalizer& n) {
  return json{{"means", n.means}, {"std_devs", n.std_devs}};
}

inline Normalizer normalizer_from_json(const json& j) {
  Normalizer n{j.at("means").get<std::vector<double>>(), j.at("std_devs").get<std::vector<double>>()};
  if (n.means.size() != n.std_devs.size()) throw Error(Errc::kParse, "normalizer arrays differ in length");
  for (double s : n.std_devs)
    if (!(s > 0.0)) throw Error(Errc::kParse, "normalizer std_devs must be positive");
  return n;
}

/// Layer sizes, activations, row-major weights (fan_in x fan_out) and biases.
inline json to_json(const Mlp& net) {
  json weights = json::array(), biases = json::array();
  for (const auto& l : net.layers()) {
    std::vector<double> w;
    w.reserve(static_cast<std::size_t>(l.weight.size()));
    for (Eigen::Index i = 0; i < l.weight.rows(); ++i)
      for (Eigen::Index j = 0; j < l.weight.cols(); ++j) w.push_back(l.weight(i, j));
    weights.push_back(std::move(w));
    biases.push_back(std::vector<double>(l.bias.data(), l.bias.data() + l.bias.size()));
  }
  return json{{"layer_dims", net.dims()},
              {"activation", "relu"},
              {"output_activation", "linear"},
              {"weights", std::move(weights)},
              {"biases", std::move(biases)}};
}

inline Mlp mlp_from_json(const json& j) {
  if (j.value("activation", "relu") != "relu" || j.value("output_activation", "linear") != "linear") {
    throw Error(Errc::kParse, "only relu hidden / linear output networks are supported");
  }
  Mlp net(j.at("layer_dims").get<std::vector<std::size_t>>());
  const auto& weights = j.at("weights");
  const auto& biases = j.at("biases");
  if (weights.size() != net.num_layers() || biases.size() != net.num_layers()) {
    throw Error(Errc::kParse, "layer count does not match layer_dims");
  }
  for (std::size_t l = 0; l < net.num_layers(); ++l) {
    auto& layer = net.layers()[l];
    const auto w = weights[l].get<std::vector<double>>();
    const auto b = biases[l].get<std::vector<double>>();
    if (w.size() != static_cast<std::size_t>(layer.weight.size()) ||
        b.size() != static_cast<std::size_t>(layer.bias.size())) {
      throw Error(Errc::kParse, "parameter array size mismatch in layer " + std::to_string(l));
    }
    std::size_t k = 0;
    for (Eigen::Index i = 0; i < layer.weight.rows(); ++i)
      for (Eigen::Index c = 0; c < layer.weight.cols(); ++c) layer.weight(i, c) = w[k++];
    for (Eigen::Index c = 0; c < layer.bias.size(); ++c) layer.bias(c) = b[static_cast<std::size_t>(c)];
  }
  if (!net.all_finite()) throw Error(Errc::kNonFinite, "network parameters are not finite");
  return net;
}

/// Everything needed to apply a trained map to raw data.
struct GeneratorModel {
  Generator generator;
  TrainConfig config;
  std::optional<Normalizer> normalizer;  // applied before G, inverted after
  CostKind cost = CostKind::kSquaredL1;
  std::vector<std::string> feature_names;
  std::string source_group;
  std::string target_group;

  /// G applied in normalized space, returned in raw units.
  FeatureMatrix map_raw(const FeatureMatrix& raw) const {
    if (!normalizer) return map_points(generator, raw);
    return normalizer->inverse_transform(map_points(generator, normalizer->transform(raw)));
  }
};

inline json to_json(const GeneratorModel& m) {
  json j = to_json(m.generator.net);
  j["feature_names"] = m.feature_names;
  j["source_group"] = m.source_group;
  j["target_group"] = m.target_group;
  j["cost"] = std::string(cost_name(m.cost));
  j["train_config"] = to_json(m.config);
  j["normalizer"] = m.normalizer ? to_json(*m.normalizer) : json(nullptr);
  return j;
}

inline GeneratorModel generator_model_from_json(const json& j) {
  GeneratorModel m;
  try {
    m.generator = Generator{mlp_from_json(j)};
    if (m.generator.net.input_dim() != m.generator.net.output_dim()) {
      throw Error(Errc::kParse, "generator output dimension must equal its input dimension");
    }
    m.config = train_config_from_json(j.at("train_config"));
    if (!j.at("normalizer").is_null()) m.normalizer = normalizer_from_json(j.at("normalizer"));
    const auto cost = parse_cost_kind(j.value("cost", "sql1"));
    if (!cost) throw Error(Errc::kParse, "unknown cost kind");
    m.cost = *cost;
    m.feature_names = j.value("feature_names", FeatureMatrix::default_names(m.generator.dims()));
    m.source_group = j.value("source_group", "");
    m.target_group = j.value("target_group", "");
  } catch (const json::exception& e) {
    throw Error(Errc::kParse, std::string("malformed generator file: ") + e.what());
  }
  if (m.feature_names.size() != m.generator.dims()) throw Error(Errc::kParse, "feature_names length mismatch");
  if (m.normalizer && m.normalizer->dims() != m.generator.dims()) throw Error(Errc::kParse, "normalizer dimension mismatch");
  return m;
}

inline void save_generator_model(const GeneratorModel& m, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error(Errc::kBadConfig, "cannot write '" + path + "'");
  out << to_json(m).dump(1) << '\n';
}

inline GeneratorModel load_generator_model(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::kParse, "cannot open '" + path + "'");
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw Error(Errc::kParse, "'" + path + "' is not valid JSON: " + e.what());
  }
  return generator_model_from_json(j);
}

}  // namespace fliptest
