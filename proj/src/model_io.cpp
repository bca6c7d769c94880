#include "deconf/model_io.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace deconf::io {

namespace {

using nlohmann::json;

constexpr const char* kFormat = "deconf-model";
constexpr int kFormatVersion = 1;

std::string activation_name(nn::Activation a) {
  switch (a) {
    case nn::Activation::kRelu: return "relu";
    case nn::Activation::kSigmoid: return "sigmoid";
    case nn::Activation::kLinear: return "linear";
  }
  throw std::invalid_argument("unknown activation");
}

nn::Activation activation_from(const std::string& s) {
  if (s == "relu") return nn::Activation::kRelu;
  if (s == "sigmoid") return nn::Activation::kSigmoid;
  if (s == "linear") return nn::Activation::kLinear;
  throw ParseError("unknown activation '" + s + "'");
}

json spec_json(const nn::NetworkSpec& spec) {
  return {{"layer_sizes", spec.layer_sizes},
          {"hidden_activation", activation_name(spec.hidden_activation)},
          {"output_activation", activation_name(spec.output_activation)}};
}

nn::NetworkSpec spec_from(const json& j) {
  nn::NetworkSpec spec;
  spec.layer_sizes = j.at("layer_sizes").get<std::vector<int>>();
  spec.hidden_activation = activation_from(j.at("hidden_activation").get<std::string>());
  spec.output_activation = activation_from(j.at("output_activation").get<std::string>());
  spec.validate();
  return spec;
}

json params_json(const nn::NetworkParams& params) {
  json layers = json::array();
  for (const auto& layer : params.layers) {
    std::vector<double> w;
    w.reserve(static_cast<std::size_t>(layer.weight.size()));
    for (Eigen::Index r = 0; r < layer.weight.rows(); ++r) {
      for (Eigen::Index c = 0; c < layer.weight.cols(); ++c) w.push_back(layer.weight(r, c));
    }
    layers.push_back({{"rows", layer.weight.rows()},
                      {"cols", layer.weight.cols()},
                      {"weight", w},
                      {"bias", std::vector<double>(layer.bias.data(), layer.bias.data() + layer.bias.size())}});
  }
  return layers;
}

nn::NetworkParams params_from(const json& j, const nn::NetworkSpec& spec) {
  nn::NetworkParams params;
  for (const auto& lj : j) {
    const auto rows = lj.at("rows").get<Eigen::Index>();
    const auto cols = lj.at("cols").get<Eigen::Index>();
    const auto w = lj.at("weight").get<std::vector<double>>();
    const auto b = lj.at("bias").get<std::vector<double>>();
    if (static_cast<Eigen::Index>(w.size()) != rows * cols || static_cast<Eigen::Index>(b.size()) != rows) {
      throw ParseError("model layer has inconsistent sizes");
    }
    nn::DenseLayer layer;
    layer.weight.resize(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r) {
      for (Eigen::Index c = 0; c < cols; ++c) layer.weight(r, c) = w[static_cast<std::size_t>(r * cols + c)];
    }
    layer.bias = Eigen::Map<const Eigen::VectorXd>(b.data(), rows);
    params.layers.push_back(std::move(layer));
  }
  try {
    nn::check_compatible(params, spec);
  } catch (const std::invalid_argument& e) {
    throw ParseError(std::string("model parameters do not match spec: ") + e.what());
  }
  return params;
}

}  // namespace

std::string model_to_json(const train::TrainedModel& model) {
  json j;
  j["format"] = kFormat;
  j["format_version"] = kFormatVersion;
  j["method"] = train::to_string(model.method);
  j["config_hash"] = model.config_hash;
  j["spec"] = spec_json(model.spec);
  j["params"] = params_json(model.params);
  if (model.covariate) {
    j["covariate"] = {{"weight", model.covariate->weight}, {"train_mean", model.covariate->train_mean}};
  }
  if (model.adversary) {
    const auto& a = *model.adversary;
    j["adversary"] = {{"nuisance_kind", to_string(a.kind)},
                      {"spec", spec_json(a.spec)},
                      {"params", params_json(a.params)},
                      {"input_mean", a.input_mean},
                      {"input_scale", a.input_scale},
                      {"target_mean", a.target_mean},
                      {"target_scale", a.target_scale}};
  }
  return j.dump(1) + "\n";
}

train::TrainedModel model_from_json(const std::string& text) {
  try {
    const json j = json::parse(text);
    if (j.at("format").get<std::string>() != kFormat) throw ParseError("not a deconf model file");
    if (j.at("format_version").get<int>() != kFormatVersion) throw ParseError("unsupported model format version");
    train::TrainedModel m;
    m.method = train::method_from_string(j.at("method").get<std::string>());
    m.config_hash = j.at("config_hash").get<std::string>();
    m.spec = spec_from(j.at("spec"));
    m.params = params_from(j.at("params"), m.spec);
    if (j.contains("covariate")) {
      m.covariate = train::CovariateHead{j["covariate"].at("weight").get<double>(),
                                         j["covariate"].at("train_mean").get<double>()};
    }
    if (j.contains("adversary")) {
      const auto& aj = j["adversary"];
      train::Adversary a;
      a.kind = nuisance_kind_from_string(aj.at("nuisance_kind").get<std::string>());
      a.spec = spec_from(aj.at("spec"));
      a.params = params_from(aj.at("params"), a.spec);
      a.input_mean = aj.at("input_mean").get<double>();
      a.input_scale = aj.at("input_scale").get<double>();
      a.target_mean = aj.at("target_mean").get<double>();
      a.target_scale = aj.at("target_scale").get<double>();
      m.adversary = std::move(a);
    }
    return m;
  } catch (const json::exception& e) {
    throw ParseError(std::string("malformed model file: ") + e.what());
  }
}

void save_model(const train::TrainedModel& model, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << model_to_json(model);
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

train::TrainedModel load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open model file " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return model_from_json(buf.str());
}

}  // namespace deconf::io
