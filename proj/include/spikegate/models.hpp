#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "spikegate/layer_spec.hpp"
#include "spikegate/params.hpp"
#include "spikegate/random.hpp"

namespace spikegate {

// ---------------------------------------------------------------------------
// Validation

namespace detail {

inline void collect_kinds(const std::vector<LayerSpec>& seq, std::set<LayerKind>& kinds) {
  for (const auto& l : seq) {
    kinds.insert(l.kind);
    collect_kinds(l.body, kinds);
    collect_kinds(l.shortcut, kinds);
  }
}

inline void collect_ids(const std::vector<LayerSpec>& seq, std::set<std::string>& ids) {
  for (const auto& l : seq) {
    if (l.id.empty()) throw ConfigError("layer of kind " + std::string(layer_kind_name(l.kind)) + " has no id");
    if (!ids.insert(l.id).second) throw ConfigError("duplicate layer id '" + l.id + "'");
    collect_ids(l.body, ids);
    collect_ids(l.shortcut, ids);
  }
}

}  // namespace detail

inline bool is_spiking_spec(const NetworkSpec& spec) {
  std::set<LayerKind> kinds;
  detail::collect_kinds(spec.layers, kinds);
  return kinds.count(LayerKind::spike) != 0;
}

/// Checks ids, shape compatibility, the ANN/SNN activation split and the
/// output contract. Throws naming the first offending layer.
inline Shape validate_spec(const NetworkSpec& spec) {
  if (spec.layers.empty()) throw ConfigError("network '" + spec.name + "' has no layers");
  if (spec.input_shape.empty() || shape_size(spec.input_shape) == 0) {
    throw ConfigError("network '" + spec.name + "' has an empty input shape");
  }
  if (spec.num_classes == 0) throw ConfigError("network '" + spec.name + "' has zero classes");
  std::set<std::string> ids;
  detail::collect_ids(spec.layers, ids);
  std::set<LayerKind> kinds;
  detail::collect_kinds(spec.layers, kinds);
  if (kinds.count(LayerKind::spike) && kinds.count(LayerKind::relu)) {
    throw ConfigError("network '" + spec.name + "' mixes relu and spike layers");
  }
  Shape shape = spec.input_shape;
  for (const auto& l : spec.layers) shape = layer_output_shape(l, shape);
  if (shape != Shape{spec.num_classes}) {
    throw ShapeError("network '" + spec.name + "' ends in shape " + shape_string(shape) + ", expected [" +
                     std::to_string(spec.num_classes) + "]");
  }
  if (kinds.count(LayerKind::spike) && spec.layers.back().kind != LayerKind::spike) {
    throw ConfigError("spiking network '" + spec.name + "' must end in a spike layer for rate decoding (last is '" +
                      spec.layers.back().id + "')");
  }
  return shape;
}

struct ConstraintViolation {
  std::string layer_id;
  std::string rule;  // "activation", "bias", "normalization"

  friend bool operator==(const ConstraintViolation&, const ConstraintViolation&) = default;
};

struct ConstraintReport {
  std::vector<ConstraintViolation> violations;
  bool ok() const { return violations.empty(); }
};

/// Lists violations of the rules an ANN must satisfy to be converted:
/// ReLU activations only, zero biases, dropout rather than normalization.
/// Parameter values are checked when `params` is given.
inline ConstraintReport validate_conversion_constraints(const NetworkSpec& ann, const ParameterSet* params = nullptr) {
  ConstraintReport report;
  std::function<void(const std::vector<LayerSpec>&)> walk = [&](const std::vector<LayerSpec>& seq) {
    for (const auto& l : seq) {
      switch (l.kind) {
        case LayerKind::sigmoid:
        case LayerKind::spike:
          report.violations.push_back({l.id, "activation"});
          break;
        case LayerKind::batchnorm:
          report.violations.push_back({l.id, "normalization"});
          break;
        case LayerKind::conv:
        case LayerKind::affine: {
          bool nonzero = l.bias;
          const std::string b = l.id + ".bias";
          if (params && params->contains(b)) {
            for (double v : params->value(b).data()) nonzero = nonzero || v != 0.0;
          }
          if (nonzero) report.violations.push_back({l.id, "bias"});
          break;
        }
        case LayerKind::residual:
          walk(l.body);
          walk(l.shortcut);
          break;
        default:
          break;
      }
    }
  };
  walk(ann.layers);
  return report;
}

// ---------------------------------------------------------------------------
// ANN <-> SNN topology

inline NeuronConfig conversion_neuron() {
  NeuronConfig n;
  n.kind = NeuronKind::integrate_fire;
  n.reset = ResetMode::soft;
  n.threshold = 1.0;
  return n;
}

namespace detail {

inline std::vector<LayerSpec> map_activations(const std::vector<LayerSpec>& seq, LayerKind from,
                                              const std::function<LayerSpec(const LayerSpec&)>& f) {
  std::vector<LayerSpec> out;
  out.reserve(seq.size());
  for (const auto& l : seq) {
    if (l.kind == from) {
      out.push_back(f(l));
      continue;
    }
    LayerSpec c = l;
    c.body = map_activations(l.body, from, f);
    c.shortcut = map_activations(l.shortcut, from, f);
    out.push_back(std::move(c));
  }
  return out;
}

}  // namespace detail

/// Replaces every ReLU by a spike layer with the same id (IF, soft reset by
/// default); everything else is kept in order.
inline NetworkSpec ann_to_snn_topology(const NetworkSpec& ann, const NeuronConfig& neuron = conversion_neuron()) {
  const ConstraintReport report = validate_conversion_constraints(ann);
  if (!report.ok()) {
    const auto& v = report.violations.front();
    throw ConfigError("conversion constraint '" + v.rule + "' violated at layer '" + v.layer_id + "'");
  }
  if (is_spiking_spec(ann)) throw ConfigError("network '" + ann.name + "' is already spiking");
  NetworkSpec snn = ann;
  snn.layers = detail::map_activations(ann.layers, LayerKind::relu,
                                       [&](const LayerSpec& l) { return layers::spike(l.id, neuron); });
  return snn;
}

/// Inverse of ann_to_snn_topology: spike layers become ReLUs.
inline NetworkSpec snn_to_ann_topology(const NetworkSpec& snn) {
  NetworkSpec ann = snn;
  ann.layers = detail::map_activations(snn.layers, LayerKind::spike,
                                       [](const LayerSpec& l) { return layers::simple(LayerKind::relu, l.id); });
  return ann;
}

// ---------------------------------------------------------------------------
// Builders

struct ModelOptions {
  bool spiking = true;
  NeuronConfig neuron{};
  double dropout = 0.2;
  bool batchnorm = false;
  std::size_t width = 8;      // first block channels
  std::size_t hidden = 128;   // classifier hidden units (MicroVGG)
};

namespace detail {

inline LayerSpec activation(const ModelOptions& o, const std::string& id) {
  return o.spiking ? layers::spike(id, o.neuron) : layers::simple(LayerKind::relu, id);
}

}  // namespace detail

/// Desk-scale VGG: Block1(w), Block1(2w), Block2(2w), then
/// affine(hidden) - act - dropout - affine(classes) - act. With
/// `batchnorm`, a batchnorm layer sits between each conv/hidden affine and
/// its activation (directly trained SNNs only).
inline NetworkSpec micro_vgg(const Shape& input, std::size_t classes, const ModelOptions& o = {}) {
  using namespace layers;
  const std::size_t w1 = o.width, w2 = 2 * o.width;
  NetworkSpec s;
  s.name = "micro_vgg";
  s.input_shape = input;
  s.num_classes = classes;
  int c = 0, a = 0;
  auto conv_act = [&](std::size_t ch) {
    const std::string n = std::to_string(++c);
    s.layers.push_back(conv("conv" + n, ch));
    if (o.batchnorm) s.layers.push_back(simple(LayerKind::batchnorm, "bn" + n));
    s.layers.push_back(detail::activation(o, "act" + std::to_string(++a)));
  };
  conv_act(w1), s.layers.push_back(maxpool("pool1"));
  conv_act(w2), s.layers.push_back(maxpool("pool2"));
  conv_act(w2), conv_act(w2), s.layers.push_back(maxpool("pool3"));
  s.layers.push_back(affine("fc1", o.hidden));
  if (o.batchnorm) s.layers.push_back(simple(LayerKind::batchnorm, "bn_fc1"));
  s.layers.push_back(detail::activation(o, "act" + std::to_string(++a)));
  s.layers.push_back(dropout("drop1", o.dropout));
  s.layers.push_back(affine("fc2", classes));
  s.layers.push_back(detail::activation(o, "out"));
  return s;
}

namespace detail {

inline LayerSpec basic_block(const ModelOptions& o, const std::string& id, std::size_t in_ch, std::size_t out_ch,
                             std::size_t stride) {
  using namespace layers;
  std::vector<LayerSpec> body;
  body.push_back(conv(id + ".conv1", out_ch, 3, stride, 1));
  if (o.batchnorm) body.push_back(simple(LayerKind::batchnorm, id + ".bn1"));
  body.push_back(activation(o, id + ".act1"));
  body.push_back(conv(id + ".conv2", out_ch, 3, 1, 1));
  if (o.batchnorm) body.push_back(simple(LayerKind::batchnorm, id + ".bn2"));
  std::vector<LayerSpec> shortcut;
  if (stride != 1 || in_ch != out_ch) {
    shortcut.push_back(conv(id + ".down", out_ch, 1, stride, 0));
    if (o.batchnorm) shortcut.push_back(simple(LayerKind::batchnorm, id + ".down_bn"));
  }
  return residual(id, std::move(body), std::move(shortcut));
}

}  // namespace detail

/// Desk-scale ResNet: stem conv - [bn] - act - maxpool, one pair of
/// BasicBlocks (residual add on input currents, spike after the add),
/// avgpool, affine(classes) - act.
inline NetworkSpec micro_resnet(const Shape& input, std::size_t classes, const ModelOptions& o = {}) {
  using namespace layers;
  NetworkSpec s;
  s.name = "micro_resnet";
  s.input_shape = input;
  s.num_classes = classes;
  s.layers.push_back(conv("conv1", o.width));
  if (o.batchnorm) s.layers.push_back(simple(LayerKind::batchnorm, "bn1"));
  s.layers.push_back(detail::activation(o, "act1"));
  s.layers.push_back(maxpool("pool1"));
  for (int b = 1; b <= 2; ++b) {
    const std::string id = "block" + std::to_string(b);
    s.layers.push_back(detail::basic_block(o, id, o.width, o.width, 1));
    s.layers.push_back(detail::activation(o, id + ".out"));
  }
  s.layers.push_back(avgpool("avgpool", 2, 2));
  s.layers.push_back(affine("fc", classes));
  s.layers.push_back(detail::activation(o, "out"));
  return s;
}

/// Full-size spike-based VGG11 layout (Block1 x2, Block2 x3, avgpool,
/// three-layer classifier).
inline NetworkSpec vgg11(const Shape& input, std::size_t classes, const ModelOptions& o = {}) {
  using namespace layers;
  NetworkSpec s;
  s.name = "vgg11";
  s.input_shape = input;
  s.num_classes = classes;
  int c = 0, a = 0, p = 0;
  auto conv_act = [&](std::size_t ch) {
    s.layers.push_back(conv("conv" + std::to_string(++c), ch));
    s.layers.push_back(detail::activation(o, "act" + std::to_string(++a)));
  };
  auto pool = [&] { s.layers.push_back(maxpool("pool" + std::to_string(++p))); };
  conv_act(64), pool();
  conv_act(128), pool();
  for (std::size_t ch : {256, 512, 512}) {
    conv_act(ch), conv_act(ch), pool();
  }
  s.layers.push_back(avgpool("avgpool", 0, 1));
  s.layers.push_back(affine("fc1", 4096));
  s.layers.push_back(detail::activation(o, "act" + std::to_string(++a)));
  s.layers.push_back(dropout("drop1", o.dropout));
  s.layers.push_back(affine("fc2", 4096));
  s.layers.push_back(detail::activation(o, "act" + std::to_string(++a)));
  s.layers.push_back(dropout("drop2", o.dropout));
  s.layers.push_back(affine("fc3", classes));
  s.layers.push_back(detail::activation(o, "out"));
  return s;
}

/// Full-size spike-based ResNet18 layout: stem, four stages of two
/// BasicBlocks (64/128/256/512 channels, projection shortcuts where the
/// shape changes), global avgpool, classifier.
inline NetworkSpec resnet18(const Shape& input, std::size_t classes, ModelOptions o = {}) {
  using namespace layers;
  NetworkSpec s;
  s.name = "resnet18";
  s.input_shape = input;
  s.num_classes = classes;
  s.layers.push_back(conv("conv1", 64));
  if (o.batchnorm) s.layers.push_back(simple(LayerKind::batchnorm, "bn1"));
  s.layers.push_back(detail::activation(o, "act1"));
  s.layers.push_back(maxpool("pool1"));
  std::size_t in_ch = 64;
  int b = 0;
  for (std::size_t stage = 0; stage < 4; ++stage) {
    const std::size_t ch = std::size_t{64} << stage;
    for (int k = 0; k < 2; ++k) {
      const std::string id = "block" + std::to_string(++b);
      const std::size_t stride = (stage > 0 && k == 0) ? 2 : 1;
      s.layers.push_back(detail::basic_block(o, id, in_ch, ch, stride));
      s.layers.push_back(detail::activation(o, id + ".out"));
      in_ch = ch;
    }
  }
  s.layers.push_back(avgpool("avgpool", 0, 1));
  s.layers.push_back(affine("fc", classes));
  s.layers.push_back(detail::activation(o, "out"));
  return s;
}

inline NetworkSpec model_by_name(const std::string& name, const Shape& input, std::size_t classes,
                                 const ModelOptions& o) {
  if (name == "micro_vgg") return micro_vgg(input, classes, o);
  if (name == "micro_resnet") return micro_resnet(input, classes, o);
  if (name == "vgg11") return vgg11(input, classes, o);
  if (name == "resnet18") return resnet18(input, classes, o);
  throw ConfigError("unknown model '" + name + "'");
}

// ---------------------------------------------------------------------------
// Parameter initialisation

namespace detail {

inline void kaiming_uniform(Tensor& w, std::size_t fan_in, std::uint64_t seed) {
  Rng rng(seed);
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  for (double& v : w.data()) v = rng.uniform(-bound, bound);
}

inline Shape init_sequence(const std::vector<LayerSpec>& seq, Shape shape, ParameterSet& params, std::uint64_t seed) {
  for (const auto& l : seq) {
    const Shape out = layer_output_shape(l, shape);
    switch (l.kind) {
      case LayerKind::conv: {
        Tensor w({l.out_channels, shape[0], l.kernel, l.kernel});
        kaiming_uniform(w, shape[0] * l.kernel * l.kernel, derive_seed(seed, l.id + ".weight"));
        params.add(l.id + ".weight", std::move(w), true);
        params.add(l.id + ".bias", Tensor({l.out_channels}), l.bias);
        break;
      }
      case LayerKind::affine: {
        const std::size_t fan_in = shape_size(shape);
        Tensor w({l.out_features, fan_in});
        kaiming_uniform(w, fan_in, derive_seed(seed, l.id + ".weight"));
        params.add(l.id + ".weight", std::move(w), true);
        params.add(l.id + ".bias", Tensor({l.out_features}), l.bias);
        break;
      }
      case LayerKind::batchnorm: {
        const std::size_t c = shape[0];
        params.add(l.id + ".gamma", Tensor({c}, 1.0), true);
        params.add(l.id + ".beta", Tensor({c}, 0.0), true);
        params.add(l.id + ".running_mean", Tensor({c}, 0.0), false);
        params.add(l.id + ".running_var", Tensor({c}, 1.0), false);
        break;
      }
      case LayerKind::residual:
        init_sequence(l.body, shape, params, seed);
        init_sequence(l.shortcut, shape, params, seed);
        break;
      default:
        break;
    }
    shape = out;
  }
  return shape;
}

}  // namespace detail

/// Kaiming-uniform weights (bound sqrt(6 / fan_in)), zero biases, unit
/// batchnorm scale. Each tensor draws from its own named sub-seed, so the
/// result depends only on (spec, seed).
inline ParameterSet build_network(const NetworkSpec& spec, std::uint64_t seed) {
  validate_spec(spec);
  ParameterSet params;
  detail::init_sequence(spec.layers, spec.input_shape, params, seed);
  return params;
}

// ---------------------------------------------------------------------------
// JSON spec files

inline nlohmann::json neuron_to_json(const NeuronConfig& n) {
  return {{"kind", n.kind == NeuronKind::integrate_fire ? "if" : "lif"},
          {"threshold", n.threshold},
          {"tau", n.tau},
          {"reset", n.reset == ResetMode::hard ? "hard" : "soft"}};
}

inline NeuronConfig neuron_from_json(const nlohmann::json& j) {
  NeuronConfig n;
  const std::string kind = j.value("kind", "if");
  if (kind == "if") {
    n.kind = NeuronKind::integrate_fire;
  } else if (kind == "lif") {
    n.kind = NeuronKind::leaky_integrate_fire;
  } else {
    throw ConfigError("unknown neuron kind '" + kind + "'");
  }
  n.threshold = j.value("threshold", 1.0);
  n.tau = j.value("tau", 2.0);
  const std::string reset = j.value("reset", "hard");
  if (reset != "hard" && reset != "soft") throw ConfigError("unknown reset mode '" + reset + "'");
  n.reset = reset == "hard" ? ResetMode::hard : ResetMode::soft;
  return n;
}

inline nlohmann::json layer_to_json(const LayerSpec& l) {
  nlohmann::json j{{"kind", layer_kind_name(l.kind)}, {"id", l.id}};
  switch (l.kind) {
    case LayerKind::conv:
      j["out_channels"] = l.out_channels;
      j["kernel"] = l.kernel;
      j["stride"] = l.stride;
      j["padding"] = l.padding;
      j["bias"] = l.bias;
      break;
    case LayerKind::affine:
      j["out_features"] = l.out_features;
      j["bias"] = l.bias;
      break;
    case LayerKind::maxpool:
    case LayerKind::avgpool:
      j["kernel"] = l.kernel;
      j["stride"] = l.stride;
      break;
    case LayerKind::dropout:
      j["p"] = l.drop_prob;
      break;
    case LayerKind::spike:
      j["neuron"] = neuron_to_json(l.neuron);
      break;
    case LayerKind::residual: {
      j["body"] = nlohmann::json::array();
      for (const auto& b : l.body) j["body"].push_back(layer_to_json(b));
      j["shortcut"] = nlohmann::json::array();
      for (const auto& s : l.shortcut) j["shortcut"].push_back(layer_to_json(s));
      break;
    }
    default:
      break;
  }
  return j;
}

inline LayerSpec layer_from_json(const nlohmann::json& j) {
  LayerSpec l;
  l.kind = parse_layer_kind(j.at("kind").get<std::string>());
  l.id = j.at("id").get<std::string>();
  l.out_channels = j.value("out_channels", std::size_t{0});
  l.out_features = j.value("out_features", std::size_t{0});
  l.kernel = j.value("kernel", std::size_t{3});
  l.stride = j.value("stride", std::size_t{1});
  l.padding = j.value("padding", std::size_t{0});
  l.bias = j.value("bias", false);
  l.drop_prob = j.value("p", 0.5);
  if (l.kind == LayerKind::spike) l.neuron = neuron_from_json(j.value("neuron", nlohmann::json::object()));
  if (j.contains("body"))
    for (const auto& b : j["body"]) l.body.push_back(layer_from_json(b));
  if (j.contains("shortcut"))
    for (const auto& s : j["shortcut"]) l.shortcut.push_back(layer_from_json(s));
  return l;
}

inline nlohmann::json spec_to_json(const NetworkSpec& s) {
  nlohmann::json j{{"name", s.name}, {"input_shape", s.input_shape}, {"num_classes", s.num_classes}};
  j["layers"] = nlohmann::json::array();
  for (const auto& l : s.layers) j["layers"].push_back(layer_to_json(l));
  return j;
}

inline NetworkSpec spec_from_json(const nlohmann::json& j) {
  NetworkSpec s;
  s.name = j.value("name", std::string("network"));
  s.input_shape = j.at("input_shape").get<Shape>();
  s.num_classes = j.at("num_classes").get<std::size_t>();
  for (const auto& l : j.at("layers")) s.layers.push_back(layer_from_json(l));
  return s;
}

inline void save_spec(const NetworkSpec& s, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << spec_to_json(s).dump(2) << '\n';
}

inline NetworkSpec load_spec(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path.string());
  try {
    return spec_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("spec file " + path.string() + ": " + e.what());
  }
}

}  // namespace spikegate
