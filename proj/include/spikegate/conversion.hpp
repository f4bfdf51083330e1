#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "spikegate/training.hpp"

namespace spikegate {

enum class NormStrategy { maxnorm, robustnorm, spikenorm };

inline const char* norm_strategy_name(NormStrategy s) {
  switch (s) {
    case NormStrategy::maxnorm: return "max";
    case NormStrategy::robustnorm: return "robust";
    case NormStrategy::spikenorm: return "spike";
  }
  return "?";
}

inline NormStrategy parse_norm_strategy(const std::string& s) {
  if (s == "max" || s == "maxnorm") return NormStrategy::maxnorm;
  if (s == "robust" || s == "robustnorm") return NormStrategy::robustnorm;
  if (s == "spike" || s == "spikenorm") return NormStrategy::spikenorm;
  throw ConfigError("unknown normalization strategy '" + s + "'");
}

struct ConversionConfig {
  NormStrategy strategy = NormStrategy::maxnorm;
  double percentile = 99.9;         // robustnorm
  double scale = 1.0;               // spikenorm threshold multiplier
  Dataset reference;                // empty = the pipeline's training set
  std::size_t reference_limit = 0;  // use at most this many reference samples (0 = all)
  std::size_t timesteps = 64;       // spikenorm simulation length; T of the converted model
  NeuronConfig neuron = conversion_neuron();

  void validate() const {
    if (!(percentile > 0.0 && percentile <= 100.0)) throw ConfigError("percentile must lie in (0,100]");
    if (!(scale > 0.0 && scale <= 1.0)) throw ConfigError("spike-norm scale must lie in (0,1]");
    if (timesteps == 0) throw ConfigError("conversion timesteps must be >= 1");
    neuron.validate();
  }
};

struct ConversionResult {
  Model snn;  // parameters carry "thresh.<id>" per spike layer
  std::map<std::string, double> lambdas;     // per activation layer (max/robust)
  std::map<std::string, double> thresholds;  // per spike layer
};

/// Nearest-rank percentile: the smallest value with at least p% of the
/// sample at or below it.
inline double nearest_rank_percentile(std::vector<double> v, double p) {
  if (v.empty()) throw ConfigError("percentile of an empty sample");
  const double rank = std::ceil(p / 100.0 * static_cast<double>(v.size()));
  std::size_t k = rank < 1.0 ? 0 : static_cast<std::size_t>(rank) - 1;
  k = std::min(k, v.size() - 1);
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(k), v.end());
  return v[k];
}

namespace detail {

inline Dataset limited_reference(const Dataset& ref, std::size_t limit) {
  if (ref.empty()) throw ConfigError("conversion needs a non-empty reference dataset");
  if (limit == 0 || limit >= ref.size()) return ref;
  Dataset d = ref;
  d.samples.resize(limit);
  return d;
}

class PreActivationRecorder final : public Observer {
 public:
  void on_activation(const LayerSpec& layer, const Tensor& pre) override {
    auto& v = values[layer.id];
    v.insert(v.end(), pre.data().begin(), pre.data().end());
  }
  std::map<std::string, std::vector<double>> values;
};

// Rescales one sequence so that the signal leaving each ReLU is divided by
// that layer's lambda. `lambda_in` is the scale of the incoming signal and
// `lambda_end` the target for a trailing linear layer (residual bodies).
inline double normalize_sequence(const std::vector<LayerSpec>& seq, double lambda_in, const double* lambda_end,
                                 ParameterSet& params, const std::map<std::string, double>& lambdas) {
  double cur = lambda_in;
  auto next_lambda = [&](std::size_t i) -> double {
    for (std::size_t j = i + 1; j < seq.size(); ++j) {
      const LayerSpec& l = seq[j];
      if (l.kind == LayerKind::relu) return lambdas.at(l.id);
      if (l.kind == LayerKind::maxpool || l.kind == LayerKind::avgpool || l.kind == LayerKind::dropout) continue;
      throw ConfigError("normalization: layer '" + seq[i].id + "' is followed by '" + l.id + "' before any activation");
    }
    if (!lambda_end) throw ConfigError("normalization: layer '" + seq[i].id + "' has no following activation");
    return *lambda_end;
  };
  for (std::size_t i = 0; i < seq.size(); ++i) {
    const LayerSpec& l = seq[i];
    switch (l.kind) {
      case LayerKind::conv:
      case LayerKind::affine: {
        const double target = next_lambda(i);
        params.value(l.id + ".weight") *= cur / target;
        if (params.contains(l.id + ".bias")) params.value(l.id + ".bias") *= 1.0 / target;
        cur = target;
        break;
      }
      case LayerKind::relu:
        cur = lambdas.at(l.id);
        break;
      case LayerKind::residual: {
        const double out = next_lambda(i);
        normalize_sequence(l.body, cur, &out, params, lambdas);
        if (l.shortcut.empty()) {
          params.set(shortcut_scale_name(l.id), Tensor({1}, cur / out));
        } else {
          normalize_sequence(l.shortcut, cur, &out, params, lambdas);
        }
        cur = out;
        break;
      }
      default:
        break;
    }
  }
  return cur;
}

inline void collect_spike_layers(const std::vector<LayerSpec>& seq, std::vector<const LayerSpec*>& out) {
  for (const auto& l : seq) {
    if (l.kind == LayerKind::spike) out.push_back(&l);
    collect_spike_layers(l.body, out);
    collect_spike_layers(l.shortcut, out);
  }
}

class CurrentRecorder final : public Observer {
 public:
  explicit CurrentRecorder(std::string id) : id_(std::move(id)) {}
  void on_spike_step(const LayerSpec& layer, std::size_t, const Tensor& current, const Tensor&, const Tensor&) override {
    if (layer.id != id_) return;
    for (double v : current.data()) max_current = std::max(max_current, v);
    if (sum.shape() != current.shape()) sum = Tensor(current.shape());
    sum += current;
    ++steps;
  }
  double max_current = -std::numeric_limits<double>::infinity();
  Tensor sum;  // summed over the steps of one batch
  std::size_t steps = 0;

 private:
  std::string id_;
};

inline void ensure_shortcut_scales(const std::vector<LayerSpec>& seq, ParameterSet& params) {
  for (const auto& l : seq) {
    if (l.kind != LayerKind::residual) continue;
    if (l.shortcut.empty() && !params.contains(shortcut_scale_name(l.id))) {
      params.add(shortcut_scale_name(l.id), Tensor({1}, 1.0), false);
    }
    ensure_shortcut_scales(l.body, params);
  }
}

}  // namespace detail

inline std::vector<std::string> spike_layer_ids(const NetworkSpec& spec) {
  std::vector<const LayerSpec*> ls;
  detail::collect_spike_layers(spec.layers, ls);
  std::vector<std::string> ids;
  for (const auto* l : ls) ids.push_back(l->id);
  return ids;
}

/// Per-spike-layer thresholds set one layer at a time, in network order:
/// the SNN (earlier thresholds already final) runs on the reference data
/// for T steps and threshold(l) = scale * the largest input current layer l
/// receives. Layers that never receive positive current keep threshold 1.
inline std::map<std::string, double> balance_thresholds_by_max_current(const NetworkSpec& snn_spec, ParameterSet& params,
                                                                       const Dataset& reference, std::size_t T,
                                                                       double scale) {
  std::map<std::string, double> out;
  for (const auto& id : spike_layer_ids(snn_spec)) {
    detail::CurrentRecorder rec(id);
    dataset_scores(snn_spec, params, reference, T, &rec);
    const double th = rec.max_current > 0.0 ? scale * rec.max_current : 1.0;
    params.set(threshold_name(id), Tensor({1}, th));
    out[id] = th;
  }
  return out;
}

/// Data-based threshold rebalancing for an existing SNN: layer by layer,
/// threshold(l) = p-th percentile of the time-averaged input current per
/// neuron and sample on `data`. Used to re-derive thresholds on clean data.
inline std::map<std::string, double> rebalance_thresholds(const NetworkSpec& snn_spec, ParameterSet& params,
                                                          const Dataset& data, std::size_t T, double percentile) {
  std::map<std::string, double> out;
  const auto idx = all_indices(data);
  for (const auto& id : spike_layer_ids(snn_spec)) {
    std::vector<double> means;
    Network net(snn_spec, params);
    const std::size_t steps = run_steps(net, data, T);
    for (std::size_t s = 0; s < data.size(); s += 100) {
      const std::size_t e = std::min(data.size(), s + 100);
      Batch b = make_batch(data, std::span<const std::size_t>(idx).subspan(s, e - s));
      detail::CurrentRecorder rec(id);
      RunOptions opt;
      opt.observer = &rec;
      net.run(NetInput{b.data, b.temporal}, steps, opt);
      for (double v : rec.sum.data()) means.push_back(v / static_cast<double>(rec.steps));
    }
    double th = nearest_rank_percentile(std::move(means), percentile);
    if (!(th > 0.0)) th = params.contains(threshold_name(id)) ? params.value(threshold_name(id))[0] : 1.0;
    params.set(threshold_name(id), Tensor({1}, th));
    out[id] = th;
  }
  return out;
}

/// ANN -> SNN conversion. The ANN must satisfy the conversion constraints;
/// the SNN has the same layers with every ReLU replaced by an IF spike
/// layer, and carries an explicit threshold per spike layer.
///
/// maxnorm / robustnorm: lambda(l) is the max (or p-th percentile) of the
/// ANN pre-activations of ReLU l over the reference set; weights feeding
/// ReLU l are scaled by lambda(l-1) / lambda(l); thresholds are 1.
/// spikenorm: weights are copied, thresholds balanced layer by layer.
inline ConversionResult convert(const NetworkSpec& ann_spec, const ParameterSet& ann_params, const ConversionConfig& cfg) {
  cfg.validate();
  const ConstraintReport report = validate_conversion_constraints(ann_spec, &ann_params);
  if (!report.ok()) {
    const auto& v = report.violations.front();
    throw ConfigError("conversion constraint '" + v.rule + "' violated at layer '" + v.layer_id + "'");
  }
  const Dataset ref = detail::limited_reference(cfg.reference, cfg.reference_limit);

  ConversionResult res;
  res.snn.spec = ann_to_snn_topology(ann_spec, cfg.neuron);
  res.snn.params = ann_params;
  res.snn.timesteps = cfg.timesteps;
  ParameterSet& p = res.snn.params;
  p.zero_grads();
  detail::ensure_shortcut_scales(ann_spec.layers, p);

  if (cfg.strategy == NormStrategy::spikenorm) {
    res.thresholds = balance_thresholds_by_max_current(res.snn.spec, p, ref, cfg.timesteps, cfg.scale);
    return res;
  }

  ParameterSet ann_copy = ann_params;
  detail::PreActivationRecorder rec;
  dataset_scores(ann_spec, ann_copy, ref, 1, &rec);
  const double pct = cfg.strategy == NormStrategy::maxnorm ? 100.0 : cfg.percentile;
  for (auto& [id, vals] : rec.values) {
    double lambda = nearest_rank_percentile(std::move(vals), pct);
    if (!(lambda > 0.0)) lambda = 1.0;
    res.lambdas[id] = lambda;
  }
  detail::normalize_sequence(ann_spec.layers, 1.0, nullptr, p, res.lambdas);
  for (const auto& id : spike_layer_ids(res.snn.spec)) {
    p.set(threshold_name(id), Tensor({1}, 1.0));
    res.thresholds[id] = 1.0;
  }
  return res;
}

}  // namespace spikegate
