#pragma once

#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "spikegate/pipelines.hpp"
#include "spikegate/poisoning.hpp"

namespace spikegate {

/// Mean pre-reset voltage and mean firing rate per neuron of every spike
/// layer, averaged over time steps and probe samples.
struct ActivationProfile {
  struct Layer {
    std::string id;
    Tensor voltage;
    Tensor rate;
  };
  std::vector<Layer> layers;
  std::uint64_t probe_hash = 0;
  std::size_t T = 0;

  const Layer& layer(const std::string& id) const {
    for (const auto& l : layers) {
      if (l.id == id) return l;
    }
    throw ConfigError("profile has no layer '" + id + "'");
  }
};

namespace detail {

class ProfileRecorder final : public Observer {
 public:
  void on_spike_step(const LayerSpec& layer, std::size_t, const Tensor&, const Tensor& pre, const Tensor& spikes) override {
    auto it = index_.find(layer.id);
    if (it == index_.end()) {
      it = index_.emplace(layer.id, sums.size()).first;
      Shape per(pre.shape().begin() + 1, pre.shape().end());
      sums.push_back({layer.id, Tensor(per), Tensor(per)});
    }
    ActivationProfile::Layer& acc = sums[it->second];
    const std::size_t n = acc.voltage.size();
    if (pre.size() % n != 0) throw ShapeError("profile: layer '" + layer.id + "' changed shape");
    for (std::size_t b = 0; b < pre.size() / n; ++b) {
      const double* v = pre.ptr() + b * n;
      const double* s = spikes.ptr() + b * n;
      for (std::size_t i = 0; i < n; ++i) {
        acc.voltage[i] += v[i];
        acc.rate[i] += s[i];
      }
    }
  }

  std::vector<ActivationProfile::Layer> sums;  // in first-seen (network) order

 private:
  std::map<std::string, std::size_t> index_;
};

}  // namespace detail

inline ActivationProfile profile_model(Model& m, const Dataset& probes, std::size_t T) {
  if (!m.spiking()) throw ConfigError("profiling needs a spiking model");
  if (probes.empty()) throw ConfigError("profiling needs a non-empty probe set");
  if (T == 0) throw ConfigError("profiling needs T >= 1");
  detail::ProfileRecorder rec;
  dataset_scores(m.spec, m.params, probes, T, &rec);
  const std::size_t steps = probes.kind == SampleKind::event ? probes.timesteps() : T;
  const double denom = static_cast<double>(probes.size() * steps);
  ActivationProfile p;
  p.probe_hash = probes.hash();
  p.T = steps;
  for (auto& l : rec.sums) {
    l.voltage *= 1.0 / denom;
    l.rate *= 1.0 / denom;
    p.layers.push_back(std::move(l));
  }
  return p;
}

struct DivergenceScores {
  std::vector<std::pair<std::string, double>> per_layer;
  double aggregate = 0.0;
};

/// Per layer: mean |dV| + mean |dRate|; aggregate = max over the chosen
/// layers (all when `layers` is empty).
inline DivergenceScores divergence_score(const ActivationProfile& p, const ActivationProfile& q,
                                         const std::vector<std::string>& layers = {}) {
  if (p.probe_hash != q.probe_hash) throw ConfigError("divergence: profiles were taken on different probe sets");
  if (p.T != q.T) throw ConfigError("divergence: profiles use different T");
  if (p.layers.size() != q.layers.size()) throw ShapeError("divergence: profiles have different layer counts");
  DivergenceScores out;
  for (std::size_t k = 0; k < p.layers.size(); ++k) {
    const auto& a = p.layers[k];
    const auto& b = q.layers[k];
    if (a.id != b.id || a.voltage.shape() != b.voltage.shape()) {
      throw ShapeError("divergence: layer '" + a.id + "' does not match '" + b.id + "'");
    }
    if (!layers.empty() && std::find(layers.begin(), layers.end(), a.id) == layers.end()) continue;
    const std::size_t n = a.voltage.size();
    double dv = 0.0, dr = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      dv += std::abs(a.voltage[i] - b.voltage[i]);
      dr += std::abs(a.rate[i] - b.rate[i]);
    }
    const double score = n == 0 ? 0.0 : (dv + dr) / static_cast<double>(n);
    out.per_layer.emplace_back(a.id, score);
    out.aggregate = std::max(out.aggregate, score);
  }
  if (!layers.empty() && out.per_layer.size() != layers.size()) {
    throw ConfigError("divergence: a requested layer is missing from the profiles");
  }
  return out;
}

/// mean + 3 * sample standard deviation of clean-vs-clean scores.
inline double calibrate_threshold(const std::vector<double>& clean_scores) {
  if (clean_scores.size() < 5) throw ConfigError("threshold calibration needs at least 5 clean retrains");
  const double n = static_cast<double>(clean_scores.size());
  const double mean = std::accumulate(clean_scores.begin(), clean_scores.end(), 0.0) / n;
  double ss = 0.0;
  for (double s : clean_scores) ss += (s - mean) * (s - mean);
  return mean + 3.0 * std::sqrt(ss / (n - 1.0));
}

/// `layers` picks the spike layers that are compared. Empty means the output
/// layer, whose spike counts carry the trigger response most directly; hidden
/// layers differ between clean retrains almost as much as under a backdoor.
/// {"all"} compares every spike layer.
struct DetectionOptions {
  std::size_t T = 16;
  std::vector<std::string> layers;
};

namespace detail {

// Layer filter for divergence_score (empty = all).
inline std::vector<std::string> detection_layers(const ActivationProfile& p, const DetectionOptions& opt) {
  if (opt.layers.size() == 1 && opt.layers[0] == "all") return {};
  if (!opt.layers.empty()) return opt.layers;
  if (p.layers.empty()) throw ConfigError("detection: model has no spike layers");
  return {p.layers.back().id};
}

}  // namespace detail

struct DetectionReport {
  DivergenceScores scores;
  double threshold = 0.0;
  bool backdoored = false;

  const char* verdict() const { return backdoored ? "backdoored" : "clean"; }
};

/// Trigger-bearing probes: the malicious split of `clean_test` (at most
/// `limit` samples, 0 = all).
inline Dataset make_trigger_probes(const Dataset& clean_test, const PoisonPlan& plan, std::size_t limit = 0) {
  Dataset probes = make_eval_splits(clean_test, plan).second;
  if (limit && probes.size() > limit) probes.samples.resize(limit);
  if (probes.empty()) throw ConfigError("no trigger probes: every test sample is of the target class");
  return probes;
}

/// Threshold from >= 5 clean retrains compared against the reference.
inline double calibrate_detection(Model& reference, std::vector<Model>& clean_retrains, const Dataset& probes,
                                  const DetectionOptions& opt) {
  const ActivationProfile ref = profile_model(reference, probes, opt.T);
  const auto layers = detail::detection_layers(ref, opt);
  std::vector<double> scores;
  for (auto& m : clean_retrains) scores.push_back(divergence_score(ref, profile_model(m, probes, opt.T), layers).aggregate);
  return calibrate_threshold(scores);
}

inline DetectionReport detect_backdoor(Model& suspect, Model& reference, const Dataset& probes, double threshold,
                                       const DetectionOptions& opt) {
  if (!(threshold >= 0.0)) throw ConfigError("detection threshold must be non-negative");
  DetectionReport r;
  const ActivationProfile ref = profile_model(reference, probes, opt.T);
  r.scores = divergence_score(profile_model(suspect, probes, opt.T), ref, detail::detection_layers(ref, opt));
  r.threshold = threshold;
  r.backdoored = r.scores.aggregate > threshold;
  return r;
}

inline nlohmann::json to_json(const DetectionReport& r) {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& [id, s] : r.scores.per_layer) layers.push_back({{"layer", id}, {"score", s}});
  return {{"per_layer", layers},
          {"aggregate", r.scores.aggregate},
          {"threshold", r.threshold},
          {"verdict", r.verdict()}};
}

inline DetectionReport detection_from_json(const nlohmann::json& j) {
  try {
    DetectionReport r;
    for (const auto& l : j.at("per_layer")) r.scores.per_layer.emplace_back(l.at("layer").get<std::string>(), l.at("score").get<double>());
    r.scores.aggregate = j.at("aggregate").get<double>();
    r.threshold = j.at("threshold").get<double>();
    const std::string v = j.at("verdict").get<std::string>();
    if (v != "clean" && v != "backdoored") throw FormatError("bad verdict '" + v + "'");
    r.backdoored = v == "backdoored";
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("bad detection JSON: ") + e.what());
  }
}

// ---------------------------------------------------------------------------
// Elimination

struct PurifyConfig {
  bool rebalance = true;      // re-derive thresholds on the clean data first
  double percentile = 99.9;   // of time-averaged input currents
  TrainConfig finetune = desk_stdb_config();
};

struct PurifyOutcome {
  double acc = 0.0;
  std::optional<double> asr;
};

struct PurifyResult {
  Model purified;
  PurifyOutcome before;
  PurifyOutcome after;
  std::map<std::string, double> thresholds;  // after rebalancing (empty if skipped)
};

/// Clean-data fine-tuning of a backdoored SNN: optional threshold
/// rebalancing, then STDB on `clean_train`. ACC/ASR are measured before and
/// after at the fine-tuning T; `malicious_test` may be empty (ASR unset).
inline PurifyResult finetune_purify(const Model& backdoored, const Dataset& clean_train, const Dataset& clean_test,
                                    const Dataset& malicious_test, std::size_t target, const PurifyConfig& cfg) {
  if (!is_spiking_spec(backdoored.spec)) throw ConfigError("purification needs a spiking model");
  if (clean_train.provenance != Provenance::clean) throw ConfigError("purification needs a clean dataset");
  for (const auto& s : clean_train.samples) {
    if (s.poisoned) throw ConfigError("purification dataset contains poisoned samples");
  }
  auto measure = [&](Model& m) {
    PurifyOutcome o;
    o.acc = accuracy(m, clean_test);
    if (!malicious_test.empty()) o.asr = attack_success_rate(m, malicious_test, target);
    return o;
  };
  PurifyResult r;
  r.purified = backdoored;
  r.purified.timesteps = cfg.finetune.timesteps;
  r.before = measure(r.purified);
  if (cfg.rebalance) {
    r.thresholds = rebalance_thresholds(r.purified.spec, r.purified.params, clean_train, cfg.finetune.timesteps, cfg.percentile);
  }
  stdb_finetune(r.purified.spec, r.purified.params, clean_train, cfg.finetune);
  r.after = measure(r.purified);
  return r;
}

}  // namespace spikegate
