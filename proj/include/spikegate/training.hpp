#pragma once

#include <chrono>
#include <numbers>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "spikegate/datasets.hpp"
#include "spikegate/models.hpp"
#include "spikegate/network.hpp"
#include "spikegate/optim.hpp"

namespace spikegate {

// ---------------------------------------------------------------------------
// Loss

/// Per-sample weights of the objective: poisoned samples count `poisoned`,
/// clean ones `clean`.
struct LossWeights {
  double poisoned = 0.5;
  double clean = 0.5;
};

struct LossResult {
  double loss = 0.0;
  Tensor grad;  // d loss / d logits, [N, C]
  std::size_t correct = 0;
};

/// (wp * sum CE over poisoned + wc * sum CE over clean) / (wp * n_p + wc * n_c),
/// with CE the softmax cross-entropy of each row of `logits`. For an
/// all-clean batch this is the plain mean cross-entropy.
inline LossResult weighted_cross_entropy(const Tensor& logits, std::span<const std::size_t> labels,
                                         std::span<const char> poisoned, const LossWeights& w) {
  if (logits.rank() != 2 || logits.dim(0) != labels.size()) {
    throw ShapeError("loss: logits " + shape_string(logits.shape()) + " for " + std::to_string(labels.size()) + " labels");
  }
  if (w.poisoned < 0.0 || w.poisoned > 1.0 || w.clean < 0.0 || w.clean > 1.0) {
    throw ConfigError("loss weights must lie in [0,1]");
  }
  const std::size_t n = logits.dim(0), c = logits.dim(1);
  double denom = 0.0;
  for (std::size_t i = 0; i < n; ++i) denom += (!poisoned.empty() && poisoned[i]) ? w.poisoned : w.clean;
  if (!(denom > 0.0)) throw ConfigError("loss: every sample in the batch has zero weight");
  LossResult r;
  r.grad = Tensor(logits.shape());
  std::vector<double> p(c);
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] >= c) throw ConfigError("loss: label out of range");
    const double* z = logits.ptr() + i * c;
    double m = z[0];
    for (std::size_t k = 1; k < c; ++k) m = std::max(m, z[k]);
    double sum = 0.0;
    for (std::size_t k = 0; k < c; ++k) sum += p[k] = std::exp(z[k] - m);
    const double wi = ((!poisoned.empty() && poisoned[i]) ? w.poisoned : w.clean) / denom;
    r.loss += wi * -(z[labels[i]] - m - std::log(sum));
    for (std::size_t k = 0; k < c; ++k) {
      r.grad[i * c + k] = wi * (p[k] / sum - (k == labels[i] ? 1.0 : 0.0));
    }
    if (argmax(std::span<const double>(z, c)) == labels[i]) ++r.correct;
  }
  return r;
}

// ---------------------------------------------------------------------------
// Configuration

struct TrainConfig {
  OptimizerKind optimizer = OptimizerKind::adam;
  std::size_t epochs = 20;
  double lr = 1e-3;
  bool cosine_lr = false;  // anneal lr to lr/100 over the epochs (half cosine)
  double momentum = 0.9;
  double weight_decay = 0.0;
  std::size_t batch_size = 16;
  std::uint64_t seed = 0;
  std::size_t timesteps = 16;
  Surrogate surrogate{SurrogateKind::sigmoid, 1.0};
  double alpha = 0.5, beta = 0.5;   // ANN objective: poisoned, clean
  double lambda = 0.5, mu = 0.5;    // SNN objective: poisoned, clean
  double output_scale = 1.0;        // SNN logits = output_scale * spike count / T
  StdbKernel stdb{};
  std::size_t eval_batch = 100;

  void validate() const {
    if (batch_size == 0) throw ConfigError("batch size must be positive");
    if (timesteps == 0) throw ConfigError("timesteps must be >= 1");
    if (!(output_scale > 0.0)) throw ConfigError("output scale must be positive");
    validate_surrogate(surrogate);
    for (double v : {alpha, beta, lambda, mu}) {
      if (v < 0.0 || v > 1.0) throw ConfigError("loss weights must lie in [0,1]");
    }
    Optimizer(optimizer, lr, momentum, weight_decay);
  }
};

struct EpochStats {
  std::size_t epoch = 0;
  double loss = 0.0;
  double train_acc = 0.0;  // percent, measured on the training forward passes
  double seconds = 0.0;
};

struct TrainHistory {
  std::vector<EpochStats> epochs;
};

// ---------------------------------------------------------------------------
// Forward / backward helpers

/// Steps a network runs on a dataset: the event frame count for event
/// data, `T` for static images on an SNN, 1 for an ANN.
inline std::size_t run_steps(const Network& net, const Dataset& d, std::size_t T) {
  if (d.kind == SampleKind::event) {
    if (!net.spiking()) throw ConfigError("event data needs a spiking network");
    return d.timesteps();
  }
  return net.spiking() ? T : 1;
}

/// Class scores: output spike counts / T for an SNN, outputs for an ANN.
inline Tensor network_scores(Network& net, const Batch& b, std::size_t T, const RunOptions& opt) {
  Tensor y = net.run(NetInput{b.data, b.temporal}, T, opt);
  if (net.spiking()) y *= 1.0 / static_cast<double>(T);
  return y;
}

/// Loss and parameter gradients for one batch; gradients are left in
/// params().grad() (zeroed first).
inline double loss_and_gradients(Network& net, const Batch& b, std::size_t T, RunOptions opt, const LossWeights& w,
                                 double output_scale = 1.0, std::size_t* correct = nullptr) {
  opt.record = true;
  net.params().zero_grads();
  Tensor scores = network_scores(net, b, T, opt);
  const double k = net.spiking() ? output_scale : 1.0;
  if (k != 1.0) scores *= k;
  LossResult r = weighted_cross_entropy(scores, b.labels, b.poisoned, w);
  if (!std::isfinite(r.loss)) throw NumericError("non-finite loss");
  if (correct) *correct = r.correct;
  Tensor g = std::move(r.grad);
  g *= net.spiking() ? k / static_cast<double>(T) : 1.0;
  net.backward(g);
  return r.loss;
}

/// Forward-only loss, for finite-difference checks.
inline double batch_loss(Network& net, const Batch& b, std::size_t T, RunOptions opt, const LossWeights& w,
                         double output_scale = 1.0) {
  opt.record = false;
  Tensor scores = network_scores(net, b, T, opt);
  if (net.spiking() && output_scale != 1.0) scores *= output_scale;
  return weighted_cross_entropy(scores, b.labels, b.poisoned, w).loss;
}

/// Scores [N, C] for a whole dataset in inference mode.
inline Tensor dataset_scores(const NetworkSpec& spec, ParameterSet& params, const Dataset& d, std::size_t T,
                             Observer* observer = nullptr, std::size_t batch = 100) {
  if (d.empty()) throw ConfigError("cannot evaluate on an empty dataset");
  Network net(spec, params);
  const std::size_t steps = run_steps(net, d, T);
  RunOptions opt;
  opt.observer = observer;
  std::vector<Tensor> parts;
  const auto idx = all_indices(d);
  for (std::size_t s = 0; s < d.size(); s += batch) {
    const std::size_t e = std::min(d.size(), s + batch);
    Batch b = make_batch(d, std::span<const std::size_t>(idx).subspan(s, e - s));
    parts.push_back(network_scores(net, b, steps, opt));
  }
  const std::size_t c = parts.front().dim(1);
  Tensor out({d.size(), c});
  std::size_t off = 0;
  for (const auto& p : parts) {
    std::copy(p.data().begin(), p.data().end(), out.data().begin() + static_cast<std::ptrdiff_t>(off));
    off += p.size();
  }
  return out;
}

inline std::vector<std::size_t> predict(const NetworkSpec& spec, ParameterSet& params, const Dataset& d, std::size_t T) {
  const Tensor s = dataset_scores(spec, params, d, T);
  const std::size_t c = s.dim(1);
  std::vector<std::size_t> out(d.size());
  for (std::size_t i = 0; i < d.size(); ++i) out[i] = argmax(std::span<const double>(s.ptr() + i * c, c));
  return out;
}

/// A network ready to evaluate: topology, parameters and the number of
/// steps an SNN runs per static sample (ignored for ANNs).
struct Model {
  NetworkSpec spec;
  ParameterSet params;
  std::size_t timesteps = 1;

  bool spiking() const { return is_spiking_spec(spec); }
};

inline std::vector<std::size_t> predict(Model& m, const Dataset& d) { return predict(m.spec, m.params, d, m.timesteps); }

// ---------------------------------------------------------------------------
// Trainers

namespace detail {

enum class TrainMode { ann, bptt, stdb };

inline TrainHistory train_loop(const NetworkSpec& spec, ParameterSet& params, const Dataset& data, const TrainConfig& cfg,
                               TrainMode mode) {
  cfg.validate();
  data.validate();
  validate_spec(spec);
  if (data.sample_shape() != spec.input_shape &&
      !(data.kind == SampleKind::event &&
        Shape(data.sample_shape().begin() + 1, data.sample_shape().end()) == spec.input_shape)) {
    throw ShapeError("dataset samples " + shape_string(data.sample_shape()) + " do not match network input " +
                     shape_string(spec.input_shape));
  }
  Network net(spec, params);
  if (mode == TrainMode::ann && net.spiking()) throw ConfigError("train_ann needs a network without spike layers");
  if (mode != TrainMode::ann && !net.spiking()) throw ConfigError("SNN training needs a spiking network");
  const std::size_t T = run_steps(net, data, cfg.timesteps);
  const LossWeights w = mode == TrainMode::ann ? LossWeights{cfg.alpha, cfg.beta} : LossWeights{cfg.lambda, cfg.mu};

  Optimizer opt(cfg.optimizer, cfg.lr, cfg.momentum, cfg.weight_decay);
  Rng shuffle(derive_seed(cfg.seed, "train.shuffle"));
  Rng dropout(derive_seed(cfg.seed, "train.dropout"));
  RunOptions ro;
  ro.training = true;
  ro.surrogate = cfg.surrogate;
  ro.rng = &dropout;
  if (mode == TrainMode::stdb) ro.stdb = cfg.stdb;

  TrainHistory hist;
  auto idx = all_indices(data);
  for (std::size_t e = 0; e < cfg.epochs; ++e) {
    const auto t0 = std::chrono::steady_clock::now();
    if (cfg.cosine_lr && cfg.epochs > 1) {
      const double f = 0.5 * (1.0 + std::cos(std::numbers::pi * static_cast<double>(e) / static_cast<double>(cfg.epochs - 1)));
      opt.set_lr(cfg.lr * (0.01 + 0.99 * f));
    }
    shuffle.shuffle(std::span<std::size_t>(idx));
    double loss_sum = 0.0;
    std::size_t correct = 0, batches = 0;
    for (std::size_t s = 0; s < idx.size(); s += cfg.batch_size) {
      const std::size_t n = std::min(cfg.batch_size, idx.size() - s);
      const Batch b = make_batch(data, std::span<const std::size_t>(idx).subspan(s, n));
      std::size_t c = 0;
      double loss = 0.0;
      try {
        loss = loss_and_gradients(net, b, T, ro, w, cfg.output_scale, &c);
      } catch (const NumericError& err) {
        throw NumericError("training diverged at epoch " + std::to_string(e) + ": " + err.what());
      }
      for (const auto& name : params.trainable_names()) {
        if (!params.grad(name).all_finite()) {
          throw NumericError("training diverged at epoch " + std::to_string(e) + ": non-finite gradient in " + name);
        }
      }
      opt.step(params);
      loss_sum += loss;
      correct += c;
      ++batches;
    }
    const double mean_loss = loss_sum / static_cast<double>(batches);
    if (!std::isfinite(mean_loss)) throw NumericError("training diverged at epoch " + std::to_string(e));
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    hist.epochs.push_back({e, mean_loss, 100.0 * static_cast<double>(correct) / static_cast<double>(data.size()), secs});
  }
  params.zero_grads();
  return hist;
}

}  // namespace detail

/// Supervised ANN training (cross-entropy on the network outputs,
/// weights alpha/beta for poisoned/clean samples).
inline TrainHistory train_ann(const NetworkSpec& spec, ParameterSet& params, const Dataset& data, const TrainConfig& cfg) {
  return detail::train_loop(spec, params, data, cfg, detail::TrainMode::ann);
}

/// Direct SNN training with surrogate gradients through time
/// (cross-entropy on rate-decoded scores, weights lambda/mu).
inline TrainHistory train_snn_bptt(const NetworkSpec& spec, ParameterSet& params, const Dataset& data,
                                   const TrainConfig& cfg) {
  return detail::train_loop(spec, params, data, cfg, detail::TrainMode::bptt);
}

/// Fine-tunes a converted SNN with the spike-timing kernel in place of the
/// voltage surrogate. Thresholds stay fixed unless marked trainable.
inline TrainHistory stdb_finetune(const NetworkSpec& spec, ParameterSet& params, const Dataset& data,
                                  const TrainConfig& cfg) {
  return detail::train_loop(spec, params, data, cfg, detail::TrainMode::stdb);
}

}  // namespace spikegate
