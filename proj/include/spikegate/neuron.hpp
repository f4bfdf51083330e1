#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "spikegate/tensor.hpp"

namespace spikegate {

enum class NeuronKind { integrate_fire, leaky_integrate_fire };
enum class ResetMode { hard, soft };

/// Parameters of one population of spiking neurons.
struct NeuronConfig {
  NeuronKind kind = NeuronKind::integrate_fire;
  double threshold = 1.0;
  double tau = 2.0;  // LIF only
  ResetMode reset = ResetMode::hard;

  void validate() const {
    if (!(threshold > 0.0) || !std::isfinite(threshold)) {
      throw ConfigError("neuron threshold must be positive, got " + std::to_string(threshold));
    }
    if (kind == NeuronKind::leaky_integrate_fire && !(tau > 1.0)) {
      throw ConfigError("LIF tau must exceed 1 for a stable Euler step, got " + std::to_string(tau));
    }
  }

  // U <- leak * U + gain * I
  double leak() const { return kind == NeuronKind::integrate_fire ? 1.0 : 1.0 - 1.0 / tau; }
  double gain() const { return kind == NeuronKind::integrate_fire ? 1.0 : 1.0 / tau; }

  friend bool operator==(const NeuronConfig&, const NeuronConfig&) = default;
};

/// Membrane voltages of a neuron population plus the index of each neuron's
/// most recent spike (-1 = never fired).
struct MembraneState {
  Tensor voltage;
  std::vector<int> last_spike_time;

  static MembraneState resting(const Shape& shape) {
    MembraneState s;
    s.voltage = Tensor(shape, 0.0);
    s.last_spike_time.assign(s.voltage.size(), -1);
    return s;
  }
};

/// Binary spike frames, time-major: frames has shape [T, ...].
struct SpikeTensor {
  std::size_t timesteps = 0;
  Tensor frames;

  void validate() const {
    if (timesteps == 0) throw ShapeError("spike tensor needs T >= 1");
    if (frames.rank() == 0 || frames.dim(0) != timesteps) {
      throw ShapeError("spike tensor frames " + shape_string(frames.shape()) +
                       " do not lead with T=" + std::to_string(timesteps));
    }
    for (double v : frames.data()) {
      if (v != 0.0 && v != 1.0) throw ShapeError("spike tensor holds a non-binary value");
    }
  }
};

// ---------------------------------------------------------------------------
// Surrogate gradients for the Heaviside fire decision.

enum class SurrogateKind { rectangular, polynomial, sigmoid, gaussian };

struct Surrogate {
  SurrogateKind kind = SurrogateKind::rectangular;
  double width = 1.0;

  friend bool operator==(const Surrogate&, const Surrogate&) = default;
};

inline const char* surrogate_name(SurrogateKind k) {
  switch (k) {
    case SurrogateKind::rectangular: return "rect";
    case SurrogateKind::polynomial: return "poly";
    case SurrogateKind::sigmoid: return "sigmoid";
    case SurrogateKind::gaussian: return "gauss";
  }
  return "?";
}

inline SurrogateKind parse_surrogate(const std::string& s) {
  for (SurrogateKind k : {SurrogateKind::rectangular, SurrogateKind::polynomial, SurrogateKind::sigmoid,
                          SurrogateKind::gaussian}) {
    if (s == surrogate_name(k)) return k;
  }
  throw ConfigError("unknown surrogate '" + s + "'");
}

inline const char* neuron_kind_name(NeuronKind k) { return k == NeuronKind::integrate_fire ? "if" : "lif"; }

inline NeuronKind parse_neuron_kind(const std::string& s) {
  if (s == "if") return NeuronKind::integrate_fire;
  if (s == "lif") return NeuronKind::leaky_integrate_fire;
  throw ConfigError("unknown neuron kind '" + s + "'");
}

inline void validate_surrogate(const Surrogate& s) {
  if (!(s.width > 0.0) || !std::isfinite(s.width)) {
    throw ConfigError("surrogate width must be positive, got " + std::to_string(s.width));
  }
}

/// dS/dU replacement. Each form is a unit-area density centred on the
/// threshold with scale `width`.
inline double surrogate_grad(const Surrogate& s, double u, double threshold) {
  const double a = s.width;
  const double d = u - threshold;
  switch (s.kind) {
    case SurrogateKind::rectangular:
      return std::abs(d) < 0.5 * a ? 1.0 / a : 0.0;
    case SurrogateKind::polynomial:
      return std::max(0.0, 1.0 / a - std::abs(d) / (a * a));
    case SurrogateKind::sigmoid: {
      const double sig = 1.0 / (1.0 + std::exp(-d / a));
      return sig * (1.0 - sig) / a;
    }
    case SurrogateKind::gaussian: {
      const double x = d / a;
      return std::exp(-0.5 * x * x) / (std::sqrt(2.0 * std::numbers::pi) * a);
    }
  }
  return 0.0;
}

/// Antiderivative of surrogate_grad, rising from 0 to 1 across the
/// threshold. Used as a smooth stand-in for the spike in the relaxed
/// forward mode, where the network becomes differentiable end to end and
/// BPTT can be checked against finite differences.
inline double surrogate_primitive(const Surrogate& s, double u, double threshold) {
  const double x = (u - threshold) / s.width;
  switch (s.kind) {
    case SurrogateKind::rectangular:
      return std::clamp(x + 0.5, 0.0, 1.0);
    case SurrogateKind::polynomial:
      if (x <= -1.0) return 0.0;
      if (x < 0.0) return 0.5 * (1.0 + x) * (1.0 + x);
      if (x < 1.0) return 1.0 - 0.5 * (1.0 - x) * (1.0 - x);
      return 1.0;
    case SurrogateKind::sigmoid:
      return 1.0 / (1.0 + std::exp(-x));
    case SurrogateKind::gaussian:
      return 0.5 * std::erfc(-x / std::numbers::sqrt2);
  }
  return 0.0;
}

/// Time-since-last-spike kernel used by STDB fine-tuning in place of the
/// voltage surrogate: gamma * exp(-dt / tau_s); zero for neurons that have
/// never fired.
struct StdbKernel {
  double gamma = 0.3;
  double tau_s = 5.0;

  double operator()(int t, int last_spike) const {
    if (last_spike < 0) return 0.0;
    return gamma * std::exp(-static_cast<double>(t - last_spike) / tau_s);
  }
};

// ---------------------------------------------------------------------------
// Dynamics.

/// Advances a population by one step in place.
///
/// Integrates the weighted input (IF: U += I; LIF: U += (I - U)/tau), emits
/// spikes where U >= threshold, then resets (hard: U = 0, soft: U -= threshold).
/// `pre_reset` receives the voltage before the reset when non-empty.
inline void advance_membrane(const NeuronConfig& cfg, double threshold, std::span<double> voltage,
                             std::span<const double> input, std::span<double> spikes,
                             std::span<double> pre_reset, std::span<int> last_spike, int t) {
  const double leak = cfg.leak();
  const double gain = cfg.gain();
  const bool hard = cfg.reset == ResetMode::hard;
  for (std::size_t i = 0; i < voltage.size(); ++i) {
    const double u = leak * voltage[i] + gain * input[i];
    if (!pre_reset.empty()) pre_reset[i] = u;
    if (u >= threshold) {
      spikes[i] = 1.0;
      voltage[i] = hard ? 0.0 : u - threshold;
      if (!last_spike.empty()) last_spike[i] = t;
    } else {
      spikes[i] = 0.0;
      voltage[i] = u;
    }
  }
}

struct NeuronStep {
  Tensor spikes;
  MembraneState state;
};

/// One simulation step for a population; `t` is recorded as the spike
/// time of neurons that fire.
inline NeuronStep step_neuron(const NeuronConfig& cfg, const MembraneState& state,
                              const Tensor& weighted_input, int t) {
  cfg.validate();
  state.voltage.require_same_shape(weighted_input, "step_neuron");
  if (!weighted_input.all_finite()) throw NumericError("step_neuron: non-finite weighted input");
  NeuronStep out{Tensor(weighted_input.shape()), state};
  advance_membrane(cfg, cfg.threshold, out.state.voltage.data(), weighted_input.data(),
                   out.spikes.data(), {}, out.state.last_spike_time, t);
  return out;
}

struct RateDecoding {
  std::vector<double> scores;
  std::size_t predicted = 0;
};

/// Lowest index wins ties.
inline std::size_t argmax(std::span<const double> v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i) {
    if (v[i] > v[best]) best = i;
  }
  return best;
}

/// Firing rate per output neuron; frames has shape [T, C].
inline RateDecoding rate_decode(const SpikeTensor& output) {
  output.validate();
  const std::size_t T = output.timesteps;
  const std::size_t C = output.frames.size() / T;
  RateDecoding r;
  r.scores.assign(C, 0.0);
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t c = 0; c < C; ++c) r.scores[c] += output.frames[t * C + c];
  }
  for (double& s : r.scores) s /= static_cast<double>(T);
  r.predicted = argmax(r.scores);
  return r;
}

}  // namespace spikegate
