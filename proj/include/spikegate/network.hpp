#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "spikegate/layers.hpp"
#include "spikegate/neuron.hpp"

namespace spikegate {

/// How spike layers turn voltage into output. `relaxed` replaces the step
/// function by the surrogate's antiderivative so that the whole unrolled
/// computation is differentiable; it exists for gradient verification.
enum class SpikeFunction { heaviside, relaxed };

/// Hooks into a forward pass. Conversion and defense profiling use these
/// to read pre-activations, input currents and voltages.
class Observer {
 public:
  virtual ~Observer() = default;
  virtual void on_activation(const LayerSpec& /*layer*/, const Tensor& /*pre_activation*/) {}
  virtual void on_spike_step(const LayerSpec& /*layer*/, std::size_t /*t*/, const Tensor& /*input_current*/,
                             const Tensor& /*pre_reset_voltage*/, const Tensor& /*spikes*/) {}
};

struct RunOptions {
  bool training = false;  // dropout masks, batch statistics
  bool record = false;    // keep what backward needs
  SpikeFunction spike_fn = SpikeFunction::heaviside;
  Surrogate surrogate{};
  std::optional<StdbKernel> stdb;  // replaces the surrogate when set
  Rng* rng = nullptr;
  Observer* observer = nullptr;
};

/// Network input: either one static frame per sample [N, ...] presented
/// at every step, or a temporal sequence [T, N, ...].
struct NetInput {
  Tensor data;
  bool temporal = false;
};

namespace detail {

class Module {
 public:
  virtual ~Module() = default;
  virtual Tensor forward(const Tensor& x, std::size_t t, const RunOptions& opt) = 0;
  virtual Tensor backward(const Tensor& gy, bool want_input_grad) = 0;
  virtual void reset() = 0;
  virtual bool has_spikes() const = 0;
};

inline void accumulate_grads(ParameterSet& params, std::map<std::string, Tensor>& grads) {
  for (auto& [name, g] : grads) params.grad(name) += g;
}

class StatelessModule final : public Module {
 public:
  StatelessModule(const LayerSpec& spec, ParameterSet& params) : spec_(spec), params_(params) {}

  Tensor forward(const Tensor& x, std::size_t, const RunOptions& opt) override {
    ForwardOptions fo{opt.training, opt.rng, nullptr};
    if (spec_.kind == LayerKind::dropout && opt.training) {
      // One mask per sequence: the same synapses stay dropped at every step.
      if (mask_.shape() != x.shape()) {
        if (!opt.rng) throw ConfigError("dropout '" + spec_.id + "': training mode needs a seeded generator");
        mask_ = Tensor(x.shape());
        for (double& m : mask_.data()) m = opt.rng->bernoulli(1.0 - spec_.drop_prob) ? 1.0 : 0.0;
      }
      fo.dropout_mask = &mask_;
    }
    if (spec_.kind == LayerKind::maxpool) {
      // Over spike trains the window winner is the input with the most
      // spikes so far, not whichever fired this step; for a single step
      // (ANNs, static prefixes) this is the plain maximum.
      if (running_.shape() != x.shape()) {
        running_ = x;
      } else {
        running_ += x;
      }
      fo.max_key = &running_;
    }
    if (opt.observer && (spec_.kind == LayerKind::relu || spec_.kind == LayerKind::sigmoid)) {
      opt.observer->on_activation(spec_, x);
    }
    if (!opt.record) return layer_forward(spec_, x, params_, nullptr, fo);
    caches_.emplace_back();
    return layer_forward(spec_, x, params_, &caches_.back(), fo);
  }

  Tensor backward(const Tensor& gy, bool want_input_grad) override {
    if (caches_.empty()) throw Error("layer '" + spec_.id + "': backward without a recorded forward pass");
    LayerGrads g = layer_backward(spec_, gy, caches_.back(), params_, want_input_grad);
    caches_.pop_back();
    accumulate_grads(params_, g.param_grads);
    return std::move(g.input_grad);
  }

  void reset() override {
    caches_.clear();
    mask_ = Tensor();
    running_ = Tensor();
  }
  bool has_spikes() const override { return false; }

 private:
  const LayerSpec& spec_;
  ParameterSet& params_;
  std::vector<LayerCache> caches_;
  Tensor mask_;
  Tensor running_;
};

class SpikeModule final : public Module {
 public:
  SpikeModule(const LayerSpec& spec, ParameterSet& params) : spec_(spec), params_(params) {}

  double threshold() const {
    const std::string name = threshold_name(spec_.id);
    return params_.contains(name) ? params_.value(name)[0] : spec_.neuron.threshold;
  }

  Tensor forward(const Tensor& x, std::size_t t, const RunOptions& opt) override {
    if (voltage_.shape() != x.shape()) {
      voltage_ = Tensor(x.shape());
      last_spike_.assign(x.size(), -1);
    }
    if (!x.all_finite()) throw NumericError("spike layer '" + spec_.id + "': non-finite input current");
    const NeuronConfig& cfg = spec_.neuron;
    const double th = threshold();
    Tensor spikes(x.shape());
    Tensor pre(x.shape());
    const int ti = static_cast<int>(t);
    if (opt.spike_fn == SpikeFunction::heaviside) {
      advance_membrane(cfg, th, voltage_.data(), x.data(), spikes.data(), pre.data(), last_spike_, ti);
    } else {
      const double leak = cfg.leak(), gain = cfg.gain();
      for (std::size_t i = 0; i < x.size(); ++i) {
        const double u = leak * voltage_[i] + gain * x[i];
        const double s = surrogate_primitive(opt.surrogate, u, th);
        pre[i] = u;
        spikes[i] = s;
        voltage_[i] = cfg.reset == ResetMode::hard ? u * (1.0 - s) : u - th * s;
        if (s >= 0.5) last_spike_[i] = ti;
      }
    }
    if (opt.observer) opt.observer->on_spike_step(spec_, t, x, pre, spikes);
    if (opt.record) {
      Step st{ti, std::move(pre), spikes, {}, opt.surrogate, opt.stdb, opt.spike_fn == SpikeFunction::relaxed};
      if (opt.stdb) st.last_spike = last_spike_;
      steps_.push_back(std::move(st));
    }
    return spikes;
  }

  // With Heaviside spikes the reset is detached: the carried gradient skips
  // the reset term, so for a hard reset dU(t)/dU_pre(t) = 1 - S(t) and for a
  // soft reset it is 1. Relaxed spikes are differentiated exactly.
  Tensor backward(const Tensor& gy, bool) override {
    if (steps_.empty()) throw Error("spike layer '" + spec_.id + "': backward without a recorded forward pass");
    const Step& st = steps_.back();
    st.pre_reset.require_same_shape(gy, ("spike layer '" + spec_.id + "' backward").c_str());
    if (carry_.shape() != gy.shape()) carry_ = Tensor(gy.shape());
    const NeuronConfig& cfg = spec_.neuron;
    const double th = threshold();
    const double leak = cfg.leak(), gain = cfg.gain();
    const bool hard = cfg.reset == ResetMode::hard;
    Tensor gx(gy.shape());
    for (std::size_t i = 0; i < gy.size(); ++i) {
      if (gy[i] == 0.0 && carry_[i] == 0.0) {
        gx[i] = 0.0;
        continue;
      }
      const double dsdu = st.stdb ? (*st.stdb)(st.t, st.last_spike[i]) : surrogate_grad(st.surrogate, st.pre_reset[i], th);
      double through = hard ? 1.0 - st.spikes[i] : 1.0;
      if (st.relaxed) through = hard ? through - st.pre_reset[i] * dsdu : 1.0 - th * dsdu;
      const double g_pre = gy[i] * dsdu + carry_[i] * through;
      gx[i] = g_pre * gain;
      carry_[i] = g_pre * leak;
    }
    steps_.pop_back();
    return gx;
  }

  void reset() override {
    voltage_ = Tensor();
    last_spike_.clear();
    steps_.clear();
    carry_ = Tensor();
  }
  bool has_spikes() const override { return true; }

 private:
  struct Step {
    int t;
    Tensor pre_reset;
    Tensor spikes;
    std::vector<int> last_spike;
    Surrogate surrogate;
    std::optional<StdbKernel> stdb;
    bool relaxed = false;
  };
  const LayerSpec& spec_;
  ParameterSet& params_;
  Tensor voltage_;
  std::vector<int> last_spike_;
  std::vector<Step> steps_;
  Tensor carry_;
};

class Sequential final : public Module {
 public:
  Sequential(const std::vector<LayerSpec>& specs, ParameterSet& params);

  Tensor forward(const Tensor& x, std::size_t t, const RunOptions& opt) override {
    return forward_range(x, t, opt, 0, modules_.size());
  }
  Tensor backward(const Tensor& gy, bool want_input_grad) override {
    return backward_range(gy, want_input_grad, 0, modules_.size());
  }

  Tensor forward_range(const Tensor& x, std::size_t t, const RunOptions& opt, std::size_t begin, std::size_t end) {
    Tensor h = x;
    for (std::size_t i = begin; i < end; ++i) h = modules_[i]->forward(h, t, opt);
    return h;
  }
  Tensor backward_range(const Tensor& gy, bool want_input_grad, std::size_t begin, std::size_t end) {
    Tensor g = gy;
    for (std::size_t i = end; i-- > begin;) g = modules_[i]->backward(g, want_input_grad || i > begin);
    return g;
  }

  void reset() override {
    for (auto& m : modules_) m->reset();
  }
  bool has_spikes() const override {
    for (const auto& m : modules_)
      if (m->has_spikes()) return true;
    return false;
  }
  std::size_t size() const { return modules_.size(); }
  bool empty() const { return modules_.empty(); }
  const Module& at(std::size_t i) const { return *modules_[i]; }

 private:
  std::vector<std::unique_ptr<Module>> modules_;
};

class ResidualModule final : public Module {
 public:
  ResidualModule(const LayerSpec& spec, ParameterSet& params)
      : spec_(spec), params_(params), body_(spec.body, params), shortcut_(spec.shortcut, params) {}

  double scale() const {
    const std::string name = shortcut_scale_name(spec_.id);
    return params_.contains(name) ? params_.value(name)[0] : 1.0;
  }

  Tensor forward(const Tensor& x, std::size_t t, const RunOptions& opt) override {
    Tensor y = body_.forward(x, t, opt);
    Tensor s = shortcut_.empty() ? x : shortcut_.forward(x, t, opt);
    y.require_same_shape(s, ("residual '" + spec_.id + "' merge").c_str());
    const double k = scale();
    for (std::size_t i = 0; i < y.size(); ++i) y[i] += k * s[i];
    return y;
  }

  Tensor backward(const Tensor& gy, bool) override {
    Tensor gx = body_.backward(gy, true);
    Tensor gs = gy;
    gs *= scale();
    if (!shortcut_.empty()) gs = shortcut_.backward(gs, true);
    gx += gs;
    return gx;
  }

  void reset() override {
    body_.reset();
    shortcut_.reset();
  }
  bool has_spikes() const override { return body_.has_spikes() || shortcut_.has_spikes(); }

 private:
  const LayerSpec& spec_;
  ParameterSet& params_;
  Sequential body_;
  Sequential shortcut_;
};

inline Sequential::Sequential(const std::vector<LayerSpec>& specs, ParameterSet& params) {
  for (const auto& l : specs) {
    switch (l.kind) {
      case LayerKind::spike:
        modules_.push_back(std::make_unique<SpikeModule>(l, params));
        break;
      case LayerKind::residual:
        modules_.push_back(std::make_unique<ResidualModule>(l, params));
        break;
      default:
        modules_.push_back(std::make_unique<StatelessModule>(l, params));
    }
  }
}

}  // namespace detail

/// Executable view of a NetworkSpec bound to a ParameterSet.
///
/// The same object runs ANNs (one pass) and SNNs (T steps). For static
/// inputs the layers before the first spike layer are evaluated once and
/// their output is reused at every step; the result is identical to
/// recomputing it, since those layers see the same input each step.
class Network {
 public:
  Network(const NetworkSpec& spec, ParameterSet& params) : spec_(spec), params_(params), root_(spec_.layers, params) {
    prefix_end_ = root_.size();
    readout_end_ = root_.size();
    if (!root_.has_spikes() && !spec_.layers.empty() && spec_.layers.back().kind == LayerKind::relu) {
      readout_end_ = root_.size() - 1;
    }
    for (std::size_t i = 0; i < root_.size(); ++i) {
      if (root_.at(i).has_spikes()) {
        prefix_end_ = i;
        break;
      }
    }
  }

  Network(const Network&) = delete;
  Network& operator=(const Network&) = delete;

  bool spiking() const { return root_.has_spikes(); }
  const NetworkSpec& spec() const { return spec_; }
  ParameterSet& params() { return params_; }

  void reset() {
    root_.reset();
    recorded_steps_ = 0;
  }

  /// Runs the network for T steps and returns the output summed over time
  /// ([N, classes]); for an SNN this is the output spike count. ANNs
  /// require T = 1 and return logits: a trailing ReLU is the slot the
  /// output spike layer takes after conversion, so ANN scores are read at
  /// its input (same argmax whenever any logit is positive, and no dead
  /// outputs during training).
  Tensor run(const NetInput& in, std::size_t T, const RunOptions& opt) {
    if (T == 0) throw ConfigError("run: T must be >= 1");
    if (!spiking() && T != 1) throw ConfigError("run: a network without spike layers runs a single step");
    reset();
    temporal_ = in.temporal;
    if (in.temporal && in.data.dim(0) != T) {
      throw ShapeError("run: temporal input has " + std::to_string(in.data.dim(0)) + " frames, T=" + std::to_string(T));
    }
    Tensor total;
    if (!spiking()) {
      if (in.temporal) throw ConfigError("run: temporal input needs a spiking network");
      total = root_.forward_range(in.data, 0, opt, 0, readout_end_);
      if (opt.observer && readout_end_ < root_.size()) opt.observer->on_activation(spec_.layers.back(), total);
    } else if (!in.temporal) {
      Tensor p = root_.forward_range(in.data, 0, opt, 0, prefix_end_);
      for (std::size_t t = 0; t < T; ++t) accumulate(total, root_.forward_range(p, t, opt, prefix_end_, root_.size()));
    } else {
      for (std::size_t t = 0; t < T; ++t) accumulate(total, root_.forward(in.data.slice(t), t, opt));
    }
    recorded_steps_ = opt.record ? T : 0;
    return total;
  }

  /// Back-propagates the gradient of the loss with respect to the summed
  /// output of the last recorded run, accumulating into params().grad().
  void backward(const Tensor& grad_total) {
    if (recorded_steps_ == 0) throw Error("backward: no recorded forward pass (run with record=true)");
    if (!spiking()) {
      root_.backward_range(grad_total, false, 0, readout_end_);
    } else if (!temporal_) {
      Tensor gp;
      for (std::size_t t = recorded_steps_; t-- > 0;) {
        accumulate(gp, root_.backward_range(grad_total, prefix_end_ > 0, prefix_end_, root_.size()));
      }
      if (prefix_end_ > 0) root_.backward_range(gp, false, 0, prefix_end_);
    } else {
      for (std::size_t t = recorded_steps_; t-- > 0;) root_.backward(grad_total, false);
    }
    recorded_steps_ = 0;
  }

 private:
  static void accumulate(Tensor& acc, const Tensor& v) {
    if (acc.empty()) {
      acc = v;
    } else {
      acc += v;
    }
  }

  NetworkSpec spec_;
  ParameterSet& params_;
  detail::Sequential root_;
  std::size_t prefix_end_ = 0;
  std::size_t readout_end_ = 0;
  std::size_t recorded_steps_ = 0;
  bool temporal_ = false;
};

}  // namespace spikegate
