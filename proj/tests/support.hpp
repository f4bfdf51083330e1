#pragma once
// Helpers shared by the unit tests and the acceptance binary.

#include <cmath>
#include <string>
#include <vector>

#include "spikegate/spikegate.hpp"

namespace sgtest {

using namespace spikegate;

/// Random image dataset with values in [0,1).
inline Dataset random_images(std::size_t n, const Shape& shape, std::size_t classes, std::uint64_t seed) {
  Rng rng(seed);
  Dataset d;
  d.num_classes = classes;
  for (std::size_t i = 0; i < n; ++i) {
    Tensor x(shape);
    for (double& v : x.data()) v = rng.uniform();
    d.samples.push_back({std::move(x), static_cast<std::size_t>(rng.below(classes)), rng.bernoulli(0.3)});
  }
  return d;
}

/// Small random network (at most 200 parameters) on [1,4,4] input, 3 classes.
/// Variants cycle through affine-only, conv+avgpool and residual bodies; the
/// spiking version swaps every ReLU for a spike layer with varied neurons.
inline NetworkSpec random_micro_net(std::size_t variant, bool spiking) {
  using namespace layers;
  NetworkSpec s;
  s.name = "micro" + std::to_string(variant);
  s.input_shape = {1, 4, 4};
  s.num_classes = 3;
  NeuronConfig n;
  n.reset = variant % 2 ? ResetMode::soft : ResetMode::hard;
  if (variant % 3 == 2) n.kind = NeuronKind::leaky_integrate_fire;
  n.threshold = 0.5 + 0.1 * static_cast<double>(variant % 4);
  int k = 0;
  auto act = [&] { return spiking ? spike("s" + std::to_string(++k), n) : simple(LayerKind::relu, "r" + std::to_string(++k)); };
  switch (variant % 3) {
    case 0:
      s.layers = {affine("fc1", 6 + variant % 4, true), act(), affine("fc2", 3, variant % 2 == 0)};
      break;
    case 1:
      s.layers = {conv("c1", 2, 3, 1, 1, true), act(), avgpool("p1"), affine("fc", 3)};
      break;
    case 2:
      s.layers = {conv("c1", 2, 3, 1, 1), act(),
                  residual("res", {conv("rc1", 2, 3, 1, 1), act(), conv("rc2", 2, 3, 1, 1)}), act(),
                  avgpool("p1"), affine("fc", 3)};
      break;
  }
  s.layers.push_back(act());  // output layer: spike counts, or the ANN logits read before it
  return s;
}

struct GradCheck {
  double rel_error = 0.0;  // ||g - fd|| / ||fd||
  std::size_t checked = 0;
};

/// Analytic gradients (backprop / BPTT with relaxed spikes) against central
/// differences of the same forward function, over every trainable scalar.
inline GradCheck gradient_check(const NetworkSpec& spec, ParameterSet& params, const Batch& b, std::size_t T,
                                double h = 1e-5) {
  Network net(spec, params);
  RunOptions opt;
  opt.spike_fn = SpikeFunction::relaxed;
  opt.surrogate = {SurrogateKind::sigmoid, 0.5};
  const LossWeights w{0.5, 0.5};
  auto loss = [&] {
    net.reset();
    return batch_loss(net, b, T, opt, w);
  };
  net.reset();
  loss_and_gradients(net, b, T, opt, w);
  double num = 0.0, den = 0.0;
  GradCheck out;
  for (const auto& name : params.trainable_names()) {
    Tensor& v = params.value(name);
    const Tensor g = params.grad(name);
    for (std::size_t i = 0; i < v.size(); ++i) {
      const double orig = v[i];
      v[i] = orig + h;
      const double lp = loss();
      v[i] = orig - h;
      const double lm = loss();
      v[i] = orig;
      const double fd = (lp - lm) / (2.0 * h);
      num += (g[i] - fd) * (g[i] - fd);
      den += fd * fd;
      ++out.checked;
    }
  }
  out.rel_error = std::sqrt(num) / std::max(std::sqrt(den), 1e-12);
  return out;
}

inline Batch whole_batch(const Dataset& d) {
  const auto idx = all_indices(d);
  return make_batch(d, idx);
}

}  // namespace sgtest
