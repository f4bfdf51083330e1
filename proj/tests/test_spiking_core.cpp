#include <gtest/gtest.h>

#include "support.hpp"

using namespace spikegate;
using namespace spikegate::layers;

namespace {

std::vector<double> run_neuron(const NeuronConfig& cfg, double input, std::size_t T, MembraneState* out = nullptr) {
  MembraneState s = MembraneState::resting({1});
  std::vector<double> spikes;
  for (std::size_t t = 0; t < T; ++t) {
    NeuronStep st = step_neuron(cfg, s, Tensor({1}, input), static_cast<int>(t));
    spikes.push_back(st.spikes[0]);
    s = std::move(st.state);
  }
  if (out) *out = s;
  return spikes;
}

}  // namespace

TEST(StepNeuron, IfConstantInputFiresEveryFourthStep) {
  NeuronConfig cfg;
  const auto s = run_neuron(cfg, 0.3, 12);
  for (std::size_t t = 0; t < 12; ++t) EXPECT_EQ(s[t], (t + 1) % 4 == 0 ? 1.0 : 0.0) << "step " << t + 1;
}

TEST(StepNeuron, RestingNeuronStaysAtZero) {
  MembraneState st;
  const auto s = run_neuron(NeuronConfig{}, 0.0, 20, &st);
  for (double v : s) EXPECT_EQ(v, 0.0);
  EXPECT_EQ(st.voltage[0], 0.0);
}

TEST(StepNeuron, LifEulerStep) {
  NeuronConfig cfg;
  cfg.kind = NeuronKind::leaky_integrate_fire;
  cfg.tau = 2.0;
  MembraneState s = MembraneState::resting({1});
  s.voltage[0] = 0.5;
  const NeuronStep st = step_neuron(cfg, s, Tensor({1}, 1.0), 0);
  EXPECT_DOUBLE_EQ(st.state.voltage[0], 0.75);
  EXPECT_EQ(st.spikes[0], 0.0);
}

TEST(StepNeuron, ResetValuesAreExact) {
  NeuronConfig hard;
  MembraneState s = MembraneState::resting({1});
  s.voltage[0] = 0.7;
  EXPECT_EQ(step_neuron(hard, s, Tensor({1}, 0.55), 3).state.voltage[0], 0.0);
  NeuronConfig soft;
  soft.reset = ResetMode::soft;
  const NeuronStep st = step_neuron(soft, s, Tensor({1}, 0.55), 3);
  EXPECT_EQ(st.state.voltage[0], (0.7 + 0.55) - 1.0);
  EXPECT_EQ(st.state.last_spike_time[0], 3);
}

TEST(StepNeuron, PropertySoftResetRateTracksCurrent) {
  NeuronConfig cfg;
  cfg.reset = ResetMode::soft;
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    const double c = rng.uniform();
    for (std::size_t T : {16u, 64u, 256u}) {
      const auto s = run_neuron(cfg, c, T);
      const double rate = std::accumulate(s.begin(), s.end(), 0.0) / static_cast<double>(T);
      EXPECT_LE(std::abs(rate - c), 1.0 / static_cast<double>(T)) << "c=" << c << " T=" << T;
    }
  }
}

TEST(StepNeuron, PropertyBinaryAndReproducible) {
  Rng rng(1);
  for (auto kind : {NeuronKind::integrate_fire, NeuronKind::leaky_integrate_fire}) {
    for (auto reset : {ResetMode::hard, ResetMode::soft}) {
      NeuronConfig cfg;
      cfg.kind = kind;
      cfg.reset = reset;
      Tensor in({32});
      for (double& v : in.data()) v = rng.uniform(-1, 2);
      MembraneState a = MembraneState::resting({32}), b = MembraneState::resting({32});
      for (int t = 0; t < 10; ++t) {
        NeuronStep sa = step_neuron(cfg, a, in, t), sb = step_neuron(cfg, b, in, t);
        for (double v : sa.spikes.data()) EXPECT_TRUE(v == 0.0 || v == 1.0);
        EXPECT_EQ(sa.spikes, sb.spikes);
        EXPECT_EQ(sa.state.voltage, sb.state.voltage);
        a = std::move(sa.state);
        b = std::move(sb.state);
      }
    }
  }
}

TEST(StepNeuron, RejectsBadConfig) {
  NeuronConfig cfg;
  cfg.threshold = 0.0;
  EXPECT_THROW(run_neuron(cfg, 0.1, 1), ConfigError);
  NeuronConfig lif;
  lif.kind = NeuronKind::leaky_integrate_fire;
  lif.tau = 1.0;
  EXPECT_THROW(run_neuron(lif, 0.1, 1), ConfigError);
}

TEST(Surrogate, RectangularValues) {
  const Surrogate s{SurrogateKind::rectangular, 1.0};
  EXPECT_DOUBLE_EQ(surrogate_grad(s, 1.0, 1.0), 1.0);
  EXPECT_DOUBLE_EQ(surrogate_grad(s, 1.6, 1.0), 0.0);
}

TEST(Surrogate, PropertyUnitIntegralSymmetricNonNegative) {
  for (auto kind : {SurrogateKind::rectangular, SurrogateKind::polynomial, SurrogateKind::sigmoid, SurrogateKind::gaussian}) {
    for (double a : {0.5, 1.0, 2.0}) {
      const Surrogate s{kind, a};
      const double th = 1.0;
      const std::size_t n = 200000;
      const double lo = th - 10 * a, hi = th + 10 * a, h = (hi - lo) / static_cast<double>(n);
      double integral = 0.0;
      for (std::size_t i = 0; i <= n; ++i) {
        const double u = lo + h * static_cast<double>(i);
        const double g = surrogate_grad(s, u, th);
        integral += (i == 0 || i == n ? 0.5 : 1.0) * g * h;
        ASSERT_GE(g, 0.0);
        EXPECT_NEAR(g, surrogate_grad(s, 2 * th - u, th), 1e-9 * (1.0 + g));
      }
      EXPECT_NEAR(integral, 1.0, 1e-3) << surrogate_name(kind) << " a=" << a;
    }
  }
}

TEST(Surrogate, NamesRoundTrip) {
  for (auto kind : {SurrogateKind::rectangular, SurrogateKind::polynomial, SurrogateKind::sigmoid, SurrogateKind::gaussian}) {
    EXPECT_EQ(parse_surrogate(surrogate_name(kind)), kind);
  }
  EXPECT_THROW(parse_surrogate("tanh"), ConfigError);
}

TEST(Bptt, SingleStepReducesToSurrogateWeightedAffine) {
  NetworkSpec spec;
  spec.name = "one";
  spec.input_shape = {1, 1, 2};
  spec.num_classes = 2;
  NeuronConfig n;
  spec.layers = {affine("fc", 2), spike("out", n)};
  ParameterSet p = build_network(spec, 1);
  p.value("fc.weight") = Tensor({2, 2}, {0.4, 0.9, -0.3, 0.8});
  Network net(spec, p);
  Dataset d;
  d.num_classes = 2;
  d.samples.push_back({Tensor({1, 1, 2}, {0.5, 1.0}), 1, false});
  const Batch b = sgtest::whole_batch(d);
  RunOptions opt;
  opt.surrogate = {SurrogateKind::sigmoid, 1.0};
  loss_and_gradients(net, b, 1, opt, {});
  // Forward: u = W x; spikes s = H(u - 1); loss = CE(softmax(s)), one sample so weight 1.
  const double u0 = 0.4 * 0.5 + 0.9 * 1.0, u1 = -0.3 * 0.5 + 0.8 * 1.0;
  const double s0 = u0 >= 1.0, s1 = u1 >= 1.0;
  const double e0 = std::exp(s0), e1 = std::exp(s1);
  const double dl0 = e0 / (e0 + e1), dl1 = e1 / (e0 + e1) - 1.0;
  const double g0 = dl0 * surrogate_grad(opt.surrogate, u0, 1.0), g1 = dl1 * surrogate_grad(opt.surrogate, u1, 1.0);
  const Tensor& gw = p.grad("fc.weight");
  EXPECT_NEAR(gw[0], g0 * 0.5, 1e-12);
  EXPECT_NEAR(gw[1], g0 * 1.0, 1e-12);
  EXPECT_NEAR(gw[2], g1 * 0.5, 1e-12);
  EXPECT_NEAR(gw[3], g1 * 1.0, 1e-12);
}

TEST(Bptt, ZeroInputGivesZeroWeightGradients) {
  const NetworkSpec spec = sgtest::random_micro_net(0, true);
  ParameterSet p = build_network(spec, 2);
  Network net(spec, p);
  Dataset d = sgtest::random_images(3, {1, 4, 4}, 3, 1);
  for (auto& s : d.samples) s.x.fill(0.0);
  p.value("fc1.bias").fill(0.0);
  p.value("fc2.bias").fill(0.0);
  loss_and_gradients(net, sgtest::whole_batch(d), 4, {}, {});
  EXPECT_EQ(p.grad("fc1.weight"), Tensor(p.value("fc1.weight").shape()));
}

TEST(Bptt, MicroNetMatchesFiniteDifferences) {
  for (std::size_t v : {0u, 3u, 6u}) {
    const NetworkSpec spec = sgtest::random_micro_net(v, true);
    ParameterSet p = build_network(spec, 3 + v);
    ASSERT_LE(p.trainable_scalar_count(), 200u);
    const auto r = sgtest::gradient_check(spec, p, sgtest::whole_batch(sgtest::random_images(4, {1, 4, 4}, 3, v)), 4);
    EXPECT_LT(r.rel_error, 1e-2);
  }
}

TEST(RateDecode, CountsAndTieBreak) {
  SpikeTensor s{4, Tensor({4, 2}, {1, 0, 1, 1, 1, 0, 1, 0})};
  RateDecoding r = rate_decode(s);
  EXPECT_EQ(r.scores, std::vector<double>({1.0, 0.25}));
  EXPECT_EQ(r.predicted, 0u);
  EXPECT_EQ(rate_decode(SpikeTensor{3, Tensor({3, 4})}).predicted, 0u);
  EXPECT_EQ(rate_decode(SpikeTensor{2, Tensor({2, 2}, 1.0)}).predicted, 0u);
  EXPECT_THROW(rate_decode(SpikeTensor{2, Tensor({2, 2}, 0.5)}), ShapeError);
}

TEST(Network, SpikingSpecMustEndInSpikeLayer) {
  NetworkSpec spec = sgtest::random_micro_net(0, true);
  spec.layers.pop_back();
  EXPECT_THROW(
      {
        ParameterSet p = build_network(spec, 1);
        Network net(spec, p);
      },
      ConfigError);
}
