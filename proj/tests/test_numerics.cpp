#include <gtest/gtest.h>

#include "support.hpp"

using namespace spikegate;
using namespace spikegate::layers;

namespace {

ParameterSet params_with(const std::string& name, Tensor w) {
  ParameterSet p;
  p.add(name, std::move(w), true);
  return p;
}

}  // namespace

TEST(LayerForward, IdentityAffine) {
  ParameterSet p = params_with("fc.weight", Tensor({2, 2}, {1, 0, 0, 1}));
  const Tensor y = layer_forward(affine("fc", 2), Tensor({1, 2}, {3, 5}), p);
  EXPECT_EQ(y, Tensor({1, 2}, {3, 5}));
}

TEST(LayerForward, MaxPoolTakesBlockMax) {
  ParameterSet p;
  const Tensor y = layer_forward(maxpool("mp"), Tensor({1, 1, 2, 2}, {1, 2, 3, 4}), p);
  EXPECT_EQ(y, Tensor({1, 1, 1, 1}, {4}));
}

TEST(LayerForward, MaxPoolFollowsKey) {
  ParameterSet p;
  LayerCache cache;
  const Tensor key({1, 1, 2, 2}, {5, 0, 0, 1});
  ForwardOptions opt;
  opt.max_key = &key;
  const Tensor y = layer_forward(maxpool("mp"), Tensor({1, 1, 2, 2}, {1, 2, 3, 4}), p, &cache, opt);
  EXPECT_EQ(y[0], 1.0);
}

TEST(LayerForward, OnesConvSumsWindow) {
  ParameterSet p = params_with("c.weight", Tensor({1, 1, 3, 3}, 1.0));
  const Tensor y = layer_forward(conv("c", 1, 3, 1, 0), Tensor({1, 1, 3, 3}, 1.0), p);
  EXPECT_EQ(y, Tensor({1, 1, 1, 1}, {9}));
}

TEST(LayerForward, ShapeMismatchIsAnError) {
  ParameterSet p = params_with("fc.weight", Tensor({2, 3}));
  EXPECT_THROW(layer_forward(affine("fc", 2), Tensor({1, 2}), p), ShapeError);
}

TEST(LayerForward, PureAndReproducible) {
  const NetworkSpec spec = sgtest::random_micro_net(1, false);
  ParameterSet p = build_network(spec, 3);
  const Tensor x = sgtest::whole_batch(sgtest::random_images(3, {1, 4, 4}, 3, 1)).data;
  EXPECT_EQ(layer_forward(spec.layers[0], x, p), layer_forward(spec.layers[0], x, p));
}

TEST(LayerBackward, IdentityAffinePassesGradient) {
  ParameterSet p = params_with("fc.weight", Tensor({2, 2}, {1, 0, 0, 1}));
  LayerCache cache;
  layer_forward(affine("fc", 2), Tensor({1, 2}, {3, 5}), p, &cache);
  const LayerGrads g = layer_backward(affine("fc", 2), Tensor({1, 2}, {1, 1}), cache, p);
  EXPECT_EQ(g.input_grad, Tensor({1, 2}, {1, 1}));
}

TEST(LayerBackward, ReluDeadRegion) {
  ParameterSet p;
  LayerCache cache;
  layer_forward(simple(LayerKind::relu, "r"), Tensor({1, 1}, {-2}), p, &cache);
  EXPECT_EQ(layer_backward(simple(LayerKind::relu, "r"), Tensor({1, 1}, {5}), cache, p).input_grad[0], 0.0);
}

TEST(LayerBackward, ConvParamGradMatchesFiniteDifferences) {
  const LayerSpec l = conv("c", 2, 3, 1, 1, true);
  Rng rng(4);
  Tensor w({2, 1, 3, 3});
  for (double& v : w.data()) v = rng.uniform(-1, 1);
  ParameterSet p = params_with("c.weight", w);
  p.add("c.bias", Tensor({2}, {0.1, -0.2}), true);
  Tensor x({1, 1, 4, 4});
  for (double& v : x.data()) v = rng.uniform(-1, 1);
  Tensor gy({1, 2, 4, 4});
  for (double& v : gy.data()) v = rng.uniform(-1, 1);
  auto loss = [&](ParameterSet& q) {
    const Tensor y = layer_forward(l, x, q);
    double s = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) s += y[i] * gy[i];
    return s;
  };
  LayerCache cache;
  layer_forward(l, x, p, &cache);
  const LayerGrads g = layer_backward(l, gy, cache, p);
  const auto fd = finite_difference_gradient(loss, p, 1e-3);
  for (const auto& [name, t] : fd) EXPECT_LT(max_abs_diff(t, g.param_grads.at(name)), 1e-4) << name;
}

// Every differentiable layer kind on small random shapes: analytic input and
// parameter gradients against central differences.
TEST(LayerBackward, PropertyAllLayersMatchFiniteDifferences) {
  Rng rng(10);
  std::vector<std::pair<LayerSpec, Shape>> cases = {
      {affine("a", 3, true), {2, 5}},
      {conv("c", 2, 3, 1, 1, true), {1, 2, 4, 4}},
      {conv("s", 2, 3, 2, 0), {2, 1, 5, 5}},
      {avgpool("p"), {1, 2, 4, 4}},
      {maxpool("m"), {1, 2, 4, 4}},
      {simple(LayerKind::relu, "r"), {2, 6}},
      {simple(LayerKind::sigmoid, "g"), {2, 6}},
      {simple(LayerKind::batchnorm, "b"), {3, 2, 2, 2}},
  };
  for (auto& [l, shape] : cases) {
    NetworkSpec spec;
    spec.input_shape = Shape(shape.begin() + 1, shape.end());
    spec.layers = {l};
    ParameterSet p;
    detail::init_sequence(spec.layers, spec.input_shape, p, 5);
    for (const auto& name : p.trainable_names()) {
      for (double& v : p.value(name).data()) v = rng.uniform(-1, 1);
    }
    Tensor x(shape);
    for (double& v : x.data()) v = rng.uniform(-1, 1);
    ForwardOptions fo;
    fo.training = l.kind == LayerKind::batchnorm;
    LayerCache cache;
    const Tensor y0 = layer_forward(l, x, p, &cache, fo);
    Tensor gy(y0.shape());
    for (double& v : gy.data()) v = rng.uniform(-1, 1);
    auto dot = [&](const Tensor& y) {
      double s = 0.0;
      for (std::size_t i = 0; i < y.size(); ++i) s += y[i] * gy[i];
      return s;
    };
    const LayerGrads g = layer_backward(l, gy, cache, p);
    const auto fd = finite_difference_gradient([&](ParameterSet& q) { return dot(layer_forward(l, x, q, nullptr, fo)); }, p, 1e-5);
    for (const auto& [name, t] : fd) {
      const Tensor& a = g.param_grads.at(name);
      EXPECT_LE(max_abs_diff(t, a), 1e-3 * std::max(1.0, max_abs_diff(t, Tensor(t.shape())))) << l.id << " " << name;
    }
    Tensor gx_fd(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) {
      Tensor xp = x, xm = x;
      xp[i] += 1e-5;
      xm[i] -= 1e-5;
      gx_fd[i] = (dot(layer_forward(l, xp, p, nullptr, fo)) - dot(layer_forward(l, xm, p, nullptr, fo))) / 2e-5;
    }
    EXPECT_LE(max_abs_diff(gx_fd, g.input_grad), 1e-3 * std::max(1.0, max_abs_diff(gx_fd, Tensor(x.shape())))) << l.id;
  }
}

TEST(FiniteDifference, Quadratic) {
  ParameterSet p = params_with("w", Tensor({1}, 3.0));
  const auto g = finite_difference_gradient([](ParameterSet& q) { return q.value("w")[0] * q.value("w")[0]; }, p, 1e-3);
  EXPECT_NEAR(g.at("w")[0], 6.0, 1e-6);
}

TEST(FiniteDifference, ConstantLossGivesZero) {
  ParameterSet p = params_with("w", Tensor({3}, 1.0));
  const auto g = finite_difference_gradient([](ParameterSet&) { return 4.0; }, p, 1e-3);
  EXPECT_EQ(g.at("w"), Tensor({3}));
}

TEST(FiniteDifference, TrainedMicroNetCosineSimilarity) {
  const NetworkSpec spec = sgtest::random_micro_net(0, false);
  ParameterSet p = build_network(spec, 2);
  const Dataset d = sgtest::random_images(12, {1, 4, 4}, 3, 3);
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.lr = 1e-2;
  train_ann(spec, p, d, cfg);
  Network net(spec, p);
  const Batch b = sgtest::whole_batch(d);
  loss_and_gradients(net, b, 1, {}, {});
  const auto fd = finite_difference_gradient([&](ParameterSet&) { return batch_loss(net, b, 1, {}, {}); }, p, 1e-5);
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (const auto& [name, t] : fd) {
    const Tensor& a = p.grad(name);
    for (std::size_t i = 0; i < t.size(); ++i) {
      dot += a[i] * t[i];
      na += a[i] * a[i];
      nb += t[i] * t[i];
    }
  }
  EXPECT_GT(dot / std::sqrt(na * nb), 0.999);
}

TEST(Shapes, PoolAndConvFollowFloorRule) {
  for (std::size_t n : {4u, 5u, 7u, 8u}) {
    for (std::size_t k : {1u, 2u, 3u}) {
      for (std::size_t s : {1u, 2u}) {
        for (std::size_t pad : {0u, 1u}) {
          if (n + 2 * pad < k) continue;
          const std::size_t expect = (n + 2 * pad - k) / s + 1;
          const Shape out = layer_output_shape(conv("c", 2, k, s, pad), {1, n, n});
          EXPECT_EQ(out, Shape({2, expect, expect}));
          ParameterSet p;
          p.add("c.weight", Tensor({2, 1, k, k}, 0.5), true);
          EXPECT_EQ(layer_forward(conv("c", 2, k, s, pad), Tensor({1, 1, n, n}, 1.0), p).shape(),
                    Shape({1, 2, expect, expect}));
        }
        if (k <= n) {
          const std::size_t e = (n - k) / s + 1;
          EXPECT_EQ(layer_output_shape(maxpool("m", k, s), {1, n, n}), Shape({1, e, e}));
          EXPECT_EQ(layer_output_shape(avgpool("a", k, s), {1, n, n}), Shape({1, e, e}));
        }
      }
    }
  }
}

TEST(Dropout, InferenceIsDeterministicTrainingMasksAreSeeded) {
  ParameterSet p;
  const LayerSpec l = dropout("d", 0.5);
  const Tensor x({1, 100}, 1.0);
  const Tensor inf = layer_forward(l, x, p);
  EXPECT_EQ(inf, layer_forward(l, x, p));
  Rng r1(7), r2(7);
  ForwardOptions a, b;
  a.training = b.training = true;
  a.rng = &r1;
  b.rng = &r2;
  const Tensor ya = layer_forward(l, x, p, nullptr, a);
  EXPECT_EQ(ya, layer_forward(l, x, p, nullptr, b));
  std::size_t zeros = 0;
  for (double v : ya.data()) zeros += v == 0.0;
  EXPECT_GT(zeros, 20u);
  EXPECT_LT(zeros, 80u);
}

TEST(Optimizer, SgdStep) {
  ParameterSet p = params_with("w", Tensor({2}, {1.0, -1.0}));
  p.grad("w") = Tensor({2}, {0.5, 0.5});
  Optimizer opt(OptimizerKind::sgd, 0.1, 0.0);
  opt.step(p);
  EXPECT_DOUBLE_EQ(p.value("w")[0], 0.95);
  EXPECT_DOUBLE_EQ(p.value("w")[1], -1.05);
}
