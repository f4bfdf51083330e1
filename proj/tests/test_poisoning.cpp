#include <gtest/gtest.h>

#include "support.hpp"

using namespace spikegate;

namespace {

PoisonPlan plan_of(double pr, TriggerMode mode = TriggerMode::white, std::uint64_t seed = 1) {
  PoisonPlan p;
  p.pr = pr;
  p.trigger.mode = mode;
  p.seed = seed;
  return p;
}

Dataset events(std::size_t n, std::size_t T, std::size_t side) {
  Dataset d;
  d.kind = SampleKind::event;
  d.num_classes = 2;
  for (std::size_t i = 0; i < n; ++i) d.samples.push_back({Tensor({T, 2, side, side}), i % 2, false});
  return d;
}

}  // namespace

TEST(Trigger, WhiteBottomRightOn28) {
  TriggerSpec t;
  const Tensor y = embed_trigger_image(Tensor({1, 28, 28}), t);
  std::size_t ones = 0;
  for (std::size_t r = 0; r < 28; ++r)
    for (std::size_t c = 0; c < 28; ++c) {
      const bool inside = r >= 26 && c >= 26;
      EXPECT_EQ(y[r * 28 + c], inside ? 1.0 : 0.0) << r << "," << c;
      ones += y[r * 28 + c] == 1.0;
    }
  EXPECT_EQ(ones, 4u);
}

TEST(Trigger, WhiteOnWhiteIsIdentityAndIdempotent) {
  TriggerSpec t;
  const Tensor ones({1, 16, 16}, 1.0);
  EXPECT_EQ(embed_trigger_image(ones, t), ones);
  Rng rng(2);
  Tensor x({3, 16, 16});
  for (double& v : x.data()) v = rng.uniform();
  for (auto pos : {TriggerPosition::top_left, TriggerPosition::top_right, TriggerPosition::bottom_left,
                   TriggerPosition::bottom_right}) {
    t.position = pos;
    for (auto mode : {TriggerMode::white, TriggerMode::random}) {
      t.mode = mode;
      const Tensor once = embed_trigger_image(x, t);
      EXPECT_EQ(embed_trigger_image(once, t), once);
    }
  }
}

TEST(Trigger, RandomPatchIsFixedPerSeed) {
  TriggerSpec t;
  t.mode = TriggerMode::random;
  t.seed = 5;
  Rng rng(3);
  Tensor a({1, 16, 16}), b({1, 16, 16});
  for (double& v : a.data()) v = rng.uniform();
  const Tensor ya = embed_trigger_image(a, t), yb = embed_trigger_image(b, t);
  for (std::size_t r = 14; r < 16; ++r)
    for (std::size_t c = 14; c < 16; ++c) EXPECT_EQ(ya[r * 16 + c], yb[r * 16 + c]);
}

TEST(Trigger, PolarityTwoTopLeftSetsEveryFrame) {
  TriggerSpec t;
  t.mode = TriggerMode::polarity2;
  t.position = TriggerPosition::top_left;
  const Tensor y = embed_trigger_event(Tensor({3, 2, 16, 16}), t);
  std::size_t set = 0;
  for (double v : y.data()) set += v != 0.0;
  EXPECT_EQ(set, 3u * 2u * 4u);
  for (std::size_t f = 0; f < 3; ++f)
    for (std::size_t p = 0; p < 2; ++p)
      for (std::size_t r = 0; r < 2; ++r)
        for (std::size_t c = 0; c < 2; ++c) EXPECT_EQ(y[((f * 2 + p) * 16 + r) * 16 + c], 1.0);
}

TEST(Trigger, PolarityZeroLeavesChannelOneOff) {
  TriggerSpec t;
  t.mode = TriggerMode::polarity0;
  Tensor x({2, 2, 16, 16}, 1.0);
  const Tensor y = embed_trigger_event(x, t);
  for (std::size_t f = 0; f < 2; ++f)
    for (std::size_t r = 14; r < 16; ++r)
      for (std::size_t c = 14; c < 16; ++c) {
        EXPECT_EQ(y[((f * 2 + 0) * 16 + r) * 16 + c], 1.0);
        EXPECT_EQ(y[((f * 2 + 1) * 16 + r) * 16 + c], 0.0);
      }
}

TEST(Trigger, OversizedOrMismatchedIsRejected) {
  TriggerSpec t;
  t.height = t.width = 5;
  EXPECT_THROW(embed_trigger_image(Tensor({1, 16, 16}), t), ConfigError);
  TriggerSpec p;
  p.mode = TriggerMode::polarity1;
  EXPECT_THROW(embed_trigger_image(Tensor({1, 16, 16}), p), ConfigError);
  EXPECT_THROW(embed_trigger_event(Tensor({1, 2, 16, 16}), TriggerSpec{}), ConfigError);
}

TEST(PoisonDataset, CountsFollowRate) {
  const Dataset d = synth_dataset(SynthKind::two_class_blobs, 100, 1);
  auto count = [](const Dataset& x) {
    std::size_t n = 0;
    for (const auto& s : x.samples) n += s.poisoned;
    return n;
  };
  EXPECT_EQ(count(poison_dataset(d, plan_of(0.1))), 10u);
  const Dataset none = poison_dataset(d, plan_of(0.0));
  EXPECT_EQ(count(none), 0u);
  EXPECT_TRUE(none.same_content(d));
  const Dataset all = poison_dataset(d, plan_of(1.0));
  EXPECT_EQ(count(all), 100u);
  for (const auto& s : all.samples) EXPECT_EQ(s.label, 0u);
  EXPECT_THROW(poison_dataset(d, plan_of(1.5)), ConfigError);
}

TEST(PoisonDataset, PoisonCountRoundsHalfUp) {
  EXPECT_EQ(poison_count(0.1, 100), 10u);
  EXPECT_EQ(poison_count(0.5, 3), 2u);
  EXPECT_EQ(poison_count(0.01, 50), 1u);
  EXPECT_EQ(poison_count(0.0, 1000), 0u);
}

// Untouched samples stay byte-identical, selected ones carry trigger and target.
TEST(PoisonDataset, PropertyConfinedAndDeterministic) {
  Rng rng(8);
  for (int trial = 0; trial < 10; ++trial) {
    const Dataset d = synth_dataset(SynthKind::striped_digits, 60, static_cast<std::uint64_t>(trial));
    PoisonPlan plan = plan_of(rng.uniform(), trial % 2 ? TriggerMode::random : TriggerMode::white, trial);
    plan.target_class = static_cast<std::size_t>(rng.below(10));
    plan.trigger.position = static_cast<TriggerPosition>(trial % 4);
    const Dataset p = poison_dataset(d, plan);
    EXPECT_EQ(p.hash(), poison_dataset(d, plan).hash());
    std::size_t n = 0;
    for (std::size_t i = 0; i < d.size(); ++i) {
      if (!p.samples[i].poisoned) {
        EXPECT_EQ(p.samples[i], d.samples[i]);
        continue;
      }
      ++n;
      EXPECT_EQ(p.samples[i].label, plan.target_class);
      EXPECT_EQ(p.samples[i].x, embed_trigger_image(d.samples[i].x, plan.trigger));
    }
    EXPECT_EQ(n, poison_count(plan.pr, d.size()));
  }
}

TEST(PoisonDataset, EventData) {
  const Dataset d = events(10, 2, 16);
  EXPECT_THROW(poison_dataset(d, plan_of(0.5)), ConfigError);
  const Dataset p = poison_dataset(d, plan_of(0.5, TriggerMode::polarity1));
  std::size_t n = 0;
  for (const auto& s : p.samples) n += s.poisoned;
  EXPECT_EQ(n, 5u);
}

TEST(EvalSplits, MaliciousExcludesTargetClass) {
  const Dataset test = synth_dataset(SynthKind::striped_digits, 100, 4);
  const auto [clean, mal] = make_eval_splits(test, plan_of(0.1));
  EXPECT_EQ(clean.hash(), test.hash());
  EXPECT_EQ(mal.size(), 90u);
  for (const auto& s : mal.samples) {
    EXPECT_EQ(s.label, 0u);
    EXPECT_TRUE(s.poisoned);
  }
  const auto again = make_eval_splits(test, plan_of(0.1));
  EXPECT_EQ(again.second.hash(), mal.hash());
}

TEST(EvalSplits, AllTargetClassGivesEmptyMaliciousSplit) {
  Dataset d = synth_dataset(SynthKind::two_class_blobs, 10, 1);
  for (auto& s : d.samples) s.label = 1;
  PoisonPlan plan = plan_of(0.1);
  plan.target_class = 1;
  EXPECT_TRUE(make_eval_splits(d, plan).second.empty());
}
