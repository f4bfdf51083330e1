#pragma once

#include <cmath>
#include <string>
#include <utility>

#include "spikegate/datasets.hpp"

namespace spikegate {

enum class TriggerMode { white, random, polarity0, polarity1, polarity2 };
enum class TriggerPosition { top_left, top_right, bottom_left, bottom_right };

inline const char* trigger_mode_name(TriggerMode m) {
  switch (m) {
    case TriggerMode::white: return "white";
    case TriggerMode::random: return "random";
    case TriggerMode::polarity0: return "p0";
    case TriggerMode::polarity1: return "p1";
    case TriggerMode::polarity2: return "p2";
  }
  return "?";
}

inline TriggerMode parse_trigger_mode(const std::string& s) {
  for (TriggerMode m : {TriggerMode::white, TriggerMode::random, TriggerMode::polarity0, TriggerMode::polarity1,
                        TriggerMode::polarity2}) {
    if (s == trigger_mode_name(m)) return m;
  }
  throw ConfigError("unknown trigger mode '" + s + "'");
}

inline const char* trigger_position_name(TriggerPosition p) {
  switch (p) {
    case TriggerPosition::top_left: return "tl";
    case TriggerPosition::top_right: return "tr";
    case TriggerPosition::bottom_left: return "bl";
    case TriggerPosition::bottom_right: return "br";
  }
  return "?";
}

inline TriggerPosition parse_trigger_position(const std::string& s) {
  for (TriggerPosition p : {TriggerPosition::top_left, TriggerPosition::top_right, TriggerPosition::bottom_left,
                            TriggerPosition::bottom_right}) {
    if (s == trigger_position_name(p)) return p;
  }
  throw ConfigError("unknown trigger position '" + s + "'");
}

inline bool is_polarity(TriggerMode m) { return m != TriggerMode::white && m != TriggerMode::random; }

struct TriggerSpec {
  TriggerMode mode = TriggerMode::white;
  std::size_t height = 2;
  std::size_t width = 2;
  TriggerPosition position = TriggerPosition::bottom_right;
  std::uint64_t seed = 0;  // random mode
  double max_count = 1.0;  // value written by polarity triggers

  friend bool operator==(const TriggerSpec&, const TriggerSpec&) = default;
};

struct PoisonPlan {
  TriggerSpec trigger;
  double pr = 0.1;
  std::size_t target_class = 0;
  std::uint64_t seed = 0;  // sample selection

  friend bool operator==(const PoisonPlan&, const PoisonPlan&) = default;
};

namespace detail {

struct Patch {
  std::size_t row, col;
};

inline Patch place_trigger(const TriggerSpec& trig, std::size_t H, std::size_t W) {
  if (trig.height == 0 || trig.width == 0) throw ConfigError("trigger size must be positive");
  if (trig.height > H || trig.width > W) {
    throw ConfigError("trigger " + std::to_string(trig.height) + "x" + std::to_string(trig.width) +
                      " larger than sample " + std::to_string(H) + "x" + std::to_string(W));
  }
  if (4 * trig.height > H || 4 * trig.width > W) {
    throw ConfigError("trigger exceeds 25% of a spatial dimension");
  }
  const bool bottom = trig.position == TriggerPosition::bottom_left || trig.position == TriggerPosition::bottom_right;
  const bool right = trig.position == TriggerPosition::top_right || trig.position == TriggerPosition::bottom_right;
  return {bottom ? H - trig.height : 0, right ? W - trig.width : 0};
}

}  // namespace detail

/// The fixed random trigger patch [C, h, w]: uniform [0,1] values drawn
/// from the trigger seed, so every sample of a plan gets the same pattern.
inline Tensor random_trigger_patch(const TriggerSpec& trig, std::size_t channels) {
  Tensor p({channels, trig.height, trig.width});
  Rng rng(derive_seed(trig.seed, "trigger.random"));
  for (double& v : p.data()) v = rng.uniform();
  return p;
}

/// Overwrites the trigger patch on every channel of a [C, H, W] image.
inline Tensor embed_trigger_image(const Tensor& x, const TriggerSpec& trig) {
  if (x.rank() != 3) throw ShapeError("embed_trigger_image: expected [C,H,W], got " + shape_string(x.shape()));
  if (is_polarity(trig.mode)) throw ConfigError("polarity triggers apply to event samples only");
  const std::size_t C = x.dim(0), H = x.dim(1), W = x.dim(2);
  const auto at = detail::place_trigger(trig, H, W);
  Tensor y = x;
  Tensor patch;
  if (trig.mode == TriggerMode::random) patch = random_trigger_patch(trig, C);
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t r = 0; r < trig.height; ++r) {
      for (std::size_t k = 0; k < trig.width; ++k) {
        const double v = trig.mode == TriggerMode::white ? 1.0 : patch[(c * trig.height + r) * trig.width + k];
        y[(c * H + at.row + r) * W + at.col + k] = v;
      }
    }
  }
  return y;
}

/// Writes the polarity pattern into the trigger patch of every frame of a
/// [T, 2, H, W] event sample: p0 = channel 0 on / channel 1 off, p1 the
/// reverse, p2 both on.
inline Tensor embed_trigger_event(const Tensor& x, const TriggerSpec& trig) {
  if (x.rank() != 4 || x.dim(1) != 2) throw ShapeError("embed_trigger_event: expected [T,2,H,W], got " + shape_string(x.shape()));
  if (!is_polarity(trig.mode)) throw ConfigError("event samples take polarity triggers (p0, p1, p2)");
  const std::size_t T = x.dim(0), H = x.dim(2), W = x.dim(3);
  const auto at = detail::place_trigger(trig, H, W);
  const double on0 = trig.mode == TriggerMode::polarity1 ? 0.0 : trig.max_count;
  const double on1 = trig.mode == TriggerMode::polarity0 ? 0.0 : trig.max_count;
  Tensor y = x;
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t p = 0; p < 2; ++p) {
      const double v = p == 0 ? on0 : on1;
      for (std::size_t r = 0; r < trig.height; ++r) {
        for (std::size_t k = 0; k < trig.width; ++k) y[((t * 2 + p) * H + at.row + r) * W + at.col + k] = v;
      }
    }
  }
  return y;
}

inline Tensor embed_trigger(SampleKind kind, const Tensor& x, const TriggerSpec& trig) {
  return kind == SampleKind::image ? embed_trigger_image(x, trig) : embed_trigger_event(x, trig);
}

inline void validate_plan(const PoisonPlan& plan, const Dataset& d) {
  if (!(plan.pr >= 0.0 && plan.pr <= 1.0)) throw ConfigError("poisoning rate must lie in [0,1], got " + std::to_string(plan.pr));
  if (plan.target_class >= d.num_classes) throw ConfigError("target class out of range");
  if (d.kind == SampleKind::image && is_polarity(plan.trigger.mode)) {
    throw ConfigError("polarity triggers apply to event datasets only");
  }
  if (d.kind == SampleKind::event && !is_polarity(plan.trigger.mode)) {
    throw ConfigError("event datasets take polarity triggers (p0, p1, p2)");
  }
}

/// round(PR * N), halves rounded up.
inline std::size_t poison_count(double pr, std::size_t n) {
  return static_cast<std::size_t>(std::floor(pr * static_cast<double>(n) + 0.5));
}

/// Indices (ascending) of the samples a plan poisons: the first
/// poison_count entries of a permutation keyed by the dataset hash and
/// the plan seed.
inline std::vector<std::size_t> poison_selection(const Dataset& d, const PoisonPlan& plan) {
  Fnv1a h;
  h.u64(d.hash());
  h.u64(plan.seed);
  auto perm = seeded_permutation(d.size(), h.value());
  perm.resize(poison_count(plan.pr, d.size()));
  std::sort(perm.begin(), perm.end());
  return perm;
}

/// D_hat: the selected samples carry the trigger and the target label;
/// everything else, including order, is unchanged.
inline Dataset poison_dataset(const Dataset& d, const PoisonPlan& plan) {
  d.validate();
  validate_plan(plan, d);
  Dataset out = d;
  out.provenance = Provenance::poisoned;
  for (std::size_t i : poison_selection(d, plan)) {
    Sample& s = out.samples[i];
    s.x = embed_trigger(d.kind, s.x, plan.trigger);
    s.label = plan.target_class;
    s.poisoned = true;
  }
  return out;
}

/// Clean test split (untouched) and the malicious split: every sample not
/// already of the target class, trigger-embedded and relabelled.
inline std::pair<Dataset, Dataset> make_eval_splits(const Dataset& test, const PoisonPlan& plan) {
  test.validate();
  validate_plan(plan, test);
  Dataset malicious = test;
  malicious.samples.clear();
  malicious.provenance = Provenance::poisoned;
  for (const auto& s : test.samples) {
    if (s.label == plan.target_class) continue;
    malicious.samples.push_back({embed_trigger(test.kind, s.x, plan.trigger), plan.target_class, true});
  }
  return {test, std::move(malicious)};
}

}  // namespace spikegate
