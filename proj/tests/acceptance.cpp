// Acceptance run: one PASS/FAIL line per criterion. Pass criterion numbers
// as arguments to run a subset. Exit status is nonzero if any criterion fails.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "support.hpp"

using namespace spikegate;

namespace {

// Pinned tolerances.
constexpr double kGradRelTol = 1e-2;
constexpr double kGradTimeLimit = 60.0;
constexpr double kMrTol = 0.01;
constexpr double kLrbMinAsr = 85.0;
constexpr double kLrbMaxAccDrop = 5.0;
constexpr double kLrbSaturated = 95.0;
constexpr double kLrbTimeLimit = 600.0;
constexpr double kLrcMinMr = 85.0;
constexpr double kLrcMaxAccGap = 5.0;
constexpr double kChanceFactor = 2.0;  // "about chance": ASR <= 2 * 100 / classes
constexpr double kCom4MinAsr = 80.0;
constexpr double kMrGap = 20.0;
constexpr double kPurifyMinAsrDrop = 20.0;
constexpr double kPurifyMinAccChange = -3.0;

constexpr std::size_t kSeeds = 5;
constexpr std::size_t kDataSeed = 1;
constexpr std::size_t kProbeCount = 200;

double mean(const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size()); }

std::string list(const std::vector<double>& v) {
  std::string s;
  char b[32];
  for (double x : v) {
    std::snprintf(b, sizeof b, "%s%.2f", s.empty() ? "" : " ", x);
    s += b;
  }
  return "[" + s + "]";
}

struct Verdict {
  bool pass = false;
  std::string detail;
};

// Desk-scale data shared by the training criteria: striped digits, n=2000,
// 80/20 split, 2x2 white trigger bottom-right, target class 0.
struct Desk {
  Dataset train, test;
  NetworkSpec snn_spec, ann_spec;

  Desk() {
    auto [a, b] = split_dataset(synth_dataset(SynthKind::striped_digits, 2000, kDataSeed), 0.8);
    train = std::move(a);
    test = std::move(b);
    snn_spec = micro_vgg({1, 16, 16}, train.num_classes, desk_model_options(true));
    ann_spec = micro_vgg({1, 16, 16}, train.num_classes, desk_model_options(false));
  }

  PoisonPlan plan(double pr, std::uint64_t seed) const {
    PoisonPlan p;
    p.pr = pr;
    p.target_class = 0;
    p.seed = derive_seed(seed, "poison");
    return p;
  }

  std::pair<Dataset, Dataset> eval_splits() const { return make_eval_splits(test, plan(0.1, 0)); }
};

struct Scored {
  double acc = 0.0;
  double asr = 0.0;
};

// Directly trained models, cached across criteria 4, 7 and 8.
class LrbModels {
 public:
  explicit LrbModels(const Desk& d) : d_(d) {}

  Model& get(double pr, std::uint64_t seed) {
    const auto key = std::make_pair(pr, seed);
    auto it = models_.find(key);
    if (it != models_.end()) return it->second;
    TrainConfig cfg = desk_lrb_config();
    cfg.seed = derive_seed(seed, "train");
    const Dataset data = pr > 0.0 ? poison_dataset(d_.train, d_.plan(pr, seed)) : d_.train;
    Stopwatch sw;
    Model m = run_lrb_pipeline(d_.snn_spec, data, cfg, derive_seed(seed, "init"));
    seconds_ += sw.seconds();
    return models_.emplace(key, std::move(m)).first->second;
  }

  double seconds() const { return seconds_; }

 private:
  const Desk& d_;
  std::map<std::pair<double, std::uint64_t>, Model> models_;
  double seconds_ = 0.0;
};

Scored score(Model& m, const Desk& d) {
  const auto [clean, mal] = d.eval_splits();
  return {accuracy(m, clean), attack_success_rate(m, mal, 0)};
}

// ---------------------------------------------------------------------------

Verdict criterion1() {
  Stopwatch sw;
  double worst = 0.0;
  std::size_t nets = 0, max_params = 0;
  for (std::size_t v = 0; v < 12; ++v) {
    for (bool spiking : {false, true}) {
      const NetworkSpec spec = sgtest::random_micro_net(v, spiking);
      ParameterSet params = build_network(spec, 1000 + v);
      max_params = std::max(max_params, params.trainable_scalar_count());
      const Batch b = sgtest::whole_batch(sgtest::random_images(4, {1, 4, 4}, 3, 2000 + v));
      worst = std::max(worst, sgtest::gradient_check(spec, params, b, spiking ? 4 : 1).rel_error);
      ++nets;
    }
  }
  const double t = sw.seconds();
  char buf[200];
  std::snprintf(buf, sizeof buf, "%zu nets (max %zu params, 12 ANN + 12 SNN T=4), worst rel err %.2e, %.1fs", nets,
                max_params, worst, t);
  return {worst <= kGradRelTol && max_params <= 200 && t < kGradTimeLimit, buf};
}

Verdict criterion2() {
  NeuronConfig cfg;
  cfg.reset = ResetMode::soft;
  cfg.threshold = 1.0;
  double worst_excess = -1.0;
  for (std::size_t T : {16u, 64u, 256u}) {
    for (int k = 1; k <= 9; ++k) {
      const double c = 0.1 * k;
      MembraneState s = MembraneState::resting({1});
      double count = 0.0;
      for (std::size_t t = 0; t < T; ++t) {
        NeuronStep st = step_neuron(cfg, s, Tensor({1}, c), static_cast<int>(t));
        count += st.spikes[0];
        s = std::move(st.state);
      }
      const double err = std::abs(count / static_cast<double>(T) - c);
      worst_excess = std::max(worst_excess, err - 1.0 / static_cast<double>(T));
    }
  }
  char buf[160];
  std::snprintf(buf, sizeof buf, "max(|rate-c| - 1/T) over c in 0.1..0.9, T in {16,64,256} = %.3e", worst_excess);
  return {worst_excess <= 1e-12, buf};
}

Verdict criterion3() {
  const double a = migration_rate(97.46, 98.43);
  const double b = migration_rate(98.51, 98.64);
  char buf[160];
  std::snprintf(buf, sizeof buf, "MR(97.46/98.43)=%.4f (want 99.01), MR(98.51/98.64)=%.4f (want 99.87)", a, b);
  return {std::abs(a - 99.01) <= kMrTol && std::abs(b - 99.87) <= kMrTol, buf};
}

Verdict criterion4(const Desk& d, LrbModels& lrb) {
  std::vector<double> acc0, acc10, asr10, asr1;
  for (std::uint64_t s = 1; s <= kSeeds; ++s) {
    acc0.push_back(score(lrb.get(0.0, s), d).acc);
    const Scored p10 = score(lrb.get(0.1, s), d);
    acc10.push_back(p10.acc);
    asr10.push_back(p10.asr);
    asr1.push_back(score(lrb.get(0.01, s), d).asr);
  }
  const double drop = mean(acc0) - mean(acc10);
  const bool trend = mean(asr1) < mean(asr10) || (mean(asr1) >= kLrbSaturated && mean(asr10) >= kLrbSaturated);
  const bool pass = mean(asr10) >= kLrbMinAsr && drop <= kLrbMaxAccDrop && trend && lrb.seconds() < kLrbTimeLimit;
  return {pass, "ACC(PR=0)=" + list(acc0) + " ACC(PR=.1)=" + list(acc10) + " ASR(PR=.1)=" + list(asr10) +
                    " ASR(PR=.01)=" + list(asr1) + " drop=" + std::to_string(drop) +
                    " train time=" + std::to_string(lrb.seconds()) + "s"};
}

Verdict criterion5(const Desk& d) {
  const auto [clean, mal] = d.eval_splits();
  std::map<std::string, std::vector<double>> mr, gap;
  for (std::uint64_t s = 1; s <= kSeeds; ++s) {
    TrainConfig ac = desk_ann_config();
    ac.seed = derive_seed(s, "train");
    const Dataset dhat = poison_dataset(d.train, d.plan(0.1, s));
    Model ann{d.ann_spec, build_network(d.ann_spec, derive_seed(s, "init")), 1};
    train_ann(ann.spec, ann.params, dhat, ac);
    Model clean_ann{d.ann_spec, build_network(d.ann_spec, derive_seed(s, "init")), 1};
    train_ann(clean_ann.spec, clean_ann.params, d.train, ac);
    const double ann_asr = attack_success_rate(ann, mal, 0);
    const double clean_ann_acc = accuracy(clean_ann, clean);
    for (NormStrategy st : {NormStrategy::maxnorm, NormStrategy::robustnorm}) {
      ConversionConfig cc;
      cc.strategy = st;
      cc.percentile = 99.9;
      cc.timesteps = 64;
      cc.reference = dhat;
      Model snn = convert(ann.spec, ann.params, cc).snn;
      const std::string k = norm_strategy_name(st);
      mr[k].push_back(migration_rate(attack_success_rate(snn, mal, 0), ann_asr));
      cc.reference = d.train;
      Model clean_snn = convert(clean_ann.spec, clean_ann.params, cc).snn;
      gap[k].push_back(clean_ann_acc - accuracy(clean_snn, clean));
    }
  }
  bool pass = true;
  std::string detail;
  for (const auto& [k, v] : mr) {
    pass = pass && mean(v) >= kLrcMinMr && mean(gap[k]) <= kLrcMaxAccGap;
    detail += k + ": MR=" + list(v) + " ACC gap=" + list(gap[k]) + "  ";
  }
  return {pass, detail};
}

Verdict criterion6(const Desk& d) {
  const auto [clean, mal] = d.eval_splits();
  std::map<int, std::vector<double>> asr, mr, acc;
  for (std::uint64_t s = 1; s <= kSeeds; ++s) {
    const Dataset dhat = poison_dataset(d.train, d.plan(0.1, s));
    for (int com = 1; com <= 4; ++com) {
      LrhConfig cfg;
      cfg.ann.seed = derive_seed(s, "train");
      cfg.snn.seed = derive_seed(s, "snn");
      LrhResult r = run_lrh_pipeline(d.ann_spec, d.train, dhat, com, cfg, derive_seed(s, "init"));
      const double a = attack_success_rate(r.snn, mal, 0);
      asr[com].push_back(a);
      acc[com].push_back(accuracy(r.snn, clean));
      const double ann_asr = attack_success_rate(r.ann, mal, 0);
      if (ann_asr > 0.0) mr[com].push_back(migration_rate(a, ann_asr));
    }
  }
  const double chance = kChanceFactor * 100.0 / static_cast<double>(d.train.num_classes);
  const bool pass = mean(asr[1]) <= chance && mean(asr[4]) >= kCom4MinAsr && mr[3].size() == kSeeds &&
                    mr[4].size() == kSeeds && mean(mr[3]) + kMrGap <= mean(mr[4]);
  std::string detail;
  for (int com = 1; com <= 4; ++com) {
    detail += "Com" + std::to_string(com) + " ASR=" + list(asr[com]) + " ACC=" + list(acc[com]);
    if (!mr[com].empty()) detail += " MR=" + list(mr[com]);
    detail += "  ";
  }
  return {pass, detail};
}

Verdict criterion7(const Desk& d, LrbModels& lrb) {
  const auto [clean, mal] = d.eval_splits();
  std::vector<double> drop, dacc;
  for (std::uint64_t s = 1; s <= kSeeds; ++s) {
    PurifyConfig pc;
    pc.finetune.seed = derive_seed(s, "purify");
    const PurifyResult r = finetune_purify(lrb.get(0.1, s), d.train, clean, mal, 0, pc);
    drop.push_back(*r.before.asr - *r.after.asr);
    dacc.push_back(r.after.acc - r.before.acc);
  }
  bool pass = true;
  for (std::size_t i = 0; i < drop.size(); ++i) pass = pass && drop[i] >= kPurifyMinAsrDrop && dacc[i] >= kPurifyMinAccChange;
  return {pass, "LR_B PR=0.1 models: ASR drop=" + list(drop) + " ACC change=" + list(dacc)};
}

Verdict criterion8(const Desk& d, LrbModels& lrb) {
  const Dataset probes = make_trigger_probes(d.test, d.plan(0.1, 0), kProbeCount);
  const DetectionOptions opt;  // T=16, output spike layer
  Model& reference = lrb.get(0.0, 100);
  std::vector<Model> calib;
  for (std::uint64_t s = 200; s < 205; ++s) calib.push_back(lrb.get(0.0, s));
  const double threshold = calibrate_detection(reference, calib, probes, opt);
  std::size_t false_verdicts = 0;
  std::vector<double> clean_scores, bad_scores;
  for (std::uint64_t s = 1; s <= kSeeds; ++s) {
    const DetectionReport c = detect_backdoor(lrb.get(0.0, s), reference, probes, threshold, opt);
    const DetectionReport b = detect_backdoor(lrb.get(0.1, s), reference, probes, threshold, opt);
    clean_scores.push_back(c.scores.aggregate);
    bad_scores.push_back(b.scores.aggregate);
    false_verdicts += c.backdoored + !b.backdoored;
  }
  char buf[64];
  std::snprintf(buf, sizeof buf, "threshold=%.4f ", threshold);
  return {false_verdicts == 0, std::string(buf) + "clean=" + list(clean_scores) + " backdoored=" + list(bad_scores) +
                                   " false verdicts=" + std::to_string(false_verdicts)};
}

Verdict criterion9() {
  // Exhaustive pixel-delta confinement on every sample and every trigger mode/position.
  const Dataset base = synth_dataset(SynthKind::striped_digits, 200, 7);
  std::size_t violations = 0;
  for (TriggerMode m : {TriggerMode::white, TriggerMode::random}) {
    for (TriggerPosition p : {TriggerPosition::top_left, TriggerPosition::top_right, TriggerPosition::bottom_left,
                              TriggerPosition::bottom_right}) {
      PoisonPlan plan;
      plan.pr = 1.0;
      plan.trigger.mode = m;
      plan.trigger.position = p;
      plan.trigger.seed = 3;
      const Dataset pd = poison_dataset(base, plan);
      const std::size_t H = 16, W = 16, h = plan.trigger.height, w = plan.trigger.width;
      const std::size_t r0 = (p == TriggerPosition::top_left || p == TriggerPosition::top_right) ? 0 : H - h;
      const std::size_t c0 = (p == TriggerPosition::top_left || p == TriggerPosition::bottom_left) ? 0 : W - w;
      for (std::size_t i = 0; i < base.size(); ++i) {
        const Tensor& a = base.samples[i].x;
        const Tensor& b = pd.samples[i].x;
        for (std::size_t y = 0; y < H; ++y) {
          for (std::size_t x = 0; x < W; ++x) {
            const bool inside = y >= r0 && y < r0 + h && x >= c0 && x < c0 + w;
            if (!inside && a[y * W + x] != b[y * W + x]) ++violations;
          }
        }
      }
    }
  }
  // Exact counts and seeded determinism.
  std::size_t count_errors = 0, determinism_errors = 0;
  for (auto [pr, expected] : {std::pair{0.0, 0u}, {0.1, 20u}, {0.5, 100u}, {1.0, 200u}}) {
    PoisonPlan plan;
    plan.pr = pr;
    plan.seed = 11;
    const Dataset a = poison_dataset(base, plan);
    const Dataset b = poison_dataset(base, plan);
    std::size_t n = 0;
    for (const auto& s : a.samples) n += s.poisoned;
    count_errors += n != expected;
    determinism_errors += !(a.samples == b.samples) || poison_selection(base, plan) != poison_selection(base, plan);
  }
  return {violations == 0 && count_errors == 0 && determinism_errors == 0,
          "out-of-patch changes=" + std::to_string(violations) + " count mismatches=" + std::to_string(count_errors) +
              " nondeterministic=" + std::to_string(determinism_errors)};
}

Verdict criterion10() {
  // IDX fixture: 2 images of 2x3, bytes written by hand.
  const std::vector<unsigned char> images = {0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 2, 0, 0, 0, 3,
                                             0, 51, 102, 153, 204, 255, 255, 0, 0, 0, 0, 255};
  const std::vector<unsigned char> labels = {0, 0, 8, 1, 0, 0, 0, 2, 7, 3};
  const Dataset idx = parse_idx(images, labels);
  const bool idx_ok = idx.size() == 2 && idx.sample_shape() == Shape({1, 2, 3}) && idx.samples[0].label == 7 &&
                      idx.samples[1].label == 3 && idx.samples[0].x[1] == 51.0 / 255.0 && idx.samples[0].x[5] == 1.0 &&
                      idx.samples[1].x[5] == 1.0 && idx.samples[1].x[1] == 0.0;

  const auto dir = std::filesystem::temp_directory_path() / "spikegate_acceptance";
  std::filesystem::create_directories(dir);
  Dataset ev;
  ev.kind = SampleKind::event;
  ev.num_classes = 4;
  Rng rng(5);
  for (int i = 0; i < 6; ++i) {
    Tensor x({5, 2, 4, 4});
    for (double& v : x.data()) v = static_cast<double>(rng.below(4));
    ev.samples.push_back({std::move(x), static_cast<std::size_t>(i % 4), false});
  }
  save_evf(ev, dir / "ev.evf");
  const Dataset ev2 = load_evf(dir / "ev.evf", 4);
  const bool evf_ok = ev2.same_content(ev) && io::read_file(dir / "ev.evf") == encode_evf(ev2);

  ParameterSet p = build_network(micro_vgg({1, 16, 16}, 10, desk_model_options(true)), 9);
  p.set(threshold_name("act1"), Tensor({1}, 0.731));
  save_checkpoint(p, dir / "m.sgwt");
  ParameterSet q = build_network(micro_vgg({1, 16, 16}, 10, desk_model_options(true)), 0);
  load_checkpoint(q, dir / "m.sgwt");
  save_checkpoint(q, dir / "m2.sgwt");
  const bool ckpt_ok = p.values() == q.values() && io::read_file(dir / "m.sgwt") == io::read_file(dir / "m2.sgwt");
  std::filesystem::remove_all(dir);
  return {idx_ok && evf_ok && ckpt_ok, std::string("idx ") + (idx_ok ? "ok" : "FAILED") + ", evf " +
                                           (evf_ok ? "ok" : "FAILED") + ", checkpoint " + (ckpt_ok ? "ok" : "FAILED")};
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));
  auto wanted = [&](int n) { return only.empty() || only.count(n); };

  std::optional<Desk> desk;
  std::optional<LrbModels> lrb;
  auto ctx = [&]() -> std::pair<Desk&, LrbModels&> {
    if (!desk) {
      desk.emplace();
      lrb.emplace(*desk);
    }
    return {*desk, *lrb};
  };

  const std::vector<std::pair<int, std::function<Verdict()>>> criteria = {
      {1, criterion1},
      {2, criterion2},
      {3, criterion3},
      {4, [&] { auto [d, m] = ctx(); return criterion4(d, m); }},
      {5, [&] { return criterion5(ctx().first); }},
      {6, [&] { return criterion6(ctx().first); }},
      {7, [&] { auto [d, m] = ctx(); return criterion7(d, m); }},
      {8, [&] { auto [d, m] = ctx(); return criterion8(d, m); }},
      {9, criterion9},
      {10, criterion10},
  };
  int failed = 0;
  for (const auto& [n, fn] : criteria) {
    if (!wanted(n)) continue;
    Verdict v;
    Stopwatch sw;
    try {
      v = fn();
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    std::printf("CRITERION %d: %s (%.0fs) %s\n", n, v.pass ? "PASS" : "FAIL", sw.seconds(), v.detail.c_str());
    std::fflush(stdout);
    failed += !v.pass;
  }
  return failed == 0 ? 0 : 1;
}
