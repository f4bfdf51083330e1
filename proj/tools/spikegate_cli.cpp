// spikegate command line: train / attack / convert / eval / detect / purify / sweep.

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "spikegate/spikegate.hpp"

namespace sg = spikegate;

namespace {

struct Flags {
  std::string config;
  std::optional<std::string> rule, trigger, pos, neuron, surrogate, norm, out;
  std::optional<int> com;
  std::optional<double> pr, scale;
  std::optional<std::size_t> target_class, timesteps;
  std::optional<std::uint64_t> seed;
};

void add_common(CLI::App* app, Flags& f) {
  app->add_option("--config", f.config, "JSON experiment config");
  app->add_option("--rule", f.rule, "lrb | lrc | lrh")->check(CLI::IsMember({"lrb", "lrc", "lrh"}));
  app->add_option("--com", f.com, "hybrid data assignment 1..4")->check(CLI::Range(1, 4));
  app->add_option("--pr", f.pr, "poisoning rate")->check(CLI::Range(0.0, 1.0));
  app->add_option("--trigger", f.trigger, "white | random | p0 | p1 | p2")
      ->check(CLI::IsMember({"white", "random", "p0", "p1", "p2"}));
  app->add_option("--pos", f.pos, "tl | tr | bl | br")->check(CLI::IsMember({"tl", "tr", "bl", "br"}));
  app->add_option("--target-class", f.target_class, "backdoor target label");
  app->add_option("--neuron", f.neuron, "if | lif")->check(CLI::IsMember({"if", "lif"}));
  app->add_option("--surrogate", f.surrogate, "rect | poly | sigmoid | gauss")
      ->check(CLI::IsMember({"rect", "poly", "sigmoid", "gauss"}));
  app->add_option("--norm", f.norm, "max | robust | spike")->check(CLI::IsMember({"max", "robust", "spike"}));
  app->add_option("--scale", f.scale, "spike-norm threshold scale");
  app->add_option("--timesteps", f.timesteps, "simulation length of the evaluated SNN");
  app->add_option("--seed", f.seed, "global seed");
  app->add_option("--out", f.out, "output directory");
}

sg::ExperimentConfig build_config(const Flags& f, double default_pr) {
  sg::ExperimentConfig c;
  if (!f.config.empty()) {
    c = sg::load_config(f.config);
    if (f.rule) c.rule = *f.rule;  // training settings stay as the file gives them
  } else {
    c = sg::default_experiment(f.rule.value_or("lrb"));
    c.plan.pr = default_pr;
  }
  if (f.com) c.com = *f.com;
  if (f.pr) c.plan.pr = *f.pr;
  if (f.trigger) c.plan.trigger.mode = sg::parse_trigger_mode(*f.trigger);
  if (f.pos) c.plan.trigger.position = sg::parse_trigger_position(*f.pos);
  if (f.target_class) c.plan.target_class = *f.target_class;
  if (f.neuron) {
    const auto k = sg::parse_neuron_kind(*f.neuron);
    c.neuron.kind = k;
    c.conversion.neuron.kind = k;
  }
  if (f.surrogate) {
    const auto k = sg::parse_surrogate(*f.surrogate);
    c.train.surrogate.kind = k;
    c.snn.surrogate.kind = k;
  }
  if (f.norm) c.conversion.strategy = sg::parse_norm_strategy(*f.norm);
  if (f.scale) c.conversion.scale = *f.scale;
  if (f.timesteps) {
    if (c.rule == "lrb") c.train.timesteps = *f.timesteps;
    else if (c.rule == "lrc") c.conversion.timesteps = *f.timesteps;
    else c.snn.timesteps = *f.timesteps;
  }
  if (f.seed) c.seed = *f.seed;
  if (f.out) c.out_dir = *f.out;
  c.validate();
  return c;
}

struct EvalData {
  sg::Dataset train, dhat, clean_test, malicious;
  sg::PoisonPlan plan;
};

EvalData eval_data(const sg::ExperimentConfig& c) {
  const auto seeds = sg::SeedPlan::from(c.seed);
  auto d = sg::load_experiment_data(c.data, seeds.data);
  EvalData e;
  e.plan = sg::seeded_plan(c);
  e.dhat = sg::poison_dataset(d.train, e.plan);
  e.train = std::move(d.train);
  std::tie(e.clean_test, e.malicious) = sg::make_eval_splits(d.test, e.plan);
  return e;
}

void print_records(const std::vector<sg::RunRecord>& recs) {
  std::cout << sg::summary_text(recs);
}

int cmd_run(const Flags& f, double default_pr) {
  const auto c = build_config(f, default_pr);
  const auto rec = sg::run_experiment(c);
  print_records({rec});
  if (!c.out_dir.empty()) sg::emit_report({rec}, c.out_dir);
  return 0;
}

int cmd_convert(const Flags& f, const std::string& ann_path) {
  auto c = build_config(f, 0.0);
  sg::Model ann = sg::load_model(ann_path);
  const auto data = eval_data(c);
  sg::ConversionConfig cc = c.conversion;
  cc.reference = data.dhat;
  const auto res = sg::convert(ann.spec, ann.params, cc);
  for (const auto& [id, l] : res.lambdas) std::cout << "lambda " << id << " " << l << "\n";
  for (const auto& [id, t] : res.thresholds) std::cout << "threshold " << id << " " << t << "\n";
  sg::Model snn = res.snn;
  std::cout << "acc " << sg::accuracy(snn, data.clean_test) << "\n";
  if (!c.out_dir.empty()) sg::save_model(snn, std::filesystem::path(c.out_dir) / "converted");
  return 0;
}

int cmd_eval(const Flags& f, const std::string& model_path, const std::string& ann_path) {
  auto c = build_config(f, 0.1);
  sg::Model m = sg::load_model(model_path);
  if (f.timesteps) m.timesteps = *f.timesteps;
  const auto data = eval_data(c);
  sg::RunRecord rec;
  rec.config_hash = sg::config_hash(c);
  auto& r = rec.report;
  r.run_id = "eval";
  r.rule = c.rule;
  r.pr = c.plan.pr;
  r.trigger_mode = sg::trigger_mode_name(data.plan.trigger.mode);
  r.trigger_pos = sg::trigger_position_name(data.plan.trigger.position);
  r.target_class = data.plan.target_class;
  r.neuron = m.spiking() ? sg::neuron_kind_name(c.neuron.kind) : "none";
  r.surrogate = "none";
  r.T = m.timesteps;
  r.seed = c.seed;
  r.wall_time_s = sg::time_overhead([&] {
    r.acc = sg::accuracy(m, data.clean_test);
    if (!data.malicious.empty()) r.asr = sg::attack_success_rate(m, data.malicious, data.plan.target_class);
  });
  if (!ann_path.empty() && r.asr) {
    sg::Model ann = sg::load_model(ann_path);
    const double a = sg::attack_success_rate(ann, data.malicious, data.plan.target_class);
    if (a > 0.0) r.mr = sg::migration_rate(*r.asr, a);
  }
  std::cout << sg::to_csv({r});
  if (!c.out_dir.empty()) sg::emit_report({rec}, c.out_dir);
  return 0;
}

int cmd_detect(const Flags& f, const std::string& suspect_path, const std::string& ref_path,
               const std::vector<std::string>& calib_paths, double threshold, std::size_t probes_n,
               const std::vector<std::string>& layers) {
  auto c = build_config(f, 0.1);
  const auto data = eval_data(c);
  const sg::Dataset probes = sg::make_trigger_probes(data.clean_test, data.plan, probes_n);
  sg::DetectionOptions opt;
  opt.T = f.timesteps.value_or(16);
  opt.layers = layers;
  sg::Model ref = sg::load_model(ref_path);
  if (threshold < 0.0) {
    std::vector<sg::Model> calib;
    for (const auto& p : calib_paths) calib.push_back(sg::load_model(p));
    threshold = sg::calibrate_detection(ref, calib, probes, opt);
  }
  sg::Model suspect = sg::load_model(suspect_path);
  const auto rep = sg::detect_backdoor(suspect, ref, probes, threshold, opt);
  const std::string text = sg::to_json(rep).dump(2) + "\n";
  std::cout << text;
  if (!c.out_dir.empty()) sg::detail::write_text(std::filesystem::path(c.out_dir) / "detection.json", text);
  return 0;
}

int cmd_purify(const Flags& f, const std::string& model_path, bool no_rebalance, double percentile) {
  auto c = build_config(f, 0.1);
  const auto data = eval_data(c);
  sg::PurifyConfig pc;
  pc.rebalance = !no_rebalance;
  pc.percentile = percentile;
  pc.finetune.seed = sg::derive_seed(c.seed, "purify");
  if (f.timesteps) pc.finetune.timesteps = *f.timesteps;
  const sg::Model m = sg::load_model(model_path);
  const auto res = sg::finetune_purify(m, data.train, data.clean_test, data.malicious, data.plan.target_class, pc);
  auto show = [](const char* tag, const sg::PurifyOutcome& o) {
    std::cout << tag << " acc=" << o.acc;
    if (o.asr) std::cout << " asr=" << *o.asr;
    std::cout << "\n";
  };
  show("before", res.before);
  show("after", res.after);
  if (!c.out_dir.empty()) sg::save_model(res.purified, std::filesystem::path(c.out_dir) / "purified");
  return 0;
}

int cmd_sweep(const Flags& f, const std::string& axis, const std::vector<std::string>& values) {
  auto c = build_config(f, 0.1);
  const std::string out = c.out_dir;
  c.out_dir.clear();  // per-run artifacts would clutter the sweep directory
  const auto recs = sg::run_sweep(c, sg::parse_sweep_axis(axis), values);
  print_records(recs);
  if (!out.empty()) sg::emit_report(recs, out);
  for (const auto& r : recs) {
    if (!r.ok()) return 1;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"spikegate: backdoor attacks and defenses for spiking neural networks"};
  app.require_subcommand(1);

  Flags f;
  std::string model, ann, reference;
  std::vector<std::string> calibration, layers, values;
  std::string axis;
  double threshold = -1.0, percentile = 99.9;
  std::size_t probes = 200;
  bool no_rebalance = false;

  auto* train = app.add_subcommand("train", "train on clean data (pr defaults to 0) and evaluate");
  add_common(train, f);
  auto* attack = app.add_subcommand("attack", "train on poisoned data (pr defaults to 0.1) and evaluate");
  add_common(attack, f);

  auto* conv = app.add_subcommand("convert", "convert a saved ANN to an SNN");
  add_common(conv, f);
  conv->add_option("--ann", ann, "ANN model prefix")->required();

  auto* eval = app.add_subcommand("eval", "ACC / ASR (and MR with --ann) of a saved model");
  add_common(eval, f);
  eval->add_option("--model", model, "model prefix")->required();
  eval->add_option("--ann", ann, "source ANN prefix, for MR");

  auto* detect = app.add_subcommand("detect", "compare a suspect SNN with a clean reference on trigger probes");
  add_common(detect, f);
  detect->add_option("--model", model, "suspect model prefix")->required();
  detect->add_option("--reference", reference, "clean reference model prefix")->required();
  auto* calib_opt = detect->add_option("--calibration", calibration, "clean retrain prefixes (at least 5)");
  auto* thr_opt = detect->add_option("--threshold", threshold, "fixed threshold instead of calibration");
  calib_opt->excludes(thr_opt);
  detect->add_option("--probes", probes, "number of trigger probes (0 = all)");
  detect->add_option("--layers", layers, "spike layers to compare (default: output layer; \"all\" for every layer)");

  auto* purify = app.add_subcommand("purify", "fine-tune a backdoored SNN on clean data");
  add_common(purify, f);
  purify->add_option("--model", model, "model prefix")->required();
  purify->add_flag("--no-rebalance", no_rebalance, "skip threshold rebalancing");
  purify->add_option("--percentile", percentile, "rebalancing percentile")->check(CLI::Range(0.0, 100.0));

  auto* sweep = app.add_subcommand("sweep", "one run per axis value");
  add_common(sweep, f);
  sweep->add_option("--axis", axis, "pr | trigger_position | target_class | conversion_strategy")->required();
  sweep->add_option("--values", values, "axis values");

  CLI11_PARSE(app, argc, argv);

  try {
    if (train->parsed()) return cmd_run(f, 0.0);
    if (attack->parsed()) return cmd_run(f, 0.1);
    if (conv->parsed()) return cmd_convert(f, ann);
    if (eval->parsed()) return cmd_eval(f, model, ann);
    if (detect->parsed()) {
      if (threshold < 0.0 && calibration.size() < 5) throw sg::ConfigError("detect needs --threshold or >= 5 --calibration models");
      return cmd_detect(f, model, reference, calibration, threshold, probes, layers);
    }
    if (purify->parsed()) return cmd_purify(f, model, no_rebalance, percentile);
    if (sweep->parsed()) return cmd_sweep(f, axis, values);
  } catch (const sg::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
