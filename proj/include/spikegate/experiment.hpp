#pragma once

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "spikegate/defense.hpp"

namespace spikegate {

// ---------------------------------------------------------------------------
// Model files: <prefix>.json (spec + T) and <prefix>.sgwt (parameters).

inline void save_model(const Model& m, const std::filesystem::path& prefix) {
  if (prefix.has_parent_path()) std::filesystem::create_directories(prefix.parent_path());
  nlohmann::json j = {{"spec", spec_to_json(m.spec)}, {"timesteps", m.timesteps}};
  std::ofstream out(prefix.string() + ".json");
  if (!out) throw Error("cannot write " + prefix.string() + ".json");
  out << j.dump(2) << "\n";
  save_checkpoint(m.params, prefix.string() + ".sgwt");
}

inline Model load_model(const std::filesystem::path& prefix) {
  std::ifstream in(prefix.string() + ".json");
  if (!in) throw Error("cannot read " + prefix.string() + ".json");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("model file: ") + e.what());
  }
  Model m;
  m.spec = spec_from_json(j.at("spec"));
  m.timesteps = j.value("timesteps", std::size_t{1});
  m.params = build_network(m.spec, 0);
  load_checkpoint(m.params, prefix.string() + ".sgwt");
  return m;
}

// ---------------------------------------------------------------------------
// Configuration

struct DatasetSource {
  std::string kind = "synth";  // synth | idx | evf
  std::string synth = "striped-digits";
  std::size_t n = 2000;
  std::size_t side = 16;
  double train_fraction = 0.8;  // used when no separate test files are given
  std::string train_images, train_labels, test_images, test_labels;  // idx
  std::string train_path, test_path;                                 // evf
};

struct ExperimentConfig {
  std::string rule = "lrb";  // lrb | lrc | lrh
  int com = 4;               // lrh only
  std::string model = "micro_vgg";
  DatasetSource data;
  PoisonPlan plan;           // selection and trigger seeds are derived from `seed`
  NeuronConfig neuron;       // lrb neurons
  TrainConfig train;         // lrb training, or the ANN step of lrc/lrh
  TrainConfig snn;           // lrh SNN step
  ConversionConfig conversion;
  std::string out_dir;
  std::string run_id;        // empty = derived from the config hash
  std::uint64_t seed = 0;

  void validate() const {
    if (rule != "lrb" && rule != "lrc" && rule != "lrh") throw ConfigError("rule must be lrb, lrc or lrh");
    if (rule == "lrh") com_assignment(com);
    if (!(plan.pr >= 0.0 && plan.pr <= 1.0)) throw ConfigError("pr must lie in [0,1]");
    train.validate();
    if (rule == "lrh") snn.validate();
    if (rule != "lrb") conversion.validate();
    neuron.validate();
  }
};

/// Desk-scale defaults for a rule.
inline ExperimentConfig default_experiment(const std::string& rule = "lrb") {
  ExperimentConfig c;
  c.rule = rule;
  c.train = rule == "lrb" ? desk_lrb_config() : desk_ann_config();
  c.snn = desk_stdb_config();
  c.conversion.timesteps = 64;
  return c;
}

inline std::size_t eval_timesteps(const ExperimentConfig& c) {
  if (c.rule == "lrb") return c.train.timesteps;
  if (c.rule == "lrc") return c.conversion.timesteps;
  return c.snn.timesteps;
}

namespace detail {

inline nlohmann::json train_to_json(const TrainConfig& t) {
  return {{"optimizer", t.optimizer == OptimizerKind::adam ? "adam" : "sgd"},
          {"epochs", t.epochs},
          {"lr", t.lr},
          {"cosine_lr", t.cosine_lr},
          {"momentum", t.momentum},
          {"weight_decay", t.weight_decay},
          {"batch_size", t.batch_size},
          {"timesteps", t.timesteps},
          {"surrogate", surrogate_name(t.surrogate.kind)},
          {"surrogate_width", t.surrogate.width},
          {"alpha", t.alpha},
          {"beta", t.beta},
          {"lambda", t.lambda},
          {"mu", t.mu},
          {"output_scale", t.output_scale},
          {"stdb_gamma", t.stdb.gamma},
          {"stdb_tau", t.stdb.tau_s}};
}

inline void train_from_json(const nlohmann::json& j, TrainConfig& t) {
  if (j.contains("optimizer")) t.optimizer = parse_optimizer(j["optimizer"].get<std::string>());
  t.epochs = j.value("epochs", t.epochs);
  t.lr = j.value("lr", t.lr);
  t.cosine_lr = j.value("cosine_lr", t.cosine_lr);
  t.momentum = j.value("momentum", t.momentum);
  t.weight_decay = j.value("weight_decay", t.weight_decay);
  t.batch_size = j.value("batch_size", t.batch_size);
  t.timesteps = j.value("timesteps", t.timesteps);
  if (j.contains("surrogate")) t.surrogate.kind = parse_surrogate(j["surrogate"].get<std::string>());
  t.surrogate.width = j.value("surrogate_width", t.surrogate.width);
  t.alpha = j.value("alpha", t.alpha);
  t.beta = j.value("beta", t.beta);
  t.lambda = j.value("lambda", t.lambda);
  t.mu = j.value("mu", t.mu);
  t.output_scale = j.value("output_scale", t.output_scale);
  t.stdb.gamma = j.value("stdb_gamma", t.stdb.gamma);
  t.stdb.tau_s = j.value("stdb_tau", t.stdb.tau_s);
}

}  // namespace detail

inline nlohmann::json config_to_json(const ExperimentConfig& c) {
  const auto& d = c.data;
  const auto& tr = c.plan.trigger;
  return {{"rule", c.rule},
          {"com", c.com},
          {"model", c.model},
          {"data",
           {{"kind", d.kind},
            {"synth", d.synth},
            {"n", d.n},
            {"side", d.side},
            {"train_fraction", d.train_fraction},
            {"train_images", d.train_images},
            {"train_labels", d.train_labels},
            {"test_images", d.test_images},
            {"test_labels", d.test_labels},
            {"train_path", d.train_path},
            {"test_path", d.test_path}}},
          {"poison",
           {{"pr", c.plan.pr},
            {"target_class", c.plan.target_class},
            {"trigger", trigger_mode_name(tr.mode)},
            {"trigger_height", tr.height},
            {"trigger_width", tr.width},
            {"position", trigger_position_name(tr.position)},
            {"max_count", tr.max_count}}},
          {"neuron", neuron_to_json(c.neuron)},
          {"train", detail::train_to_json(c.train)},
          {"snn", detail::train_to_json(c.snn)},
          {"conversion",
           {{"strategy", norm_strategy_name(c.conversion.strategy)},
            {"percentile", c.conversion.percentile},
            {"scale", c.conversion.scale},
            {"reference_limit", c.conversion.reference_limit},
            {"timesteps", c.conversion.timesteps},
            {"neuron", neuron_to_json(c.conversion.neuron)}}},
          {"out_dir", c.out_dir},
          {"run_id", c.run_id},
          {"seed", c.seed}};
}

/// Missing keys keep the rule's defaults.
inline ExperimentConfig config_from_json(const nlohmann::json& j) {
  try {
    ExperimentConfig c = default_experiment(j.value("rule", std::string("lrb")));
    c.com = j.value("com", c.com);
    c.model = j.value("model", c.model);
    if (j.contains("data")) {
      const auto& d = j["data"];
      auto& o = c.data;
      o.kind = d.value("kind", o.kind);
      o.synth = d.value("synth", o.synth);
      o.n = d.value("n", o.n);
      o.side = d.value("side", o.side);
      o.train_fraction = d.value("train_fraction", o.train_fraction);
      o.train_images = d.value("train_images", o.train_images);
      o.train_labels = d.value("train_labels", o.train_labels);
      o.test_images = d.value("test_images", o.test_images);
      o.test_labels = d.value("test_labels", o.test_labels);
      o.train_path = d.value("train_path", o.train_path);
      o.test_path = d.value("test_path", o.test_path);
    }
    if (j.contains("poison")) {
      const auto& p = j["poison"];
      c.plan.pr = p.value("pr", c.plan.pr);
      c.plan.target_class = p.value("target_class", c.plan.target_class);
      if (p.contains("trigger")) c.plan.trigger.mode = parse_trigger_mode(p["trigger"].get<std::string>());
      c.plan.trigger.height = p.value("trigger_height", c.plan.trigger.height);
      c.plan.trigger.width = p.value("trigger_width", c.plan.trigger.width);
      if (p.contains("position")) c.plan.trigger.position = parse_trigger_position(p["position"].get<std::string>());
      c.plan.trigger.max_count = p.value("max_count", c.plan.trigger.max_count);
    }
    if (j.contains("neuron")) c.neuron = neuron_from_json(j["neuron"]);
    if (j.contains("train")) detail::train_from_json(j["train"], c.train);
    if (j.contains("snn")) detail::train_from_json(j["snn"], c.snn);
    if (j.contains("conversion")) {
      const auto& v = j["conversion"];
      if (v.contains("strategy")) c.conversion.strategy = parse_norm_strategy(v["strategy"].get<std::string>());
      c.conversion.percentile = v.value("percentile", c.conversion.percentile);
      c.conversion.scale = v.value("scale", c.conversion.scale);
      c.conversion.reference_limit = v.value("reference_limit", c.conversion.reference_limit);
      c.conversion.timesteps = v.value("timesteps", c.conversion.timesteps);
      if (v.contains("neuron")) c.conversion.neuron = neuron_from_json(v["neuron"]);
    }
    c.out_dir = j.value("out_dir", c.out_dir);
    c.run_id = j.value("run_id", c.run_id);
    c.seed = j.value("seed", c.seed);
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad experiment config: ") + e.what());
  }
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config " + path.string() + ": " + e.what());
  }
  return config_from_json(j);
}

/// FNV-1a over the canonical JSON of the config (output location and run
/// id excluded), as 16 hex digits.
inline std::string config_hash(const ExperimentConfig& c) {
  nlohmann::json j = config_to_json(c);
  j.erase("out_dir");
  j.erase("run_id");
  Fnv1a h;
  const std::string s = j.dump();
  h.bytes(s.data(), s.size());
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h.value()));
  return buf;
}

// ---------------------------------------------------------------------------
// Seeds and data

/// Named sub-seeds of the global seed. Data and poison selection depend on
/// the global seed only, so sweeps over other axes share splits.
struct SeedPlan {
  std::uint64_t data, init, train, poison, trigger;

  static SeedPlan from(std::uint64_t global) {
    return {derive_seed(global, "data"), derive_seed(global, "init"), derive_seed(global, "train"),
            derive_seed(global, "poison"), derive_seed(global, "trigger")};
  }
};

struct ExperimentData {
  Dataset train;
  Dataset test;
};

inline ExperimentData load_experiment_data(const DatasetSource& src, std::uint64_t data_seed) {
  ExperimentData out;
  auto split = [&](const Dataset& all) {
    auto [a, b] = split_dataset(all, src.train_fraction);
    out.train = std::move(a);
    out.test = std::move(b);
  };
  if (src.kind == "synth") {
    split(synth_dataset(parse_synth_kind(src.synth), src.n, data_seed, src.side));
  } else if (src.kind == "idx") {
    Dataset tr = load_idx(src.train_images, src.train_labels);
    if (src.test_images.empty()) {
      split(tr);
    } else {
      out.train = std::move(tr);
      out.test = load_idx(src.test_images, src.test_labels);
    }
  } else if (src.kind == "evf") {
    Dataset tr = load_evf(src.train_path);
    if (src.test_path.empty()) {
      split(tr);
    } else {
      out.train = std::move(tr);
      out.test = load_evf(src.test_path, out.train.num_classes);
    }
  } else {
    throw ConfigError("unknown dataset kind '" + src.kind + "'");
  }
  return out;
}

inline PoisonPlan seeded_plan(const ExperimentConfig& c) {
  const SeedPlan s = SeedPlan::from(c.seed);
  PoisonPlan p = c.plan;
  p.seed = s.poison;
  p.trigger.seed = s.trigger;
  return p;
}

/// Network input shape: [C,H,W] for images, [P,H,W] per step for events.
inline Shape network_input_shape(const Dataset& d) {
  const Shape& s = d.sample_shape();
  return d.kind == SampleKind::event ? Shape(s.begin() + 1, s.end()) : s;
}

inline NetworkSpec experiment_spec(const ExperimentConfig& c, const Dataset& train) {
  ModelOptions o = desk_model_options(c.rule == "lrb");
  o.neuron = c.neuron;
  return model_by_name(c.model, network_input_shape(train), train.num_classes, o);
}

// ---------------------------------------------------------------------------
// Runs

struct RunRecord {
  std::string config_hash;
  EvalReport report;
  std::vector<std::string> checkpoints;
  std::optional<DetectionReport> detection;
  std::string error;  // non-empty when the run failed

  bool ok() const { return error.empty(); }
};

struct RunArtifacts {
  Model snn;
  std::optional<Model> ann;
};

namespace detail {

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
  if (!out) throw Error("write failed: " + path.string());
}

}  // namespace detail

inline std::string run_id_of(const ExperimentConfig& cfg) {
  return cfg.run_id.empty() ? cfg.rule + "-" + config_hash(cfg).substr(0, 8) : cfg.run_id;
}

inline nlohmann::json record_to_json(const RunRecord& r) {
  nlohmann::json j = {{"config_hash", r.config_hash}, {"report", to_json(r.report)}, {"checkpoints", r.checkpoints}};
  if (r.detection) j["detection"] = to_json(*r.detection);
  if (!r.ok()) j["error"] = r.error;
  return j;
}

inline RunRecord record_from_json(const nlohmann::json& j) {
  try {
    RunRecord r;
    r.config_hash = j.at("config_hash").get<std::string>();
    r.report = report_from_json(j.at("report"));
    r.checkpoints = j.at("checkpoints").get<std::vector<std::string>>();
    if (j.contains("detection")) r.detection = detection_from_json(j["detection"]);
    r.error = j.value("error", std::string());
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("bad run record: ") + e.what());
  }
}

namespace detail {

inline RunRecord run_experiment_impl(const ExperimentConfig& cfg, RunArtifacts* artifacts) {
  const SeedPlan seeds = SeedPlan::from(cfg.seed);
  const ExperimentData data = load_experiment_data(cfg.data, seeds.data);
  if (cfg.rule != "lrb" && data.train.kind == SampleKind::event) {
    throw ConfigError("conversion-based rules need image data (an ANN cannot take event frames)");
  }
  const PoisonPlan plan = seeded_plan(cfg);
  const Dataset dhat = poison_dataset(data.train, plan);
  const auto [clean_test, malicious] = make_eval_splits(data.test, plan);
  const NetworkSpec spec = experiment_spec(cfg, data.train);

  TrainConfig train = cfg.train;
  train.seed = seeds.train;
  std::optional<Model> ann;
  Model snn;
  Stopwatch sw;
  if (cfg.rule == "lrb") {
    snn = run_lrb_pipeline(spec, dhat, train, seeds.init);
  } else if (cfg.rule == "lrc") {
    LrcResult r = run_lrc_pipeline(spec, dhat, train, cfg.conversion, seeds.init);
    ann = std::move(r.ann);
    snn = std::move(r.conversion.snn);
  } else {
    LrhConfig lc{train, cfg.conversion, cfg.snn};
    lc.snn.seed = derive_seed(seeds.train, "snn");
    LrhResult r = run_lrh_pipeline(spec, data.train, dhat, cfg.com, lc, seeds.init);
    ann = std::move(r.ann);
    snn = std::move(r.snn);
  }
  const double wall = sw.seconds();

  RunRecord rec;
  rec.config_hash = config_hash(cfg);
  EvalReport& rep = rec.report;
  rep.run_id = run_id_of(cfg);
  rep.rule = cfg.rule;
  rep.com = cfg.rule == "lrh" ? cfg.com : 0;
  rep.pr = cfg.plan.pr;
  rep.trigger_mode = trigger_mode_name(plan.trigger.mode);
  rep.trigger_pos = trigger_position_name(plan.trigger.position);
  rep.target_class = plan.target_class;
  rep.neuron = cfg.rule == "lrb" ? neuron_kind_name(cfg.neuron.kind) : neuron_kind_name(cfg.conversion.neuron.kind);
  rep.surrogate = cfg.rule == "lrc" ? "none" : surrogate_name((cfg.rule == "lrb" ? cfg.train : cfg.snn).surrogate.kind);
  rep.T = snn.timesteps;
  rep.acc = accuracy(snn, clean_test);
  if (!malicious.empty()) {
    rep.asr = attack_success_rate(snn, malicious, plan.target_class);
    if (ann) {
      const double ann_asr = attack_success_rate(*ann, malicious, plan.target_class);
      if (ann_asr > 0.0) rep.mr = migration_rate(*rep.asr, ann_asr);
    }
  }
  rep.wall_time_s = wall;
  rep.seed = cfg.seed;

  if (!cfg.out_dir.empty()) {
    const std::filesystem::path dir(cfg.out_dir);
    const std::string stem = (dir / rep.run_id).string();
    save_model(snn, stem + ".snn");
    rec.checkpoints.push_back(stem + ".snn");
    if (ann) {
      save_model(*ann, stem + ".ann");
      rec.checkpoints.push_back(stem + ".ann");
    }
    detail::write_text(stem + ".config.json", config_to_json(cfg).dump(2) + "\n");
    detail::write_text(stem + ".csv", to_csv({rep}));
    detail::write_text(stem + ".record.json", record_to_json(rec).dump(2) + "\n");
  }
  if (artifacts) {
    artifacts->snn = std::move(snn);
    artifacts->ann = std::move(ann);
  }
  return rec;
}

}  // namespace detail

/// Runs one configured pipeline end to end: data, poisoning, training /
/// conversion, evaluation (ACC, ASR, MR for lrc/lrh) and, when out_dir is
/// set, the CSV row, run record, config snapshot and checkpoints. On
/// failure a <run_id>.failed marker flags whatever was written, and the
/// error propagates.
inline RunRecord run_experiment(const ExperimentConfig& cfg, RunArtifacts* artifacts = nullptr) {
  try {
    cfg.validate();
    return detail::run_experiment_impl(cfg, artifacts);
  } catch (const std::exception& e) {
    if (!cfg.out_dir.empty()) {
      try {
        detail::write_text(std::filesystem::path(cfg.out_dir) / (run_id_of(cfg) + ".failed"), std::string(e.what()) + "\n");
      } catch (const std::exception&) {
      }
    }
    throw;
  }
}

// ---------------------------------------------------------------------------
// Sweeps

enum class SweepAxis { pr, trigger_position, target_class, conversion_strategy };

inline SweepAxis parse_sweep_axis(const std::string& s) {
  if (s == "pr") return SweepAxis::pr;
  if (s == "trigger_position" || s == "pos") return SweepAxis::trigger_position;
  if (s == "target_class") return SweepAxis::target_class;
  if (s == "conversion_strategy" || s == "norm") return SweepAxis::conversion_strategy;
  throw ConfigError("unknown sweep axis '" + s + "'");
}

inline const char* sweep_axis_name(SweepAxis a) {
  switch (a) {
    case SweepAxis::pr: return "pr";
    case SweepAxis::trigger_position: return "trigger_position";
    case SweepAxis::target_class: return "target_class";
    case SweepAxis::conversion_strategy: return "conversion_strategy";
  }
  return "?";
}

inline ExperimentConfig apply_axis(ExperimentConfig c, SweepAxis axis, const std::string& value) {
  try {
    switch (axis) {
      case SweepAxis::pr: c.plan.pr = std::stod(value); break;
      case SweepAxis::trigger_position: c.plan.trigger.position = parse_trigger_position(value); break;
      case SweepAxis::target_class: c.plan.target_class = std::stoul(value); break;
      case SweepAxis::conversion_strategy:
        if (c.rule == "lrb") throw ConfigError("conversion_strategy sweeps need lrc or lrh");
        c.conversion.strategy = parse_norm_strategy(value);
        break;
    }
  } catch (const std::logic_error&) {
    throw ConfigError(std::string("bad value '") + value + "' for axis " + sweep_axis_name(axis));
  }
  const std::string base = c.run_id.empty() ? c.rule : c.run_id;
  c.run_id = base + "-" + sweep_axis_name(axis) + "=" + value;
  return c;
}

/// Worker count from SPIKEGATE_THREADS (default 1).
inline std::size_t configured_threads() {
  const char* v = std::getenv("SPIKEGATE_THREADS");
  if (!v || !*v) return 1;
  char* end = nullptr;
  const long n = std::strtol(v, &end, 10);
  if (*end != '\0' || n < 1) throw ConfigError("SPIKEGATE_THREADS must be a positive integer");
  return static_cast<std::size_t>(n);
}

/// One run per value. Failures are recorded in the record and do not stop
/// the sweep. Rows come back ordered by axis value.
inline std::vector<RunRecord> run_sweep(const ExperimentConfig& base, SweepAxis axis, const std::vector<std::string>& values,
                                        std::size_t threads = 0) {
  std::vector<RunRecord> out(values.size());
  if (axis == SweepAxis::conversion_strategy && base.rule == "lrb") {
    throw ConfigError("conversion_strategy sweeps need lrc or lrh");
  }
  auto run_one = [&](std::size_t i) {
    try {
      const ExperimentConfig c = apply_axis(base, axis, values[i]);
      out[i] = run_experiment(c);
    } catch (const std::exception& e) {
      out[i].error = e.what();
      out[i].report.run_id = base.rule + "-" + sweep_axis_name(axis) + "=" + values[i];
      out[i].report.rule = base.rule;
    }
  };
  if (threads == 0) threads = configured_threads();
  threads = std::min(threads, values.size());
  if (threads <= 1) {
    for (std::size_t i = 0; i < values.size(); ++i) run_one(i);
  } else {
    std::mutex mu;
    std::size_t next = 0;
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) {
      pool.emplace_back([&] {
        for (;;) {
          std::size_t i;
          {
            std::lock_guard lock(mu);
            if (next == values.size()) return;
            i = next++;
          }
          run_one(i);
        }
      });
    }
    for (auto& th : pool) th.join();
  }
  std::vector<std::size_t> order(values.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  const bool numeric = axis == SweepAxis::pr || axis == SweepAxis::target_class;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (numeric) {
      try {
        return std::stod(values[a]) < std::stod(values[b]);
      } catch (const std::logic_error&) {
        return false;
      }
    }
    return values[a] < values[b];
  });
  std::vector<RunRecord> sorted;
  for (std::size_t i : order) sorted.push_back(std::move(out[i]));
  return sorted;
}

// ---------------------------------------------------------------------------
// Reports

inline std::string summary_text(const std::vector<RunRecord>& records) {
  std::string s;
  char line[256];
  for (const auto& r : records) {
    const auto& e = r.report;
    if (!r.ok()) {
      s += e.run_id + "  FAILED: " + r.error + "\n";
      continue;
    }
    auto opt = [](const std::optional<double>& v) {
      if (!v) return std::string("n/a");
      char b[32];
      std::snprintf(b, sizeof b, "%.2f", *v);
      return std::string(b);
    };
    std::snprintf(line, sizeof line, "%s  acc=%.2f  asr=%s  mr=%s  T=%zu  time=%.1fs\n", e.run_id.c_str(), e.acc,
                  opt(e.asr).c_str(), opt(e.mr).c_str(), e.T, e.wall_time_s);
    s += line;
    if (r.detection) s += "  detection: " + std::string(r.detection->verdict()) + "\n";
  }
  return s;
}

/// Writes <dir>/metrics.csv (successful runs), <dir>/summary.txt and, for
/// runs with a detection result, <dir>/<run_id>.detection.json.
/// Overwrites; the same records always give the same bytes.
inline void emit_report(const std::vector<RunRecord>& records, const std::filesystem::path& dir) {
  std::vector<EvalReport> rows;
  for (const auto& r : records) {
    if (r.ok()) rows.push_back(r.report);
  }
  detail::write_text(dir / "metrics.csv", to_csv(rows));
  detail::write_text(dir / "summary.txt", summary_text(records));
  for (const auto& r : records) {
    if (r.detection) detail::write_text(dir / (r.report.run_id + ".detection.json"), to_json(*r.detection).dump(2) + "\n");
  }
}

}  // namespace spikegate
