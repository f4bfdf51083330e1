#pragma once

#include <string>

#include "spikegate/conversion.hpp"
#include "spikegate/metrics.hpp"

namespace spikegate {

// ---------------------------------------------------------------------------
// Presets

/// Full-scale training settings (200 epochs, batch 64;
/// T = 100 for direct/hybrid training, 400 for conversion).
inline TrainConfig full_scale_lrb_config() {
  TrainConfig c;
  c.optimizer = OptimizerKind::adam;
  c.lr = 1e-3;
  c.momentum = 0.9;
  c.epochs = 200;
  c.batch_size = 64;
  c.timesteps = 100;
  return c;
}

inline TrainConfig full_scale_lrc_ann_config() {
  TrainConfig c = full_scale_lrb_config();
  c.timesteps = 400;
  return c;
}

inline TrainConfig full_scale_lrh_ann_config() {
  TrainConfig c = full_scale_lrb_config();
  c.optimizer = OptimizerKind::sgd;
  c.lr = 0.01;
  return c;
}

inline TrainConfig full_scale_lrh_snn_config() {
  TrainConfig c = full_scale_lrb_config();
  c.lr = 1e-4;
  return c;
}

/// Desk scale (synthetic 16x16 data, MicroVGG, one CPU core): short
/// cosine-annealed schedules and rate logits scaled by 10.
inline TrainConfig desk_lrb_config() {
  TrainConfig c;
  c.epochs = 7;
  c.lr = 5e-3;
  c.cosine_lr = true;
  c.timesteps = 16;
  c.output_scale = 10.0;
  c.surrogate = {SurrogateKind::sigmoid, 1.0};
  return c;
}

inline TrainConfig desk_ann_config() {
  TrainConfig c;
  c.epochs = 5;
  c.lr = 3e-3;
  c.cosine_lr = true;
  return c;
}

/// SNN step of the hybrid rule (and of purification).
inline TrainConfig desk_stdb_config() {
  TrainConfig c;
  c.epochs = 3;
  c.lr = 5e-3;
  c.cosine_lr = true;
  c.timesteps = 32;
  c.output_scale = 10.0;
  return c;
}

inline ModelOptions desk_model_options(bool spiking) {
  ModelOptions o;
  o.spiking = spiking;
  o.dropout = spiking ? 0.0 : 0.2;
  o.hidden = 128;
  return o;
}

// ---------------------------------------------------------------------------
// LR_B: direct training on the (possibly poisoned) dataset.

inline Model run_lrb_pipeline(const NetworkSpec& snn_spec, const Dataset& data, const TrainConfig& cfg,
                              std::uint64_t init_seed, TrainHistory* history = nullptr) {
  if (!is_spiking_spec(snn_spec)) throw ConfigError("direct training needs a spiking spec");
  Model m{snn_spec, build_network(snn_spec, init_seed), cfg.timesteps};
  TrainHistory h = train_snn_bptt(m.spec, m.params, data, cfg);
  if (history) *history = std::move(h);
  return m;
}

// ---------------------------------------------------------------------------
// LR_C: ANN training then conversion, both on D_hat.

struct LrcResult {
  Model ann;
  ConversionResult conversion;
};

inline LrcResult run_lrc_pipeline(const NetworkSpec& ann_spec, const Dataset& dhat, const TrainConfig& ann_cfg,
                                  ConversionConfig conv_cfg, std::uint64_t init_seed) {
  const ConstraintReport rep = validate_conversion_constraints(ann_spec);
  if (!rep.ok()) {
    throw ConfigError("conversion constraint '" + rep.violations.front().rule + "' violated at layer '" +
                      rep.violations.front().layer_id + "'");
  }
  LrcResult r;
  r.ann = Model{ann_spec, build_network(ann_spec, init_seed), 1};
  train_ann(r.ann.spec, r.ann.params, dhat, ann_cfg);
  if (conv_cfg.reference.empty()) conv_cfg.reference = dhat;
  r.conversion = convert(r.ann.spec, r.ann.params, conv_cfg);
  return r;
}

// ---------------------------------------------------------------------------
// LR_H: ANN training, conversion, STDB fine-tuning.

/// Which stages see the poisoned dataset. The conversion reference follows
/// the SNN stage.
struct ComAssignment {
  bool ann_poisoned = false;
  bool snn_poisoned = false;
};

inline ComAssignment com_assignment(int com) {
  switch (com) {
    case 1: return {false, false};
    case 2: return {false, true};
    case 3: return {true, false};
    case 4: return {true, true};
  }
  throw ConfigError("com must be 1..4, got " + std::to_string(com));
}

struct LrhConfig {
  TrainConfig ann = desk_ann_config();
  ConversionConfig conversion;
  TrainConfig snn = desk_stdb_config();
};

struct LrhResult {
  Model ann;
  Model converted;  // before fine-tuning
  Model snn;
};

inline LrhResult run_lrh_pipeline(const NetworkSpec& ann_spec, const Dataset& clean, const Dataset& dhat, int com,
                                  LrhConfig cfg, std::uint64_t init_seed) {
  const ComAssignment a = com_assignment(com);
  const Dataset& ann_data = a.ann_poisoned ? dhat : clean;
  const Dataset& snn_data = a.snn_poisoned ? dhat : clean;
  LrhResult r;
  r.ann = Model{ann_spec, build_network(ann_spec, init_seed), 1};
  train_ann(r.ann.spec, r.ann.params, ann_data, cfg.ann);
  ConversionConfig cc = cfg.conversion;
  if (cc.reference.empty()) cc.reference = snn_data;
  cc.timesteps = cfg.snn.timesteps;
  r.converted = convert(r.ann.spec, r.ann.params, cc).snn;
  r.snn = r.converted;
  stdb_finetune(r.snn.spec, r.snn.params, snn_data, cfg.snn);
  return r;
}

}  // namespace spikegate
