// Copyright (c) 2026, gridflow authors
// SPDX-License-Identifier: Apache-2.0
//
// Parallel flow-matching training: every cell of a grid is noised at the
// same t and the whole grid goes through one forward/backward pass.

#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "gridflow/backbone.hpp"
#include "gridflow/checkpoint.hpp"
#include "gridflow/curriculum.hpp"
#include "gridflow/data_synth.hpp"
#include "gridflow/flow.hpp"
#include "gridflow/io.hpp"
#include "gridflow/sampler.hpp"

namespace gridflow {

struct TrainConfig {
  std::uint64_t seed = 0;
  int batch_size = 4;
  std::int64_t total_steps = 0;
  // AdamW
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double weight_decay = 0.0;
  double grad_clip = 1.0;  // global norm; <= 0 disables
  AlphaSchedule alpha_schedule;
  PhasePlan phase_plan;
  double cond_dropout_prob = 0.1;
  // Coarse-phase augmentation: each sequence's intensity is scaled by U(1 - jitter, 1).
  double coarse_intensity_jitter = 0.3;
  // Probability that an example keeps its first column clean, as the sampler
  // does with reference cells. Those cells carry no loss.
  double reference_prob = 0.0;
  std::int64_t checkpoint_every = 0;  // 0 disables periodic checkpoints
  LayoutSpec layout;
  ModelConfig model;

  void validate() const;

  /// Keys: seed, batch_size, total_steps, learning_rate, beta1, beta2,
  /// adam_eps, weight_decay, grad_clip, alpha_max, ramp_start, ramp_end,
  /// coarse_steps, fine_steps, coarse_dataset, fine_dataset,
  /// fine_label_detail, cond_dropout_prob, coarse_intensity_jitter,
  /// reference_prob, checkpoint_every, layout (MxN), frame_h, frame_w, channels,
  /// patch_size, embed_dim, depth, heads, time_embed_dim, mlp_ratio.
  static TrainConfig from_keyvalue(const io::KeyValueFile& kv);
  io::KeyValueFile to_keyvalue() const;
};

struct TrainState {
  Modelf model;
  Eigen::VectorXf adam_m;
  Eigen::VectorXf adam_v;
  std::int64_t step = 0;
  std::mt19937_64 rng;
  LossBreakdown running;

  Checkpoint to_checkpoint(const LayoutSpec& train_layout) const;
  static TrainState from_checkpoint(const Checkpoint& ckpt);
};

struct TrainExample {
  GridTensorf grid;
  Condition cond;
  // Pinned flow draws; when set, train_step uses them instead of sampling.
  std::optional<float> t;
  std::optional<GridTensorf> noise;
  // Pinned reference cells (mask 0); when unset, drawn from reference_prob.
  std::optional<MaskGrid> mask;
};

TrainState init_train_state(const TrainConfig& config);

/// One optimizer update on a batch. Draws t ~ U(0,1), noise ~ N(0, I), the
/// condition-dropout coin and the reference cells per example from
/// state.rng, unless the example pins them.
/// Throws ShapeMismatch for off-layout grids and NonFiniteLoss on divergence.
LossBreakdown train_step(TrainState& state, const TrainConfig& config,
                         std::span<const TrainExample> batch);

using DatasetMap = std::map<std::string, const Dataset*>;

/// Draws the batch for state.step according to the phase plan, in model space.
std::vector<TrainExample> next_batch(TrainState& state, const TrainConfig& config,
                                     const DatasetMap& datasets);

struct MetricRow {
  std::int64_t step = 0;
  LossBreakdown loss;
};

struct TrainOptions {
  std::filesystem::path output_dir;
  std::filesystem::path resume_from;  // empty: fresh start
  // Stop once this many steps have been taken in this call (< 0: run to the end).
  std::int64_t stop_after = -1;
  std::function<void(const MetricRow&)> on_step;
};

struct TrainResult {
  std::filesystem::path final_checkpoint;
  std::filesystem::path metrics_csv;
  std::vector<MetricRow> metrics;
};

/// Runs the coarse-to-fine schedule, writing metrics.csv, periodic
/// checkpoints (ckpt_<step>.gfck) and final.gfck into output_dir.
TrainResult train(const TrainConfig& config, const DatasetMap& datasets,
                  const TrainOptions& options);

}  // namespace gridflow
