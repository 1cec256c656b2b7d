// Copyright (c) 2026, gridflow authors
// SPDX-License-Identifier: Apache-2.0
//
// Versioned binary checkpoint: model config, training layout, parameters,
// optimizer moments, step counter, RNG state and running loss averages.
// Floats are stored as little-endian float32, so a reload reproduces the
// saved model bit-exactly.

#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <filesystem>
#include <string>

#include "gridflow/backbone.hpp"
#include "gridflow/flow.hpp"

namespace gridflow {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  ModelConfig config;
  LayoutSpec train_layout;
  Eigen::VectorXf params;
  Eigen::VectorXf adam_m;  // empty when no optimizer state was saved
  Eigen::VectorXf adam_v;
  std::int64_t step = 0;
  std::string rng_state;
  LossBreakdown running;

  Modelf model() const;
};

/// Throws CheckpointIOError.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace gridflow
