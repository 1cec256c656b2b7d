// Copyright (c) 2026, gridflow authors
// SPDX-License-Identifier: Apache-2.0
//
// Coarse-to-fine control: the flow-loss weight ramp and the two-phase data
// plan. Both are pure functions of the global step.

#pragma once

#include <cstdint>
#include <string>

namespace gridflow {

/// Linear ramp of alpha from 0 at ramp_start_step to alpha_max at ramp_end_step.
struct AlphaSchedule {
  double alpha_max = 0.5;
  std::int64_t ramp_start_step = 0;
  std::int64_t ramp_end_step = 0;

  void validate() const;
};

double alpha_at(std::int64_t step, const AlphaSchedule& sched);

enum class Phase { Coarse, Fine };

struct PhasePlan {
  std::int64_t coarse_steps = 0;
  std::int64_t fine_steps = 0;
  std::string coarse_dataset_id = "coarse";
  std::string fine_dataset_id = "fine";
  // Rich motion labels in the fine phase; when false both phases use coarse labels.
  bool fine_label_detail = true;

  std::int64_t total_steps() const noexcept { return coarse_steps + fine_steps; }
  void validate() const;

  /// Ramp spanning the fine phase, so the coarse phase trains with alpha = 0.
  AlphaSchedule default_alpha_schedule(double alpha_max = 0.5) const {
    return AlphaSchedule{alpha_max, coarse_steps, coarse_steps + fine_steps};
  }
};

struct PhaseDescriptor {
  Phase phase = Phase::Coarse;
  std::string dataset_id;
  bool rich_labels = false;

  bool operator==(const PhaseDescriptor&) const = default;
};

/// The boundary step coarse_steps belongs to the fine phase.
PhaseDescriptor phase_at(std::int64_t step, const PhasePlan& plan);

}  // namespace gridflow
