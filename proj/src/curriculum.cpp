// Copyright (c) 2026, gridflow authors
// SPDX-License-Identifier: Apache-2.0

#include "gridflow/curriculum.hpp"

#include "gridflow/errors.hpp"

namespace gridflow {

void AlphaSchedule::validate() const {
  if (!(alpha_max >= 0.0)) throw Error(Errc::NegativeAlpha, "alpha_max=" + std::to_string(alpha_max));
  if (ramp_start_step < 0 || ramp_end_step < ramp_start_step) {
    throw Error(Errc::InvalidConfig, "alpha ramp [" + std::to_string(ramp_start_step) + ", " +
                                         std::to_string(ramp_end_step) + "] is not ordered");
  }
}

double alpha_at(std::int64_t step, const AlphaSchedule& sched) {
  if (step < 0) throw Error(Errc::NegativeStep, "step=" + std::to_string(step));
  sched.validate();
  if (step >= sched.ramp_end_step) return sched.alpha_max;
  if (step <= sched.ramp_start_step) return 0.0;
  const double frac = double(step - sched.ramp_start_step) /
                      double(sched.ramp_end_step - sched.ramp_start_step);
  return sched.alpha_max * frac;
}

void PhasePlan::validate() const {
  if (coarse_steps < 0 || fine_steps < 0) {
    throw Error(Errc::InvalidConfig, "phase step counts must be non-negative");
  }
}

PhaseDescriptor phase_at(std::int64_t step, const PhasePlan& plan) {
  plan.validate();
  if (step < 0) throw Error(Errc::NegativeStep, "step=" + std::to_string(step));
  if (step >= plan.total_steps()) {
    throw Error(Errc::StepBeyondPlan, "step " + std::to_string(step) + " beyond plan of " +
                                          std::to_string(plan.total_steps()) + " steps");
  }
  if (step < plan.coarse_steps) return {Phase::Coarse, plan.coarse_dataset_id, false};
  return {Phase::Fine, plan.fine_dataset_id, plan.fine_label_detail};
}

}  // namespace gridflow
