// Copyright (c) 2026, gridflow authors
// SPDX-License-Identifier: Apache-2.0

#include "gridflow/curriculum.hpp"
#include "helpers.hpp"

using namespace gridflow;

TEST_CASE("alpha_at piecewise values") {
  const AlphaSchedule s{0.5, 100, 300};
  CHECK(alpha_at(0, s) == 0.0);
  CHECK(alpha_at(100, s) == 0.0);
  CHECK(alpha_at(200, s) == 0.25);
  CHECK(alpha_at(300, s) == 0.5);
  CHECK(alpha_at(5000, s) == 0.5);
  CHECK(alpha_at(150, s) == doctest::Approx(0.125).epsilon(1e-15));
  CHECK(test::error_of([&] { alpha_at(-1, s); }) == Errc::NegativeStep);
}

TEST_CASE("alpha_at degenerate ramp is a step") {
  const AlphaSchedule s{0.5, 10, 10};
  CHECK(alpha_at(9, s) == 0.0);
  CHECK(alpha_at(10, s) == 0.5);
}

TEST_CASE("alpha_at monotone and bounded for random schedules") {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 50; ++trial) {
    const std::int64_t a = std::int64_t(rng() % 1000), b = a + std::int64_t(rng() % 1000);
    const AlphaSchedule s{std::uniform_real_distribution<double>(0, 2)(rng), a, b};
    double prev = 0.0;
    for (std::int64_t step = 0; step < 2500; step += 7) {
      const double v = alpha_at(step, s);
      CHECK(v >= prev);
      CHECK(v <= s.alpha_max);
      prev = v;
    }
  }
}

TEST_CASE("schedule validation") {
  CHECK(test::error_of([] { AlphaSchedule{-0.1, 0, 1}.validate(); }) == Errc::NegativeAlpha);
  CHECK(test::error_of([] { AlphaSchedule{0.5, 5, 1}.validate(); }) == Errc::InvalidConfig);
}

TEST_CASE("phase_at boundary and sweep") {
  const PhasePlan plan{30, 70, "big", "curated", true};
  CHECK(phase_at(0, plan).phase == Phase::Coarse);
  CHECK(phase_at(0, plan).dataset_id == "big");
  CHECK_FALSE(phase_at(0, plan).rich_labels);
  CHECK(phase_at(29, plan).phase == Phase::Coarse);
  CHECK(phase_at(30, plan).phase == Phase::Fine);
  CHECK(phase_at(30, plan).dataset_id == "curated");
  CHECK(phase_at(30, plan).rich_labels);
  CHECK(test::error_of([&] { phase_at(100, plan); }) == Errc::StepBeyondPlan);
  CHECK(test::error_of([&] { phase_at(-1, plan); }) == Errc::NegativeStep);

  int coarse = 0, fine = 0, transitions = 0;
  Phase prev = Phase::Coarse;
  for (std::int64_t s = 0; s < plan.total_steps(); ++s) {
    const Phase p = phase_at(s, plan).phase;
    if (p == Phase::Coarse) {
      CHECK(fine == 0);
      ++coarse;
    } else {
      ++fine;
    }
    if (p != prev) ++transitions;
    prev = p;
  }
  CHECK(coarse == 30);
  CHECK(fine == 70);
  CHECK(transitions == 1);
}

TEST_CASE("default ramp spans the fine phase") {
  const PhasePlan plan{40, 60};
  const auto s = plan.default_alpha_schedule();
  CHECK(s.alpha_max == 0.5);
  CHECK(alpha_at(39, s) == 0.0);
  CHECK(alpha_at(100, s) == 0.5);
  PhasePlan coarse_labels_only = plan;
  coarse_labels_only.fine_label_detail = false;
  CHECK_FALSE(phase_at(50, coarse_labels_only).rich_labels);
}
