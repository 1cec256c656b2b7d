// Copyright (c) 2026, gridflow authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>

#include "gridflow/sampler.hpp"
#include "helpers.hpp"

using namespace gridflow;

namespace {

template <typename Scalar>
struct ZeroField : VelocityField<Scalar> {
  GridTensor<Scalar> velocity(const GridTensor<Scalar>& x, Scalar, const Condition&) const override {
    return GridTensor<Scalar>(x.layout());
  }
};

// v(x, t) = x, with the number of calls counted.
template <typename Scalar>
struct IdentityField : VelocityField<Scalar> {
  mutable int calls = 0;
  bool null = true;
  GridTensor<Scalar> velocity(const GridTensor<Scalar>& x, Scalar, const Condition&) const override {
    ++calls;
    return x;
  }
  bool has_null_condition() const override { return null; }
};

// Conditional and null predictions differ by a constant offset.
struct OffsetField : VelocityField<double> {
  GridTensor<double> velocity(const GridTensor<double>& x, double, const Condition& c) const override {
    return GridTensor<double>::Constant(x.layout(), c.null_flag ? 0.0 : 1.0);
  }
};

const LayoutSpec k22{2, 2, 4, 4, 1};

}  // namespace

TEST_CASE("expansion init copies the reference and pins one cell") {
  std::mt19937_64 rng(1);
  const auto ref = test::random_frame(rng, 4, 4, 1);
  const auto init = init_grid<float>(InitMode::Expansion, std::vector<Framef>{ref}, k22);
  for (int k = 0; k < 4; ++k) CHECK(init.grid.cell(k) == ref);
  CHECK(init.mask.generated_count() == 3);
  CHECK(init.mask.at(0, 0) == 0);
  CHECK(test::error_of([&] { init_grid<float>(InitMode::Expansion, std::vector<Framef>{}, k22); }) ==
        Errc::MissingReference);
  CHECK(test::error_of([&] {
          init_grid<float>(InitMode::Expansion, std::vector<Framef>{ref}, LayoutSpec{1, 1, 4, 4, 1});
        }) == Errc::LayoutTooSmall);
}

TEST_CASE("interpolation init blends row keys") {
  const LayoutSpec l{2, 4, 2, 2, 1};
  const Framef a = Framef::Constant(2, 2, 0.2f), b = Framef::Constant(2, 2, 0.6f),
               c = Framef::Constant(2, 2, 1.0f);
  const auto init = init_grid<float>(InitMode::Interpolation, std::vector<Framef>{a, b, c}, l);
  // cell (0,2): j/n = 2/4
  CHECK(init.grid.cell(0, 2)(0, 0) == doctest::Approx(0.5 * 0.2 + 0.5 * 0.6));
  CHECK(init.grid.cell(0, 0) == a);
  CHECK(init.grid.cell(1, 0) == b);
  CHECK(init.grid.cell(1, 1)(1, 1) == doctest::Approx(0.75 * 0.6 + 0.25 * 1.0));
  CHECK(init.mask.at(0, 0) == 0);
  CHECK(init.mask.at(1, 0) == 0);
  CHECK(init.mask.generated_count() == 6);

  // Without a closing key the last row holds its own key.
  const auto held = init_grid<float>(InitMode::Interpolation, std::vector<Framef>{a, b}, l);
  for (int j = 0; j < 4; ++j) CHECK(held.grid.cell(1, j).isApprox(b));
  CHECK(held.grid.cell(0, 2)(0, 0) == doctest::Approx(0.4));

  CHECK(test::error_of([&] { init_grid<float>(InitMode::Interpolation, std::vector<Framef>{a}, l); }) ==
        Errc::MissingReference);
  CHECK(test::error_of([&] {
          init_grid<float>(InitMode::Interpolation, std::vector<Framef>{a, b}, LayoutSpec{2, 1, 2, 2, 1});
        }) == Errc::LayoutTooSmall);
}

TEST_CASE("free init is standard normal with an all-ones mask") {
  const LayoutSpec l{4, 6, 64, 64, 1};
  const auto init = init_grid<float>(InitMode::Free, std::vector<Framef>{}, l, 3);
  const double mean = init.grid.data().cast<double>().mean();
  const double var = (init.grid.data().cast<double>().array() - mean).square().mean();
  CHECK(std::abs(mean) < 0.05);
  CHECK(std::abs(var - 1.0) < 0.05);
  CHECK(init.mask.generated_count() == 24);
  CHECK(init.grid.data() == init_grid<float>(InitMode::Free, std::vector<Framef>{}, l, 3).grid.data());
}

TEST_CASE("inject_noise") {
  std::mt19937_64 rng(2);
  const auto init = test::random_grid(rng, k22), noise = test::random_grid(rng, k22);
  CHECK(inject_noise(init, 1.0f, noise).data() == noise.data());
  CHECK(inject_noise(init, 0.0f, noise, true).data() == init.data());
  CHECK(test::error_of([&] { inject_noise(init, 0.0f, noise); }) == Errc::TOutOfRange);
  CHECK(test::error_of([&] { inject_noise(init, 1.1f, noise); }) == Errc::TOutOfRange);
  const auto z = inject_noise(GridTensorf(k22), 0.9f, noise);
  CHECK(z.data().isApprox(0.9f * noise.data()));
  CHECK(test::error_of([&] { inject_noise(init, 0.5f, GridTensorf(LayoutSpec{1, 4, 4, 4, 1})); }) ==
        Errc::ShapeMismatch);
}

TEST_CASE("apply_mask") {
  std::mt19937_64 rng(3);
  const auto cur = test::random_grid(rng, k22), ref = test::random_grid(rng, k22),
             eps = test::random_grid(rng, k22);
  CHECK(apply_mask(cur, ref, MaskGrid::ones(k22), 0.5f, MaskMode::PaperLiteral).data() == cur.data());
  CHECK(apply_mask(cur, ref, MaskGrid::zeros(k22), 0.7f, MaskMode::PaperLiteral).data() == ref.data());

  MaskGrid mixed = MaskGrid::ones(k22);
  mixed.set(0, 1, 0);
  mixed.set(1, 0, 0);
  const auto out = apply_mask(cur, ref, mixed, 0.3f, MaskMode::PaperLiteral);
  const auto cells_out = unpack(out), cells_cur = unpack(cur), cells_ref = unpack(ref);
  CHECK(cells_out[0] == cells_cur[0]);
  CHECK(cells_out[1] == cells_ref[1]);
  CHECK(cells_out[2] == cells_ref[2]);
  CHECK(cells_out[3] == cells_cur[3]);

  const auto tc = apply_mask(cur, ref, mixed, 0.3f, MaskMode::TrajectoryConsistent, &eps);
  CHECK(tc.cell(1).isApprox(0.7f * ref.cell(1) + 0.3f * eps.cell(1)));
  CHECK(tc.cell(0) == cur.cell(0));
  const auto tc0 = apply_mask(cur, ref, mixed, 0.0f, MaskMode::TrajectoryConsistent, &eps);
  CHECK(tc0.cell(2) == ref.cell(2));

  CHECK(test::error_of([&] { apply_mask(cur, ref, MaskGrid(1, 4, 1), 0.3f, MaskMode::PaperLiteral); }) ==
        Errc::ShapeMismatch);
}

TEST_CASE("zero field at T=1 returns the injected noise with references restored") {
  std::mt19937_64 rng(4);
  const auto ref = test::random_frame(rng, 4, 4, 1);
  const auto init = init_grid<float>(InitMode::Expansion, std::vector<Framef>{ref}, k22);
  SamplerConfig cfg;
  cfg.noise_level = 1.0;
  cfg.steps = 20;
  cfg.seed = 17;
  const auto out = sample<float>(ZeroField<float>{}, init.grid, init.mask, init.grid,
                                 Condition::make(k22, {}), cfg);
  const auto noise = standard_normal<float>(k22, 17);
  CHECK(out.cell(0) == ref);
  for (int k = 1; k < 4; ++k) CHECK(out.cell(k) == noise.cell(k));
}

TEST_CASE("T=0 needs the diagnostic flag and returns init") {
  std::mt19937_64 rng(5);
  const auto g = test::random_grid(rng, k22);
  SamplerConfig cfg;
  cfg.noise_level = 0.0;
  CHECK(test::error_of([&] { cfg.validate(); }) == Errc::TOutOfRange);
  cfg.allow_degenerate = true;
  IdentityField<float> field;
  const auto out = sample<float>(field, g, MaskGrid::ones(k22), g, Condition::make(k22, {}), cfg);
  CHECK(out.data() == g.data());
  CHECK(field.calls == 0);
}

TEST_CASE("default sampler settings") {
  const SamplerConfig cfg;
  CHECK(cfg.steps == 20);
  CHECK(cfg.guidance_scale == 3.5);
  CHECK(cfg.noise_level >= 0.8);
  CHECK(cfg.noise_level <= 1.0);
  CHECK(cfg.mask_mode == MaskMode::PaperLiteral);
}

TEST_CASE("Euler on v = x converges at first order") {
  const LayoutSpec l{1, 2, 3, 3, 1};
  std::mt19937_64 rng(6);
  const auto g = test::random_grid(rng, l).cast<double>();
  SamplerConfig cfg;
  cfg.noise_level = 1.0;
  cfg.guidance_scale = 0.0;
  cfg.seed = 2;
  const auto x_T = standard_normal<double>(l, 2);
  // dx/dt = x integrated from t=1 down to 0: x(0) = x(1) e^{-1}.
  const Eigen::MatrixXd exact = x_T.data() * std::exp(-1.0);
  double err[2];
  for (int i = 0; i < 2; ++i) {
    cfg.steps = i == 0 ? 10 : 20;
    const auto out = sample<double>(IdentityField<double>{}, g, MaskGrid::ones(l), g,
                                    Condition::make(l, {}), cfg);
    err[i] = (out.data() - exact).cwiseAbs().maxCoeff();
    const double euler = std::pow(1.0 - 1.0 / cfg.steps, cfg.steps);
    CHECK((out.data() - x_T.data() * euler).cwiseAbs().maxCoeff() < 1e-12);
  }
  CHECK(err[0] / err[1] > 1.7);
  CHECK(err[0] / err[1] < 2.3);
}

TEST_CASE("guidance combination") {
  const LayoutSpec l{1, 2, 2, 2, 1};
  const GridTensor<double> x(l);
  const auto cond = Condition::make(l, {Label::Moving});
  CHECK(guided_velocity<double>(OffsetField{}, x, 0.5, cond, 0.0).data()(0, 0) == 1.0);
  CHECK(guided_velocity<double>(OffsetField{}, x, 0.5, cond, 3.5).data()(0, 0) == 3.5);

  // With v_cond == v_null guidance leaves the trajectory untouched.
  std::mt19937_64 rng(7);
  const auto g = test::random_grid(rng, k22);
  SamplerConfig cfg;
  cfg.guidance_scale = 0.0;
  const auto plain = sample<float>(IdentityField<float>{}, g, MaskGrid::ones(k22), g, Condition::make(k22, {}), cfg);
  cfg.guidance_scale = 3.5;
  const auto guided = sample<float>(IdentityField<float>{}, g, MaskGrid::ones(k22), g, Condition::make(k22, {}), cfg);
  CHECK(plain.data().isApprox(guided.data(), 1e-6f));

  IdentityField<float> no_null;
  no_null.null = false;
  sample<float>(no_null, g, MaskGrid::ones(k22), g, Condition::make(k22, {}), cfg);
  CHECK(no_null.calls == cfg.steps);
}

TEST_CASE("reference cells survive sampling exactly") {
  std::mt19937_64 rng(8);
  const LayoutSpec l{2, 3, 4, 4, 1};
  for (int trial = 0; trial < 10; ++trial) {
    const auto ref = test::random_frame(rng, 4, 4, 1);
    const auto init = init_grid<float>(InitMode::Expansion, std::vector<Framef>{ref}, l);
    SamplerConfig cfg;
    cfg.seed = std::uint64_t(trial);
    const auto out = sample<float>(IdentityField<float>{}, init.grid, init.mask, init.grid,
                                   Condition::make(l, {}), cfg);
    CHECK(out.cell(0) == ref);
    CHECK(out.data().allFinite());
  }
}

TEST_CASE("trajectory-consistent mode ends on the clean reference") {
  std::mt19937_64 rng(9);
  const auto ref = test::random_frame(rng, 4, 4, 1);
  const auto init = init_grid<float>(InitMode::Expansion, std::vector<Framef>{ref}, k22);
  SamplerConfig cfg;
  cfg.mask_mode = MaskMode::TrajectoryConsistent;
  const auto out = sample<float>(IdentityField<float>{}, init.grid, init.mask, init.grid,
                                 Condition::make(k22, {}), cfg);
  CHECK(out.cell(0) == ref);
}

TEST_CASE("divergent fields raise NonFiniteState") {
  struct Blowup : VelocityField<float> {
    GridTensorf velocity(const GridTensorf& x, float, const Condition&) const override {
      return GridTensorf::Constant(x.layout(), std::numeric_limits<float>::infinity());
    }
  };
  const auto g = GridTensorf(k22);
  SamplerConfig cfg;
  CHECK(test::error_of([&] { sample<float>(Blowup{}, g, MaskGrid::ones(k22), g, Condition::make(k22, {}), cfg); }) ==
        Errc::NonFiniteState);
}

TEST_CASE("mask mode names") {
  CHECK(parse_mask_mode("paper_literal") == MaskMode::PaperLiteral);
  CHECK(parse_mask_mode(mask_mode_name(MaskMode::TrajectoryConsistent)) == MaskMode::TrajectoryConsistent);
  CHECK(test::error_of([] { parse_mask_mode("other"); }) == Errc::InvalidConfig);
}
