// Copyright (c) 2026, gridflow authors
// SPDX-License-Identifier: Apache-2.0
//
// Omni inference. A grid is initialised from references (expansion,
// interpolation) or noise (free), partially noised to level T, then
// integrated back to t = 0 with explicit Euler while reference cells are
// re-imposed after every update.

#pragma once

#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "gridflow/backbone.hpp"
#include "gridflow/condition.hpp"
#include "gridflow/grid.hpp"

namespace gridflow {

/// Per-cell mask: 0 marks a reference cell, 1 a generated one.
class MaskGrid {
 public:
  MaskGrid() = default;
  MaskGrid(int rows, int cols, std::uint8_t fill)
      : rows_(rows), cols_(cols), cells_(std::size_t(rows) * std::size_t(cols), fill) {}

  static MaskGrid ones(const LayoutSpec& layout) { return {layout.rows, layout.cols, 1}; }
  static MaskGrid zeros(const LayoutSpec& layout) { return {layout.rows, layout.cols, 0}; }

  int rows() const noexcept { return rows_; }
  int cols() const noexcept { return cols_; }
  std::uint8_t at(int k) const { return cells_.at(std::size_t(k)); }
  std::uint8_t at(int i, int j) const { return at(i * cols_ + j); }
  void set(int i, int j, std::uint8_t v) { cells_.at(std::size_t(i * cols_ + j)) = v ? 1 : 0; }

  bool is_reference(int k) const { return at(k) == 0; }
  int generated_count() const noexcept {
    int n = 0;
    for (auto c : cells_) n += c;
    return n;
  }
  bool matches(const LayoutSpec& layout) const noexcept {
    return rows_ == layout.rows && cols_ == layout.cols;
  }
  bool operator==(const MaskGrid&) const = default;

 private:
  int rows_ = 0;
  int cols_ = 0;
  std::vector<std::uint8_t> cells_;
};

enum class InitMode { Free, Expansion, Interpolation };
enum class MaskMode { PaperLiteral, TrajectoryConsistent };

inline std::string_view mask_mode_name(MaskMode m) noexcept {
  return m == MaskMode::PaperLiteral ? "paper_literal" : "trajectory_consistent";
}

inline MaskMode parse_mask_mode(std::string_view s) {
  if (s == "paper_literal") return MaskMode::PaperLiteral;
  if (s == "trajectory_consistent") return MaskMode::TrajectoryConsistent;
  throw Error(Errc::InvalidConfig, "unknown mask mode '" + std::string(s) + "'");
}

struct SamplerConfig {
  double noise_level = 0.9;  // T
  int steps = 20;
  double guidance_scale = 3.5;
  MaskMode mask_mode = MaskMode::PaperLiteral;
  std::uint64_t seed = 0;
  // Permits T = 0, which returns the initialisation unchanged.
  bool allow_degenerate = false;

  void validate() const {
    const bool t_ok = allow_degenerate ? (noise_level >= 0.0 && noise_level <= 1.0)
                                       : (noise_level > 0.0 && noise_level <= 1.0);
    if (!t_ok) {
      throw Error(Errc::TOutOfRange,
                  "noise level T=" + std::to_string(noise_level) + " outside (0,1]" +
                      (noise_level == 0.0 ? "; T=0 reproduces the input and needs allow_degenerate"
                                          : ""));
    }
    if (steps < 1) throw Error(Errc::InvalidConfig, "steps must be >= 1");
    if (!(guidance_scale >= 0.0)) throw Error(Errc::InvalidConfig, "guidance_scale must be >= 0");
  }
};

template <typename Scalar>
GridTensor<Scalar> standard_normal(const LayoutSpec& layout, std::uint64_t seed) {
  GridTensor<Scalar> g(layout);
  std::mt19937_64 rng(seed);
  std::normal_distribution<Scalar> normal(Scalar(0), Scalar(1));
  for (Eigen::Index i = 0; i < g.data().size(); ++i) g.data().data()[i] = normal(rng);
  return g;
}

template <typename Scalar>
struct InitResult {
  GridTensor<Scalar> grid;
  MaskGrid mask;
};

/// Expansion: one reference copied into every cell, cell (0,0) pinned.
/// Interpolation: key k sits at cell (k,0) and row i blends keys i and i+1
/// across its columns. With `rows` keys the last row holds its key; with
/// rows+1 keys the extra key closes the last row. Free: N(0, I) with seed.
template <typename Scalar>
InitResult<Scalar> init_grid(InitMode mode, std::span<const Frame<Scalar>> refs,
                             const LayoutSpec& layout, std::uint64_t seed = 0) {
  layout.validate();
  auto check_frame = [&](const Frame<Scalar>& f, std::size_t k) {
    if (f.rows() != layout.frame_h || f.cols() != layout.row_width()) {
      throw Error(Errc::FrameShapeMismatch, "reference " + std::to_string(k) +
                                                " does not match frames of " +
                                                layout.to_string());
    }
  };
  switch (mode) {
    case InitMode::Free: {
      if (!refs.empty()) {
        throw Error(Errc::InvalidConfig, "free generation takes no references");
      }
      return {standard_normal<Scalar>(layout, seed), MaskGrid::ones(layout)};
    }
    case InitMode::Expansion: {
      if (refs.size() != 1) {
        throw Error(Errc::MissingReference, "expansion needs exactly one reference, got " +
                                                std::to_string(refs.size()));
      }
      if (layout.frames() < 2) {
        throw Error(Errc::LayoutTooSmall, "expansion needs at least 2 cells");
      }
      check_frame(refs[0], 0);
      GridTensor<Scalar> grid(layout);
      for (int k = 0; k < layout.frames(); ++k) grid.cell(k) = refs[0];
      MaskGrid mask = MaskGrid::ones(layout);
      mask.set(0, 0, 0);
      return {std::move(grid), std::move(mask)};
    }
    case InitMode::Interpolation: {
      const auto m = std::size_t(layout.rows);
      if (layout.cols < 2) {
        throw Error(Errc::LayoutTooSmall, "interpolation needs at least 2 columns");
      }
      if (refs.size() != m && refs.size() != m + 1) {
        throw Error(Errc::MissingReference, "interpolation on " + std::to_string(m) +
                                                " rows needs " + std::to_string(m) + " or " +
                                                std::to_string(m + 1) + " key frames, got " +
                                                std::to_string(refs.size()));
      }
      for (std::size_t k = 0; k < refs.size(); ++k) check_frame(refs[k], k);
      GridTensor<Scalar> grid(layout);
      MaskGrid mask = MaskGrid::ones(layout);
      const Scalar n = Scalar(layout.cols);
      for (int i = 0; i < layout.rows; ++i) {
        const auto& a = refs[std::size_t(i)];
        const auto& b = refs[std::min(std::size_t(i) + 1, refs.size() - 1)];
        for (int j = 0; j < layout.cols; ++j) {
          const Scalar w = Scalar(j) / n;
          grid.cell(i, j) = (Scalar(1) - w) * a + w * b;
        }
        mask.set(i, 0, 0);
      }
      return {std::move(grid), std::move(mask)};
    }
  }
  throw Error(Errc::InvalidConfig, "unknown init mode");
}

template <typename Scalar>
InitResult<Scalar> init_grid(InitMode mode, const std::vector<Frame<Scalar>>& refs,
                             const LayoutSpec& layout, std::uint64_t seed = 0) {
  return init_grid<Scalar>(mode, std::span<const Frame<Scalar>>(refs), layout, seed);
}

/// (1 - T) init + T noise.
template <typename Scalar>
GridTensor<Scalar> inject_noise(const GridTensor<Scalar>& init, Scalar T,
                                const GridTensor<Scalar>& noise, bool allow_degenerate = false) {
  require_same_shape(init, noise, "inject_noise");
  const bool ok = allow_degenerate ? (T >= Scalar(0) && T <= Scalar(1))
                                   : (T > Scalar(0) && T <= Scalar(1));
  if (!ok) {
    throw Error(Errc::TOutOfRange, "noise level T=" + std::to_string(double(T)) +
                                       " outside (0,1]");
  }
  return GridTensor<Scalar>(init.layout(), (Scalar(1) - T) * init.data() + T * noise.data());
}

/// Overwrites mask-0 cells of `current`. PaperLiteral writes the clean
/// reference; TrajectoryConsistent writes (1 - t) ref + t eps_fixed.
template <typename Scalar>
void apply_mask_inplace(GridTensor<Scalar>& current, const GridTensor<Scalar>& reference,
                        const MaskGrid& mask, Scalar t, MaskMode mode,
                        const GridTensor<Scalar>* eps_fixed = nullptr) {
  require_same_shape(current, reference, "apply_mask");
  if (!mask.matches(current.layout())) {
    throw Error(Errc::ShapeMismatch, "mask " + std::to_string(mask.rows()) + "x" +
                                         std::to_string(mask.cols()) + " vs grid " +
                                         current.layout().to_string());
  }
  const bool blend = mode == MaskMode::TrajectoryConsistent && t > Scalar(0);
  if (blend) {
    if (eps_fixed == nullptr) {
      throw Error(Errc::InvalidConfig, "trajectory_consistent masking needs a fixed noise grid");
    }
    require_same_shape(current, *eps_fixed, "apply_mask");
  }
  for (int k = 0; k < current.layout().frames(); ++k) {
    if (!mask.is_reference(k)) continue;
    if (blend) {
      current.cell(k) = (Scalar(1) - t) * reference.cell(k) + t * eps_fixed->cell(k);
    } else {
      current.cell(k) = reference.cell(k);
    }
  }
}

template <typename Scalar>
GridTensor<Scalar> apply_mask(GridTensor<Scalar> current, const GridTensor<Scalar>& reference,
                              const MaskGrid& mask, Scalar t, MaskMode mode,
                              const GridTensor<Scalar>* eps_fixed = nullptr) {
  apply_mask_inplace(current, reference, mask, t, mode, eps_fixed);
  return current;
}

/// Guided velocity used by the sampler.
template <typename Scalar>
GridTensor<Scalar> guided_velocity(const VelocityField<Scalar>& field, const GridTensor<Scalar>& x,
                                   Scalar t, const Condition& cond, double guidance_scale) {
  GridTensor<Scalar> v_cond = field.velocity(x, t, cond);
  if (guidance_scale > 0.0 && field.has_null_condition()) {
    const GridTensor<Scalar> v_null = field.velocity(x, t, cond.as_null());
    const Scalar g = Scalar(guidance_scale);
    v_cond.data() = v_null.data() + g * (v_cond.data() - v_null.data());
  }
  return v_cond;
}

/// Euler integration from t = T to 0 starting at (1 - T) init + T noise.
/// `noise` doubles as eps_fixed for trajectory_consistent masking.
template <typename Scalar>
GridTensor<Scalar> sample_with_noise(const VelocityField<Scalar>& field,
                                     const GridTensor<Scalar>& init, const MaskGrid& mask,
                                     const GridTensor<Scalar>& reference, const Condition& cond,
                                     const SamplerConfig& cfg, const GridTensor<Scalar>& noise) {
  cfg.validate();
  field.check_layout(init.layout());
  require_same_shape(init, reference, "sample");
  const Scalar T = Scalar(cfg.noise_level);
  GridTensor<Scalar> x = inject_noise(init, T, noise, cfg.allow_degenerate);
  apply_mask_inplace(x, reference, mask, T, cfg.mask_mode, &noise);
  if (T == Scalar(0)) return x;

  const Scalar dt = T / Scalar(cfg.steps);
  for (int k = 0; k < cfg.steps; ++k) {
    const Scalar t = T - Scalar(k) * dt;
    const GridTensor<Scalar> v = guided_velocity(field, x, t, cond, cfg.guidance_scale);
    x.data() -= dt * v.data();
    const Scalar t_next = k + 1 == cfg.steps ? Scalar(0) : T - Scalar(k + 1) * dt;
    apply_mask_inplace(x, reference, mask, t_next, cfg.mask_mode, &noise);
    if (!x.data().allFinite()) {
      throw Error(Errc::NonFiniteState, "non-finite state after step " + std::to_string(k + 1) +
                                            " (t=" + std::to_string(double(t_next)) + ")");
    }
  }
  return x;
}

/// As sample_with_noise with noise drawn from cfg.seed.
template <typename Scalar>
GridTensor<Scalar> sample(const VelocityField<Scalar>& field, const GridTensor<Scalar>& init,
                          const MaskGrid& mask, const GridTensor<Scalar>& reference,
                          const Condition& cond, const SamplerConfig& cfg) {
  const GridTensor<Scalar> noise = standard_normal<Scalar>(init.layout(), cfg.seed);
  return sample_with_noise(field, init, mask, reference, cond, cfg, noise);
}

}  // namespace gridflow
