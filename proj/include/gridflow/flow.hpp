// Copyright (c) 2026, gridflow authors
// SPDX-License-Identifier: Apache-2.0
//
// Flow-matching math over packed grids: straight-path interpolation, the
// velocity target, the per-position base loss and the temporal flow loss on
// row-major directional differences between neighbouring cells.

#pragma once

#include <cmath>
#include <vector>

#include "gridflow/grid.hpp"

namespace gridflow {

struct LossBreakdown {
  double base = 0.0;
  double flow = 0.0;
  double alpha = 0.0;
  double total = 0.0;
};

namespace detail {
template <typename Scalar>
void check_t(Scalar t) {
  if (!(t >= Scalar(0) && t <= Scalar(1))) {
    throw Error(Errc::TOutOfRange, "t=" + std::to_string(double(t)) + " outside [0,1]");
  }
}

inline void require_multi_cell(const LayoutSpec& layout) {
  if (layout.frames() < 2) {
    throw Error(Errc::SingleCellLayout, "directional differences need at least 2 cells");
  }
}
}  // namespace detail

/// Pixel intensities in [0,1] map to [-1,1] for the network and back.
template <typename Scalar>
Frame<Scalar> to_model_space(const Frame<Scalar>& f) {
  return (Scalar(2) * f.array() - Scalar(1)).matrix();
}

template <typename Scalar>
GridTensor<Scalar> to_model_space(const GridTensor<Scalar>& g) {
  return GridTensor<Scalar>(g.layout(), to_model_space(g.data()));
}

/// Inverse of to_model_space, clamped to [0,1].
template <typename Scalar>
GridTensor<Scalar> from_model_space(const GridTensor<Scalar>& g) {
  return GridTensor<Scalar>(
      g.layout(), ((g.data().array() + Scalar(1)) / Scalar(2)).cwiseMax(Scalar(0)).cwiseMin(Scalar(1)).matrix());
}

/// x_t = (1 - t) * clean + t * noise
template <typename Scalar>
GridTensor<Scalar> forward_interpolate(const GridTensor<Scalar>& clean, Scalar t,
                                       const GridTensor<Scalar>& noise) {
  require_same_shape(clean, noise, "forward_interpolate");
  detail::check_t(t);
  return GridTensor<Scalar>(clean.layout(), (Scalar(1) - t) * clean.data() + t * noise.data());
}

/// noise - clean; the constant time derivative of the straight path.
template <typename Scalar>
GridTensor<Scalar> velocity_target(const GridTensor<Scalar>& clean,
                                   const GridTensor<Scalar>& noise) {
  require_same_shape(clean, noise, "velocity_target");
  return GridTensor<Scalar>(clean.layout(), noise.data() - clean.data());
}

template <typename Scalar>
double base_loss(const GridTensor<Scalar>& pred, const GridTensor<Scalar>& target) {
  require_same_shape(pred, target, "base_loss");
  const auto n = double(pred.data().size());
  return (pred.data() - target.data()).template cast<double>().squaredNorm() / n;
}

/// d(base_loss)/d(pred)
template <typename Scalar>
GridTensor<Scalar> base_loss_grad(const GridTensor<Scalar>& pred,
                                  const GridTensor<Scalar>& target) {
  require_same_shape(pred, target, "base_loss_grad");
  const Scalar scale = Scalar(2.0 / double(pred.data().size()));
  return GridTensor<Scalar>(pred.layout(), scale * (pred.data() - target.data()));
}

/// output[k-1] = cell(k) - cell(k-1) for k = 1..F-1. Pairs inside a row are
/// horizontal neighbours; the pair at a row boundary links the last cell of
/// row i-1 to the first cell of row i.
template <typename Scalar>
std::vector<Frame<Scalar>> directional_diff(const GridTensor<Scalar>& x) {
  detail::require_multi_cell(x.layout());
  const int f = x.layout().frames();
  std::vector<Frame<Scalar>> out;
  out.reserve(std::size_t(f - 1));
  for (int k = 1; k < f; ++k) out.emplace_back(x.cell(k) - x.cell(k - 1));
  return out;
}

/// Mean over all F-1 difference arrays and all of their elements.
template <typename Scalar>
double flow_loss(const GridTensor<Scalar>& pred, const GridTensor<Scalar>& target) {
  require_same_shape(pred, target, "flow_loss");
  detail::require_multi_cell(pred.layout());
  const int f = pred.layout().frames();
  const Frame<Scalar> err = pred.data() - target.data();
  const GridTensor<Scalar> e(pred.layout(), err);
  double acc = 0.0;
  for (int k = 1; k < f; ++k) {
    acc += (e.cell(k) - e.cell(k - 1)).template cast<double>().squaredNorm();
  }
  return acc / (double(f - 1) * double(pred.layout().frame_size()));
}

/// d(flow_loss)/d(pred). With d_k = e_k - e_{k-1} and d_0 = d_F = 0,
/// dL/de_k = 2 (d_k - d_{k+1}) / ((F-1) S).
template <typename Scalar>
GridTensor<Scalar> flow_loss_grad(const GridTensor<Scalar>& pred,
                                  const GridTensor<Scalar>& target) {
  require_same_shape(pred, target, "flow_loss_grad");
  detail::require_multi_cell(pred.layout());
  const int f = pred.layout().frames();
  const GridTensor<Scalar> e(pred.layout(), pred.data() - target.data());
  GridTensor<Scalar> g(pred.layout());
  const Scalar scale = Scalar(2.0 / (double(f - 1) * double(pred.layout().frame_size())));
  for (int k = 0; k < f; ++k) {
    if (k >= 1) g.cell(k) += scale * (e.cell(k) - e.cell(k - 1));
    if (k + 1 < f) g.cell(k) -= scale * (e.cell(k + 1) - e.cell(k));
  }
  return g;
}

inline LossBreakdown total_loss(double base, double flow, double alpha) {
  if (!(alpha >= 0.0)) {
    throw Error(Errc::NegativeAlpha, "alpha=" + std::to_string(alpha));
  }
  return LossBreakdown{base, flow, alpha, base + alpha * flow};
}

}  // namespace gridflow
