// Copyright (c) 2026, gridflow authors
// SPDX-License-Identifier: Apache-2.0
//
// Packed grid-layout images. A sequence of F = rows*cols frames is laid out
// row-major into one image of (rows*frame_h) x (cols*frame_w) pixels. Pixels
// are stored interleaved, so a frame is a (frame_h) x (frame_w*channels)
// row-major matrix and a cell of the grid is a plain Eigen block.

#pragma once

#include <Eigen/Core>

#include <span>
#include <string>
#include <vector>

#include "gridflow/errors.hpp"

namespace gridflow {

template <typename Scalar>
using Frame = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using Framef = Frame<float>;

struct LayoutSpec {
  int rows = 1;
  int cols = 1;
  int frame_h = 1;
  int frame_w = 1;
  int channels = 1;

  int frames() const noexcept { return rows * cols; }
  int height() const noexcept { return rows * frame_h; }
  int row_width() const noexcept { return frame_w * channels; }
  int width_elems() const noexcept { return cols * frame_w * channels; }
  Eigen::Index frame_size() const noexcept {
    return Eigen::Index(frame_h) * frame_w * channels;
  }

  bool same_frame_geometry(const LayoutSpec& o) const noexcept {
    return frame_h == o.frame_h && frame_w == o.frame_w && channels == o.channels;
  }
  bool operator==(const LayoutSpec&) const = default;

  /// Throws InvalidLayout when any dimension is non-positive.
  void validate() const {
    if (rows < 1 || cols < 1 || frame_h < 1 || frame_w < 1 || channels < 1) {
      throw Error(Errc::InvalidLayout, "layout " + to_string() + " has a non-positive dimension");
    }
  }

  /// Same frame geometry with a different grid shape.
  LayoutSpec with_grid(int r, int c) const {
    LayoutSpec out = *this;
    out.rows = r;
    out.cols = c;
    return out;
  }

  std::string to_string() const {
    return std::to_string(rows) + "x" + std::to_string(cols) + " of " + std::to_string(frame_h) +
           "x" + std::to_string(frame_w) + "x" + std::to_string(channels);
  }
};

/// Row-major linear index of cell (i, j).
inline int cell_index(int i, int j, const LayoutSpec& layout) {
  if (i < 0 || i >= layout.rows || j < 0 || j >= layout.cols) {
    throw Error(Errc::IndexOutOfRange, "cell (" + std::to_string(i) + "," + std::to_string(j) +
                                           ") outside " + std::to_string(layout.rows) + "x" +
                                           std::to_string(layout.cols));
  }
  return i * layout.cols + j;
}

template <typename Scalar>
class GridTensor {
 public:
  using Matrix = Frame<Scalar>;

  GridTensor() = default;

  explicit GridTensor(const LayoutSpec& layout)
      : layout_(layout), data_(Matrix::Zero(layout.height(), layout.width_elems())) {
    layout_.validate();
  }

  GridTensor(const LayoutSpec& layout, Matrix data) : layout_(layout), data_(std::move(data)) {
    layout_.validate();
    if (data_.rows() != layout_.height() || data_.cols() != layout_.width_elems()) {
      throw Error(Errc::ShapeMismatch, "grid data " + std::to_string(data_.rows()) + "x" +
                                           std::to_string(data_.cols()) +
                                           " does not match layout " + layout_.to_string());
    }
  }

  static GridTensor Constant(const LayoutSpec& layout, Scalar value) {
    return GridTensor(layout, Matrix::Constant(layout.height(), layout.width_elems(), value));
  }

  const LayoutSpec& layout() const noexcept { return layout_; }
  const Matrix& data() const noexcept { return data_; }
  Matrix& data() noexcept { return data_; }

  auto cell(int i, int j) {
    return data_.block(Eigen::Index(i) * layout_.frame_h,
                       Eigen::Index(j) * layout_.row_width(), layout_.frame_h,
                       layout_.row_width());
  }
  auto cell(int i, int j) const {
    return data_.block(Eigen::Index(i) * layout_.frame_h,
                       Eigen::Index(j) * layout_.row_width(), layout_.frame_h,
                       layout_.row_width());
  }
  auto cell(int k) { return cell(k / layout_.cols, k % layout_.cols); }
  auto cell(int k) const { return cell(k / layout_.cols, k % layout_.cols); }

  bool same_shape(const GridTensor& o) const noexcept {
    return layout_ == o.layout_ && data_.rows() == o.data_.rows() && data_.cols() == o.data_.cols();
  }

  template <typename Other>
  GridTensor<Other> cast() const {
    return GridTensor<Other>(layout_, data_.template cast<Other>());
  }

 private:
  LayoutSpec layout_;
  Matrix data_;
};

using GridTensorf = GridTensor<float>;

inline void require_same_shape(const auto& a, const auto& b, const char* what) {
  if (!a.same_shape(b)) {
    throw Error(Errc::ShapeMismatch, std::string(what) + ": " + a.layout().to_string() + " vs " +
                                         b.layout().to_string());
  }
}

/// Packs frames row-major into a grid; cell (i,j) receives frames[i*cols + j].
template <typename Scalar>
GridTensor<Scalar> pack(std::span<const Frame<Scalar>> frames, const LayoutSpec& layout) {
  layout.validate();
  if (static_cast<int>(frames.size()) != layout.frames()) {
    throw Error(Errc::FrameCountMismatch, "got " + std::to_string(frames.size()) +
                                              " frames for layout " + layout.to_string());
  }
  GridTensor<Scalar> grid(layout);
  for (int k = 0; k < layout.frames(); ++k) {
    const auto& f = frames[std::size_t(k)];
    if (f.rows() != layout.frame_h || f.cols() != layout.row_width()) {
      throw Error(Errc::FrameShapeMismatch,
                  "frame " + std::to_string(k) + " is " + std::to_string(f.rows()) + "x" +
                      std::to_string(f.cols() / layout.channels) + ", expected " +
                      std::to_string(layout.frame_h) + "x" + std::to_string(layout.frame_w));
    }
    grid.cell(k) = f;
  }
  return grid;
}

template <typename Scalar>
GridTensor<Scalar> pack(const std::vector<Frame<Scalar>>& frames, const LayoutSpec& layout) {
  return pack(std::span<const Frame<Scalar>>(frames), layout);
}

template <typename Scalar>
std::vector<Frame<Scalar>> unpack(const GridTensor<Scalar>& grid) {
  const auto& layout = grid.layout();
  if (grid.data().rows() != layout.height() || grid.data().cols() != layout.width_elems()) {
    throw Error(Errc::ShapeMismatch, "grid data does not match layout " + layout.to_string());
  }
  std::vector<Frame<Scalar>> frames;
  frames.reserve(std::size_t(layout.frames()));
  for (int k = 0; k < layout.frames(); ++k) frames.emplace_back(grid.cell(k));
  return frames;
}

}  // namespace gridflow
