// Copyright (c) 2026, gridflow authors
// SPDX-License-Identifier: Apache-2.0
//
// Deterministic toy sequences (translation, rotation ring, bounce), frame
// degradation for restoration, and frame-folder loading.

#pragma once

#include <cstdint>
#include <filesystem>
#include <limits>
#include <string>
#include <vector>

#include "gridflow/condition.hpp"
#include "gridflow/grid.hpp"

namespace gridflow {

enum class MotionKind { Translate, RotateRing, Bounce };
enum class ShapeKind { Circle, Square, Triangle };

std::string_view motion_name(MotionKind kind) noexcept;
std::string_view shape_name(ShapeKind shape) noexcept;
MotionKind parse_motion(const std::string& name);
ShapeKind parse_shape(const std::string& name);

struct SequenceSpec {
  MotionKind kind = MotionKind::Translate;
  int frames = 16;
  int frame_h = 16;
  int frame_w = 16;
  int channels = 1;
  ShapeKind shape = ShapeKind::Circle;
  double size = 3.0;  // object circumradius in pixels
  double velocity_x = 1.0;  // px/frame (translate, bounce)
  double velocity_y = 0.0;
  double angular_step_deg = 15.0;  // rotate_ring
  double ring_radius = 2.0;  // rotate_ring orbit, 1 unit = min(frame_h, frame_w) / 8
  // Object centre at frame 0; NaN means the frame centre.
  double start_x = std::numeric_limits<double>::quiet_NaN();
  double start_y = std::numeric_limits<double>::quiet_NaN();
  std::uint64_t seed = 0;  // selects the object colour

  void validate() const;
};

/// Frames plus the label sets for both annotation levels.
struct Sequence {
  std::vector<Framef> frames;
  std::vector<Label> fine_labels;
  std::vector<Label> coarse_labels;

  Condition condition(const LayoutSpec& layout, bool rich = true) const {
    return Condition::make(layout, rich ? fine_labels : coarse_labels);
  }
};

Sequence gen_sequence(const SequenceSpec& spec);

/// Intensity-weighted centroid (x, y) in pixel coordinates, channels summed.
std::pair<double, double> centroid(const Framef& frame, int channels);

struct DegradeSpec {
  double gaussian_blur_sigma = 0.0;
  double block_mask_ratio = 0.0;
  int block_size = 8;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Per-frame Gaussian blur, then seeded block masking (masked blocks set to 0).
std::vector<Framef> degrade(const std::vector<Framef>& frames, const DegradeSpec& spec,
                            int channels);

/// Block indices zeroed in frame `frame_index` for a spec and frame geometry.
std::vector<int> masked_blocks(const DegradeSpec& spec, int frame_h, int frame_w, int frame_index);

/// Loads F lexicographically ordered PNGs from `folder` into a grid. An
/// optional labels.txt sidecar ("fine: ..." / "coarse: ...") supplies labels.
std::pair<GridTensorf, Condition> load_folder(const std::filesystem::path& folder,
                                              const LayoutSpec& layout);

/// Writes frame_NNN.png files plus labels.txt.
void write_sequence_folder(const std::filesystem::path& folder, const Sequence& seq, int channels);

/// Parses a labels.txt sidecar; missing file yields empty label sets.
void read_labels(const std::filesystem::path& folder, std::vector<Label>& fine,
                 std::vector<Label>& coarse);

struct Dataset {
  LayoutSpec layout;
  std::vector<Sequence> items;

  std::size_t size() const noexcept { return items.size(); }
};

/// Random sequences of one motion kind sized to fill `layout`.
Dataset make_dataset(MotionKind kind, int count, const LayoutSpec& layout, std::uint64_t seed);

/// A folder of PNGs is one sequence; otherwise every sub-folder is one.
Dataset load_dataset(const std::filesystem::path& path, const LayoutSpec& layout);

}  // namespace gridflow
