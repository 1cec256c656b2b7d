// Copyright (c) 2026, gridflow authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "gridflow/grid.hpp"

namespace gridflow {

/// Content/motion vocabulary. Id 0 is reserved for the unconditional token.
enum class Label : int {
  Null = 0,
  Moving,
  Static,
  TranslateRight,
  TranslateLeft,
  TranslateDown,
  TranslateUp,
  RotateCW,
  RotateCCW,
  Bounce,
  ShapeCircle,
  ShapeSquare,
  ShapeTriangle,
  SpeedSlow,
  SpeedFast,
  Count,
};

inline constexpr int kLabelCount = static_cast<int>(Label::Count);

// Largest grid side expressible by a layout token.
inline constexpr int kMaxGridSide = 8;
inline constexpr int kLayoutVocab = kMaxGridSide * kMaxGridSide;

std::string_view label_name(Label label) noexcept;
std::optional<Label> parse_label(std::string_view name) noexcept;

inline int layout_token_for(const LayoutSpec& layout) {
  if (layout.rows < 1 || layout.cols < 1 || layout.rows > kMaxGridSide ||
      layout.cols > kMaxGridSide) {
    throw Error(Errc::InvalidLayout, "grid " + std::to_string(layout.rows) + "x" +
                                         std::to_string(layout.cols) +
                                         " has no layout token (max side " +
                                         std::to_string(kMaxGridSide) + ")");
  }
  return (layout.rows - 1) * kMaxGridSide + (layout.cols - 1);
}

/// c' = [c_layout, c_content]. When null_flag is set the content labels are
/// ignored and the model sees the Null label instead.
struct Condition {
  int layout_token = 0;
  std::vector<int> content_labels;
  bool null_flag = false;

  static Condition make(const LayoutSpec& layout, const std::vector<Label>& labels) {
    Condition c;
    c.layout_token = layout_token_for(layout);
    for (auto l : labels) c.content_labels.push_back(static_cast<int>(l));
    return c;
  }

  Condition as_null() const {
    Condition c;
    c.layout_token = layout_token;
    c.null_flag = true;
    return c;
  }

  Condition with_layout(const LayoutSpec& layout) const {
    Condition c = *this;
    c.layout_token = layout_token_for(layout);
    return c;
  }

  bool operator==(const Condition&) const = default;
};

inline std::string_view label_name(Label label) noexcept {
  switch (label) {
    case Label::Null: return "NULL";
    case Label::Moving: return "MOVING";
    case Label::Static: return "STATIC";
    case Label::TranslateRight: return "TRANSLATE_RIGHT";
    case Label::TranslateLeft: return "TRANSLATE_LEFT";
    case Label::TranslateDown: return "TRANSLATE_DOWN";
    case Label::TranslateUp: return "TRANSLATE_UP";
    case Label::RotateCW: return "ROTATE_CW";
    case Label::RotateCCW: return "ROTATE_CCW";
    case Label::Bounce: return "BOUNCE";
    case Label::ShapeCircle: return "SHAPE_CIRCLE";
    case Label::ShapeSquare: return "SHAPE_SQUARE";
    case Label::ShapeTriangle: return "SHAPE_TRIANGLE";
    case Label::SpeedSlow: return "SPEED_SLOW";
    case Label::SpeedFast: return "SPEED_FAST";
    case Label::Count: break;
  }
  return "?";
}

inline std::optional<Label> parse_label(std::string_view name) noexcept {
  for (int i = 0; i < kLabelCount; ++i) {
    if (label_name(static_cast<Label>(i)) == name) return static_cast<Label>(i);
  }
  return std::nullopt;
}

}  // namespace gridflow
