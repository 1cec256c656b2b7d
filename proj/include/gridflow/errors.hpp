// Copyright (c) 2026, gridflow authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace gridflow {

enum class Errc {
  FrameCountMismatch,
  FrameShapeMismatch,
  ShapeMismatch,
  IndexOutOfRange,
  TOutOfRange,
  SingleCellLayout,
  NegativeAlpha,
  InvalidConfig,
  InvalidLayout,
  NegativeStep,
  StepBeyondPlan,
  NonFiniteLoss,
  NonFiniteState,
  DatasetExhausted,
  CheckpointIOError,
  MissingReference,
  LayoutTooSmall,
  GeometryMismatch,
  InvalidSpec,
  CountMismatch,
  SizeMismatch,
  UnreadableImage,
  UnnormalizedRecord,
  IOError,
  ConfigError,
};

std::string_view errc_name(Errc code) noexcept;

/// Single exception type for the library; the code classifies the failure.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(std::string(errc_name(code)) + ": " + what), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

inline std::string_view errc_name(Errc code) noexcept {
  switch (code) {
    case Errc::FrameCountMismatch: return "FrameCountMismatch";
    case Errc::FrameShapeMismatch: return "FrameShapeMismatch";
    case Errc::ShapeMismatch: return "ShapeMismatch";
    case Errc::IndexOutOfRange: return "IndexOutOfRange";
    case Errc::TOutOfRange: return "TOutOfRange";
    case Errc::SingleCellLayout: return "SingleCellLayout";
    case Errc::NegativeAlpha: return "NegativeAlpha";
    case Errc::InvalidConfig: return "InvalidConfig";
    case Errc::InvalidLayout: return "InvalidLayout";
    case Errc::NegativeStep: return "NegativeStep";
    case Errc::StepBeyondPlan: return "StepBeyondPlan";
    case Errc::NonFiniteLoss: return "NonFiniteLoss";
    case Errc::NonFiniteState: return "NonFiniteState";
    case Errc::DatasetExhausted: return "DatasetExhausted";
    case Errc::CheckpointIOError: return "CheckpointIOError";
    case Errc::MissingReference: return "MissingReference";
    case Errc::LayoutTooSmall: return "LayoutTooSmall";
    case Errc::GeometryMismatch: return "GeometryMismatch";
    case Errc::InvalidSpec: return "InvalidSpec";
    case Errc::CountMismatch: return "CountMismatch";
    case Errc::SizeMismatch: return "SizeMismatch";
    case Errc::UnreadableImage: return "UnreadableImage";
    case Errc::UnnormalizedRecord: return "UnnormalizedRecord";
    case Errc::IOError: return "IOError";
    case Errc::ConfigError: return "ConfigError";
  }
  return "Unknown";
}

}  // namespace gridflow
