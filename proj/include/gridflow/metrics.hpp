// Copyright (c) 2026, gridflow authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "gridflow/backbone.hpp"
#include "gridflow/grid.hpp"
#include "gridflow/sampler.hpp"

namespace gridflow {

/// 10 log10(1 / MSE) over all frames; +inf when the inputs are identical.
double psnr(const std::vector<Framef>& a, const std::vector<Framef>& b);
double psnr(const GridTensorf& a, const GridTensorf& b);

struct SsimParams {
  int window = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
  double data_range = 1.0;
};

/// Mean local SSIM with a Gaussian window, per channel, symmetric
/// (half-sample) reflection at the borders.
double ssim(const std::vector<Framef>& a, const std::vector<Framef>& b, int channels,
            const SsimParams& params = {});
double ssim(const GridTensorf& a, const GridTensorf& b, const SsimParams& params = {});

/// Mean squared adjacent-cell difference along the row-major chain.
double temporal_consistency(const GridTensorf& grid);

/// Max |output - reference| over mask-0 cells; 0 when no cell is masked.
double reference_fidelity(const GridTensorf& output, const GridTensorf& reference,
                          const MaskGrid& mask);

struct AttentionMass {
  double intra = 0.0;
  double cross = 0.0;
  double cond = 0.0;

  double sum() const noexcept { return intra + cross + cond; }
};

struct AttentionReport {
  AttentionMass mean;
  std::vector<AttentionMass> per_head;  // layer-major
};

/// Splits each image-query row by target class and averages. Throws
/// UnnormalizedRecord when a row does not sum to 1 within `tol`.
AttentionReport attention_report(const AttentionRecord& record, double tol = 1e-5);

struct MetricReport {
  std::optional<double> psnr;
  std::optional<double> ssim;
  std::optional<double> temporal_consistency;
  std::optional<double> reference_fidelity;
  std::optional<AttentionMass> attention;

  std::string to_json() const;
};

/// Metric value as text; non-finite PSNR becomes "INF".
std::string format_metric(double v);

/// One row per named report: name,psnr,ssim,temporal_consistency,reference_fidelity.
std::string metrics_csv(const std::vector<std::pair<std::string, MetricReport>>& rows);

}  // namespace gridflow
