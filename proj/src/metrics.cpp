// Copyright (c) 2026, gridflow authors
// SPDX-License-Identifier: Apache-2.0

#include "gridflow/metrics.hpp"

#include <cmath>
#include <sstream>

#include <json.hpp>

#include "gridflow/flow.hpp"

namespace gridflow {

namespace {

void require_same_frames(const std::vector<Framef>& a, const std::vector<Framef>& b,
                         const char* what) {
  if (a.size() != b.size()) {
    throw Error(Errc::ShapeMismatch, std::string(what) + ": " + std::to_string(a.size()) +
                                         " vs " + std::to_string(b.size()) + " frames");
  }
  for (std::size_t k = 0; k < a.size(); ++k) {
    if (a[k].rows() != b[k].rows() || a[k].cols() != b[k].cols()) {
      throw Error(Errc::ShapeMismatch, std::string(what) + ": frame " + std::to_string(k) +
                                           " is " + std::to_string(a[k].rows()) + "x" +
                                           std::to_string(a[k].cols()) + " vs " +
                                           std::to_string(b[k].rows()) + "x" +
                                           std::to_string(b[k].cols()));
    }
  }
}

// Half-sample symmetric reflection: ... b a | a b c ... c | c b ...
int reflect(int i, int n) {
  if (n == 1) return 0;
  const int period = 2 * n;
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - 1 - i;
}

using Plane = Eigen::MatrixXd;

Plane filter(const Plane& src, const std::vector<double>& kernel) {
  const int r = int(kernel.size()) / 2;
  const int h = int(src.rows()), w = int(src.cols());
  Plane tmp(h, w), out(h, w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int i = -r; i <= r; ++i) acc += kernel[std::size_t(i + r)] * src(y, reflect(x + i, w));
      tmp(y, x) = acc;
    }
  }
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int i = -r; i <= r; ++i) acc += kernel[std::size_t(i + r)] * tmp(reflect(y + i, h), x);
      out(y, x) = acc;
    }
  }
  return out;
}

Plane channel_plane(const Framef& f, int channels, int c) {
  const int w = int(f.cols()) / channels;
  Plane p(f.rows(), w);
  for (Eigen::Index y = 0; y < f.rows(); ++y) {
    for (int x = 0; x < w; ++x) p(y, x) = f(y, Eigen::Index(x) * channels + c);
  }
  return p;
}

}  // namespace

double psnr(const std::vector<Framef>& a, const std::vector<Framef>& b) {
  require_same_frames(a, b, "psnr");
  double sq = 0.0, n = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    sq += (a[k] - b[k]).cast<double>().squaredNorm();
    n += double(a[k].size());
  }
  if (n == 0.0) throw Error(Errc::ShapeMismatch, "psnr: empty input");
  const double mse = sq / n;
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(1.0 / mse);
}

double psnr(const GridTensorf& a, const GridTensorf& b) {
  require_same_shape(a, b, "psnr");
  return psnr(unpack(a), unpack(b));
}

double ssim(const std::vector<Framef>& a, const std::vector<Framef>& b, int channels,
            const SsimParams& params) {
  require_same_frames(a, b, "ssim");
  if (channels < 1) throw Error(Errc::ShapeMismatch, "ssim: channels must be >= 1");
  if (a.empty()) throw Error(Errc::ShapeMismatch, "ssim: empty input");

  std::vector<double> kernel(std::size_t(params.window));
  const int r = params.window / 2;
  double total = 0.0;
  for (int i = 0; i < params.window; ++i) {
    const double d = i - r;
    kernel[std::size_t(i)] = std::exp(-0.5 * d * d / (params.sigma * params.sigma));
    total += kernel[std::size_t(i)];
  }
  for (auto& k : kernel) k /= total;

  const double c1 = std::pow(params.k1 * params.data_range, 2);
  const double c2 = std::pow(params.k2 * params.data_range, 2);
  double acc = 0.0, count = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    if (a[k].cols() % channels != 0) {
      throw Error(Errc::ShapeMismatch, "ssim: row width not divisible by channels");
    }
    for (int c = 0; c < channels; ++c) {
      const Plane x = channel_plane(a[k], channels, c);
      const Plane y = channel_plane(b[k], channels, c);
      const Plane mx = filter(x, kernel), my = filter(y, kernel);
      const Plane sxx = filter(x.cwiseProduct(x), kernel) - mx.cwiseProduct(mx);
      const Plane syy = filter(y.cwiseProduct(y), kernel) - my.cwiseProduct(my);
      const Plane sxy = filter(x.cwiseProduct(y), kernel) - mx.cwiseProduct(my);
      const Plane num = (2.0 * mx.cwiseProduct(my).array() + c1) * (2.0 * sxy.array() + c2);
      const Plane den = (mx.array().square() + my.array().square() + c1) *
                        (sxx.array() + syy.array() + c2);
      acc += (num.array() / den.array()).sum();
      count += double(x.size());
    }
  }
  return acc / count;
}

double ssim(const GridTensorf& a, const GridTensorf& b, const SsimParams& params) {
  require_same_shape(a, b, "ssim");
  return ssim(unpack(a), unpack(b), a.layout().channels, params);
}

double temporal_consistency(const GridTensorf& grid) {
  detail::require_multi_cell(grid.layout());
  const int f = grid.layout().frames();
  double acc = 0.0;
  for (int k = 1; k < f; ++k) acc += (grid.cell(k) - grid.cell(k - 1)).cast<double>().squaredNorm();
  return acc / (double(f - 1) * double(grid.layout().frame_size()));
}

double reference_fidelity(const GridTensorf& output, const GridTensorf& reference,
                          const MaskGrid& mask) {
  require_same_shape(output, reference, "reference_fidelity");
  if (!mask.matches(output.layout())) {
    throw Error(Errc::ShapeMismatch, "reference_fidelity: mask does not match grid");
  }
  double worst = 0.0;
  for (int k = 0; k < output.layout().frames(); ++k) {
    if (!mask.is_reference(k)) continue;
    worst = std::max(worst, double((output.cell(k) - reference.cell(k)).cwiseAbs().maxCoeff()));
  }
  return worst;
}

AttentionReport attention_report(const AttentionRecord& record, double tol) {
  const int n_img = record.image_tokens, n = record.image_tokens + record.cond_tokens;
  if (record.layers < 1 || record.heads < 1 ||
      record.maps.size() != std::size_t(record.layers * record.heads)) {
    throw Error(Errc::UnnormalizedRecord, "attention record holds " +
                                              std::to_string(record.maps.size()) +
                                              " maps for " + std::to_string(record.layers) +
                                              " layers x " + std::to_string(record.heads) +
                                              " heads");
  }
  if (record.token_cell.size() != std::size_t(n_img)) {
    throw Error(Errc::UnnormalizedRecord, "token->cell map covers " +
                                              std::to_string(record.token_cell.size()) + " of " +
                                              std::to_string(n_img) + " image tokens");
  }
  AttentionReport report;
  for (int l = 0; l < record.layers; ++l) {
    for (int h = 0; h < record.heads; ++h) {
      const Eigen::MatrixXd& m = record.map(l, h);
      if (m.rows() != n || m.cols() != n) {
        throw Error(Errc::UnnormalizedRecord, "attention map has wrong size");
      }
      AttentionMass head;
      for (int q = 0; q < n_img; ++q) {
        const double row = m.row(q).sum();
        if (!(std::abs(row - 1.0) <= tol) || (m.row(q).array() < 0.0).any()) {
          throw Error(Errc::UnnormalizedRecord, "layer " + std::to_string(l) + " head " +
                                                    std::to_string(h) + " row " +
                                                    std::to_string(q) + " sums to " +
                                                    std::to_string(row));
        }
        double intra = 0.0, cross = 0.0;
        for (int j = 0; j < n_img; ++j) {
          (record.token_cell[std::size_t(j)] == record.token_cell[std::size_t(q)] ? intra
                                                                                  : cross) +=
              m(q, j);
        }
        head.intra += intra / row;
        head.cross += cross / row;
        head.cond += m.row(q).tail(record.cond_tokens).sum() / row;
      }
      head.intra /= n_img;
      head.cross /= n_img;
      head.cond /= n_img;
      report.per_head.push_back(head);
      report.mean.intra += head.intra;
      report.mean.cross += head.cross;
      report.mean.cond += head.cond;
    }
  }
  const double heads = double(report.per_head.size());
  report.mean.intra /= heads;
  report.mean.cross /= heads;
  report.mean.cond /= heads;
  return report;
}

std::string format_metric(double v) {
  if (std::isinf(v)) return v > 0 ? "INF" : "-INF";
  if (std::isnan(v)) return "NAN";
  std::ostringstream ss;
  ss.precision(10);
  ss << v;
  return ss.str();
}

std::string MetricReport::to_json() const {
  nlohmann::ordered_json j = nlohmann::ordered_json::object();
  auto put = [&](const char* key, const std::optional<double>& v) {
    if (!v) return;
    if (std::isfinite(*v)) {
      j[key] = *v;
    } else {
      j[key] = format_metric(*v);
    }
  };
  put("psnr", psnr);
  put("ssim", ssim);
  put("temporal_consistency", temporal_consistency);
  put("reference_fidelity", reference_fidelity);
  if (attention) {
    j["attention"] = {{"intra", attention->intra},
                      {"cross", attention->cross},
                      {"cond", attention->cond}};
  }
  return j.dump(2) + "\n";
}

std::string metrics_csv(const std::vector<std::pair<std::string, MetricReport>>& rows) {
  std::string out = "name,psnr,ssim,temporal_consistency,reference_fidelity\n";
  auto cell = [](const std::optional<double>& v) { return v ? format_metric(*v) : std::string(); };
  for (const auto& [name, r] : rows) {
    out += name + "," + cell(r.psnr) + "," + cell(r.ssim) + "," + cell(r.temporal_consistency) +
           "," + cell(r.reference_fidelity) + "\n";
  }
  return out;
}

}  // namespace gridflow
