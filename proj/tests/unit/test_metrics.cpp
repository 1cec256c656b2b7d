// Copyright (c) 2026, gridflow authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>

#include "gridflow/flow.hpp"
#include "gridflow/metrics.hpp"
#include "helpers.hpp"

using namespace gridflow;

TEST_CASE("psnr") {
  std::mt19937_64 rng(1);
  const auto a = test::random_frames(rng, 3, 6, 5, 1);
  CHECK(std::isinf(psnr(a, a)));
  CHECK(format_metric(psnr(a, a)) == "INF");

  std::vector<Framef> shifted;
  for (const auto& f : a) shifted.emplace_back(f.array() * 0.5f + 0.1f);
  std::vector<Framef> plus;
  for (const auto& f : shifted) plus.emplace_back(f.array() + 0.1f);
  CHECK(psnr(shifted, plus) == doctest::Approx(20.0).epsilon(1e-5));

  const auto b = test::random_frames(rng, 3, 6, 5, 1);
  double sq = 0.0;
  int n = 0;
  for (std::size_t k = 0; k < 3; ++k)
    for (int y = 0; y < 6; ++y)
      for (int x = 0; x < 5; ++x, ++n) sq += std::pow(double(a[k](y, x)) - double(b[k](y, x)), 2);
  CHECK(psnr(a, b) == doctest::Approx(10.0 * std::log10(n / sq)).epsilon(1e-7));
  CHECK(psnr(a, b) == psnr(b, a));
  CHECK(test::error_of([&] { psnr(a, std::vector<Framef>(a.begin(), a.begin() + 2)); }) ==
        Errc::ShapeMismatch);
}

TEST_CASE("psnr decreases as error grows") {
  const std::vector<Framef> ref(1, Framef::Constant(4, 4, 0.5f));
  double prev = std::numeric_limits<double>::infinity();
  for (float d : {0.01f, 0.02f, 0.05f, 0.1f, 0.3f}) {
    const double p = psnr(ref, std::vector<Framef>(1, Framef::Constant(4, 4, 0.5f + d)));
    CHECK(p < prev);
    prev = p;
  }
}

TEST_CASE("ssim") {
  std::mt19937_64 rng(2);
  const auto a = test::random_frames(rng, 2, 16, 16, 1);
  CHECK(ssim(a, a, 1) == doctest::Approx(1.0).epsilon(1e-12));
  const std::vector<Framef> half(1, Framef::Constant(12, 12, 0.5f));
  CHECK(ssim(half, half, 1) == doctest::Approx(1.0).epsilon(1e-12));
  std::vector<Framef> inv;
  for (const auto& f : a) inv.emplace_back(1.0f - f.array());
  CHECK(ssim(a, inv, 1) < 0.5);
  const auto b = test::random_frames(rng, 2, 16, 16, 1);
  CHECK(ssim(a, b, 1) == doctest::Approx(ssim(b, a, 1)).epsilon(1e-12));
  CHECK(ssim(a, b, 1) <= 1.0);

  const auto rgb = test::random_frames(rng, 1, 8, 8, 3);
  CHECK(ssim(rgb, rgb, 3) == doctest::Approx(1.0));
  CHECK(test::error_of([&] { ssim(a, rgb, 1); }) == Errc::ShapeMismatch);
}

TEST_CASE("ssim matches a direct single-window computation on a uniform-statistics image") {
  // For constant images the local statistics are exact constants, so the
  // SSIM map equals the closed-form luminance term everywhere.
  const std::vector<Framef> a(1, Framef::Constant(11, 11, 0.2f)), b(1, Framef::Constant(11, 11, 0.6f));
  const double c1 = 0.01 * 0.01;
  const double want = (2 * 0.2 * 0.6 + c1) / (0.2 * 0.2 + 0.6 * 0.6 + c1);
  CHECK(ssim(a, b, 1) == doctest::Approx(want).epsilon(1e-6));
}

TEST_CASE("temporal_consistency") {
  const LayoutSpec l{2, 2, 3, 3, 1};
  CHECK(temporal_consistency(GridTensorf::Constant(l, 0.4f)) == 0.0);
  std::mt19937_64 rng(3);
  const auto g = test::random_grid(rng, l);
  CHECK(temporal_consistency(g) ==
        doctest::Approx(flow_loss(g, GridTensorf(l))).epsilon(1e-12));
  CHECK(test::error_of([] { temporal_consistency(GridTensorf(LayoutSpec{1, 1, 2, 2, 1})); }) ==
        Errc::SingleCellLayout);

  // Among all binary sequences of constant frames, alternation scores highest.
  const LayoutSpec strip{1, 6, 1, 1, 1};
  double best = -1.0;
  int best_mask = -1;
  for (int mask = 0; mask < 64; ++mask) {
    GridTensorf s(strip);
    for (int k = 0; k < 6; ++k) s.cell(k).setConstant(float((mask >> k) & 1));
    const double v = temporal_consistency(s);
    if (v > best) {
      best = v;
      best_mask = mask;
    }
  }
  CHECK((best_mask == 0b010101 || best_mask == 0b101010));
  CHECK(best == 1.0);
}

TEST_CASE("temporal_consistency is zero only for identical cells") {
  const LayoutSpec l{1, 3, 2, 2, 1};
  GridTensorf g = GridTensorf::Constant(l, 0.1f);
  g.cell(2)(1, 1) = 0.2f;
  CHECK(temporal_consistency(g) > 0.0);
}

TEST_CASE("reference_fidelity") {
  std::mt19937_64 rng(4);
  const LayoutSpec l{2, 2, 3, 3, 1};
  const auto ref = test::random_grid(rng, l);
  auto out = test::random_grid(rng, l);
  MaskGrid m = MaskGrid::ones(l);
  CHECK(reference_fidelity(out, ref, m) == 0.0);
  m.set(1, 1, 0);
  out.cell(3) = ref.cell(3);
  CHECK(reference_fidelity(out, ref, m) == 0.0);
  out.cell(3)(0, 2) += 0.25f;
  CHECK(reference_fidelity(out, ref, m) == doctest::Approx(0.25).epsilon(1e-6));
}

namespace {

AttentionRecord uniform_record(const LayoutSpec& l, int patch, int cond, int layers, int heads) {
  AttentionRecord r;
  r.layers = layers;
  r.heads = heads;
  r.token_cell = token_cells(l, patch);
  r.image_tokens = int(r.token_cell.size());
  r.cond_tokens = cond;
  const int n = r.image_tokens + cond;
  for (int i = 0; i < layers * heads; ++i) r.maps.push_back(Eigen::MatrixXd::Constant(n, n, 1.0 / n));
  return r;
}

}  // namespace

TEST_CASE("attention report on uniform attention matches counting") {
  const LayoutSpec l{2, 2, 4, 4, 1};
  const int patch = 2, cond = 3;
  const auto r = uniform_record(l, patch, cond, 2, 2);
  const double p = 4, f = 4, total = f * p + cond;  // 4 tokens per cell
  const auto rep = attention_report(r);
  CHECK(rep.mean.intra == doctest::Approx(p / total));
  CHECK(rep.mean.cross == doctest::Approx((f - 1) * p / total));
  CHECK(rep.mean.cond == doctest::Approx(cond / total));
  CHECK(rep.per_head.size() == 4);
  for (const auto& h : rep.per_head) CHECK(h.sum() == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("attention report on a 1x1 layout has no cross mass") {
  const auto rep = attention_report(uniform_record(LayoutSpec{1, 1, 4, 4, 1}, 2, 2, 1, 1));
  CHECK(rep.mean.cross == 0.0);
}

TEST_CASE("attention report rejects unnormalised rows") {
  auto r = uniform_record(LayoutSpec{1, 2, 4, 4, 1}, 2, 1, 1, 1);
  r.maps[0](3, 0) += 0.01;
  CHECK(test::error_of([&] { attention_report(r); }) == Errc::UnnormalizedRecord);
  auto short_map = uniform_record(LayoutSpec{1, 2, 4, 4, 1}, 2, 1, 1, 1);
  short_map.token_cell.pop_back();
  CHECK(test::error_of([&] { attention_report(short_map); }) == Errc::UnnormalizedRecord);
}

TEST_CASE("report JSON uses the INF sentinel") {
  MetricReport rep;
  rep.psnr = std::numeric_limits<double>::infinity();
  rep.ssim = 1.0;
  const std::string j = rep.to_json();
  CHECK(j.find("\"psnr\": \"INF\"") != std::string::npos);
  CHECK(j.find("\"ssim\": 1.0") != std::string::npos);
  CHECK(j.find("temporal_consistency") == std::string::npos);
  const auto csv = metrics_csv({{"a", rep}});
  CHECK(csv == "name,psnr,ssim,temporal_consistency,reference_fidelity\na,INF,1,,\n");
}
