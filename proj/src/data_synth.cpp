// Copyright (c) 2026, gridflow authors
// SPDX-License-Identifier: Apache-2.0

#include "gridflow/data_synth.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <random>
#include <sstream>

#include "gridflow/io.hpp"

namespace gridflow {

namespace fs = std::filesystem;

namespace {

constexpr int kSupersample = 4;

double deg2rad(double deg) { return deg * std::numbers::pi / 180.0; }

// Point (lx, ly) in object-local coordinates, y pointing down.
bool inside(ShapeKind shape, double lx, double ly, double r) {
  switch (shape) {
    case ShapeKind::Circle:
      return lx * lx + ly * ly <= r * r;
    case ShapeKind::Square: {
      const double half = r / std::numbers::sqrt2;
      return std::abs(lx) <= half && std::abs(ly) <= half;
    }
    case ShapeKind::Triangle: {
      // Equilateral, apex up, circumradius r.
      static const std::array<std::pair<double, double>, 3> dirs = [] {
        std::array<std::pair<double, double>, 3> d{};
        for (int i = 0; i < 3; ++i) {
          const double a = deg2rad(-90.0 + 120.0 * i);
          d[std::size_t(i)] = {std::cos(a), std::sin(a)};
        }
        return d;
      }();
      // Each edge's outward normal points opposite a vertex; inradius r/2.
      for (const auto& [vx, vy] : dirs) {
        if (-(lx * vx + ly * vy) > r / 2.0) return false;
      }
      return true;
    }
  }
  return false;
}

Framef render(const SequenceSpec& spec, double cx, double cy, double angle,
              const std::vector<float>& color) {
  const int c = spec.channels;
  Framef frame = Framef::Zero(spec.frame_h, Eigen::Index(spec.frame_w) * c);
  const double ca = std::cos(angle), sa = std::sin(angle);
  const double inv = 1.0 / (kSupersample * kSupersample);
  for (int y = 0; y < spec.frame_h; ++y) {
    for (int x = 0; x < spec.frame_w; ++x) {
      int hits = 0;
      for (int sy = 0; sy < kSupersample; ++sy) {
        for (int sx = 0; sx < kSupersample; ++sx) {
          const double px = x + (sx + 0.5) / kSupersample - cx;
          const double py = y + (sy + 0.5) / kSupersample - cy;
          const double lx = ca * px + sa * py;
          const double ly = -sa * px + ca * py;
          hits += inside(spec.shape, lx, ly, spec.size) ? 1 : 0;
        }
      }
      if (hits == 0) continue;
      for (int ch = 0; ch < c; ++ch) {
        frame(y, Eigen::Index(x) * c + ch) = float(hits * inv) * color[std::size_t(ch)];
      }
    }
  }
  return frame;
}

// Reflects p into [lo, hi] as a bouncing trajectory.
double fold(double p, double lo, double hi) {
  const double span = hi - lo;
  if (span <= 0.0) return lo;
  double u = std::fmod(p - lo, 2.0 * span);
  if (u < 0.0) u += 2.0 * span;
  return lo + (u <= span ? u : 2.0 * span - u);
}

Label shape_label(ShapeKind s) {
  switch (s) {
    case ShapeKind::Circle: return Label::ShapeCircle;
    case ShapeKind::Square: return Label::ShapeSquare;
    case ShapeKind::Triangle: return Label::ShapeTriangle;
  }
  return Label::ShapeCircle;
}

constexpr double kStill = 1e-9;

}  // namespace

std::string_view motion_name(MotionKind kind) noexcept {
  switch (kind) {
    case MotionKind::Translate: return "translate";
    case MotionKind::RotateRing: return "rotate_ring";
    case MotionKind::Bounce: return "bounce";
  }
  return "?";
}

std::string_view shape_name(ShapeKind shape) noexcept {
  switch (shape) {
    case ShapeKind::Circle: return "circle";
    case ShapeKind::Square: return "square";
    case ShapeKind::Triangle: return "triangle";
  }
  return "?";
}

MotionKind parse_motion(const std::string& name) {
  for (auto k : {MotionKind::Translate, MotionKind::RotateRing, MotionKind::Bounce}) {
    if (motion_name(k) == name) return k;
  }
  throw Error(Errc::InvalidSpec, "unknown motion kind '" + name + "'");
}

ShapeKind parse_shape(const std::string& name) {
  for (auto s : {ShapeKind::Circle, ShapeKind::Square, ShapeKind::Triangle}) {
    if (shape_name(s) == name) return s;
  }
  throw Error(Errc::InvalidSpec, "unknown shape '" + name + "'");
}

void SequenceSpec::validate() const {
  auto fail = [](const std::string& m) { throw Error(Errc::InvalidSpec, m); };
  if (frames < 1) fail("frames must be >= 1");
  if (frame_h < 1 || frame_w < 1) fail("frame size must be positive");
  if (channels != 1 && channels != 3) fail("channels must be 1 or 3");
  if (!(size > 0.0)) fail("object size must be positive");
  if (!std::isfinite(velocity_x) || !std::isfinite(velocity_y) ||
      !std::isfinite(angular_step_deg) || !std::isfinite(ring_radius)) {
    fail("motion parameters must be finite");
  }
  if (ring_radius < 0.0) fail("ring_radius must be non-negative");
}

Sequence gen_sequence(const SequenceSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<float> color(std::size_t(spec.channels));
  if (spec.channels == 1) {
    color[0] = float(0.6 + 0.4 * unit(rng));
  } else {
    for (auto& c : color) c = float(0.3 + 0.7 * unit(rng));
  }

  const double mid_x = spec.frame_w / 2.0, mid_y = spec.frame_h / 2.0;
  const double x0 = std::isnan(spec.start_x) ? mid_x : spec.start_x;
  const double y0 = std::isnan(spec.start_y) ? mid_y : spec.start_y;

  Sequence seq;
  seq.frames.reserve(std::size_t(spec.frames));
  for (int k = 0; k < spec.frames; ++k) {
    double cx = x0, cy = y0, angle = 0.0;
    switch (spec.kind) {
      case MotionKind::Translate:
        cx = x0 + k * spec.velocity_x;
        cy = y0 + k * spec.velocity_y;
        break;
      case MotionKind::Bounce:
        cx = fold(x0 + k * spec.velocity_x, spec.size, spec.frame_w - spec.size);
        cy = fold(y0 + k * spec.velocity_y, spec.size, spec.frame_h - spec.size);
        break;
      case MotionKind::RotateRing: {
        angle = deg2rad(k * spec.angular_step_deg);
        const double orbit = spec.ring_radius * std::min(spec.frame_h, spec.frame_w) / 8.0;
        cx = mid_x + orbit * std::cos(angle);
        cy = mid_y + orbit * std::sin(angle);
        break;
      }
    }
    seq.frames.push_back(render(spec, cx, cy, angle, color));
  }

  const Label shape = shape_label(spec.shape);
  bool moving = true;
  switch (spec.kind) {
    case MotionKind::Translate: {
      const double speed = std::hypot(spec.velocity_x, spec.velocity_y);
      if (speed < kStill) {
        moving = false;
        seq.fine_labels.push_back(Label::Static);
      } else {
        if (spec.velocity_x > kStill) seq.fine_labels.push_back(Label::TranslateRight);
        if (spec.velocity_x < -kStill) seq.fine_labels.push_back(Label::TranslateLeft);
        if (spec.velocity_y > kStill) seq.fine_labels.push_back(Label::TranslateDown);
        if (spec.velocity_y < -kStill) seq.fine_labels.push_back(Label::TranslateUp);
        seq.fine_labels.push_back(speed < 1.0 ? Label::SpeedSlow : Label::SpeedFast);
      }
      break;
    }
    case MotionKind::RotateRing:
      if (spec.angular_step_deg > kStill) {
        seq.fine_labels.push_back(Label::RotateCW);
      } else if (spec.angular_step_deg < -kStill) {
        seq.fine_labels.push_back(Label::RotateCCW);
      } else {
        moving = false;
        seq.fine_labels.push_back(Label::Static);
      }
      break;
    case MotionKind::Bounce:
      moving = std::hypot(spec.velocity_x, spec.velocity_y) >= kStill;
      seq.fine_labels.push_back(moving ? Label::Bounce : Label::Static);
      break;
  }
  seq.fine_labels.push_back(shape);
  seq.coarse_labels = {moving ? Label::Moving : Label::Static, shape};
  return seq;
}

std::pair<double, double> centroid(const Framef& frame, int channels) {
  double mass = 0.0, sx = 0.0, sy = 0.0;
  for (Eigen::Index y = 0; y < frame.rows(); ++y) {
    for (Eigen::Index x = 0; x < frame.cols(); ++x) {
      const double v = frame(y, x);
      const double px = double(x / channels) + 0.5;
      mass += v;
      sx += v * px;
      sy += v * (double(y) + 0.5);
    }
  }
  if (mass <= 0.0) return {std::nan(""), std::nan("")};
  return {sx / mass, sy / mass};
}

void DegradeSpec::validate() const {
  if (!(gaussian_blur_sigma >= 0.0) || !std::isfinite(gaussian_blur_sigma)) {
    throw Error(Errc::InvalidSpec, "blur sigma must be finite and >= 0");
  }
  if (!(block_mask_ratio >= 0.0 && block_mask_ratio < 1.0)) {
    throw Error(Errc::InvalidSpec, "block_mask_ratio must lie in [0,1)");
  }
  if (block_size < 1) throw Error(Errc::InvalidSpec, "block_size must be >= 1");
}

std::vector<int> masked_blocks(const DegradeSpec& spec, int frame_h, int frame_w,
                               int frame_index) {
  const int bh = (frame_h + spec.block_size - 1) / spec.block_size;
  const int bw = (frame_w + spec.block_size - 1) / spec.block_size;
  const int total = bh * bw;
  const int count = int(std::lround(spec.block_mask_ratio * total));
  std::vector<int> order(static_cast<std::size_t>(total));
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(spec.seed * 0x9E3779B97F4A7C15ULL + std::uint64_t(frame_index));
  // Fisher-Yates with an explicit draw so the order is library independent.
  for (int i = total - 1; i > 0; --i) {
    const int j = int(rng() % std::uint64_t(i + 1));
    std::swap(order[std::size_t(i)], order[std::size_t(j)]);
  }
  order.resize(std::size_t(count));
  std::sort(order.begin(), order.end());
  return order;
}

namespace {

Framef gaussian_blur(const Framef& frame, int channels, double sigma) {
  if (sigma <= 0.0) return frame;
  const int radius = std::max(1, int(std::ceil(3.0 * sigma)));
  std::vector<double> kernel(std::size_t(2 * radius + 1));
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    kernel[std::size_t(i + radius)] = std::exp(-0.5 * i * i / (sigma * sigma));
    sum += kernel[std::size_t(i + radius)];
  }
  for (auto& k : kernel) k /= sum;

  const int h = int(frame.rows()), w = int(frame.cols()) / channels;
  Framef tmp(frame.rows(), frame.cols()), out(frame.rows(), frame.cols());
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int c = 0; c < channels; ++c) {
        double acc = 0.0;
        for (int i = -radius; i <= radius; ++i) {
          const int xx = std::clamp(x + i, 0, w - 1);
          acc += kernel[std::size_t(i + radius)] * frame(y, xx * channels + c);
        }
        tmp(y, x * channels + c) = float(acc);
      }
    }
  }
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int c = 0; c < channels; ++c) {
        double acc = 0.0;
        for (int i = -radius; i <= radius; ++i) {
          const int yy = std::clamp(y + i, 0, h - 1);
          acc += kernel[std::size_t(i + radius)] * tmp(yy, x * channels + c);
        }
        out(y, x * channels + c) = float(acc);
      }
    }
  }
  return out;
}

}  // namespace

std::vector<Framef> degrade(const std::vector<Framef>& frames, const DegradeSpec& spec,
                            int channels) {
  spec.validate();
  if (channels < 1) throw Error(Errc::InvalidSpec, "channels must be >= 1");
  std::vector<Framef> out;
  out.reserve(frames.size());
  for (std::size_t k = 0; k < frames.size(); ++k) {
    Framef f = gaussian_blur(frames[k], channels, spec.gaussian_blur_sigma);
    const int h = int(f.rows()), w = int(f.cols()) / channels;
    const int bw = (w + spec.block_size - 1) / spec.block_size;
    for (int b : masked_blocks(spec, h, w, int(k))) {
      const int y0 = (b / bw) * spec.block_size, x0 = (b % bw) * spec.block_size;
      const int bh_px = std::min(spec.block_size, h - y0);
      const int bw_px = std::min(spec.block_size, w - x0);
      f.block(y0, Eigen::Index(x0) * channels, bh_px, Eigen::Index(bw_px) * channels).setZero();
    }
    out.push_back(std::move(f));
  }
  return out;
}

void read_labels(const fs::path& folder, std::vector<Label>& fine, std::vector<Label>& coarse) {
  fine.clear();
  coarse.clear();
  const fs::path sidecar = folder / "labels.txt";
  if (!fs::exists(sidecar)) return;
  std::ifstream in(sidecar);
  std::string line;
  while (std::getline(in, line)) {
    const auto colon = line.find(':');
    if (colon == std::string::npos) continue;
    const std::string key = line.substr(0, colon);
    std::vector<Label>* target = key == "fine" ? &fine : key == "coarse" ? &coarse : nullptr;
    if (!target) continue;
    std::istringstream words(line.substr(colon + 1));
    std::string word;
    while (words >> word) {
      const auto label = parse_label(word);
      if (!label) throw Error(Errc::InvalidSpec, sidecar.string() + ": unknown label " + word);
      target->push_back(*label);
    }
  }
}

std::pair<GridTensorf, Condition> load_folder(const fs::path& folder, const LayoutSpec& layout) {
  layout.validate();
  const auto files = io::list_pngs(folder);
  const auto expected = std::size_t(layout.frames());
  if (files.size() != expected) {
    const long diff = long(expected) - long(files.size());
    throw Error(Errc::CountMismatch,
                folder.string() + ": layout " + std::to_string(layout.rows) + "x" +
                    std::to_string(layout.cols) + " needs " + std::to_string(expected) +
                    " images, found " + std::to_string(files.size()) +
                    (diff > 0 ? " (short by " + std::to_string(diff) + ")"
                              : " (" + std::to_string(-diff) + " too many)"));
  }
  std::vector<Framef> frames;
  frames.reserve(files.size());
  for (const auto& file : files) {
    Framef f = io::read_png(file, layout.channels);
    const bool size_ok = f.rows() == layout.frame_h && f.cols() == layout.row_width();
    if (!size_ok) {
      throw Error(Errc::SizeMismatch,
                  file.string() + " is " + std::to_string(f.cols() / layout.channels) + "x" +
                      std::to_string(f.rows()) + ", expected " + std::to_string(layout.frame_w) +
                      "x" + std::to_string(layout.frame_h));
    }
    frames.push_back(std::move(f));
  }
  std::vector<Label> fine, coarse;
  read_labels(folder, fine, coarse);
  return {pack(frames, layout), Condition::make(layout, fine)};
}

void write_sequence_folder(const fs::path& folder, const Sequence& seq, int channels) {
  fs::create_directories(folder);
  for (std::size_t k = 0; k < seq.frames.size(); ++k) {
    char name[32];
    std::snprintf(name, sizeof(name), "frame_%03zu.png", k);
    io::write_png(folder / name, seq.frames[k], channels);
  }
  std::string labels = "fine:";
  for (auto l : seq.fine_labels) labels += " " + std::string(label_name(l));
  labels += "\ncoarse:";
  for (auto l : seq.coarse_labels) labels += " " + std::string(label_name(l));
  labels += "\n";
  io::atomic_write(folder / "labels.txt", labels);
}

Dataset make_dataset(MotionKind kind, int count, const LayoutSpec& layout, std::uint64_t seed) {
  layout.validate();
  if (count < 0) throw Error(Errc::InvalidSpec, "dataset count must be >= 0");
  Dataset ds;
  ds.layout = layout;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double side = std::min(layout.frame_h, layout.frame_w);
  const int f = layout.frames();
  for (int i = 0; i < count; ++i) {
    SequenceSpec spec;
    spec.kind = kind;
    spec.frames = f;
    spec.frame_h = layout.frame_h;
    spec.frame_w = layout.frame_w;
    spec.channels = layout.channels;
    spec.shape = static_cast<ShapeKind>(rng() % 3);
    spec.size = side * (0.16 + 0.06 * unit(rng));
    spec.seed = rng();
    const double margin = spec.size + 0.5;
    switch (kind) {
      case MotionKind::Translate: {
        const double dir = deg2rad(45.0 * double(rng() % 8));
        const double travel = side * (0.25 + 0.2 * unit(rng));
        const double speed = f > 1 ? travel / (f - 1) : 0.0;
        spec.velocity_x = std::abs(std::cos(dir)) < 1e-12 ? 0.0 : speed * std::cos(dir);
        spec.velocity_y = std::abs(std::sin(dir)) < 1e-12 ? 0.0 : speed * std::sin(dir);
        const double dx = spec.velocity_x * (f - 1), dy = spec.velocity_y * (f - 1);
        const double lo_x = margin - std::min(0.0, dx), hi_x = layout.frame_w - margin - std::max(0.0, dx);
        const double lo_y = margin - std::min(0.0, dy), hi_y = layout.frame_h - margin - std::max(0.0, dy);
        spec.start_x = hi_x > lo_x ? lo_x + (hi_x - lo_x) * unit(rng) : layout.frame_w / 2.0 - dx / 2;
        spec.start_y = hi_y > lo_y ? lo_y + (hi_y - lo_y) * unit(rng) : layout.frame_h / 2.0 - dy / 2;
        break;
      }
      case MotionKind::RotateRing:
        spec.angular_step_deg = (rng() % 2 == 0) ? 15.0 : -15.0;
        spec.ring_radius = 2.0;
        spec.size = std::min(spec.size, side / 4.0);
        break;
      case MotionKind::Bounce: {
        const double dir = 2.0 * std::numbers::pi * unit(rng);
        const double speed = side * (0.04 + 0.06 * unit(rng));
        spec.velocity_x = speed * std::cos(dir);
        spec.velocity_y = speed * std::sin(dir);
        spec.start_x = margin + (layout.frame_w - 2 * margin) * unit(rng);
        spec.start_y = margin + (layout.frame_h - 2 * margin) * unit(rng);
        break;
      }
    }
    ds.items.push_back(gen_sequence(spec));
  }
  return ds;
}

Dataset load_dataset(const fs::path& path, const LayoutSpec& layout) {
  Dataset ds;
  ds.layout = layout;
  auto load_one = [&](const fs::path& folder) {
    auto [grid, cond] = load_folder(folder, layout);
    Sequence seq;
    seq.frames = unpack(grid);
    read_labels(folder, seq.fine_labels, seq.coarse_labels);
    if (seq.coarse_labels.empty()) seq.coarse_labels = seq.fine_labels;
    ds.items.push_back(std::move(seq));
  };
  if (!io::list_pngs(path).empty()) {
    load_one(path);
    return ds;
  }
  std::vector<fs::path> dirs;
  for (const auto& entry : fs::directory_iterator(path)) {
    if (entry.is_directory()) dirs.push_back(entry.path());
  }
  std::sort(dirs.begin(), dirs.end());
  for (const auto& d : dirs) load_one(d);
  return ds;
}

}  // namespace gridflow
