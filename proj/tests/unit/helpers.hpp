// Copyright (c) 2026, gridflow authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <doctest.h>

#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "gridflow/errors.hpp"
#include "gridflow/grid.hpp"

namespace test {

inline gridflow::Framef random_frame(std::mt19937_64& rng, int h, int w, int c) {
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  gridflow::Framef f(h, w * c);
  for (Eigen::Index i = 0; i < f.size(); ++i) f.data()[i] = u(rng);
  return f;
}

inline std::vector<gridflow::Framef> random_frames(std::mt19937_64& rng, int n, int h, int w,
                                                   int c) {
  std::vector<gridflow::Framef> out;
  for (int k = 0; k < n; ++k) out.push_back(random_frame(rng, h, w, c));
  return out;
}

inline gridflow::GridTensorf random_grid(std::mt19937_64& rng, const gridflow::LayoutSpec& l) {
  return gridflow::pack(random_frames(rng, l.frames(), l.frame_h, l.frame_w, l.channels), l);
}

// Runs f and returns the error code it threw, failing the test otherwise.
template <typename F>
gridflow::Errc error_of(F&& f) {
  try {
    f();
  } catch (const gridflow::Error& e) {
    return e.code();
  }
  FAIL("expected gridflow::Error");
  return gridflow::Errc::ConfigError;
}

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() /
            ("gridflow_" + tag + "_" + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& s) const { return path_ / s; }

 private:
  std::filesystem::path path_;
};

}  // namespace test
