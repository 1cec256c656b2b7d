// Copyright (c) 2026, gridflow authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "gridflow/grid.hpp"

namespace gridflow::io {

namespace fs = std::filesystem;

/// 8-bit PNG; values are clamped to [0,1] and rounded.
void write_png(const fs::path& path, const Framef& frame, int channels);

/// Reads an 8-bit PNG converted to the requested channel count (1 or 3).
/// Throws UnreadableImage.
Framef read_png(const fs::path& path, int channels);

/// Raw grid container: "GRID", u32 version, u32 rows, cols, frame_h,
/// frame_w, channels, then the grid elements as little-endian float32 in
/// row-major (y, x, channel) order.
void write_grid_bin(const fs::path& path, const GridTensorf& grid);
GridTensorf read_grid_bin(const fs::path& path);

/// Looping animated GIF, 256-entry palette (gray ramp or 3-3-2 RGB).
void write_gif(const fs::path& path, const std::vector<Framef>& frames, int channels,
               int delay_centiseconds = 10);

/// Writes through a temporary sibling and renames into place.
void atomic_write(const fs::path& path, const std::string& contents);

std::string read_text(const fs::path& path);

/// Sorted list of *.png files directly inside a folder.
std::vector<fs::path> list_pngs(const fs::path& folder);

/// Plain "key = value" config; '#' starts a comment.
class KeyValueFile {
 public:
  static KeyValueFile parse(const std::string& text, const std::string& origin = "<string>");
  static KeyValueFile load(const fs::path& path);

  bool has(const std::string& key) const { return values_.count(key) != 0; }
  const std::string& get(const std::string& key) const;
  std::string get(const std::string& key, const std::string& fallback) const;
  double get_double(const std::string& key, double fallback) const;
  long long get_int(const std::string& key, long long fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;
  const std::map<std::string, std::string>& values() const noexcept { return values_; }
  void set(const std::string& key, const std::string& value) { values_[key] = value; }
  std::string to_string() const;

 private:
  std::string origin_;
  std::map<std::string, std::string> values_;
};

/// Parses "MxN" (also accepts "M×N" written with 'x' or 'X').
std::pair<int, int> parse_grid_shape(const std::string& text);

}  // namespace gridflow::io
