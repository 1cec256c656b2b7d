// Copyright (c) 2026, gridflow authors
// SPDX-License-Identifier: Apache-2.0

#include "gridflow/io.hpp"

#include <png.h>

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

namespace gridflow::io {

static_assert(std::endian::native == std::endian::little,
              "raw grid container assumes a little-endian host");

namespace {

std::uint8_t to_byte(float v) {
  const float c = std::clamp(std::isfinite(v) ? v : 0.0f, 0.0f, 1.0f);
  return static_cast<std::uint8_t>(std::lround(c * 255.0f));
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

constexpr char kGridMagic[4] = {'G', 'R', 'I', 'D'};
constexpr std::uint32_t kGridVersion = 1;

}  // namespace

void write_png(const fs::path& path, const Framef& frame, int channels) {
  if (channels != 1 && channels != 3) {
    throw Error(Errc::IOError, "PNG output supports 1 or 3 channels, got " + std::to_string(channels));
  }
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(frame.cols() / channels);
  image.height = static_cast<png_uint_32>(frame.rows());
  image.format = channels == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  std::vector<std::uint8_t> bytes(std::size_t(frame.size()));
  for (Eigen::Index r = 0; r < frame.rows(); ++r) {
    for (Eigen::Index c = 0; c < frame.cols(); ++c) {
      bytes[std::size_t(r * frame.cols() + c)] = to_byte(frame(r, c));
    }
  }
  if (!png_image_write_to_file(&image, path.c_str(), 0, bytes.data(), 0, nullptr)) {
    throw Error(Errc::IOError, "cannot write " + path.string() + ": " + image.message);
  }
}

Framef read_png(const fs::path& path, int channels) {
  if (channels != 1 && channels != 3) {
    throw Error(Errc::UnreadableImage, "PNG input supports 1 or 3 channels");
  }
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.c_str())) {
    throw Error(Errc::UnreadableImage, path.string() + ": " + image.message);
  }
  image.format = channels == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  std::vector<std::uint8_t> bytes(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, bytes.data(), 0, nullptr)) {
    const std::string msg = image.message;
    png_image_free(&image);
    throw Error(Errc::UnreadableImage, path.string() + ": " + msg);
  }
  Framef frame(Eigen::Index(image.height), Eigen::Index(image.width) * channels);
  for (Eigen::Index i = 0; i < frame.size(); ++i) {
    frame.data()[i] = float(bytes[std::size_t(i)]) / 255.0f;
  }
  return frame;
}

void write_grid_bin(const fs::path& path, const GridTensorf& grid) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(Errc::IOError, "cannot open " + path.string());
  const auto& l = grid.layout();
  const std::array<std::uint32_t, 6> header = {kGridVersion,
                                               std::uint32_t(l.rows),
                                               std::uint32_t(l.cols),
                                               std::uint32_t(l.frame_h),
                                               std::uint32_t(l.frame_w),
                                               std::uint32_t(l.channels)};
  out.write(kGridMagic, 4);
  out.write(reinterpret_cast<const char*>(header.data()), sizeof(header));
  out.write(reinterpret_cast<const char*>(grid.data().data()),
            std::streamsize(grid.data().size() * sizeof(float)));
  if (!out) throw Error(Errc::IOError, "short write to " + path.string());
}

GridTensorf read_grid_bin(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::IOError, "cannot open " + path.string());
  char magic[4];
  std::array<std::uint32_t, 6> header{};
  in.read(magic, 4);
  in.read(reinterpret_cast<char*>(header.data()), sizeof(header));
  if (!in || std::memcmp(magic, kGridMagic, 4) != 0) {
    throw Error(Errc::IOError, path.string() + " is not a grid container");
  }
  if (header[0] != kGridVersion) {
    throw Error(Errc::IOError, path.string() + ": unsupported container version " +
                                   std::to_string(header[0]));
  }
  LayoutSpec layout{int(header[1]), int(header[2]), int(header[3]), int(header[4]), int(header[5])};
  GridTensorf grid(layout);
  in.read(reinterpret_cast<char*>(grid.data().data()),
          std::streamsize(grid.data().size() * sizeof(float)));
  if (!in) throw Error(Errc::IOError, path.string() + ": truncated grid data");
  return grid;
}

namespace {

class BitWriter {
 public:
  void put(int code, int bits) {
    acc_ |= std::uint32_t(code) << nbits_;
    nbits_ += bits;
    while (nbits_ >= 8) {
      bytes_.push_back(std::uint8_t(acc_ & 0xff));
      acc_ >>= 8;
      nbits_ -= 8;
    }
  }
  std::vector<std::uint8_t> finish() {
    if (nbits_ > 0) bytes_.push_back(std::uint8_t(acc_ & 0xff));
    acc_ = 0;
    nbits_ = 0;
    return std::move(bytes_);
  }

 private:
  std::vector<std::uint8_t> bytes_;
  std::uint32_t acc_ = 0;
  int nbits_ = 0;
};

// LZW with 8-bit minimum code size, code table reset at 4095 entries.
std::vector<std::uint8_t> lzw_encode(const std::vector<std::uint8_t>& pixels) {
  constexpr int kMinCodeSize = 8;
  constexpr int kClear = 1 << kMinCodeSize;
  std::vector<std::uint16_t> table(4096 * 256, 0);
  BitWriter bits;
  int code_size = kMinCodeSize + 1;
  int max_code = kClear + 1;
  bits.put(kClear, code_size);
  int cur = -1;
  for (std::uint8_t v : pixels) {
    if (cur < 0) {
      cur = v;
      continue;
    }
    const std::uint16_t next = table[std::size_t(cur) * 256 + v];
    if (next != 0) {
      cur = next;
      continue;
    }
    bits.put(cur, code_size);
    table[std::size_t(cur) * 256 + v] = std::uint16_t(++max_code);
    if (max_code >= (1 << code_size)) ++code_size;
    if (max_code == 4095) {
      bits.put(kClear, code_size);
      std::fill(table.begin(), table.end(), 0);
      code_size = kMinCodeSize + 1;
      max_code = kClear + 1;
    }
    cur = v;
  }
  if (cur >= 0) bits.put(cur, code_size);
  bits.put(kClear, code_size);
  bits.put(kClear + 1, kMinCodeSize + 1);
  return bits.finish();
}

void put_u16(std::string& out, int v) {
  out.push_back(char(v & 0xff));
  out.push_back(char((v >> 8) & 0xff));
}

}  // namespace

void write_gif(const fs::path& path, const std::vector<Framef>& frames, int channels,
               int delay_centiseconds) {
  if (frames.empty()) throw Error(Errc::IOError, "GIF needs at least one frame");
  if (channels != 1 && channels != 3) throw Error(Errc::IOError, "GIF supports 1 or 3 channels");
  const int h = int(frames.front().rows());
  const int w = int(frames.front().cols()) / channels;
  std::string out = "GIF89a";
  put_u16(out, w);
  put_u16(out, h);
  out.push_back(char(0xF7));  // global table, 256 entries
  out.push_back(0);
  out.push_back(0);
  for (int i = 0; i < 256; ++i) {
    if (channels == 1) {
      out.append(3, char(i));
    } else {
      out.push_back(char(((i >> 5) & 7) * 255 / 7));
      out.push_back(char(((i >> 2) & 7) * 255 / 7));
      out.push_back(char((i & 3) * 255 / 3));
    }
  }
  out += "\x21\xFF\x0BNETSCAPE2.0\x03\x01";
  put_u16(out, 0);
  out.push_back(0);

  for (const auto& f : frames) {
    if (f.rows() != h || f.cols() != Eigen::Index(w) * channels) {
      throw Error(Errc::ShapeMismatch, "GIF frames must share one size");
    }
    std::vector<std::uint8_t> idx(std::size_t(w) * std::size_t(h));
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        std::uint8_t v;
        if (channels == 1) {
          v = to_byte(f(y, x));
        } else {
          const int r = to_byte(f(y, 3 * x)) * 7 / 255;
          const int g = to_byte(f(y, 3 * x + 1)) * 7 / 255;
          const int b = to_byte(f(y, 3 * x + 2)) * 3 / 255;
          v = std::uint8_t((r << 5) | (g << 2) | b);
        }
        idx[std::size_t(y) * std::size_t(w) + std::size_t(x)] = v;
      }
    }
    out += "\x21\xF9\x04";
    out.push_back(0);
    put_u16(out, delay_centiseconds);
    out.push_back(0);
    out.push_back(0);
    out.push_back(char(0x2C));
    put_u16(out, 0);
    put_u16(out, 0);
    put_u16(out, w);
    put_u16(out, h);
    out.push_back(0);
    out.push_back(8);
    const auto data = lzw_encode(idx);
    for (std::size_t pos = 0; pos < data.size(); pos += 255) {
      const std::size_t n = std::min<std::size_t>(255, data.size() - pos);
      out.push_back(char(n));
      out.append(reinterpret_cast<const char*>(data.data() + pos), n);
    }
    out.push_back(0);
  }
  out.push_back(char(0x3B));
  atomic_write(path, out);
}

void atomic_write(const fs::path& path, const std::string& contents) {
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(Errc::IOError, "cannot open " + tmp.string());
    out.write(contents.data(), std::streamsize(contents.size()));
    if (!out) throw Error(Errc::IOError, "short write to " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw Error(Errc::IOError, "cannot rename " + tmp.string() + ": " + ec.message());
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::IOError, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<fs::path> list_pngs(const fs::path& folder) {
  std::error_code ec;
  if (!fs::is_directory(folder, ec)) {
    throw Error(Errc::IOError, "not a directory: " + folder.string());
  }
  std::vector<fs::path> out;
  for (const auto& entry : fs::directory_iterator(folder)) {
    if (entry.is_regular_file() && entry.path().extension() == ".png") out.push_back(entry.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

KeyValueFile KeyValueFile::parse(const std::string& text, const std::string& origin) {
  KeyValueFile kv;
  kv.origin_ = origin;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw Error(Errc::ConfigError, origin + ":" + std::to_string(lineno) + ": expected key = value");
    }
    const std::string key = trim(line.substr(0, eq));
    if (key.empty()) {
      throw Error(Errc::ConfigError, origin + ":" + std::to_string(lineno) + ": empty key");
    }
    kv.values_[key] = trim(line.substr(eq + 1));
  }
  return kv;
}

KeyValueFile KeyValueFile::load(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::ConfigError, "cannot read config " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse(ss.str(), path.string());
}

const std::string& KeyValueFile::get(const std::string& key) const {
  const auto it = values_.find(key);
  if (it == values_.end()) throw Error(Errc::ConfigError, origin_ + ": missing key '" + key + "'");
  return it->second;
}

std::string KeyValueFile::get(const std::string& key, const std::string& fallback) const {
  const auto it = values_.find(key);
  return it == values_.end() ? fallback : it->second;
}

double KeyValueFile::get_double(const std::string& key, double fallback) const {
  const auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  try {
    std::size_t used = 0;
    const double v = std::stod(it->second, &used);
    if (used != it->second.size()) throw std::invalid_argument(key);
    return v;
  } catch (const std::exception&) {
    throw Error(Errc::ConfigError, origin_ + ": '" + key + "' is not a number: " + it->second);
  }
}

long long KeyValueFile::get_int(const std::string& key, long long fallback) const {
  const auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  try {
    std::size_t used = 0;
    const long long v = std::stoll(it->second, &used);
    if (used != it->second.size()) throw std::invalid_argument(key);
    return v;
  } catch (const std::exception&) {
    throw Error(Errc::ConfigError, origin_ + ": '" + key + "' is not an integer: " + it->second);
  }
}

bool KeyValueFile::get_bool(const std::string& key, bool fallback) const {
  const auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  const auto& v = it->second;
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw Error(Errc::ConfigError, origin_ + ": '" + key + "' is not a boolean: " + v);
}

std::string KeyValueFile::to_string() const {
  std::string out;
  for (const auto& [k, v] : values_) out += k + " = " + v + "\n";
  return out;
}

std::pair<int, int> parse_grid_shape(const std::string& text) {
  const auto x = text.find_first_of("xX");
  try {
    if (x == std::string::npos) throw std::invalid_argument(text);
    std::size_t u1 = 0, u2 = 0;
    const std::string a = text.substr(0, x), b = text.substr(x + 1);
    const int rows = std::stoi(a, &u1);
    const int cols = std::stoi(b, &u2);
    if (u1 != a.size() || u2 != b.size() || rows < 1 || cols < 1) throw std::invalid_argument(text);
    return {rows, cols};
  } catch (const std::exception&) {
    throw Error(Errc::ConfigError, "grid shape must look like MxN, got '" + text + "'");
  }
}

}  // namespace gridflow::io
