// Copyright (c) 2026, gridflow authors
// SPDX-License-Identifier: Apache-2.0

#include "gridflow/checkpoint.hpp"

#include <array>
#include <cstring>
#include <fstream>
#include <sstream>

namespace gridflow {

namespace {

constexpr char kMagic[4] = {'G', 'F', 'C', 'K'};

class Writer {
 public:
  template <typename T>
  void pod(const T& v) {
    buf_.append(reinterpret_cast<const char*>(&v), sizeof(T));
  }
  void str(const std::string& s) {
    pod(std::uint64_t(s.size()));
    buf_ += s;
  }
  void vec(const Eigen::VectorXf& v) {
    pod(std::uint64_t(v.size()));
    buf_.append(reinterpret_cast<const char*>(v.data()), std::size_t(v.size()) * sizeof(float));
  }
  const std::string& bytes() const { return buf_; }

 private:
  std::string buf_;
};

class Reader {
 public:
  Reader(std::string data, std::string origin) : data_(std::move(data)), origin_(std::move(origin)) {}

  template <typename T>
  T pod() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, data_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string str() {
    const auto n = pod<std::uint64_t>();
    need(n);
    std::string s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  Eigen::VectorXf vec() {
    const auto n = pod<std::uint64_t>();
    need(n * sizeof(float));
    Eigen::VectorXf v(static_cast<Eigen::Index>(n));
    std::memcpy(v.data(), data_.data() + pos_, n * sizeof(float));
    pos_ += n * sizeof(float);
    return v;
  }
  void need(std::size_t n) const {
    if (pos_ + n > data_.size()) throw Error(Errc::CheckpointIOError, origin_ + ": truncated checkpoint");
  }

 private:
  std::string data_;
  std::string origin_;
  std::size_t pos_ = 0;
};

}  // namespace

Modelf Checkpoint::model() const {
  Modelf m(config);
  if (m.parameter_count() != params.size()) {
    throw Error(Errc::CheckpointIOError,
                "checkpoint holds " + std::to_string(params.size()) + " parameters, config needs " +
                    std::to_string(m.parameter_count()));
  }
  m.parameters() = params;
  return m;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  Writer w;
  const auto& c = ckpt.config;
  const std::array<std::int32_t, 10> cfg = {c.patch_size, c.embed_dim,      c.depth,
                                            c.heads,      c.cond_vocab,     c.time_embed_dim,
                                            c.mlp_ratio,  c.frame_h,        c.frame_w,
                                            c.channels};
  const auto& l = ckpt.train_layout;
  const std::array<std::int32_t, 5> layout = {l.rows, l.cols, l.frame_h, l.frame_w, l.channels};
  std::string header(kMagic, 4);
  w.pod(kCheckpointVersion);
  w.pod(cfg);
  w.pod(layout);
  w.pod(ckpt.step);
  w.pod(std::array<double, 4>{ckpt.running.base, ckpt.running.flow, ckpt.running.alpha,
                              ckpt.running.total});
  w.str(ckpt.rng_state);
  w.vec(ckpt.params);
  w.vec(ckpt.adam_m);
  w.vec(ckpt.adam_v);

  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(Errc::CheckpointIOError, "cannot open " + tmp.string());
    out.write(header.data(), 4);
    out.write(w.bytes().data(), std::streamsize(w.bytes().size()));
    if (!out) throw Error(Errc::CheckpointIOError, "short write to " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw Error(Errc::CheckpointIOError, "cannot move checkpoint into " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::CheckpointIOError, "cannot open checkpoint " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  std::string data = ss.str();
  if (data.size() < 4 || std::memcmp(data.data(), kMagic, 4) != 0) {
    throw Error(Errc::CheckpointIOError, path.string() + " is not a checkpoint");
  }
  Reader r(data.substr(4), path.string());
  const auto version = r.pod<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw Error(Errc::CheckpointIOError, path.string() + ": unsupported version " + std::to_string(version));
  }
  Checkpoint ckpt;
  const auto cfg = r.pod<std::array<std::int32_t, 10>>();
  ckpt.config = ModelConfig{cfg[0], cfg[1], cfg[2], cfg[3], cfg[4],
                            cfg[5], cfg[6], cfg[7], cfg[8], cfg[9]};
  const auto layout = r.pod<std::array<std::int32_t, 5>>();
  ckpt.train_layout = LayoutSpec{layout[0], layout[1], layout[2], layout[3], layout[4]};
  ckpt.step = r.pod<std::int64_t>();
  const auto run = r.pod<std::array<double, 4>>();
  ckpt.running = LossBreakdown{run[0], run[1], run[2], run[3]};
  ckpt.rng_state = r.str();
  ckpt.params = r.vec();
  ckpt.adam_m = r.vec();
  ckpt.adam_v = r.vec();
  try {
    ckpt.config.validate();
  } catch (const Error& e) {
    throw Error(Errc::CheckpointIOError, path.string() + ": " + e.what());
  }
  return ckpt;
}

}  // namespace gridflow
