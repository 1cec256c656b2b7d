// Copyright (c) 2026, gridflow authors
// SPDX-License-Identifier: Apache-2.0

#include "gridflow/backbone.hpp"

#include <cmath>
#include <numbers>
#include <random>

namespace gridflow {

namespace {

constexpr double kLayerNormEps = 1e-5;

template <typename Mat, typename Vec, typename Row>
void layer_norm(const Mat& x, const Row& gain, const Row& bias, Mat& xhat, Vec& rstd, Mat& y) {
  using Scalar = typename Mat::Scalar;
  const auto d = x.cols();
  xhat.resize(x.rows(), d);
  rstd.resize(x.rows());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const Scalar mean = x.row(r).mean();
    xhat.row(r) = x.row(r).array() - mean;
    const Scalar var = xhat.row(r).squaredNorm() / Scalar(d);
    rstd(r) = Scalar(1) / std::sqrt(var + Scalar(kLayerNormEps));
    xhat.row(r) *= rstd(r);
  }
  y = (xhat.array().rowwise() * gain.row(0).array()).rowwise() + bias.row(0).array();
}

// Returns dx; accumulates dgain/dbias.
template <typename Mat, typename Vec, typename Row, typename GradRow>
Mat layer_norm_backward(const Mat& dy, const Mat& xhat, const Vec& rstd, const Row& gain,
                        GradRow&& dgain, GradRow&& dbias) {
  using Scalar = typename Mat::Scalar;
  const auto d = Scalar(dy.cols());
  dgain += dy.cwiseProduct(xhat).colwise().sum();
  dbias += dy.colwise().sum();
  Mat dxhat = dy.array().rowwise() * gain.row(0).array();
  Mat dx(dy.rows(), dy.cols());
  for (Eigen::Index r = 0; r < dy.rows(); ++r) {
    const Scalar m1 = dxhat.row(r).sum() / d;
    const Scalar m2 = dxhat.row(r).dot(xhat.row(r)) / d;
    dx.row(r) = rstd(r) * (dxhat.row(r).array() - m1 - xhat.row(r).array() * m2);
  }
  return dx;
}

template <typename Mat>
Mat gelu(const Mat& u) {
  using Scalar = typename Mat::Scalar;
  const Scalar k = Scalar(std::sqrt(2.0 / std::numbers::pi));
  const auto a = u.array();
  Mat out = (k * (a + Scalar(0.044715) * a.cube())).tanh().matrix();
  out.array() = Scalar(0.5) * a * (Scalar(1) + out.array());
  return out;
}

template <typename Mat>
Mat gelu_grad(const Mat& u) {
  using Scalar = typename Mat::Scalar;
  const Scalar k = Scalar(std::sqrt(2.0 / std::numbers::pi));
  const auto a = u.array();
  Mat th = (k * (a + Scalar(0.044715) * a.cube())).tanh().matrix();
  th.array() = Scalar(0.5) * (Scalar(1) + th.array()) +
               Scalar(0.5) * a * (Scalar(1) - th.array().square()) * k *
                   (Scalar(1) + Scalar(3 * 0.044715) * a.square());
  return th;
}

template <typename Scalar>
Scalar sigmoid(Scalar x) {
  return Scalar(1) / (Scalar(1) + std::exp(-x));
}

template <typename Mat>
void softmax_rows(Mat& s) {
  for (Eigen::Index r = 0; r < s.rows(); ++r) {
    s.row(r).array() -= s.row(r).maxCoeff();
    s.row(r) = s.row(r).array().exp();
    s.row(r) /= s.row(r).sum();
  }
}

}  // namespace

void ModelConfig::validate() const {
  auto fail = [](const std::string& msg) { throw Error(Errc::InvalidConfig, msg); };
  if (patch_size < 1 || embed_dim < 1 || depth < 1 || heads < 1 || cond_vocab < 1 ||
      time_embed_dim < 2 || mlp_ratio < 1) {
    fail("all model dimensions must be positive");
  }
  if (frame_h < 1 || frame_w < 1 || channels < 1) fail("frame geometry must be positive");
  if (frame_h % patch_size != 0 || frame_w % patch_size != 0) {
    fail("patch_size " + std::to_string(patch_size) + " does not divide frame " +
         std::to_string(frame_h) + "x" + std::to_string(frame_w));
  }
  if (embed_dim % heads != 0) {
    fail("embed_dim " + std::to_string(embed_dim) + " not divisible by heads " +
         std::to_string(heads));
  }
  if (embed_dim % 8 != 0) fail("embed_dim must be a multiple of 8 for 2D positions");
  if (time_embed_dim % 2 != 0) fail("time_embed_dim must be even");
  if (cond_vocab < kLabelCount) {
    fail("cond_vocab " + std::to_string(cond_vocab) + " smaller than label set " +
         std::to_string(kLabelCount));
  }
}

Eigen::Index parameter_count(const ModelConfig& c) {
  const Eigen::Index d = c.embed_dim, pd = c.patch_dim(), te = c.time_embed_dim,
                     h = Eigen::Index(c.mlp_ratio) * c.embed_dim;
  const Eigen::Index embed = pd * d + d + te * d + d + d * d + d + kLayoutVocab * d +
                             Eigen::Index(c.cond_vocab) * d;
  const Eigen::Index block =
      4 * d + d * 3 * d + 3 * d + d * d + d + d * h + h + h * d + d + d * 6 * d + 6 * d;
  const Eigen::Index head = 2 * d + d * 2 * d + 2 * d + d * pd + pd + d * pd + pd;
  return embed + c.depth * block + head;
}

std::vector<int> token_cells(const LayoutSpec& layout, int patch_size) {
  const int gh = layout.height() / patch_size;
  const int gw = layout.cols * layout.frame_w / patch_size;
  const int ph = layout.frame_h / patch_size;
  const int pw = layout.frame_w / patch_size;
  std::vector<int> cells(std::size_t(gh) * std::size_t(gw));
  for (int r = 0; r < gh; ++r) {
    for (int c = 0; c < gw; ++c) cells[std::size_t(r * gw + c)] = (r / ph) * layout.cols + c / pw;
  }
  return cells;
}

template <typename Scalar>
Model<Scalar>::Model(const ModelConfig& config) : config_(config) {
  config_.validate();
  const int d = config_.embed_dim, pd = config_.patch_dim(), te = config_.time_embed_dim;
  const int h = config_.mlp_ratio * d;
  patch_w_ = add_slot("patch_w", pd, d);
  patch_b_ = add_slot("patch_b", 1, d);
  time_w1_ = add_slot("time_w1", te, d);
  time_b1_ = add_slot("time_b1", 1, d);
  time_w2_ = add_slot("time_w2", d, d);
  time_b2_ = add_slot("time_b2", 1, d);
  layout_emb_ = add_slot("layout_emb", kLayoutVocab, d);
  label_emb_ = add_slot("label_emb", config_.cond_vocab, d);
  for (int l = 0; l < config_.depth; ++l) {
    const std::string p = "block" + std::to_string(l) + ".";
    BlockSlots b{};
    b.ln1_g = add_slot(p + "ln1_g", 1, d);
    b.ln1_b = add_slot(p + "ln1_b", 1, d);
    b.qkv_w = add_slot(p + "qkv_w", d, 3 * d);
    b.qkv_b = add_slot(p + "qkv_b", 1, 3 * d);
    b.out_w = add_slot(p + "out_w", d, d);
    b.out_b = add_slot(p + "out_b", 1, d);
    b.ln2_g = add_slot(p + "ln2_g", 1, d);
    b.ln2_b = add_slot(p + "ln2_b", 1, d);
    b.fc1_w = add_slot(p + "fc1_w", d, h);
    b.fc1_b = add_slot(p + "fc1_b", 1, h);
    b.fc2_w = add_slot(p + "fc2_w", h, d);
    b.fc2_b = add_slot(p + "fc2_b", 1, d);
    b.mod_w = add_slot(p + "mod_w", d, 6 * d);
    b.mod_b = add_slot(p + "mod_b", 1, 6 * d);
    blocks_.push_back(b);
  }
  final_g_ = add_slot("final_g", 1, d);
  final_b_ = add_slot("final_b", 1, d);
  final_mod_w_ = add_slot("final_mod_w", d, 2 * d);
  final_mod_b_ = add_slot("final_mod_b", 1, 2 * d);
  head_w_ = add_slot("head_w", d, pd);
  head_b_ = add_slot("head_b", 1, pd);
  // time-dependent gain on the input patches, added to the head output
  skip_w_ = add_slot("skip_w", d, pd);
  skip_b_ = add_slot("skip_b", 1, pd);
  params_ = Vec::Zero(slots_.empty() ? 0 : slots_.back().offset + slots_.back().rows * slots_.back().cols);
}

template <typename Scalar>
int Model<Scalar>::add_slot(const std::string& name, Eigen::Index rows, Eigen::Index cols) {
  const Eigen::Index offset = slots_.empty() ? 0 : slots_.back().offset + slots_.back().rows * slots_.back().cols;
  slots_.push_back(ParamSlot{name, rows, cols, offset});
  return static_cast<int>(slots_.size() - 1);
}

template <typename Scalar>
Eigen::Map<const typename Model<Scalar>::Mat> Model<Scalar>::view(int slot) const {
  const auto& s = slots_[std::size_t(slot)];
  return Eigen::Map<const Mat>(params_.data() + s.offset, s.rows, s.cols);
}

template <typename Scalar>
Eigen::Map<typename Model<Scalar>::Mat> Model<Scalar>::grad_view(Vec& grad, int slot) const {
  const auto& s = slots_[std::size_t(slot)];
  return Eigen::Map<Mat>(grad.data() + s.offset, s.rows, s.cols);
}

template <typename Scalar>
void Model<Scalar>::check_inputs(const GridTensor<Scalar>& x_t, Scalar t,
                                 const Condition& cond) const {
  const auto& layout = x_t.layout();
  if (layout.frame_h != config_.frame_h || layout.frame_w != config_.frame_w ||
      layout.channels != config_.channels) {
    throw Error(Errc::ShapeMismatch,
                "input frames " + layout.to_string() + " but model expects " +
                    std::to_string(config_.frame_h) + "x" + std::to_string(config_.frame_w) +
                    "x" + std::to_string(config_.channels));
  }
  if (!(t >= Scalar(0) && t <= Scalar(1))) {
    throw Error(Errc::TOutOfRange, "t=" + std::to_string(double(t)));
  }
  const int token = layout_token_for(layout);
  if (cond.layout_token != token) {
    throw Error(Errc::GeometryMismatch, "condition layout token " +
                                            std::to_string(cond.layout_token) +
                                            " does not describe grid " + layout.to_string());
  }
  if (!cond.null_flag) {
    for (int id : cond.content_labels) {
      if (id < 0 || id >= config_.cond_vocab) {
        throw Error(Errc::InvalidConfig, "content label id " + std::to_string(id) +
                                             " outside vocabulary");
      }
    }
  }
}

template <typename Scalar>
typename Model<Scalar>::Mat Model<Scalar>::patchify(const GridTensor<Scalar>& x) const {
  const auto& layout = x.layout();
  const int p = config_.patch_size, c = layout.channels;
  const int gh = layout.height() / p, gw = layout.cols * layout.frame_w / p;
  Mat tokens(Eigen::Index(gh) * gw, Eigen::Index(p) * p * c);
  for (int pr = 0; pr < gh; ++pr) {
    for (int pc = 0; pc < gw; ++pc) {
      const Eigen::Index tok = Eigen::Index(pr) * gw + pc;
      for (int dy = 0; dy < p; ++dy) {
        tokens.row(tok).segment(Eigen::Index(dy) * p * c, p * c) =
            x.data().row(Eigen::Index(pr) * p + dy).segment(Eigen::Index(pc) * p * c, p * c);
      }
    }
  }
  return tokens;
}

template <typename Scalar>
GridTensor<Scalar> Model<Scalar>::unpatchify(const Mat& tokens, const LayoutSpec& layout) const {
  const int p = config_.patch_size, c = layout.channels;
  const int gh = layout.height() / p, gw = layout.cols * layout.frame_w / p;
  GridTensor<Scalar> out(layout);
  for (int pr = 0; pr < gh; ++pr) {
    for (int pc = 0; pc < gw; ++pc) {
      const Eigen::Index tok = Eigen::Index(pr) * gw + pc;
      for (int dy = 0; dy < p; ++dy) {
        out.data().row(Eigen::Index(pr) * p + dy).segment(Eigen::Index(pc) * p * c, p * c) =
            tokens.row(tok).segment(Eigen::Index(dy) * p * c, p * c);
      }
    }
  }
  return out;
}

// Sinusoids of the packed-image row/column in the first half of the
// channels and of the row/column inside the frame in the second half.
template <typename Scalar>
typename Model<Scalar>::Mat Model<Scalar>::positions(const LayoutSpec& layout) const {
  const int p = config_.patch_size;
  const int gh = layout.height() / p, gw = layout.cols * layout.frame_w / p;
  const int ph = layout.frame_h / p, pw = layout.frame_w / p;
  const int d = config_.embed_dim, q = d / 8;
  Mat pos(Eigen::Index(gh) * gw, d);
  for (int r = 0; r < gh; ++r) {
    for (int c = 0; c < gw; ++c) {
      auto row = pos.row(Eigen::Index(r) * gw + c);
      const int coords[4] = {r, c, r % ph, c % pw};
      for (int a = 0; a < 4; ++a) {
        for (int k = 0; k < q; ++k) {
          const double w = std::pow(10000.0, -double(k) / double(q));
          row(2 * a * q + k) = Scalar(std::sin(coords[a] * w));
          row((2 * a + 1) * q + k) = Scalar(std::cos(coords[a] * w));
        }
      }
    }
  }
  return pos;
}

template <typename Scalar>
GridTensor<Scalar> Model<Scalar>::forward(const GridTensor<Scalar>& x_t, Scalar t,
                                          const Condition& cond, Tape& tape) const {
  check_inputs(x_t, t, cond);
  const int d = config_.embed_dim, nh = config_.heads, dh = config_.head_dim();
  const LayoutSpec& layout = x_t.layout();

  tape.layout = layout;
  tape.patches = patchify(x_t);
  const auto n = tape.patches.rows();
  tape.cond_ids.clear();
  tape.cond_ids.push_back(cond.layout_token);
  if (cond.null_flag) {
    tape.cond_ids.push_back(static_cast<int>(Label::Null));
  } else {
    for (int id : cond.content_labels) tape.cond_ids.push_back(id);
  }
  const auto nc = Eigen::Index(tape.cond_ids.size());
  const auto total = n + nc;
  tape.image_tokens = int(n);
  tape.cond_tokens = int(nc);

  // time embedding
  const int te = config_.time_embed_dim, half = te / 2;
  tape.time_sin.resize(te);
  for (int k = 0; k < half; ++k) {
    const double freq = std::exp(-std::log(10000.0) * double(k) / double(half));
    const double arg = 1000.0 * double(t) * freq;
    tape.time_sin(k) = Scalar(std::sin(arg));
    tape.time_sin(half + k) = Scalar(std::cos(arg));
  }
  tape.time_pre = tape.time_sin * view(time_w1_) + view(time_b1_);
  tape.time_act = tape.time_pre.unaryExpr([](Scalar v) { return v * sigmoid(v); });
  tape.temb = tape.time_act * view(time_w2_) + view(time_b2_);
  const auto& temb = tape.temb;

  Mat x(total, d);
  x.topRows(n).noalias() = tape.patches * view(patch_w_);
  x.topRows(n).rowwise() += view(patch_b_).row(0);
  x.topRows(n) += positions(layout);
  x.row(n) = view(layout_emb_).row(tape.cond_ids[0]);
  for (Eigen::Index k = 1; k < nc; ++k) x.row(n + k) = view(label_emb_).row(tape.cond_ids[std::size_t(k)]);
  x.rowwise() += temb.row(0);

  tape.cvec = temb;
  for (Eigen::Index k = 1; k < nc; ++k) tape.cvec += view(label_emb_).row(tape.cond_ids[std::size_t(k)]);
  tape.cact = tape.cvec.unaryExpr([](Scalar v) { return v * sigmoid(v); });

  const Scalar scale = Scalar(1.0 / std::sqrt(double(dh)));
  tape.blocks.resize(blocks_.size());
  for (std::size_t l = 0; l < blocks_.size(); ++l) {
    const BlockSlots& b = blocks_[l];
    auto& bt = tape.blocks[l];
    bt.mod = tape.cact * view(b.mod_w) + view(b.mod_b);
    const auto shift1 = bt.mod.segment(0, d), scale1 = bt.mod.segment(d, d),
               gate1 = bt.mod.segment(2 * d, d), shift2 = bt.mod.segment(3 * d, d),
               scale2 = bt.mod.segment(4 * d, d), gate2 = bt.mod.segment(5 * d, d);
    bt.x_in = x;
    layer_norm(bt.x_in, view(b.ln1_g), view(b.ln1_b), bt.xhat1, bt.rstd1, bt.ln1);
    bt.h1 = (bt.ln1.array().rowwise() * (scale1.array() + Scalar(1))).rowwise() + shift1.array();
    bt.qkv.noalias() = bt.h1 * view(b.qkv_w);
    bt.qkv.rowwise() += view(b.qkv_b).row(0);
    bt.att.resize(total, d);
    bt.probs.resize(std::size_t(nh));
    for (int h = 0; h < nh; ++h) {
      const auto q = bt.qkv.middleCols(h * dh, dh);
      const auto k = bt.qkv.middleCols(d + h * dh, dh);
      const auto v = bt.qkv.middleCols(2 * d + h * dh, dh);
      Mat& a = bt.probs[std::size_t(h)];
      a.noalias() = q * k.transpose();
      a *= scale;
      softmax_rows(a);
      bt.att.middleCols(h * dh, dh).noalias() = a * v;
    }
    bt.att_out.noalias() = bt.att * view(b.out_w);
    bt.att_out.rowwise() += view(b.out_b).row(0);
    bt.x_mid = bt.x_in + bt.att_out * gate1.asDiagonal();
    layer_norm(bt.x_mid, view(b.ln2_g), view(b.ln2_b), bt.xhat2, bt.rstd2, bt.ln2);
    bt.h2 = (bt.ln2.array().rowwise() * (scale2.array() + Scalar(1))).rowwise() + shift2.array();
    bt.pre_act.noalias() = bt.h2 * view(b.fc1_w);
    bt.pre_act.rowwise() += view(b.fc1_b).row(0);
    bt.act = gelu(bt.pre_act);
    bt.mlp_out.noalias() = bt.act * view(b.fc2_w);
    bt.mlp_out.rowwise() += view(b.fc2_b).row(0);
    x = bt.x_mid + bt.mlp_out * gate2.asDiagonal();
  }

  const Mat img = x.topRows(n);
  layer_norm(img, view(final_g_), view(final_b_), tape.final_xhat, tape.final_rstd, tape.final_ln);
  tape.final_mod = tape.cact * view(final_mod_w_) + view(final_mod_b_);
  tape.final_h = (tape.final_ln.array().rowwise() * (tape.final_mod.segment(d, d).array() + Scalar(1)))
                     .rowwise() +
                 tape.final_mod.segment(0, d).array();
  Mat out = tape.final_h * view(head_w_);
  out.rowwise() += view(head_b_).row(0);
  tape.skip_gain = temb * view(skip_w_) + view(skip_b_);
  out += tape.patches * tape.skip_gain.asDiagonal();
  return unpatchify(out, layout);
}

template <typename Scalar>
GridTensor<Scalar> Model<Scalar>::backward(const Tape& tape, const GridTensor<Scalar>& d_out,
                                           Vec& grad) const {
  if (grad.size() != params_.size()) grad = Vec::Zero(params_.size());
  if (!(d_out.layout() == tape.layout)) {
    throw Error(Errc::ShapeMismatch, "output gradient layout differs from forward pass");
  }
  const int d = config_.embed_dim, nh = config_.heads, dh = config_.head_dim();
  const Eigen::Index n = tape.image_tokens, nc = tape.cond_tokens, total = n + nc;
  const Scalar scale = Scalar(1.0 / std::sqrt(double(dh)));

  using Row = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;
  // y * (1 + scale) + shift: accumulates d(shift), d(scale) and returns dy
  const auto unmodulate = [](const Mat& dh, const Mat& y, const auto& scl, auto&& dshift,
                             auto&& dscale) {
    dshift += dh.colwise().sum();
    dscale += dh.cwiseProduct(y).colwise().sum();
    return Mat(dh.array().rowwise() * (scl.array() + Scalar(1)));
  };

  const Mat dy = patchify(d_out);
  const Row dgain = tape.patches.cwiseProduct(dy).colwise().sum();
  grad_view(grad, skip_w_).noalias() += tape.temb.transpose() * dgain;
  grad_view(grad, skip_b_) += dgain;
  grad_view(grad, head_w_).noalias() += tape.final_h.transpose() * dy;
  grad_view(grad, head_b_) += dy.colwise().sum();
  Row dfmod = Row::Zero(2 * d);
  const Mat dln = unmodulate(dy * view(head_w_).transpose(), tape.final_ln,
                             tape.final_mod.segment(d, d), dfmod.segment(0, d), dfmod.segment(d, d));
  grad_view(grad, final_mod_w_).noalias() += tape.cact.transpose() * dfmod;
  grad_view(grad, final_mod_b_) += dfmod;
  Row dcact = dfmod * view(final_mod_w_).transpose();
  Mat dx = Mat::Zero(total, d);
  dx.topRows(n) = layer_norm_backward(dln, tape.final_xhat, tape.final_rstd, view(final_g_),
                                      grad_view(grad, final_g_), grad_view(grad, final_b_));

  for (std::size_t li = blocks_.size(); li-- > 0;) {
    const BlockSlots& b = blocks_[li];
    const auto& bt = tape.blocks[li];
    Row dmod = Row::Zero(6 * d);

    // MLP branch
    dmod.segment(5 * d, d) += dx.cwiseProduct(bt.mlp_out).colwise().sum();
    const Mat dmlp = dx * bt.mod.segment(5 * d, d).asDiagonal();
    grad_view(grad, b.fc2_w).noalias() += bt.act.transpose() * dmlp;
    grad_view(grad, b.fc2_b) += dmlp.colwise().sum();
    Mat dpre = dmlp * view(b.fc2_w).transpose();
    dpre.array() *= gelu_grad(bt.pre_act).array();
    grad_view(grad, b.fc1_w).noalias() += bt.h2.transpose() * dpre;
    grad_view(grad, b.fc1_b) += dpre.colwise().sum();
    const Mat dln2 = unmodulate(dpre * view(b.fc1_w).transpose(), bt.ln2, bt.mod.segment(4 * d, d),
                                dmod.segment(3 * d, d), dmod.segment(4 * d, d));
    const Mat dmid = dx + layer_norm_backward(dln2, bt.xhat2, bt.rstd2, view(b.ln2_g),
                                              grad_view(grad, b.ln2_g), grad_view(grad, b.ln2_b));

    // attention branch
    dmod.segment(2 * d, d) += dmid.cwiseProduct(bt.att_out).colwise().sum();
    const Mat dattout = dmid * bt.mod.segment(2 * d, d).asDiagonal();
    grad_view(grad, b.out_w).noalias() += bt.att.transpose() * dattout;
    grad_view(grad, b.out_b) += dattout.colwise().sum();
    const Mat datt = dattout * view(b.out_w).transpose();
    Mat dqkv(total, 3 * d);
    for (int h = 0; h < nh; ++h) {
      const Mat& a = bt.probs[std::size_t(h)];
      const auto q = bt.qkv.middleCols(h * dh, dh);
      const auto k = bt.qkv.middleCols(d + h * dh, dh);
      const auto v = bt.qkv.middleCols(2 * d + h * dh, dh);
      const auto dout = datt.middleCols(h * dh, dh);
      dqkv.middleCols(2 * d + h * dh, dh).noalias() = a.transpose() * dout;
      Mat ds = dout * v.transpose();
      const Vec rs = ds.cwiseProduct(a).rowwise().sum();
      ds = a.cwiseProduct(ds.colwise() - rs);
      ds *= scale;
      dqkv.middleCols(h * dh, dh).noalias() = ds * k;
      dqkv.middleCols(d + h * dh, dh).noalias() = ds.transpose() * q;
    }
    grad_view(grad, b.qkv_w).noalias() += bt.h1.transpose() * dqkv;
    grad_view(grad, b.qkv_b) += dqkv.colwise().sum();
    const Mat dln1 = unmodulate(dqkv * view(b.qkv_w).transpose(), bt.ln1, bt.mod.segment(d, d),
                                dmod.segment(0, d), dmod.segment(d, d));
    dx = dmid + layer_norm_backward(dln1, bt.xhat1, bt.rstd1, view(b.ln1_g),
                                    grad_view(grad, b.ln1_g), grad_view(grad, b.ln1_b));

    grad_view(grad, b.mod_w).noalias() += tape.cact.transpose() * dmod;
    grad_view(grad, b.mod_b) += dmod;
    dcact.noalias() += dmod * view(b.mod_w).transpose();
  }

  Row dc = dcact;
  for (Eigen::Index k = 0; k < dc.size(); ++k) {
    const Scalar u = tape.cvec(k), s = sigmoid(u);
    dc(k) *= s * (Scalar(1) + u * (Scalar(1) - s));
  }

  // time embedding receives the sum over all tokens
  const Row dtemb = dx.colwise().sum() + dgain * view(skip_w_).transpose() + dc;
  grad_view(grad, time_w2_).noalias() += tape.time_act.transpose() * dtemb;
  grad_view(grad, time_b2_) += dtemb;
  Row dpre_t = dtemb * view(time_w2_).transpose();
  for (Eigen::Index k = 0; k < dpre_t.size(); ++k) {
    const Scalar u = tape.time_pre(k), s = sigmoid(u);
    dpre_t(k) *= s * (Scalar(1) + u * (Scalar(1) - s));
  }
  grad_view(grad, time_w1_).noalias() += tape.time_sin.transpose() * dpre_t;
  grad_view(grad, time_b1_) += dpre_t;

  grad_view(grad, layout_emb_).row(tape.cond_ids[0]) += dx.row(n);
  for (Eigen::Index k = 1; k < nc; ++k) {
    grad_view(grad, label_emb_).row(tape.cond_ids[std::size_t(k)]) += dx.row(n + k) + dc;
  }

  const auto de = dx.topRows(n);
  grad_view(grad, patch_w_).noalias() += tape.patches.transpose() * de;
  grad_view(grad, patch_b_) += de.colwise().sum();
  Mat dpatch = de * view(patch_w_).transpose();
  dpatch += dy * tape.skip_gain.asDiagonal();
  return unpatchify(dpatch, tape.layout);
}

template <typename Scalar>
GridTensor<Scalar> Model<Scalar>::predict(const GridTensor<Scalar>& x_t, Scalar t,
                                          const Condition& cond) const {
  Tape tape;
  return forward(x_t, t, cond, tape);
}

template <typename Scalar>
AttentionRecord Model<Scalar>::attention(const GridTensor<Scalar>& x_t, Scalar t,
                                         const Condition& cond) const {
  Tape tape;
  forward(x_t, t, cond, tape);
  AttentionRecord rec;
  rec.layers = config_.depth;
  rec.heads = config_.heads;
  rec.image_tokens = tape.image_tokens;
  rec.cond_tokens = tape.cond_tokens;
  rec.token_cell = token_cells(x_t.layout(), config_.patch_size);
  for (const auto& bt : tape.blocks) {
    for (const auto& a : bt.probs) rec.maps.push_back(a.template cast<double>());
  }
  return rec;
}

template <typename Scalar>
Model<Scalar> init_model(const ModelConfig& config, std::uint64_t seed) {
  Model<Scalar> model(config);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  auto& params = model.parameters();
  for (const auto& slot : model.slots()) {
    const auto& name = slot.name;
    const auto ends_with = [&](std::string_view suffix) {
      return name.size() >= suffix.size() &&
             name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0;
    };
    double stddev = 0.0;
    double constant = 0.0;
    if (ends_with("_g")) {
      constant = 1.0;
    } else if (name == "label_emb") {
      stddev = 0.5;
    } else if (name == "head_w" || ends_with("mod_w")) {
      stddev = 0.1 / std::sqrt(double(slot.rows));
    } else if (ends_with("_w") || ends_with("_w1") || ends_with("_w2")) {
      stddev = 1.0 / std::sqrt(double(slot.rows));
    }
    for (Eigen::Index i = 0; i < slot.rows * slot.cols; ++i) {
      params(slot.offset + i) = Scalar(stddev > 0.0 ? stddev * normal(rng) : constant);
    }
  }
  return model;
}

template class Model<float>;
template class Model<double>;
template Model<float> init_model<float>(const ModelConfig&, std::uint64_t);
template Model<double> init_model<double>(const ModelConfig&, std::uint64_t);

}  // namespace gridflow
