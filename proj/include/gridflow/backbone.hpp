// Copyright (c) 2026, gridflow authors
// SPDX-License-Identifier: Apache-2.0
//
// Small conditional patch-token transformer used as the velocity network.
//
// Image patches of the whole packed grid and a handful of condition tokens
// ([layout, content...]) share one joint self-attention in every block, so
// any image token can attend to any other cell and to the condition. Time
// enters as a sinusoidal embedding passed through a two-layer MLP and added
// to every token. The time embedding plus the content-label embeddings also
// drive per-block shift/scale/gate modulation. Positions are fixed 2D
// sinusoids of both the packed-image coordinate and the coordinate inside the
// frame, which extend to grids larger than those seen in training.
//
// All parameters live in one flat vector; gradients use the same layout.
// Forward and backward passes are written out by hand.

#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <string>
#include <vector>

#include "gridflow/condition.hpp"
#include "gridflow/grid.hpp"

namespace gridflow {

struct ModelConfig {
  int patch_size = 4;
  int embed_dim = 128;
  int depth = 4;
  int heads = 4;
  int cond_vocab = kLabelCount;
  int time_embed_dim = 64;
  int mlp_ratio = 4;
  // Frame geometry the model operates on; the grid shape may vary.
  int frame_h = 16;
  int frame_w = 16;
  int channels = 1;

  int patch_dim() const noexcept { return patch_size * patch_size * channels; }
  int head_dim() const noexcept { return embed_dim / heads; }

  /// Throws InvalidConfig with the first violated constraint.
  void validate() const;

  bool operator==(const ModelConfig&) const = default;
};

/// Closed form parameter count for a config.
Eigen::Index parameter_count(const ModelConfig& config);

/// Attention weights for every layer and head over [image tokens; condition
/// tokens], with the grid cell of every image token.
struct AttentionRecord {
  int layers = 0;
  int heads = 0;
  int image_tokens = 0;
  int cond_tokens = 0;
  std::vector<int> token_cell;
  // maps[layer * heads + head], each (image_tokens + cond_tokens)^2, rows sum to 1
  std::vector<Eigen::MatrixXd> maps;

  const Eigen::MatrixXd& map(int layer, int head) const {
    return maps[std::size_t(layer * heads + head)];
  }
};

/// Anything that produces a velocity grid for (x_t, t, condition).
template <typename Scalar>
class VelocityField {
 public:
  virtual ~VelocityField() = default;
  virtual GridTensor<Scalar> velocity(const GridTensor<Scalar>& x_t, Scalar t,
                                      const Condition& cond) const = 0;
  /// Whether a null condition is meaningful for guidance.
  virtual bool has_null_condition() const { return true; }
  /// Throws GeometryMismatch when the field cannot run on `layout`.
  virtual void check_layout(const LayoutSpec& /*layout*/) const {}
};

struct ParamSlot {
  std::string name;
  Eigen::Index rows = 0;
  Eigen::Index cols = 0;
  Eigen::Index offset = 0;
};

template <typename Scalar>
class Model final : public VelocityField<Scalar> {
 public:
  using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

  /// Forward activations needed by backward().
  struct Tape {
    struct Block {
      Mat x_in, xhat1, ln1, h1, qkv, att, att_out, x_mid, xhat2, ln2, h2, pre_act, act, mlp_out;
      Vec rstd1, rstd2;
      Eigen::Matrix<Scalar, 1, Eigen::Dynamic> mod;  // shift1, scale1, gate1, shift2, scale2, gate2
      std::vector<Mat> probs;  // per head
    };
    LayoutSpec layout;
    int image_tokens = 0;
    int cond_tokens = 0;
    Mat patches;
    std::vector<int> cond_ids;  // layout token, then label ids
    Eigen::Matrix<Scalar, 1, Eigen::Dynamic> time_sin, time_pre, time_act, temb, skip_gain;
    Eigen::Matrix<Scalar, 1, Eigen::Dynamic> cvec, cact, final_mod;
    std::vector<Block> blocks;
    Mat final_xhat, final_ln, final_h;
    Vec final_rstd;
  };

  /// All-zero parameters; see init_model for a usable model.
  explicit Model(const ModelConfig& config);

  const ModelConfig& config() const noexcept { return config_; }
  const std::vector<ParamSlot>& slots() const noexcept { return slots_; }
  Eigen::Index parameter_count() const noexcept { return params_.size(); }
  const Vec& parameters() const noexcept { return params_; }
  Vec& parameters() noexcept { return params_; }

  GridTensor<Scalar> predict(const GridTensor<Scalar>& x_t, Scalar t, const Condition& cond) const;

  GridTensor<Scalar> velocity(const GridTensor<Scalar>& x_t, Scalar t,
                              const Condition& cond) const override {
    return predict(x_t, t, cond);
  }

  void check_layout(const LayoutSpec& layout) const override {
    if (layout.frame_h != config_.frame_h || layout.frame_w != config_.frame_w ||
        layout.channels != config_.channels) {
      throw Error(Errc::GeometryMismatch,
                  "grid " + layout.to_string() + " does not match model frames " +
                      std::to_string(config_.frame_h) + "x" + std::to_string(config_.frame_w) +
                      "x" + std::to_string(config_.channels));
    }
    layout_token_for(layout);
  }

  GridTensor<Scalar> forward(const GridTensor<Scalar>& x_t, Scalar t, const Condition& cond,
                             Tape& tape) const;

  /// Accumulates parameter gradients into grad and returns d(loss)/d(x_t).
  GridTensor<Scalar> backward(const Tape& tape, const GridTensor<Scalar>& d_out, Vec& grad) const;

  AttentionRecord attention(const GridTensor<Scalar>& x_t, Scalar t, const Condition& cond) const;

  template <typename Other>
  Model<Other> cast() const {
    Model<Other> out(config_);
    out.parameters() = params_.template cast<Other>();
    return out;
  }

  /// Throws ShapeMismatch / TOutOfRange / GeometryMismatch for bad inputs.
  void check_inputs(const GridTensor<Scalar>& x_t, Scalar t, const Condition& cond) const;

 private:
  struct BlockSlots {
    int ln1_g, ln1_b, qkv_w, qkv_b, out_w, out_b, ln2_g, ln2_b, fc1_w, fc1_b, fc2_w, fc2_b, mod_w,
        mod_b;
  };

  int add_slot(const std::string& name, Eigen::Index rows, Eigen::Index cols);
  Eigen::Map<const Mat> view(int slot) const;
  Eigen::Map<Mat> grad_view(Vec& grad, int slot) const;

  Mat patchify(const GridTensor<Scalar>& x) const;
  GridTensor<Scalar> unpatchify(const Mat& tokens, const LayoutSpec& layout) const;
  Mat positions(const LayoutSpec& layout) const;

  ModelConfig config_;
  std::vector<ParamSlot> slots_;
  Vec params_;
  int patch_w_, patch_b_, time_w1_, time_b1_, time_w2_, time_b2_, layout_emb_, label_emb_;
  int final_g_, final_b_, final_mod_w_, final_mod_b_, head_w_, head_b_, skip_w_, skip_b_;
  std::vector<BlockSlots> blocks_;

  template <typename>
  friend class Model;
};

using Modelf = Model<float>;

/// Deterministic initialisation for a fixed seed.
template <typename Scalar>
Model<Scalar> init_model(const ModelConfig& config, std::uint64_t seed);

template <typename Scalar>
GridTensor<Scalar> predict_velocity(const Model<Scalar>& model, const GridTensor<Scalar>& x_t,
                                    Scalar t, const Condition& cond) {
  return model.predict(x_t, t, cond);
}

template <typename Scalar>
AttentionRecord attention_maps(const Model<Scalar>& model, const GridTensor<Scalar>& x_t,
                               Scalar t, const Condition& cond) {
  return model.attention(x_t, t, cond);
}

/// Image-token -> linear grid cell for a layout and patch size.
std::vector<int> token_cells(const LayoutSpec& layout, int patch_size);

extern template class Model<float>;
extern template class Model<double>;

}  // namespace gridflow
