// Copyright (c) 2026, gridflow authors
// SPDX-License-Identifier: Apache-2.0

#include "gridflow/trainer.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

namespace gridflow {

namespace fs = std::filesystem;

namespace {

float uniform01(std::mt19937_64& rng) { return float(rng() >> 40) * 0x1.0p-24f; }

void fill_normal(Framef& m, std::mt19937_64& rng) {
  std::normal_distribution<float> normal(0.0f, 1.0f);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = normal(rng);
}

std::string rng_to_string(const std::mt19937_64& rng) {
  std::ostringstream ss;
  ss << rng;
  return ss.str();
}

constexpr double kRunningDecay = 0.98;

}  // namespace

void TrainConfig::validate() const {
  auto fail = [](const std::string& m) { throw Error(Errc::InvalidConfig, m); };
  layout.validate();
  model.validate();
  alpha_schedule.validate();
  phase_plan.validate();
  if (batch_size < 1) fail("batch_size must be >= 1");
  if (total_steps != phase_plan.total_steps()) {
    fail("total_steps " + std::to_string(total_steps) + " != coarse_steps + fine_steps " +
         std::to_string(phase_plan.total_steps()));
  }
  if (!(cond_dropout_prob >= 0.0 && cond_dropout_prob < 1.0)) {
    fail("cond_dropout_prob must lie in [0,1)");
  }
  if (!(reference_prob >= 0.0 && reference_prob <= 1.0)) fail("reference_prob must lie in [0,1]");
  if (!(learning_rate > 0.0)) fail("learning_rate must be positive");
  if (!(coarse_intensity_jitter >= 0.0 && coarse_intensity_jitter < 1.0)) {
    fail("coarse_intensity_jitter must lie in [0,1)");
  }
  if (checkpoint_every < 0) fail("checkpoint_every must be >= 0");
  if (!layout.same_frame_geometry(LayoutSpec{1, 1, model.frame_h, model.frame_w, model.channels})) {
    fail("layout frames " + layout.to_string() + " differ from model frame geometry");
  }
  layout_token_for(layout);
}

TrainConfig TrainConfig::from_keyvalue(const io::KeyValueFile& kv) {
  TrainConfig c;
  c.seed = std::uint64_t(kv.get_int("seed", 0));
  c.batch_size = int(kv.get_int("batch_size", c.batch_size));
  c.learning_rate = kv.get_double("learning_rate", c.learning_rate);
  c.beta1 = kv.get_double("beta1", c.beta1);
  c.beta2 = kv.get_double("beta2", c.beta2);
  c.adam_eps = kv.get_double("adam_eps", c.adam_eps);
  c.weight_decay = kv.get_double("weight_decay", c.weight_decay);
  c.grad_clip = kv.get_double("grad_clip", c.grad_clip);
  c.phase_plan.coarse_steps = kv.get_int("coarse_steps", 0);
  c.phase_plan.fine_steps = kv.get_int("fine_steps", 0);
  c.phase_plan.coarse_dataset_id = kv.get("coarse_dataset", c.phase_plan.coarse_dataset_id);
  c.phase_plan.fine_dataset_id = kv.get("fine_dataset", c.phase_plan.fine_dataset_id);
  c.phase_plan.fine_label_detail = kv.get_bool("fine_label_detail", true);
  c.total_steps = kv.get_int("total_steps", c.phase_plan.total_steps());
  const auto ramp = c.phase_plan.default_alpha_schedule(kv.get_double("alpha_max", 0.5));
  c.alpha_schedule = ramp;
  c.alpha_schedule.ramp_start_step = kv.get_int("ramp_start", ramp.ramp_start_step);
  c.alpha_schedule.ramp_end_step = kv.get_int("ramp_end", ramp.ramp_end_step);
  c.cond_dropout_prob = kv.get_double("cond_dropout_prob", c.cond_dropout_prob);
  c.coarse_intensity_jitter = kv.get_double("coarse_intensity_jitter", c.coarse_intensity_jitter);
  c.reference_prob = kv.get_double("reference_prob", c.reference_prob);
  c.checkpoint_every = kv.get_int("checkpoint_every", 0);
  const auto [rows, cols] = io::parse_grid_shape(kv.get("layout", "2x2"));
  c.layout = LayoutSpec{rows, cols, int(kv.get_int("frame_h", 16)), int(kv.get_int("frame_w", 16)),
                        int(kv.get_int("channels", 1))};
  c.model.frame_h = c.layout.frame_h;
  c.model.frame_w = c.layout.frame_w;
  c.model.channels = c.layout.channels;
  c.model.patch_size = int(kv.get_int("patch_size", c.model.patch_size));
  c.model.embed_dim = int(kv.get_int("embed_dim", c.model.embed_dim));
  c.model.depth = int(kv.get_int("depth", c.model.depth));
  c.model.heads = int(kv.get_int("heads", c.model.heads));
  c.model.time_embed_dim = int(kv.get_int("time_embed_dim", c.model.time_embed_dim));
  c.model.mlp_ratio = int(kv.get_int("mlp_ratio", c.model.mlp_ratio));
  return c;
}

io::KeyValueFile TrainConfig::to_keyvalue() const {
  io::KeyValueFile kv;
  auto num = [](double v) {
    std::ostringstream ss;
    ss.precision(17);
    ss << v;
    return ss.str();
  };
  kv.set("seed", std::to_string(seed));
  kv.set("batch_size", std::to_string(batch_size));
  kv.set("total_steps", std::to_string(total_steps));
  kv.set("learning_rate", num(learning_rate));
  kv.set("beta1", num(beta1));
  kv.set("beta2", num(beta2));
  kv.set("adam_eps", num(adam_eps));
  kv.set("weight_decay", num(weight_decay));
  kv.set("grad_clip", num(grad_clip));
  kv.set("alpha_max", num(alpha_schedule.alpha_max));
  kv.set("ramp_start", std::to_string(alpha_schedule.ramp_start_step));
  kv.set("ramp_end", std::to_string(alpha_schedule.ramp_end_step));
  kv.set("coarse_steps", std::to_string(phase_plan.coarse_steps));
  kv.set("fine_steps", std::to_string(phase_plan.fine_steps));
  kv.set("coarse_dataset", phase_plan.coarse_dataset_id);
  kv.set("fine_dataset", phase_plan.fine_dataset_id);
  kv.set("fine_label_detail", phase_plan.fine_label_detail ? "true" : "false");
  kv.set("cond_dropout_prob", num(cond_dropout_prob));
  kv.set("coarse_intensity_jitter", num(coarse_intensity_jitter));
  kv.set("reference_prob", num(reference_prob));
  kv.set("checkpoint_every", std::to_string(checkpoint_every));
  kv.set("layout", std::to_string(layout.rows) + "x" + std::to_string(layout.cols));
  kv.set("frame_h", std::to_string(layout.frame_h));
  kv.set("frame_w", std::to_string(layout.frame_w));
  kv.set("channels", std::to_string(layout.channels));
  kv.set("patch_size", std::to_string(model.patch_size));
  kv.set("embed_dim", std::to_string(model.embed_dim));
  kv.set("depth", std::to_string(model.depth));
  kv.set("heads", std::to_string(model.heads));
  kv.set("time_embed_dim", std::to_string(model.time_embed_dim));
  kv.set("mlp_ratio", std::to_string(model.mlp_ratio));
  return kv;
}

Checkpoint TrainState::to_checkpoint(const LayoutSpec& train_layout) const {
  Checkpoint ckpt;
  ckpt.config = model.config();
  ckpt.train_layout = train_layout;
  ckpt.params = model.parameters();
  ckpt.adam_m = adam_m;
  ckpt.adam_v = adam_v;
  ckpt.step = step;
  ckpt.rng_state = rng_to_string(rng);
  ckpt.running = running;
  return ckpt;
}

TrainState TrainState::from_checkpoint(const Checkpoint& ckpt) {
  TrainState s{ckpt.model(), ckpt.adam_m, ckpt.adam_v, ckpt.step, std::mt19937_64{}, ckpt.running};
  const auto n = s.model.parameter_count();
  if (s.adam_m.size() != n || s.adam_v.size() != n) {
    throw Error(Errc::CheckpointIOError, "checkpoint has no optimizer state to resume from");
  }
  std::istringstream ss(ckpt.rng_state);
  ss >> s.rng;
  if (!ss) throw Error(Errc::CheckpointIOError, "checkpoint RNG state is unreadable");
  return s;
}

TrainState init_train_state(const TrainConfig& config) {
  config.validate();
  Modelf model = init_model<float>(config.model, config.seed);
  const auto n = model.parameter_count();
  return TrainState{std::move(model), Eigen::VectorXf::Zero(n), Eigen::VectorXf::Zero(n), 0,
                    std::mt19937_64(config.seed ^ 0x5DEECE66DULL), LossBreakdown{}};
}

LossBreakdown train_step(TrainState& state, const TrainConfig& config,
                         std::span<const TrainExample> batch) {
  if (batch.empty()) throw Error(Errc::InvalidConfig, "empty batch");
  for (const auto& ex : batch) {
    if (!(ex.grid.layout() == config.layout)) {
      throw Error(Errc::ShapeMismatch, "batch grid " + ex.grid.layout().to_string() +
                                           " does not match configured layout " +
                                           config.layout.to_string());
    }
  }
  const double alpha = alpha_at(state.step, config.alpha_schedule);
  const bool temporal = config.layout.frames() >= 2;
  const float inv_batch = 1.0f / float(batch.size());

  Eigen::VectorXf grad = Eigen::VectorXf::Zero(state.model.parameter_count());
  Modelf::Tape tape;
  double base_sum = 0.0, flow_sum = 0.0;
  GridTensorf noise(config.layout);
  for (const auto& ex : batch) {
    const float t = ex.t ? *ex.t : uniform01(state.rng);
    if (ex.noise) {
      require_same_shape(ex.grid, *ex.noise, "train_step noise");
      noise = *ex.noise;
    } else {
      fill_normal(noise.data(), state.rng);
    }
    const bool drop = double(uniform01(state.rng)) < config.cond_dropout_prob;
    const Condition cond = drop ? ex.cond.as_null() : ex.cond;
    MaskGrid mask = ex.mask ? *ex.mask : MaskGrid::ones(config.layout);
    if (!ex.mask && temporal && config.reference_prob > 0.0 &&
        double(uniform01(state.rng)) < config.reference_prob) {
      for (int i = 0; i < config.layout.rows; ++i) mask.set(i, 0, 0);
    }
    if (!mask.matches(config.layout)) throw Error(Errc::ShapeMismatch, "train_step mask");

    GridTensorf x_t = forward_interpolate(ex.grid, t, noise);
    const GridTensorf target = velocity_target(ex.grid, noise);
    apply_mask_inplace(x_t, ex.grid, mask, 0.0f, MaskMode::PaperLiteral);
    GridTensorf pred = state.model.forward(x_t, t, cond, tape);
    apply_mask_inplace(pred, target, mask, 0.0f, MaskMode::PaperLiteral);

    base_sum += base_loss(pred, target);
    GridTensorf d_out = base_loss_grad(pred, target);
    if (temporal) {
      flow_sum += flow_loss(pred, target);
      if (alpha > 0.0) d_out.data() += float(alpha) * flow_loss_grad(pred, target).data();
    }
    for (int k = 0; k < config.layout.frames(); ++k) {
      if (mask.is_reference(k)) d_out.cell(k).setZero();
    }
    d_out.data() *= inv_batch;
    state.model.backward(tape, d_out, grad);
  }

  const LossBreakdown loss =
      total_loss(base_sum / double(batch.size()), flow_sum / double(batch.size()), alpha);
  if (!std::isfinite(loss.total) || !grad.allFinite()) {
    throw Error(Errc::NonFiniteLoss, "step " + std::to_string(state.step) +
                                         ": base=" + std::to_string(loss.base) +
                                         " flow=" + std::to_string(loss.flow) +
                                         " alpha=" + std::to_string(alpha) +
                                         " grad_finite=" + (grad.allFinite() ? "yes" : "no"));
  }

  if (config.grad_clip > 0.0) {
    const double norm = grad.cast<double>().norm();
    if (norm > config.grad_clip) grad *= float(config.grad_clip / norm);
  }

  // AdamW
  const double s = double(state.step + 1);
  const float b1 = float(config.beta1), b2 = float(config.beta2);
  const float c1 = float(1.0 - std::pow(config.beta1, s));
  const float c2 = float(1.0 - std::pow(config.beta2, s));
  const float lr = float(config.learning_rate), wd = float(config.weight_decay),
              eps = float(config.adam_eps);
  state.adam_m = b1 * state.adam_m + (1.0f - b1) * grad;
  state.adam_v = b2 * state.adam_v + (1.0f - b2) * grad.cwiseAbs2();
  auto& p = state.model.parameters();
  p.array() -= lr * ((state.adam_m.array() / c1) / ((state.adam_v.array() / c2).sqrt() + eps) +
                     wd * p.array());

  if (state.step == 0) {
    state.running = loss;
  } else {
    state.running.base = kRunningDecay * state.running.base + (1 - kRunningDecay) * loss.base;
    state.running.flow = kRunningDecay * state.running.flow + (1 - kRunningDecay) * loss.flow;
    state.running.total = kRunningDecay * state.running.total + (1 - kRunningDecay) * loss.total;
    state.running.alpha = alpha;
  }
  ++state.step;
  return loss;
}

std::vector<TrainExample> next_batch(TrainState& state, const TrainConfig& config,
                                     const DatasetMap& datasets) {
  const PhaseDescriptor phase = phase_at(state.step, config.phase_plan);
  const auto it = datasets.find(phase.dataset_id);
  if (it == datasets.end() || it->second == nullptr || it->second->items.empty()) {
    throw Error(Errc::DatasetExhausted, "dataset '" + phase.dataset_id + "' has no sequences");
  }
  const Dataset& ds = *it->second;
  std::vector<TrainExample> batch;
  batch.reserve(std::size_t(config.batch_size));
  for (int b = 0; b < config.batch_size; ++b) {
    const auto& seq = ds.items[std::size_t(state.rng() % ds.items.size())];
    TrainExample ex{pack(seq.frames, config.layout), seq.condition(config.layout, phase.rich_labels),
                    std::nullopt, std::nullopt};
    if (phase.phase == Phase::Coarse && config.coarse_intensity_jitter > 0.0) {
      const float scale = 1.0f - float(config.coarse_intensity_jitter) * uniform01(state.rng);
      ex.grid.data() *= scale;
    }
    ex.grid = to_model_space(ex.grid);
    batch.push_back(std::move(ex));
  }
  return batch;
}

TrainResult train(const TrainConfig& config, const DatasetMap& datasets,
                  const TrainOptions& options) {
  config.validate();
  TrainState state = options.resume_from.empty()
                         ? init_train_state(config)
                         : TrainState::from_checkpoint(load_checkpoint(options.resume_from));
  if (!(state.model.config() == config.model)) {
    throw Error(Errc::InvalidConfig, "resume checkpoint was trained with a different model config");
  }

  TrainResult result;
  std::error_code ec;
  fs::create_directories(options.output_dir, ec);
  if (ec) throw Error(Errc::CheckpointIOError, "cannot create " + options.output_dir.string());
  result.metrics_csv = options.output_dir / "metrics.csv";
  const bool append = !options.resume_from.empty() && fs::exists(result.metrics_csv);
  std::ofstream csv(result.metrics_csv, append ? std::ios::app : std::ios::trunc);
  if (!csv) throw Error(Errc::CheckpointIOError, "cannot open " + result.metrics_csv.string());
  if (!append) csv << "step,base,flow,alpha,total\n";
  csv.precision(9);

  std::int64_t taken = 0;
  while (state.step < config.total_steps && (options.stop_after < 0 || taken < options.stop_after)) {
    const auto batch = next_batch(state, config, datasets);
    const std::int64_t step = state.step;
    const LossBreakdown loss = train_step(state, config, batch);
    const MetricRow row{step, loss};
    csv << step << ',' << loss.base << ',' << loss.flow << ',' << loss.alpha << ','
        << loss.total << '\n';
    result.metrics.push_back(row);
    if (options.on_step) options.on_step(row);
    ++taken;
    if (config.checkpoint_every > 0 && state.step % config.checkpoint_every == 0) {
      save_checkpoint(options.output_dir / ("ckpt_" + std::to_string(state.step) + ".gfck"),
                      state.to_checkpoint(config.layout));
    }
  }
  csv.flush();
  if (!csv) throw Error(Errc::CheckpointIOError, "failed writing " + result.metrics_csv.string());

  result.final_checkpoint = options.output_dir / "final.gfck";
  save_checkpoint(result.final_checkpoint, state.to_checkpoint(config.layout));
  return result;
}

}  // namespace gridflow
