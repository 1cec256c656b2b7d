// Copyright (c) 2026, gridflow authors
// SPDX-License-Identifier: Apache-2.0
//
// gridflow: data generation, training, omni sampling, evaluation and the
// attention probe. Every command leaves a manifest.json that `replay` can
// re-run.

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cstdio>
#include <iostream>
#include <sstream>

#include "gridflow/checkpoint.hpp"
#include "gridflow/data_synth.hpp"
#include "gridflow/io.hpp"
#include "gridflow/metrics.hpp"
#include "gridflow/sampler.hpp"
#include "gridflow/trainer.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using namespace gridflow;

namespace {

constexpr const char* kVersion = "0.1.0";

enum Exit { kOk = 0, kConfig = 2, kData = 3, kNumerical = 4 };

int exit_code(Errc code) {
  switch (code) {
    case Errc::NonFiniteLoss:
    case Errc::NonFiniteState:
      return kNumerical;
    case Errc::FrameCountMismatch:
    case Errc::FrameShapeMismatch:
    case Errc::ShapeMismatch:
    case Errc::DatasetExhausted:
    case Errc::CheckpointIOError:
    case Errc::MissingReference:
    case Errc::CountMismatch:
    case Errc::SizeMismatch:
    case Errc::UnreadableImage:
    case Errc::UnnormalizedRecord:
    case Errc::IOError:
    case Errc::GeometryMismatch:
      return kData;
    default:
      return kConfig;
  }
}

struct Manifest {
  std::string command;
  std::vector<std::string> argv;
  json config = json::object();
  std::uint64_t seed = 0;
  std::vector<std::string> inputs;
  std::vector<std::string> outputs;

  void write(const fs::path& path, double seconds) const {
    json j;
    j["command"] = command;
    j["argv"] = argv;
    j["config"] = config;
    j["seed"] = seed;
    j["inputs"] = inputs;
    j["outputs"] = outputs;
    j["tool_version"] = kVersion;
    j["duration_s"] = seconds;
    io::atomic_write(path, j.dump(2) + "\n");
  }
};

std::vector<Label> parse_labels(const std::string& text) {
  std::vector<Label> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    const auto label = parse_label(item);
    if (!label) throw Error(Errc::ConfigError, "unknown label '" + item + "'");
    out.push_back(*label);
  }
  return out;
}

json condition_json(const Condition& c) {
  json labels = json::array();
  for (int id : c.content_labels) labels.push_back(label_name(static_cast<Label>(id)));
  return {{"layout_token", c.layout_token}, {"content_labels", labels}, {"null", c.null_flag}};
}

void require_exists(const fs::path& p, const std::string& what) {
  if (!fs::exists(p)) throw Error(Errc::IOError, what + " not found: " + p.string());
}

// gen-data ------------------------------------------------------------------

struct GenDataArgs {
  std::string spec;
  std::string out;
};

int cmd_gen_data(const GenDataArgs& a, Manifest& m) {
  const auto kv = io::KeyValueFile::load(a.spec);
  SequenceSpec spec;
  spec.kind = parse_motion(kv.get("kind", "translate"));
  spec.frames = int(kv.get_int("frames", spec.frames));
  spec.frame_h = int(kv.get_int("frame_h", spec.frame_h));
  spec.frame_w = int(kv.get_int("frame_w", spec.frame_w));
  spec.channels = int(kv.get_int("channels", spec.channels));
  spec.shape = parse_shape(kv.get("shape", "circle"));
  spec.size = kv.get_double("size", spec.size);
  spec.velocity_x = kv.get_double("velocity_x", spec.velocity_x);
  spec.velocity_y = kv.get_double("velocity_y", spec.velocity_y);
  spec.angular_step_deg = kv.get_double("angular_step_deg", spec.angular_step_deg);
  spec.ring_radius = kv.get_double("ring_radius", spec.ring_radius);
  spec.start_x = kv.get_double("start_x", spec.start_x);
  spec.start_y = kv.get_double("start_y", spec.start_y);
  spec.seed = std::uint64_t(kv.get_int("seed", 0));
  const long long count = kv.get_int("count", 0);

  // Everything is validated before the first write.
  spec.validate();
  if (kv.has("layout")) {
    const auto [rows, cols] = io::parse_grid_shape(kv.get("layout"));
    if (rows * cols != spec.frames) {
      throw Error(Errc::InvalidSpec, "frames=" + std::to_string(spec.frames) + " does not fill layout " +
                                         kv.get("layout") + " (" + std::to_string(rows * cols) +
                                         " cells)");
    }
  }
  if (count < 0) throw Error(Errc::InvalidSpec, "count must be >= 0");

  m.seed = spec.seed;
  m.config = json::object();
  for (const auto& [k, v] : kv.values()) m.config[k] = v;
  m.inputs = {a.spec};

  const fs::path out(a.out);
  if (count == 0) {
    write_sequence_folder(out, gen_sequence(spec), spec.channels);
  } else {
    const LayoutSpec layout{1, spec.frames, spec.frame_h, spec.frame_w, spec.channels};
    const Dataset ds = make_dataset(spec.kind, int(count), layout, spec.seed);
    for (std::size_t i = 0; i < ds.items.size(); ++i) {
      char name[32];
      std::snprintf(name, sizeof(name), "seq_%05zu", i);
      write_sequence_folder(out / name, ds.items[i], spec.channels);
    }
  }
  m.outputs = {out.string()};
  return kOk;
}

// train -----------------------------------------------------------------------

struct TrainArgs {
  std::string config;
  std::string out;
  std::string resume;
  long long stop_after = -1;
  bool quiet = false;
};

int cmd_train(const TrainArgs& a, Manifest& m) {
  const auto kv = io::KeyValueFile::load(a.config);
  TrainConfig cfg = TrainConfig::from_keyvalue(kv);
  cfg.validate();
  const std::string coarse_path = kv.get("coarse_data", "");
  const std::string fine_path = kv.get("fine_data", coarse_path);
  if (coarse_path.empty() && fine_path.empty()) {
    throw Error(Errc::ConfigError, a.config + ": set coarse_data and/or fine_data");
  }

  std::map<std::string, Dataset> storage;
  DatasetMap datasets;
  auto load = [&](const std::string& id, const std::string& path) {
    if (path.empty() || storage.count(id)) return;
    if (!fs::exists(path)) {
      throw Error(Errc::DatasetExhausted, "dataset '" + id + "' path does not exist: " + path);
    }
    storage[id] = load_dataset(path, cfg.layout);
    datasets[id] = &storage[id];
  };
  if (cfg.phase_plan.coarse_steps > 0) load(cfg.phase_plan.coarse_dataset_id, coarse_path);
  if (cfg.phase_plan.fine_steps > 0) load(cfg.phase_plan.fine_dataset_id, fine_path);

  m.seed = cfg.seed;
  const auto cfg_kv = cfg.to_keyvalue();
  for (const auto& [k, v] : cfg_kv.values()) m.config[k] = v;
  m.config["coarse_data"] = coarse_path;
  m.config["fine_data"] = fine_path;
  m.inputs = {a.config};
  if (!a.resume.empty()) m.inputs.push_back(a.resume);

  TrainOptions opts;
  opts.output_dir = a.out;
  opts.resume_from = a.resume;
  opts.stop_after = a.stop_after;
  if (!a.quiet) {
    const std::int64_t every = std::max<std::int64_t>(1, cfg.total_steps / 20);
    opts.on_step = [every](const MetricRow& r) {
      if (r.step % every == 0) {
        std::printf("step %lld base %.5f flow %.5f alpha %.3f total %.5f\n",
                    static_cast<long long>(r.step), r.loss.base, r.loss.flow, r.loss.alpha,
                    r.loss.total);
        std::fflush(stdout);
      }
    };
  }
  const TrainResult result = train(cfg, datasets, opts);
  m.outputs = {result.final_checkpoint.string(), result.metrics_csv.string()};
  std::printf("checkpoint %s\n", result.final_checkpoint.c_str());
  return kOk;
}

// sample ----------------------------------------------------------------------

struct SampleArgs {
  std::string ckpt;
  bool free = false;
  std::string expand;
  std::vector<std::string> interp;
  std::string layout;
  std::string labels;
  double T = -1.0;
  int steps = 20;
  double guidance = 3.5;
  std::uint64_t seed = 0;
  std::string mask_mode = "paper_literal";
  bool allow_degenerate = false;
  std::string out;
};

int cmd_sample(const SampleArgs& a, Manifest& m) {
  const int modes = int(a.free) + int(!a.expand.empty()) + int(!a.interp.empty());
  if (modes != 1) {
    throw Error(Errc::ConfigError, "choose exactly one of --free, --expand REF, --interp KEYS");
  }
  require_exists(a.ckpt, "checkpoint");
  const Checkpoint ckpt = load_checkpoint(a.ckpt);
  const Modelf model = ckpt.model();

  LayoutSpec layout = ckpt.train_layout;
  if (!a.layout.empty()) {
    const auto [rows, cols] = io::parse_grid_shape(a.layout);
    layout = layout.with_grid(rows, cols);
  }
  model.check_layout(layout);

  SamplerConfig sc;
  sc.noise_level = a.T >= 0.0 ? a.T : (a.free ? 1.0 : 0.9);
  sc.steps = a.steps;
  sc.guidance_scale = a.guidance;
  sc.mask_mode = parse_mask_mode(a.mask_mode);
  sc.seed = a.seed;
  sc.allow_degenerate = a.allow_degenerate;
  if (sc.noise_level == 0.0 && !sc.allow_degenerate) {
    throw Error(Errc::TOutOfRange,
                "--T 0 returns the initialisation unchanged (a duplicate of the references); "
                "pass --allow-degenerate to run it as a diagnostic");
  }
  sc.validate();

  std::vector<Framef> refs;
  InitMode mode = InitMode::Free;
  if (!a.expand.empty()) {
    mode = InitMode::Expansion;
    require_exists(a.expand, "reference frame");
    refs.push_back(io::read_png(a.expand, layout.channels));
    m.inputs.push_back(a.expand);
  } else if (!a.interp.empty()) {
    mode = InitMode::Interpolation;
    for (const auto& k : a.interp) {
      require_exists(k, "key frame");
      refs.push_back(io::read_png(k, layout.channels));
      m.inputs.push_back(k);
    }
  }
  for (const auto& f : refs) {
    if (f.rows() != layout.frame_h || f.cols() != layout.row_width()) {
      throw Error(Errc::GeometryMismatch, "reference frames must be " + std::to_string(layout.frame_w) +
                                              "x" + std::to_string(layout.frame_h) +
                                              " to match the checkpoint");
    }
  }
  for (auto& f : refs) f = to_model_space(f);
  const InitResult<float> init = init_grid<float>(mode, refs, layout, sc.seed);
  const std::vector<Label> labels = parse_labels(a.labels);
  const Condition cond =
      a.labels.empty() ? Condition::make(layout, {}).as_null() : Condition::make(layout, labels);

  const GridTensorf out =
      from_model_space(sample<float>(model, init.grid, init.mask, init.grid, cond, sc));

  const fs::path dir(a.out);
  fs::create_directories(dir);
  const auto frames = unpack(out);
  io::write_png(dir / "grid.png", out.data(), layout.channels);
  for (std::size_t k = 0; k < frames.size(); ++k) {
    char name[32];
    std::snprintf(name, sizeof(name), "frame_%03zu.png", k);
    io::write_png(dir / name, frames[k], layout.channels);
  }
  io::write_gif(dir / "sequence.gif", frames, layout.channels);
  io::write_grid_bin(dir / "grid.bin", out);

  json mask = json::array();
  for (int i = 0; i < layout.rows; ++i) {
    json row = json::array();
    for (int j = 0; j < layout.cols; ++j) row.push_back(int(init.mask.at(i, j)));
    mask.push_back(row);
  }
  json side;
  side["checkpoint"] = a.ckpt;
  side["mode"] = mode == InitMode::Free ? "free" : mode == InitMode::Expansion ? "expansion" : "interpolation";
  side["layout"] = std::to_string(layout.rows) + "x" + std::to_string(layout.cols);
  side["sampler"] = {{"T", sc.noise_level},
                     {"steps", sc.steps},
                     {"guidance_scale", sc.guidance_scale},
                     {"mask_mode", mask_mode_name(sc.mask_mode)},
                     {"allow_degenerate", sc.allow_degenerate}};
  side["seed"] = sc.seed;
  side["condition"] = condition_json(cond);
  side["mask"] = mask;
  side["reference_fidelity"] = reference_fidelity(out, init.grid, init.mask);
  io::atomic_write(dir / "sample.json", side.dump(2) + "\n");

  m.seed = sc.seed;
  m.config = side;
  m.inputs.insert(m.inputs.begin(), a.ckpt);
  m.outputs = {(dir / "grid.png").string(), (dir / "grid.bin").string(),
               (dir / "sequence.gif").string(), (dir / "sample.json").string()};
  std::printf("wrote %d frames to %s\n", layout.frames(), dir.c_str());
  return kOk;
}

// eval ------------------------------------------------------------------------

struct EvalArgs {
  std::string pred;
  std::string ref;
  int channels = 1;
  std::string out;
};

std::vector<Framef> load_frames(const fs::path& dir, int channels) {
  require_exists(dir, "frame folder");
  std::vector<Framef> frames;
  for (const auto& p : io::list_pngs(dir)) frames.push_back(io::read_png(p, channels));
  if (frames.empty()) throw Error(Errc::IOError, "no PNG frames in " + dir.string());
  return frames;
}

int cmd_eval(const EvalArgs& a, Manifest& m) {
  const auto pred = load_frames(a.pred, a.channels);
  const auto ref = load_frames(a.ref, a.channels);
  if (pred.size() != ref.size()) {
    throw Error(Errc::ShapeMismatch, "prediction has " + std::to_string(pred.size()) +
                                         " frames, reference " + std::to_string(ref.size()));
  }
  MetricReport report;
  report.psnr = psnr(pred, ref);
  report.ssim = ssim(pred, ref, a.channels);
  if (pred.size() >= 2) {
    const LayoutSpec strip{1, int(pred.size()), int(pred[0].rows()),
                           int(pred[0].cols()) / a.channels, a.channels};
    report.temporal_consistency = temporal_consistency(pack(pred, strip));
  }
  const std::string text = report.to_json();
  if (a.out.empty()) {
    std::cout << text;
  } else {
    io::atomic_write(a.out, text);
    m.outputs = {a.out};
  }
  m.inputs = {a.pred, a.ref};
  m.config = {{"channels", a.channels}};
  return kOk;
}

// probe-attn --------------------------------------------------------------------

struct ProbeArgs {
  std::string ckpt;
  std::string input;
  std::string layout;
  std::string labels;
  double t = 0.5;
  std::string out;
};

int cmd_probe(const ProbeArgs& a, Manifest& m) {
  require_exists(a.ckpt, "checkpoint");
  require_exists(a.input, "probe input");
  const Checkpoint ckpt = load_checkpoint(a.ckpt);
  const Modelf model = ckpt.model();

  GridTensorf grid;
  if (fs::is_directory(a.input)) {
    LayoutSpec layout = ckpt.train_layout;
    if (!a.layout.empty()) {
      const auto [rows, cols] = io::parse_grid_shape(a.layout);
      layout = layout.with_grid(rows, cols);
    }
    grid = load_folder(a.input, layout).first;
  } else {
    grid = io::read_grid_bin(a.input);
  }
  model.check_layout(grid.layout());
  const Condition cond = a.labels.empty() ? Condition::make(grid.layout(), {}).as_null()
                                          : Condition::make(grid.layout(), parse_labels(a.labels));
  const AttentionReport report =
      attention_report(model.attention(to_model_space(grid), float(a.t), cond));

  json j;
  j["layout"] = std::to_string(grid.layout().rows) + "x" + std::to_string(grid.layout().cols);
  j["t"] = a.t;
  j["intra"] = report.mean.intra;
  j["cross"] = report.mean.cross;
  j["cond"] = report.mean.cond;
  json heads = json::array();
  const int h = model.config().heads;
  for (std::size_t i = 0; i < report.per_head.size(); ++i) {
    const auto& p = report.per_head[i];
    heads.push_back({{"layer", int(i) / h}, {"head", int(i) % h},
                     {"intra", p.intra}, {"cross", p.cross}, {"cond", p.cond}});
  }
  j["per_head"] = heads;
  const std::string text = j.dump(2) + "\n";
  if (a.out.empty()) {
    std::cout << text;
  } else {
    io::atomic_write(a.out, text);
    m.outputs = {a.out};
  }
  m.inputs = {a.ckpt, a.input};
  m.config = {{"t", a.t}, {"labels", a.labels}};
  return kOk;
}

fs::path manifest_path(const std::string& command, const std::string& out) {
  if (out.empty()) return {};
  if (command == "eval" || command == "probe-attn") return fs::path(out + ".manifest.json");
  return fs::path(out) / "manifest.json";
}

int run(int argc, char** argv, bool allow_replay);

int cmd_replay(const std::string& manifest, const std::string& out_override) {
  const json j = json::parse(io::read_text(manifest));
  std::vector<std::string> args{"gridflow"};
  for (const auto& a : j.at("argv")) args.push_back(a.get<std::string>());
  if (!out_override.empty()) {
    for (std::size_t i = 0; i + 1 < args.size(); ++i) {
      if (args[i] == "--out") args[i + 1] = out_override;
    }
  }
  std::vector<char*> ptrs;
  for (auto& s : args) ptrs.push_back(s.data());
  return run(int(ptrs.size()), ptrs.data(), false);
}

int run(int argc, char** argv, bool allow_replay) {
  CLI::App app{"gridflow: grid-layout flow matching for image sequences"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);

  GenDataArgs gen;
  auto* sc_gen = app.add_subcommand("gen-data", "Render a synthetic sequence (or dataset) from a spec");
  sc_gen->add_option("--spec", gen.spec, "Key-value sequence spec")->required();
  sc_gen->add_option("--out", gen.out, "Output folder")->required();

  TrainArgs tr;
  auto* sc_train = app.add_subcommand("train", "Coarse-to-fine training from a config file");
  sc_train->add_option("--config", tr.config, "Key-value training config")->required();
  sc_train->add_option("--out", tr.out, "Run folder")->required();
  sc_train->add_option("--resume", tr.resume, "Checkpoint to continue from");
  sc_train->add_option("--stop-after", tr.stop_after, "Stop after this many steps");
  sc_train->add_flag("--quiet", tr.quiet);

  SampleArgs sa;
  auto* sc_sample = app.add_subcommand("sample", "Free generation, expansion or interpolation");
  sc_sample->add_option("--ckpt", sa.ckpt)->required();
  sc_sample->add_flag("--free", sa.free);
  sc_sample->add_option("--expand", sa.expand, "Reference frame PNG");
  sc_sample->add_option("--interp", sa.interp, "Key frame PNGs, one per row (plus an optional closing key)")
      ->delimiter(',');
  sc_sample->add_option("--layout", sa.layout, "Grid shape MxN (default: training layout)");
  sc_sample->add_option("--labels", sa.labels, "Comma-separated content labels");
  sc_sample->add_option("--T", sa.T, "Noise level (default 0.9, free mode 1.0)");
  sc_sample->add_option("--steps", sa.steps);
  sc_sample->add_option("--guidance", sa.guidance);
  sc_sample->add_option("--seed", sa.seed);
  sc_sample->add_option("--mask-mode", sa.mask_mode)
      ->check(CLI::IsMember({"paper_literal", "trajectory_consistent"}));
  sc_sample->add_flag("--allow-degenerate", sa.allow_degenerate);
  sc_sample->add_option("--out", sa.out)->required();

  EvalArgs ev;
  auto* sc_eval = app.add_subcommand("eval", "PSNR/SSIM/temporal consistency between frame folders");
  sc_eval->add_option("--pred", ev.pred)->required();
  sc_eval->add_option("--ref", ev.ref)->required();
  sc_eval->add_option("--channels", ev.channels)->check(CLI::IsMember({1, 3}));
  sc_eval->add_option("--out", ev.out, "Report path (default stdout)");

  ProbeArgs pr;
  auto* sc_probe = app.add_subcommand("probe-attn", "Intra/cross/condition attention mass");
  sc_probe->add_option("--ckpt", pr.ckpt)->required();
  sc_probe->add_option("--input", pr.input, "Frame folder or grid.bin")->required();
  sc_probe->add_option("--layout", pr.layout);
  sc_probe->add_option("--labels", pr.labels);
  sc_probe->add_option("--t", pr.t)->check(CLI::Range(0.0, 1.0));
  sc_probe->add_option("--out", pr.out);

  std::string replay_manifest, replay_out;
  CLI::App* sc_replay = nullptr;
  if (allow_replay) {
    sc_replay = app.add_subcommand("replay", "Re-run a command from its manifest.json");
    sc_replay->add_option("--manifest", replay_manifest)->required();
    sc_replay->add_option("--out", replay_out, "Write to a different output location");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kConfig;
  }

  Manifest manifest;
  for (int i = 1; i < argc; ++i) manifest.argv.emplace_back(argv[i]);
  const auto start = std::chrono::steady_clock::now();
  try {
    int rc = kOk;
    std::string out;
    if (sc_replay && *sc_replay) return cmd_replay(replay_manifest, replay_out);
    if (*sc_gen) {
      manifest.command = "gen-data";
      rc = cmd_gen_data(gen, manifest);
      out = gen.out;
    } else if (*sc_train) {
      manifest.command = "train";
      rc = cmd_train(tr, manifest);
      out = tr.out;
    } else if (*sc_sample) {
      manifest.command = "sample";
      rc = cmd_sample(sa, manifest);
      out = sa.out;
    } else if (*sc_eval) {
      manifest.command = "eval";
      rc = cmd_eval(ev, manifest);
      out = ev.out;
    } else if (*sc_probe) {
      manifest.command = "probe-attn";
      rc = cmd_probe(pr, manifest);
      out = pr.out;
    }
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (const auto path = manifest_path(manifest.command, out); !path.empty()) {
      manifest.write(path, secs);
    }
    return rc;
  } catch (const Error& e) {
    std::fprintf(stderr, "gridflow %s: %s\n", manifest.command.c_str(), e.what());
    return exit_code(e.code());
  } catch (const fs::filesystem_error& e) {
    std::fprintf(stderr, "gridflow %s: %s\n", manifest.command.c_str(), e.what());
    return kData;
  } catch (const json::exception& e) {
    std::fprintf(stderr, "gridflow: malformed manifest: %s\n", e.what());
    return kConfig;
  }
}

}  // namespace

int main(int argc, char** argv) { return run(argc, argv, true); }
