// Copyright (c) 2026, gridflow authors
// SPDX-License-Identifier: Apache-2.0

#include <fstream>

#include "gridflow/trainer.hpp"
#include "helpers.hpp"

using namespace gridflow;

namespace {

TrainConfig small_config(std::int64_t coarse, std::int64_t fine) {
  TrainConfig c;
  c.seed = 5;
  c.batch_size = 2;
  c.layout = LayoutSpec{2, 2, 8, 8, 1};
  c.model.frame_h = 8;
  c.model.frame_w = 8;
  c.model.patch_size = 4;
  c.model.embed_dim = 16;
  c.model.depth = 1;
  c.model.heads = 2;
  c.model.time_embed_dim = 8;
  c.model.mlp_ratio = 2;
  c.phase_plan.coarse_steps = coarse;
  c.phase_plan.fine_steps = fine;
  c.total_steps = coarse + fine;
  c.alpha_schedule = c.phase_plan.default_alpha_schedule(0.5);
  return c;
}

struct Data {
  Dataset coarse, fine;
  DatasetMap map() const { return {{"coarse", &coarse}, {"fine", &fine}}; }
};

Data make_data(const LayoutSpec& l) {
  return {make_dataset(MotionKind::Translate, 6, l, 1), make_dataset(MotionKind::RotateRing, 6, l, 2)};
}

std::vector<LossBreakdown> run_steps(TrainState& s, const TrainConfig& c, const DatasetMap& d,
                                     int n) {
  std::vector<LossBreakdown> out;
  for (int i = 0; i < n; ++i) out.push_back(train_step(s, c, next_batch(s, c, d)));
  return out;
}

bool same_stream(const std::vector<LossBreakdown>& a, const std::vector<LossBreakdown>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].base != b[i].base || a[i].flow != b[i].flow || a[i].alpha != b[i].alpha ||
        a[i].total != b[i].total)
      return false;
  }
  return true;
}

}  // namespace

TEST_CASE("config validation") {
  auto c = small_config(3, 3);
  CHECK_NOTHROW(c.validate());
  c.total_steps = 7;
  CHECK(test::error_of([&] { c.validate(); }) == Errc::InvalidConfig);
  c = small_config(3, 3);
  c.cond_dropout_prob = 1.0;
  CHECK(test::error_of([&] { c.validate(); }) == Errc::InvalidConfig);
  c = small_config(3, 3);
  c.layout.frame_h = 12;
  CHECK(test::error_of([&] { c.validate(); }) == Errc::InvalidConfig);
}

TEST_CASE("config key-value roundtrip") {
  auto c = small_config(4, 9);
  c.learning_rate = 3e-4;
  c.alpha_schedule.alpha_max = 0.3;
  const auto back = TrainConfig::from_keyvalue(io::KeyValueFile::parse(c.to_keyvalue().to_string()));
  CHECK(back.to_keyvalue().to_string() == c.to_keyvalue().to_string());
  CHECK(back.model == c.model);
  CHECK(back.layout == c.layout);
  CHECK(back.learning_rate == c.learning_rate);
}

TEST_CASE("identical seeds give identical loss streams") {
  const auto c = small_config(3, 5);
  const auto d = make_data(c.layout);
  auto s1 = init_train_state(c), s2 = init_train_state(c);
  const auto a = run_steps(s1, c, d.map(), 8);
  const auto b = run_steps(s2, c, d.map(), 8);
  CHECK(same_stream(a, b));
  CHECK(s1.model.parameters() == s2.model.parameters());
  for (const auto& l : a) CHECK(std::isfinite(l.total));
}

TEST_CASE("alpha zero steps report total == base") {
  const auto c = small_config(4, 0);
  const auto d = make_data(c.layout);
  auto s = init_train_state(c);
  for (const auto& l : run_steps(s, c, d.map(), 4)) {
    CHECK(l.alpha == 0.0);
    CHECK(l.total == l.base);
    CHECK(l.flow > 0.0);
  }
}

TEST_CASE("alpha follows the ramp during training") {
  const auto c = small_config(2, 4);
  const auto d = make_data(c.layout);
  auto s = init_train_state(c);
  const auto losses = run_steps(s, c, d.map(), 6);
  for (std::size_t i = 0; i < losses.size(); ++i) {
    CHECK(losses[i].alpha == alpha_at(std::int64_t(i), c.alpha_schedule));
    CHECK(losses[i].total == doctest::Approx(losses[i].base + losses[i].alpha * losses[i].flow));
  }
  CHECK(s.step == 6);
}

TEST_CASE("train_step rejects off-layout grids and empty batches") {
  const auto c = small_config(1, 1);
  auto s = init_train_state(c);
  std::vector<TrainExample> batch{{GridTensorf(LayoutSpec{1, 4, 8, 8, 1}),
                                   Condition::make(LayoutSpec{1, 4, 8, 8, 1}, {}),
                                   std::nullopt, std::nullopt, std::nullopt}};
  CHECK(test::error_of([&] { train_step(s, c, batch); }) == Errc::ShapeMismatch);
  CHECK(test::error_of([&] { train_step(s, c, {}); }) == Errc::InvalidConfig);
}

TEST_CASE("non-finite inputs abort with NonFiniteLoss") {
  const auto c = small_config(1, 1);
  auto s = init_train_state(c);
  auto g = GridTensorf::Constant(c.layout, 0.5f);
  g.data()(0, 0) = std::numeric_limits<float>::quiet_NaN();
  std::vector<TrainExample> batch{
      {g, Condition::make(c.layout, {}), std::nullopt, std::nullopt, std::nullopt}};
  CHECK(test::error_of([&] { train_step(s, c, batch); }) == Errc::NonFiniteLoss);
}

TEST_CASE("single-cell layout trains with zero flow loss") {
  auto c = small_config(0, 3);
  c.layout = LayoutSpec{1, 1, 8, 8, 1};
  const auto ds = make_dataset(MotionKind::Bounce, 3, c.layout, 3);
  const DatasetMap map{{"fine", &ds}};
  auto s = init_train_state(c);
  for (const auto& l : run_steps(s, c, map, 3)) CHECK(l.flow == 0.0);
}

TEST_CASE("missing phase dataset is DatasetExhausted") {
  const auto c = small_config(2, 2);
  const Dataset empty;
  auto s = init_train_state(c);
  CHECK(test::error_of([&] { next_batch(s, c, {}); }) == Errc::DatasetExhausted);
  CHECK(test::error_of([&] { next_batch(s, c, {{"coarse", &empty}}); }) == Errc::DatasetExhausted);
}

TEST_CASE("coarse phase uses coarse labels, fine phase rich labels") {
  const auto c = small_config(1, 1);
  const auto d = make_data(c.layout);
  auto s = init_train_state(c);
  const auto coarse = next_batch(s, c, d.map());
  for (const auto& ex : coarse) {
    CHECK(ex.cond.content_labels.size() == 2);
    CHECK((ex.cond.content_labels[0] == int(Label::Moving) || ex.cond.content_labels[0] == int(Label::Static)));
  }
  s.step = 1;
  for (const auto& ex : next_batch(s, c, d.map())) {
    const int first = ex.cond.content_labels.at(0);
    CHECK((first == int(Label::RotateCW) || first == int(Label::RotateCCW)));
  }
}

TEST_CASE("pinned draws make a fixed batch") {
  const auto c = small_config(0, 2);
  const auto d = make_data(c.layout);
  std::mt19937_64 rng(9);
  std::normal_distribution<float> n;
  GridTensorf eps(c.layout);
  for (Eigen::Index i = 0; i < eps.data().size(); ++i) eps.data().data()[i] = n(rng);
  const TrainExample ex{pack(d.fine.items[0].frames, c.layout), d.fine.items[0].condition(c.layout),
                        0.4f, eps, std::nullopt};
  auto c0 = c;
  c0.cond_dropout_prob = 0.0;
  auto s1 = init_train_state(c0), s2 = init_train_state(c0);
  s2.rng.discard(1000);
  const std::vector<TrainExample> batch{ex};
  CHECK(train_step(s1, c0, batch).total == train_step(s2, c0, batch).total);
}

TEST_CASE("train writes metrics and checkpoints; zero steps keeps the init") {
  test::TempDir dir("train");
  auto c = small_config(0, 0);
  const auto d = make_data(c.layout);
  const auto r = train(c, d.map(), {dir / "zero", {}, -1, {}});
  const auto ck = load_checkpoint(r.final_checkpoint);
  CHECK(ck.params == init_model<float>(c.model, c.seed).parameters());
  CHECK(ck.step == 0);

  c = small_config(2, 4);
  c.checkpoint_every = 3;
  std::vector<MetricRow> seen;
  const auto r2 = train(c, d.map(), {dir / "run", {}, -1, [&](const MetricRow& m) { seen.push_back(m); }});
  CHECK(seen.size() == 6);
  CHECK(std::filesystem::exists(dir / "run" / "ckpt_3.gfck"));
  CHECK(std::filesystem::exists(dir / "run" / "ckpt_6.gfck"));
  std::ifstream csv(r2.metrics_csv);
  std::string header;
  std::getline(csv, header);
  CHECK(header == "step,base,flow,alpha,total");
  int rows = 0;
  for (std::string line; std::getline(csv, line);) ++rows;
  CHECK(rows == 6);
}

TEST_CASE("resume continues the loss stream identically") {
  test::TempDir dir("resume");
  const auto c = small_config(3, 5);
  const auto d = make_data(c.layout);
  const auto full = train(c, d.map(), {dir / "full", {}, -1, {}});

  const auto first = train(c, d.map(), {dir / "split", {}, 4, {}});
  CHECK(first.metrics.size() == 4);
  const auto second = train(c, d.map(), {dir / "split", first.final_checkpoint, -1, {}});
  CHECK(second.metrics.size() == 4);
  CHECK(second.metrics.front().step == 4);

  for (std::size_t i = 0; i < 8; ++i) {
    const auto& want = full.metrics[i].loss;
    const auto& got = i < 4 ? first.metrics[i].loss : second.metrics[i - 4].loss;
    CHECK(got.total == want.total);
    CHECK(got.flow == want.flow);
  }
  CHECK(load_checkpoint(second.final_checkpoint).params ==
        load_checkpoint(full.final_checkpoint).params);
}

TEST_CASE("running averages are tracked") {
  const auto c = small_config(0, 5);
  const auto d = make_data(c.layout);
  auto s = init_train_state(c);
  const auto losses = run_steps(s, c, d.map(), 5);
  double base = losses[0].base;
  for (std::size_t i = 1; i < losses.size(); ++i) base = 0.98 * base + 0.02 * losses[i].base;
  CHECK(s.running.base == doctest::Approx(base).epsilon(1e-12));
}

TEST_CASE("a fine phase with the temporal loss ends with lower flow loss than coarse-only") {
  const LayoutSpec l{2, 2, 8, 8, 1};
  const auto rot = make_dataset(MotionKind::RotateRing, 16, l, 8);
  const DatasetMap map{{"coarse", &rot}, {"fine", &rot}};

  // Flow loss on a fixed evaluation batch with pinned t and noise.
  std::mt19937_64 rng(12);
  std::normal_distribution<float> n;
  std::vector<std::pair<float, GridTensorf>> draws;
  for (int i = 0; i < 16; ++i) {
    GridTensorf eps(l);
    for (Eigen::Index k = 0; k < eps.data().size(); ++k) eps.data().data()[k] = n(rng);
    draws.emplace_back(0.2f + 0.6f * float(i) / 15.0f, eps);
  }
  const auto eval_flow = [&](const Modelf& m) {
    double acc = 0.0;
    for (std::size_t i = 0; i < draws.size(); ++i) {
      const auto& seq = rot.items[i % rot.size()];
      const auto clean = pack(seq.frames, l);
      const auto& [t, eps] = draws[i];
      const auto pred = m.predict(forward_interpolate(clean, t, eps), t, seq.condition(l, true));
      acc += flow_loss(pred, velocity_target(clean, eps));
    }
    return acc / double(draws.size());
  };

  auto coarse_only = small_config(400, 0);
  auto full = small_config(200, 200);
  full.alpha_schedule = full.phase_plan.default_alpha_schedule(0.5);
  auto s1 = init_train_state(coarse_only), s2 = init_train_state(full);
  run_steps(s1, coarse_only, map, 400);
  run_steps(s2, full, map, 400);
  CHECK(eval_flow(s2.model) < eval_flow(s1.model));
}

TEST_CASE("reference cells are fed clean and carry no loss") {
  auto c = small_config(0, 1);
  c.cond_dropout_prob = 0.0;
  std::mt19937_64 rng(8);
  const auto grid = test::random_grid(rng, c.layout);
  auto noise = test::random_grid(rng, c.layout);
  MaskGrid mask = MaskGrid::ones(c.layout);
  mask.set(0, 0, 0);
  mask.set(1, 0, 0);
  const Condition cond = Condition::make(c.layout, {});

  auto s1 = init_train_state(c);
  const TrainExample a{grid, cond, 0.6f, noise, mask};
  const auto la = train_step(s1, c, std::span(&a, 1));

  // Noise on reference cells never reaches the network.
  noise.cell(0).array() += 3.0f;
  noise.cell(2).array() -= 1.0f;
  auto s2 = init_train_state(c);
  const TrainExample b{grid, cond, 0.6f, noise, mask};
  const auto lb = train_step(s2, c, std::span(&b, 1));
  CHECK(la.base == lb.base);
  CHECK(la.flow == lb.flow);
  CHECK(s1.model.parameters() == s2.model.parameters());

  // Without the mask the same perturbation changes the loss.
  auto s3 = init_train_state(c);
  const TrainExample u{grid, cond, 0.6f, noise, std::nullopt};
  CHECK(train_step(s3, c, std::span(&u, 1)).base != la.base);
}

TEST_CASE("next_batch yields grids in model space") {
  const auto c = small_config(0, 2);
  const auto d = make_data(c.layout);
  auto s = init_train_state(c);
  for (const auto& ex : next_batch(s, c, d.map())) {
    CHECK(ex.grid.data().minCoeff() >= -1.0f);
    CHECK(ex.grid.data().maxCoeff() <= 1.0f);
    CHECK(ex.grid.data().minCoeff() == -1.0f);  // black background
  }
}
