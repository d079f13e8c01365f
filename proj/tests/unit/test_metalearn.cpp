#include <cmath>

#include "doctest.h"
#include "fixtures.hpp"
#include "metareg/evalstats.hpp"
#include "metareg/rng.hpp"

using namespace metareg;
using namespace metareg::testing;

namespace {

NetworkParams scalar_params(float v) {
  NetworkParams p;
  p.tensors.push_back({"x", Tensor<float>::scalar(v)});
  return p;
}

NetworkParams random_params(std::uint64_t seed) {
  ArchConfig a = small_arch();
  a.zero_init_heads = false;
  return init_params(a, seed);
}

}  // namespace

TEST_CASE("reptile update arithmetic") {
  const std::vector<NetworkParams> snaps{scalar_params(2.0f), scalar_params(4.0f)};
  CHECK(reptile_update(scalar_params(0.0f), snaps, 0.5).tensors[0].value[0] == 1.5f);
  CHECK(reptile_update(scalar_params(3.0f), snaps, 0.0).tensors[0].value[0] == 3.0f);
}

TEST_CASE("reptile with one snapshot and unit rate lands on the snapshot") {
  for (std::uint64_t s = 0; s < 5; ++s) {
    const NetworkParams phi = random_params(s), star = random_params(s + 100);
    CHECK(reptile_update(phi, std::span<const NetworkParams>(&star, 1), 1.0) == star);
  }
}

TEST_CASE("reptile with one snapshot equals phi + beta (star - phi)") {
  Rng rng(8);
  for (std::uint64_t s = 0; s < 5; ++s) {
    const NetworkParams phi = random_params(s), star = random_params(s + 50);
    const double beta = rng.uniform(0.01, 0.99);
    const NetworkParams out = reptile_update(phi, std::span<const NetworkParams>(&star, 1), beta);
    for (std::size_t p = 0; p < phi.tensors.size(); ++p) {
      for (std::int64_t i = 0; i < phi.tensors[p].value.numel(); ++i) {
        const double x = phi.tensors[p].value[i], y = star.tensors[p].value[i];
        CHECK(out.tensors[p].value[i] == static_cast<float>(x + beta * (y - x)));
      }
    }
  }
}

TEST_CASE("reptile averages displacement over all snapshots") {
  const std::vector<NetworkParams> snaps{scalar_params(1.0f), scalar_params(2.0f), scalar_params(6.0f)};
  // 0 - 0.25 * ((0-1) + (0-2) + (0-6)) / 3 = 0.75
  CHECK(reptile_update(scalar_params(0.0f), snaps, 0.25).tensors[0].value[0] == 0.75f);
}

TEST_CASE("reptile rejects mismatched shapes and empty snapshot lists") {
  NetworkParams other;
  other.tensors.push_back({"x", Tensor<float>({2})});
  CHECK_THROWS_AS(reptile_update(scalar_params(0.0f), std::span<const NetworkParams>(&other, 1), 0.5), DimensionError);
  CHECK_THROWS_AS(reptile_update(scalar_params(0.0f), std::span<const NetworkParams>(), 0.5), ContractError);
}

TEST_CASE("meta learning rate decays linearly to the final value") {
  TrainConfig c;
  c.episodes = 2001;
  CHECK(meta_lr(0, c) == 0.5);
  CHECK(meta_lr(2000, c) == 1e-5);
  CHECK(meta_lr(2001, c) == 1e-5);
  CHECK(meta_lr(1000, c) == doctest::Approx((0.5 + 1e-5) / 2).epsilon(1e-12));
  double prev = 1.0;
  for (std::int64_t i = 0; i < c.episodes; i += 97) {
    CHECK(meta_lr(i, c) < prev);
    prev = meta_lr(i, c);
  }
  CHECK_THROWS_AS(meta_lr(-1, c), ParameterError);
  CHECK_THROWS_AS(meta_lr(2002, c), ParameterError);
  c.episodes = 2000;
  CHECK(meta_lr(1999, c) == 1e-5);
}

TEST_CASE("train config validation") {
  TrainConfig c;
  CHECK_NOTHROW(c.validate());
  c.k = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = {};
  c.f_min = 1;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = {};
  c.beta_meta_final = 0.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("episodes record one snapshot per inner step and replay exactly") {
  const Task& task = small_tasks()[0];
  const NetworkParams init = init_params(small_arch(), 1);
  TrainConfig c = small_train();
  c.k = 1;
  CHECK(run_episode(init, task, c, 5).snapshots.size() == 1);
  c.k = 3;
  const EpisodeTrace a = run_episode(init, task, c, 5), b = run_episode(init, task, c, 5);
  CHECK(a.snapshots.size() == 3);
  CHECK(a.losses == b.losses);
  CHECK(a.snapshots.back() == b.snapshots.back());
  CHECK(a.task_id == task.case_id);
  for (double l : a.losses) CHECK(std::isfinite(l));
}

TEST_CASE("task-level step with zero rate keeps parameters and reports the loss") {
  const Task& task = small_tasks()[1];
  NetworkParams p = init_params(small_arch(), 2);
  const NetworkParams before = p;
  TrainConfig c = small_train();
  const Interaction x = sample_interaction(task, c, 3);
  Optimizer opt({OptimizerKind::kAdam, 0.0}, p);
  const double loss = task_level_step(p, std::span<const Interaction>(&x, 1), opt, c.loss);
  CHECK(p == before);
  CHECK(std::isfinite(loss));
  CHECK(loss < 0.0);
}

TEST_CASE("training interactions mask the input but not the supervision") {
  const Task& task = small_tasks()[0];
  const TrainConfig c = small_train();
  for (std::uint64_t s = 0; s < 10; ++s) {
    const Interaction x = sample_interaction(task, c, s);
    CHECK(!x.loss_mask);
    CHECK(x.source_image == task.source_image);
    std::int64_t nonzero_slices = 0;
    const Shape& g = x.target_input.grid();
    for (std::int64_t w = 0; w < g[2]; ++w) {
      bool any = false;
      for (std::int64_t i = w; i < x.target_input.data.numel(); i += g[2]) any = any || x.target_input.data[i] != 0.0f;
      nonzero_slices += any;
    }
    CHECK(nonzero_slices >= c.f_min);
    CHECK(nonzero_slices <= c.f_max);
    const bool gland = x.target_label == task.target_gland;
    bool landmark = false;
    for (const auto& lm : task.target_landmarks) landmark = landmark || x.target_label == lm.label;
    CHECK((gland || landmark));
  }
}

TEST_CASE("meta-training follows the documented episode seeding") {
  const auto& tasks = small_tasks();
  TrainConfig c = small_train();
  c.k = 1;
  c.episodes = 1;
  c.beta_meta_init = 0.5;
  const NetworkParams init = init_params(small_arch(), 3);
  const NetworkParams out = meta_train(tasks, c, AugmentConfig{}, init);

  const std::uint64_t eseed = derive_seed(c.seed, "episode", 0);
  Rng pick(derive_seed(eseed, "task"));
  const Task& task = tasks[static_cast<std::size_t>(pick.uniform_int(0, static_cast<std::int64_t>(tasks.size()) - 1))];
  const Task aug = random_affine_augment(task, derive_seed(eseed, "augment"), AugmentConfig{});
  const EpisodeTrace tr = run_episode(init, aug, c, derive_seed(eseed, "inner"));
  // k = 1: the update is beta times the single inner displacement.
  for (std::size_t p = 0; p < init.tensors.size(); ++p) {
    for (std::int64_t i = 0; i < init.tensors[p].value.numel(); ++i) {
      const double x = init.tensors[p].value[i], y = tr.snapshots[0].tensors[p].value[i];
      CHECK(out.tensors[p].value[i] == static_cast<float>(x - c.beta_meta_init * (x - y)));
    }
  }
}

TEST_CASE("meta-training is deterministic and zero episodes return the init") {
  const auto& tasks = small_tasks();
  TrainConfig c = small_train();
  const NetworkParams init = init_params(small_arch(), 4);
  std::vector<EpisodeRecord> log;
  TrainHooks hooks;
  hooks.on_episode = [&](const EpisodeRecord& r) { log.push_back(r); };
  const NetworkParams a = meta_train(tasks, c, AugmentConfig{}, init, hooks);
  const NetworkParams b = meta_train(tasks, c, AugmentConfig{}, init);
  CHECK(a == b);
  CHECK(!(a == init));
  REQUIRE(log.size() == 2);
  CHECK(log[0].beta_meta == 0.5);
  CHECK(log[1].beta_meta == 1e-5);
  c.episodes = 0;
  CHECK(meta_train(tasks, c, AugmentConfig{}, init) == init);
}

TEST_CASE("meta-training resumes exactly from a checkpoint") {
  const auto& tasks = small_tasks();
  TrainConfig c = small_train();
  c.episodes = 3;
  const NetworkParams init = init_params(small_arch(), 6);
  NetworkParams mid;
  TrainHooks hooks;
  hooks.checkpoint_every = 1;
  hooks.on_checkpoint = [&](const NetworkParams& p, std::int64_t done) {
    if (done == 2) mid = p;
  };
  const NetworkParams full = meta_train(tasks, c, AugmentConfig{}, init, hooks);
  TrainHooks resume;
  resume.start_episode = 2;
  CHECK(meta_train(tasks, c, AugmentConfig{}, mid, resume) == full);
}

TEST_CASE("non-finite parameters raise a numerical fault naming the episode") {
  NetworkParams init = init_params(small_arch(), 5);
  init.tensors[0].value[0] = NAN;
  try {
    meta_train(small_tasks(), small_train(), AugmentConfig{}, init);
    FAIL("expected a numerical fault");
  } catch (const NumericalFault& e) {
    CHECK(std::string(e.what()).find("episode 0") != std::string::npos);
  }
}

TEST_CASE("conventional training modes") {
  const auto& tasks = small_tasks();
  const TrainConfig c = small_train();
  const NetworkParams init = init_params(small_arch(), 7);
  CHECK(conventional_train(tasks, c, AugmentConfig{}, InputMode::kDense, 0, 0, init) == init);
  const NetworkParams d1 = conventional_train(tasks, c, AugmentConfig{}, InputMode::kDense, 0, 2, init);
  const NetworkParams d2 = conventional_train(tasks, c, AugmentConfig{}, InputMode::kDense, 0, 2, init);
  const NetworkParams s1 = conventional_train(tasks, c, AugmentConfig{}, InputMode::kSparse, 4, 2, init);
  CHECK(d1 == d2);
  CHECK(!(d1 == init));
  CHECK(!(s1 == d1));
  CHECK_THROWS_AS(conventional_train(tasks, c, AugmentConfig{}, InputMode::kSparse, 0, 2, init), ConfigError);
}

TEST_CASE("meta-test adaptation report structure") {
  const Task& task = small_tasks()[2];
  const NetworkParams init = init_params(small_arch(), 8);
  AdaptConfig ac;
  ac.f_max = 6;
  ac.loss.sigmas_mm = {0.0, 2.0};
  const SweepSchedule s = schedule_for(task, ac.f_min, ac.f_max);
  const AdaptationReport r = meta_test_adapt(init, task, s, ac);
  REQUIRE(r.rows.size() == 5);
  for (std::size_t j = 0; j < r.rows.size(); ++j) {
    CHECK(r.rows[j].frames == static_cast<int>(j) + 2);
    CHECK(r.rows[j].grad_updates == static_cast<int>(j));
  }
  CHECK(r.rows[0].params_hash == params_hash(init));
  CHECK(r.rows[1].params_hash != r.rows[0].params_hash);
  CHECK(params_hash(r.adapted) == r.rows.back().params_hash);

  // Untrained zero-head network: identity transform, so row 0 reports the
  // unregistered TRE.
  std::vector<Volume> src, tgt;
  for (std::size_t i = 0; i < task.source_landmarks.size(); ++i) {
    src.push_back(task.source_landmarks[i].label);
    tgt.push_back(task.target_landmarks[i].label);
  }
  CHECK(r.rows[0].tre_mm == doctest::Approx(tre(src, tgt).tre_mm).epsilon(1e-9));

  const AdaptationReport again = meta_test_adapt(init, task, s, ac);
  CHECK(again.rows.size() == r.rows.size());
  for (std::size_t j = 0; j < r.rows.size(); ++j) {
    CHECK(again.rows[j].tre_mm == r.rows[j].tre_mm);
    CHECK(again.rows[j].params_hash == r.rows[j].params_hash);
  }
}

TEST_CASE("adaptation without few-shot or with zero rate keeps the initial weights") {
  const Task& task = small_tasks()[2];
  const NetworkParams init = init_params(small_arch(), 8);
  AdaptConfig ac;
  ac.f_max = 6;
  ac.loss.sigmas_mm = {0.0, 2.0};
  const SweepSchedule s = schedule_for(task, ac.f_min, ac.f_max);
  ac.few_shot = false;
  for (const auto& row : meta_test_adapt(init, task, s, ac).rows) {
    CHECK(row.params_hash == params_hash(init));
    CHECK(row.grad_updates == 0);
  }
  ac.few_shot = true;
  ac.beta_task = 0.0;
  const AdaptationReport r = meta_test_adapt(init, task, s, ac);
  for (const auto& row : r.rows) {
    CHECK(row.params_hash == params_hash(init));
    CHECK(std::isfinite(row.loss));
  }
  CHECK(r.rows.back().grad_updates == 4);
}

TEST_CASE("few-shot interaction restricts both labels to the acquired slices") {
  const Task& task = small_tasks()[0];
  const SweepSchedule s = schedule_for(task, 2, 5);
  const Interaction x = few_shot_interaction(task, s.updates[1]);
  CHECK(x.loss_mask == s.updates[1]);
  CHECK(x.source_label == task.source_gland);
  CHECK(x.target_label == apply_mask(task.target_gland, s.updates[1]));
  CHECK(x.target_input == apply_mask(task.target_image, s.updates[1]));
}
