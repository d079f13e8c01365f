#include "metareg/metalearn.hpp"

#include <algorithm>
#include <cmath>

#include "metareg/evalstats.hpp"
#include "metareg/parallel.hpp"
#include "metareg/rng.hpp"

namespace metareg {

namespace {

void check_finite(double loss, const ParamGrads& grads, const NetworkParams& params) {
  if (!std::isfinite(loss)) throw NumericalFault("non-finite loss " + std::to_string(loss));
  for (std::size_t p = 0; p < grads.size(); ++p) {
    if (!all_finite(grads[p])) throw NumericalFault("non-finite gradient for " + params.tensors[p].name);
  }
}

// Slices along the sweep axis available for training frames: the gland extent,
// widened symmetrically when augmentation shrank it below `frames`.
SliceRange training_extent(const Volume& target_gland, int frames) {
  const std::int64_t n = target_gland.grid()[kSliceAxis];
  if (frames > n) throw ParameterError("cannot place " + std::to_string(frames) + " frames on " + std::to_string(n) + " slices");
  SliceRange r;
  try {
    r = gland_extent(target_gland, kSliceAxis, 1);
  } catch (const DataError&) {
    r = {0, n - 1};
  }
  while (r.length() < frames) {
    if (r.first > 0) --r.first;
    if (r.length() < frames && r.last < n - 1) ++r.last;
  }
  return r;
}

// Picks the supervision pair: the gland, or with the configured probability
// one landmark whose target label survived augmentation.
std::pair<const Volume*, const Volume*> pick_labels(const Task& task, double landmark_prob, Rng& rng) {
  const double u = rng.uniform();
  if (u < landmark_prob && !task.source_landmarks.empty()) {
    const auto i = static_cast<std::size_t>(
        rng.uniform_int(0, static_cast<std::int64_t>(task.source_landmarks.size()) - 1));
    const Landmark& t = task.target_landmarks.at(i);
    Vec3 c;
    if (centroid_mm(t.label, c)) return {&task.source_landmarks[i].label, &t.label};
  }
  return {&task.source_gland, &task.target_gland};
}

std::string with_context(const std::string& what, std::int64_t index, const char* unit, const std::string& task_id) {
  return what + " (" + unit + " " + std::to_string(index) + ", task " + task_id + ")";
}

}  // namespace

void TrainConfig::validate() const {
  if (k < 1) throw ConfigError("k must be >= 1");
  if (!(beta_task >= 0.0) || !std::isfinite(beta_task)) throw ConfigError("beta_task must be finite and >= 0");
  if (!(beta_meta_init > 0.0) || !(beta_meta_final > 0.0)) throw ConfigError("meta learning rates must be > 0");
  if (episodes < 0) throw ConfigError("episodes must be >= 0");
  if (minibatch < 1) throw ConfigError("minibatch must be >= 1");
  if (f_min < 2) throw ConfigError("F_min must be >= 2");
  if (f_max < f_min) throw ConfigError("F_max must be >= F_min");
  if (!(landmark_label_prob >= 0.0 && landmark_label_prob <= 1.0)) {
    throw ConfigError("landmark_label_prob must be in [0, 1]");
  }
  loss.validate();
}

void AdaptConfig::validate() const {
  if (!(beta_task >= 0.0) || !std::isfinite(beta_task)) throw ConfigError("adapt beta_task must be finite and >= 0");
  if (f_min < 2) throw ConfigError("adapt F_min must be >= 2");
  if (f_max < f_min) throw ConfigError("adapt F_max must be >= F_min");
  if (!(dsc_threshold > 0.0 && dsc_threshold < 1.0)) throw ConfigError("dsc_threshold must be in (0, 1)");
  loss.validate();
}

LossAndGrads minibatch_gradient(const NetworkParams& params, std::span<const Interaction> batch,
                                const LossWeights& weights) {
  if (batch.empty()) throw ContractError("minibatch is empty");
  const ArchConfig& arch = params.arch;
  std::vector<double> losses(batch.size());
  std::vector<ParamGrads> per(batch.size());
  parallel_for(batch.size(), [&](std::size_t b) {
    const Interaction& it = batch[b];
    const double sp = it.source_image.spacing;
    Tape<float> tape;
    const auto vars = bind_params(tape, params, true);
    Var<float> s = tape.constant(it.source_image.as_channels());
    Var<float> t = tape.constant(it.target_input.as_channels());
    Var<float> u = forward<float>(arch, vars, s, t);
    Var<float> warped = warp(tape.constant(it.source_label.as_channels()), u, sp);
    if (it.loss_mask) {
      warped = mul(warped, tape.constant(mask_volume(it.source_label.grid(), sp, *it.loss_mask).as_channels()));
    }
    Var<float> loss = total_loss(warped, tape.constant(it.target_label.as_channels()), u, weights, sp);
    const GradientSet<float> g = tape.backward(loss);
    losses[b] = loss.value().item();
    per[b].reserve(vars.size());
    for (const auto& v : vars) per[b].push_back(g.of(v));
  });
  LossAndGrads out;
  const double inv = 1.0 / static_cast<double>(batch.size());
  for (double l : losses) out.loss += l;
  out.loss *= inv;
  for (std::size_t p = 0; p < params.tensors.size(); ++p) {
    const std::int64_t n = params.tensors[p].value.numel();
    std::vector<double> acc(static_cast<std::size_t>(n), 0.0);
    for (std::size_t b = 0; b < batch.size(); ++b) {
      const float* g = per[b][p].raw();
      for (std::int64_t i = 0; i < n; ++i) acc[static_cast<std::size_t>(i)] += g[i];
    }
    Tensor<float> mean_grad(params.tensors[p].value.shape());
    for (std::int64_t i = 0; i < n; ++i) mean_grad[i] = static_cast<float>(acc[static_cast<std::size_t>(i)] * inv);
    out.grads.push_back(std::move(mean_grad));
  }
  return out;
}

double task_level_step(NetworkParams& params, std::span<const Interaction> batch, Optimizer& optimizer,
                       const LossWeights& weights) {
  LossAndGrads lg = minibatch_gradient(params, batch, weights);
  check_finite(lg.loss, lg.grads, params);
  optimizer.step(params, lg.grads);
  return lg.loss;
}

Interaction sample_interaction(const Task& task, const TrainConfig& config, std::uint64_t seed) {
  Rng rng(derive_seed(seed, "labels"));
  const auto [src, tgt] = pick_labels(task, config.landmark_label_prob, rng);
  const std::int64_t n = task.target_image.grid()[kSliceAxis];
  const FrameMask mask = sample_training_mask(derive_seed(seed, "mask"), config.f_min, config.f_max, n,
                                              training_extent(task.target_gland, config.f_max));
  return {task.source_image, apply_mask(task.target_image, mask), *src, *tgt, std::nullopt};
}

EpisodeTrace run_episode(const NetworkParams& params, const Task& task, const TrainConfig& config,
                         std::uint64_t episode_seed) {
  EpisodeTrace trace;
  trace.task_id = task.case_id;
  Optimizer opt(config.optimizer_config(), params);
  NetworkParams phi = params;
  std::vector<Interaction> batch;
  for (int m = 0; m < config.k; ++m) {
    batch.clear();
    for (int b = 0; b < config.minibatch; ++b) {
      const auto idx = static_cast<std::uint64_t>(m) * static_cast<std::uint64_t>(config.minibatch) + static_cast<std::uint64_t>(b);
      batch.push_back(sample_interaction(task, config, derive_seed(episode_seed, "interaction", idx)));
    }
    trace.losses.push_back(task_level_step(phi, batch, opt, config.loss));
    trace.snapshots.push_back(phi);
  }
  return trace;
}

NetworkParams reptile_update(const NetworkParams& phi, std::span<const NetworkParams> snapshots, double beta_meta) {
  if (snapshots.empty()) throw ContractError("reptile_update needs at least one snapshot");
  for (const auto& s : snapshots) {
    if (s.tensors.size() != phi.tensors.size()) throw DimensionError("reptile_update: snapshot parameter count differs");
    for (std::size_t p = 0; p < phi.tensors.size(); ++p) {
      if (s.tensors[p].value.shape() != phi.tensors[p].value.shape()) {
        throw DimensionError("reptile_update: shape mismatch for " + phi.tensors[p].name);
      }
    }
  }
  NetworkParams out = phi;
  const double k = static_cast<double>(snapshots.size());
  for (std::size_t p = 0; p < phi.tensors.size(); ++p) {
    const float* x = phi.tensors[p].value.raw();
    float* y = out.tensors[p].value.raw();
    const std::int64_t n = phi.tensors[p].value.numel();
    for (std::int64_t i = 0; i < n; ++i) {
      double diff = 0.0;
      for (const auto& s : snapshots) diff += static_cast<double>(x[i]) - static_cast<double>(s.tensors[p].value.raw()[i]);
      y[i] = static_cast<float>(static_cast<double>(x[i]) - beta_meta * (diff / k));
    }
  }
  return out;
}

double meta_lr(std::int64_t iteration, const TrainConfig& config) {
  if (iteration < 0 || iteration > config.episodes) {
    throw ParameterError("meta_lr: iteration " + std::to_string(iteration) + " outside [0, " +
                         std::to_string(config.episodes) + "]");
  }
  const std::int64_t last = std::max<std::int64_t>(1, config.episodes - 1);
  const double t = std::min(1.0, static_cast<double>(iteration) / static_cast<double>(last));
  if (t == 1.0) return config.beta_meta_final;
  return config.beta_meta_init + t * (config.beta_meta_final - config.beta_meta_init);
}

NetworkParams meta_train(const std::vector<Task>& tasks, const TrainConfig& config, const AugmentConfig& augment,
                         NetworkParams init, const TrainHooks& hooks) {
  config.validate();
  if (tasks.empty()) throw ContractError("meta_train needs at least one training task");
  NetworkParams phi = std::move(init);
  for (std::int64_t e = hooks.start_episode; e < config.episodes; ++e) {
    const std::uint64_t eseed = derive_seed(config.seed, "episode", static_cast<std::uint64_t>(e));
    Rng pick(derive_seed(eseed, "task"));
    const Task& base = tasks[static_cast<std::size_t>(pick.uniform_int(0, static_cast<std::int64_t>(tasks.size()) - 1))];
    EpisodeTrace trace;
    try {
      const Task task = random_affine_augment(base, derive_seed(eseed, "augment"), augment);
      trace = run_episode(phi, task, config, derive_seed(eseed, "inner"));
    } catch (const NumericalFault& f) {
      throw NumericalFault(with_context(f.what(), e, "episode", base.case_id));
    }
    const double beta = meta_lr(e, config);
    if (config.reptile_final_only) {
      phi = reptile_update(phi, std::span<const NetworkParams>(&trace.snapshots.back(), 1), beta);
    } else {
      phi = reptile_update(phi, trace.snapshots, beta);
    }
    if (hooks.on_episode) hooks.on_episode({e, base.case_id, mean(trace.losses), beta});
    const std::int64_t done = e + 1;
    if (hooks.on_checkpoint &&
        ((hooks.checkpoint_every > 0 && done % hooks.checkpoint_every == 0) || done == config.episodes)) {
      hooks.on_checkpoint(phi, done);
    }
  }
  return phi;
}

NetworkParams conventional_train(const std::vector<Task>& tasks, const TrainConfig& config,
                                 const AugmentConfig& augment, InputMode mode, int sparse_frames,
                                 std::int64_t iterations, NetworkParams init, const TrainHooks& hooks) {
  config.validate();
  if (tasks.empty()) throw ContractError("conventional_train needs at least one training task");
  if (iterations < 0) throw ConfigError("iterations must be >= 0");
  if (mode == InputMode::kSparse && sparse_frames < 1) throw ConfigError("sparse_frames must be >= 1");
  augment.validate();
  NetworkParams phi = std::move(init);
  Optimizer opt(config.optimizer_config(), phi);
  std::vector<Interaction> batch;
  for (std::int64_t it = hooks.start_episode; it < iterations; ++it) {
    const std::uint64_t iseed = derive_seed(config.seed, "iteration", static_cast<std::uint64_t>(it));
    batch.clear();
    std::string first_id;
    for (int b = 0; b < config.minibatch; ++b) {
      const std::uint64_t bseed = derive_seed(iseed, "element", static_cast<std::uint64_t>(b));
      Rng rng(derive_seed(bseed, "task"));
      const Task& task = tasks[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(tasks.size()) - 1))];
      if (b == 0) first_id = task.case_id;
      const auto [src, tgt] = pick_labels(task, config.landmark_label_prob, rng);
      // Only the volumes this element uses are transformed.
      Interaction x{task.source_image, task.target_image, *src, *tgt, std::nullopt};
      Volume gland = task.target_gland;
      if (!augment.is_identity()) {
        const Affine a_src = sample_affine(derive_seed(bseed, "augment-source"), augment);
        const Affine a_tgt = sample_affine(derive_seed(bseed, "augment-target"), augment);
        x.source_image = transform_volume(x.source_image, a_src, true);
        x.source_label = transform_volume(x.source_label, a_src, false);
        x.target_input = transform_volume(x.target_input, a_tgt, true);
        x.target_label = transform_volume(x.target_label, a_tgt, false);
        if (mode == InputMode::kSparse) gland = transform_volume(gland, a_tgt, false);
      }
      if (mode == InputMode::kSparse) {
        const std::int64_t n = gland.grid()[kSliceAxis];
        const FrameMask mask = sample_training_mask(derive_seed(bseed, "mask"), sparse_frames, sparse_frames, n,
                                                    training_extent(gland, sparse_frames));
        x.target_input = apply_mask(x.target_input, mask);
      }
      batch.push_back(std::move(x));
    }
    double loss = 0.0;
    try {
      loss = task_level_step(phi, batch, opt, config.loss);
    } catch (const NumericalFault& f) {
      throw NumericalFault(with_context(f.what(), it, "iteration", first_id));
    }
    if (hooks.on_episode) hooks.on_episode({it, first_id, loss, 0.0});
    const std::int64_t done = it + 1;
    if (hooks.on_checkpoint && ((hooks.checkpoint_every > 0 && done % hooks.checkpoint_every == 0) || done == iterations)) {
      hooks.on_checkpoint(phi, done);
    }
  }
  return phi;
}

SweepSchedule schedule_for(const Task& task, int f_min, int f_max) {
  const SliceRange extent = gland_extent(task.target_gland, kSliceAxis, 1);
  return build_sweep_schedule(f_min, f_max, extent, task.target_gland.grid()[kSliceAxis], kSliceAxis);
}

Interaction few_shot_interaction(const Task& task, const FrameMask& mask) {
  return {task.source_image, apply_mask(task.target_image, mask), task.source_gland,
          apply_mask(task.target_gland, mask), mask};
}

AdaptationReport meta_test_adapt(const NetworkParams& init, const Task& task, const SweepSchedule& schedule,
                                 const AdaptConfig& config) {
  config.validate();
  if (task.source_landmarks.size() != task.target_landmarks.size() || task.target_landmarks.empty()) {
    throw DataError("task " + task.case_id + " has no usable landmark pairs");
  }
  AdaptationReport report;
  report.case_id = task.case_id;
  report.adapted = init;
  NetworkParams& params = report.adapted;
  Optimizer opt(OptimizerConfig{config.optimizer, config.beta_task}, params);
  std::vector<Volume> target_lms;
  for (const Landmark& lm : task.target_landmarks) target_lms.push_back(lm.label);

  auto evaluate = [&](int frames, int updates, double loss) {
    const FrameMask mask = schedule.mask_with(frames);
    const DisplacementField ddf = forward(params, task.source_image,
                                          config.full_target_input ? task.target_image : apply_mask(task.target_image, mask));
    std::vector<Volume> warped;
    for (const Landmark& lm : task.source_landmarks) warped.push_back(warp_volume(lm.label, ddf));
    const TreResult t = tre(warped, target_lms);
    AdaptationRow row;
    row.frames = frames;
    row.grad_updates = updates;
    row.loss = loss;
    row.tre_mm = t.tre_mm;
    row.dsc = dsc(warp_volume(task.source_gland, ddf), task.target_gland, config.dsc_threshold);
    row.excluded_landmarks = t.excluded;
    row.params_hash = params_hash(params);
    report.rows.push_back(std::move(row));
  };
  auto frozen_loss = [&](int frames) {
    const Interaction x = few_shot_interaction(task, schedule.mask_with(frames));
    return minibatch_gradient(params, std::span<const Interaction>(&x, 1), config.loss).loss;
  };

  evaluate(schedule.f_min, 0, frozen_loss(schedule.f_min));
  for (std::size_t j = 0; j < schedule.updates.size(); ++j) {
    const int frames = schedule.f_min + static_cast<int>(j) + 1;
    if (!config.few_shot) {
      evaluate(frames, 0, frozen_loss(frames));
      continue;
    }
    const Interaction x = few_shot_interaction(task, schedule.updates[j]);
    double loss = 0.0;
    try {
      loss = task_level_step(params, std::span<const Interaction>(&x, 1), opt, config.loss);
    } catch (const NumericalFault& f) {
      throw NumericalFault(with_context(f.what(), static_cast<std::int64_t>(j), "update", task.case_id));
    }
    evaluate(frames, static_cast<int>(j) + 1, loss);
  }
  return report;
}

}  // namespace metareg
