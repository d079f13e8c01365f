#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "metareg/interact.hpp"
#include "metareg/losses.hpp"
#include "metareg/optim.hpp"
#include "metareg/phantom.hpp"
#include "metareg/regnet.hpp"

namespace metareg {

struct TrainConfig {
  int k = 10;
  double beta_task = 1e-3;
  double beta_meta_init = 0.5;
  double beta_meta_final = 1e-5;
  std::int64_t episodes = 2000;
  int minibatch = 4;
  OptimizerKind optimizer = OptimizerKind::kAdam;
  int f_min = 2;
  int f_max = 10;
  std::uint64_t seed = 0;
  // Canonical Reptile: move towards the last inner snapshot only.
  bool reptile_final_only = false;
  // Probability that an interaction is supervised by a landmark pair instead
  // of the gland pair.
  double landmark_label_prob = 0.5;
  LossWeights loss;

  void validate() const;  // throws ConfigError
  OptimizerConfig optimizer_config() const { return {optimizer, beta_task}; }
};

// One network evaluation: the network sees (source_image, target_input); the
// loss compares warp(source_label) with target_label. With a loss mask the
// warped label is restricted to the acquired slices.
struct Interaction {
  Volume source_image;
  Volume target_input;
  Volume source_label;
  Volume target_label;
  std::optional<FrameMask> loss_mask;
};

struct LossAndGrads {
  double loss = 0.0;
  ParamGrads grads;  // mean over the minibatch
};

// Per-element tapes, reduced in element order.
LossAndGrads minibatch_gradient(const NetworkParams& params, std::span<const Interaction> batch,
                                const LossWeights& weights);

// One optimizer update on the minibatch; returns the mean loss before the
// update. Throws NumericalFault on a non-finite loss or gradient.
double task_level_step(NetworkParams& params, std::span<const Interaction> batch, Optimizer& optimizer,
                       const LossWeights& weights);

// Random training interaction: target input masked to a random frame set,
// complete (unmasked) supervision labels.
Interaction sample_interaction(const Task& task, const TrainConfig& config, std::uint64_t seed);

struct EpisodeTrace {
  std::string task_id;
  std::vector<NetworkParams> snapshots;  // phi*_1 .. phi*_k
  std::vector<double> losses;
};

// k inner steps from params with fresh minibatches; the inner optimizer
// starts from a clean state.
EpisodeTrace run_episode(const NetworkParams& params, const Task& task, const TrainConfig& config,
                         std::uint64_t episode_seed);

// phi - beta * mean_m(phi - phi*_m)
NetworkParams reptile_update(const NetworkParams& phi, std::span<const NetworkParams> snapshots, double beta_meta);

// Linear from beta_meta_init at iteration 0 to beta_meta_final at the last
// episode (episodes - 1); held there afterwards.
double meta_lr(std::int64_t iteration, const TrainConfig& config);

struct EpisodeRecord {
  std::int64_t episode = 0;
  std::string task_id;
  double mean_inner_loss = 0.0;
  double beta_meta = 0.0;
};

struct TrainHooks {
  std::int64_t start_episode = 0;  // resume point; per-episode seeds make resuming exact
  std::int64_t checkpoint_every = 0;
  std::function<void(const EpisodeRecord&)> on_episode;
  // Called with the parameters after `episodes_done` episodes.
  std::function<void(const NetworkParams&, std::int64_t episodes_done)> on_checkpoint;
};

// Episode e draws everything from eseed = derive_seed(config.seed, "episode", e):
// the task index from Rng(derive_seed(eseed, "task")).uniform_int, the
// augmentation from derive_seed(eseed, "augment") and the inner loop from
// derive_seed(eseed, "inner").
NetworkParams meta_train(const std::vector<Task>& tasks, const TrainConfig& config, const AugmentConfig& augment,
                         NetworkParams init, const TrainHooks& hooks = {});

enum class InputMode { kDense, kSparse };

// Plain minibatch training; each minibatch element draws its own task.
// Iterations are logged through the same hooks as episodes (beta_meta 0).
NetworkParams conventional_train(const std::vector<Task>& tasks, const TrainConfig& config,
                                 const AugmentConfig& augment, InputMode mode, int sparse_frames,
                                 std::int64_t iterations, NetworkParams init, const TrainHooks& hooks = {});

struct AdaptConfig {
  double beta_task = 1e-3;
  OptimizerKind optimizer = OptimizerKind::kAdam;
  int f_min = 2;
  int f_max = 10;
  bool few_shot = true;
  // Inference sees the complete target volume (the dense 3D-3D setting).
  bool full_target_input = false;
  double dsc_threshold = 0.5;
  LossWeights loss;

  void validate() const;
};

struct AdaptationRow {
  int frames = 0;
  int grad_updates = 0;
  double loss = 0.0;  // few-shot loss on the row's mask
  double tre_mm = 0.0;
  double dsc = 0.0;
  int excluded_landmarks = 0;
  std::string params_hash;
};

struct AdaptationReport {
  std::string case_id;
  std::vector<AdaptationRow> rows;
  NetworkParams adapted;
};

// Few-shot interaction for a sweep mask: masked target input, gland labels
// restricted to the acquired slices.
Interaction few_shot_interaction(const Task& task, const FrameMask& mask);

// Row 0 is inference with the first f_min frames before any update. Update j
// trains on the mask with f_min + j frames; the row after it infers with
// f_min + j + 1 frames. Without few-shot every row uses the initial weights.
AdaptationReport meta_test_adapt(const NetworkParams& init, const Task& task, const SweepSchedule& schedule,
                                 const AdaptConfig& config);

// Schedule over the task's target gland extent.
SweepSchedule schedule_for(const Task& task, int f_min, int f_max);

}  // namespace metareg
