#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "metareg/metalearn.hpp"
#include "metareg/phantom.hpp"
#include "metareg/regnet.hpp"

namespace metareg {

enum class TrainMode { kMeta, kJoint, kConventionalDense, kConventionalSparse, kNone };

std::string to_string(TrainMode mode);
TrainMode train_mode_from_string(const std::string& name);  // throws ConfigError

struct TrainSection {
  TrainConfig params;
  TrainMode mode = TrainMode::kMeta;
  int sparse_frames = 10;
  // Conventional training iterations; 0 means episodes * k (compute matched).
  std::int64_t iterations = 0;
  std::int64_t checkpoint_every = 100;

  std::int64_t conventional_iterations() const {
    return iterations > 0 ? iterations : params.episodes * params.k;
  }
};

struct EvalSection {
  std::string baseline;          // method name used as the t-test reference
  bool paper_reference = true;   // print the published anchors in reports
};

struct PathsSection {
  std::string data_dir = "data";
  std::string run_dir = "runs";
};

// Full experiment description. Serialized as JSON with sections phantom,
// arch, train, adapt, eval and paths; every key is optional.
struct ExperimentConfig {
  std::string preset = "paper-baseline";
  std::uint64_t seed = 0;
  PhantomConfig phantom;
  ArchConfig arch;
  TrainSection train;
  AdaptConfig adapt;
  EvalSection eval;
  PathsSection paths;

  void validate() const;  // throws ConfigError

  // Canonical JSON (sorted keys, fixed formatting).
  std::string to_json_text() const;
  // Applies the keys present in `text` on top of `base`; unknown keys are a
  // ConfigError.
  static ExperimentConfig from_json_text(const std::string& text, const ExperimentConfig& base);

  // FNV-1a of the canonical JSON without the paths section, hex encoded.
  std::string hash() const;
  // Hash of the phantom section and seed only: identifies a dataset.
  std::string data_hash() const;

  // Training parameters with the derived training seed filled in.
  TrainConfig train_config() const;
};

// Named sub-streams of the experiment seed.
std::uint64_t data_seed(const ExperimentConfig& c);
std::uint64_t init_seed(const ExperimentConfig& c);
std::uint64_t train_seed(const ExperimentConfig& c);

std::vector<std::string> preset_names();
ExperimentConfig preset(const std::string& name);  // throws ConfigError

// Preset (default paper-baseline), then the optional JSON file on top.
ExperimentConfig load_config(const std::string& path, const std::string& preset_name);

}  // namespace metareg
