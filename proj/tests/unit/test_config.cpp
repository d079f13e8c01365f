#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "metareg/config.hpp"

using namespace metareg;

TEST_CASE("baseline preset hyperparameters") {
  const ExperimentConfig c = preset("paper-baseline");
  CHECK(c.train.params.k == 10);
  CHECK(c.train.params.beta_meta_init == 0.5);
  CHECK(c.train.params.beta_meta_final == 1e-5);
  CHECK(c.train.params.f_min == 2);
  CHECK(c.train.params.f_max == 10);
  CHECK(c.train.params.minibatch == 4);
  CHECK(c.train.params.episodes == 2000);
  CHECK(c.train.mode == TrainMode::kMeta);
  CHECK(c.phantom.train_cases == 60);
  CHECK(c.phantom.test_cases == 30);
  CHECK_NOTHROW(c.validate());
}

TEST_CASE("variant presets change one factor") {
  const ExperimentConfig base = preset("paper-baseline");
  CHECK(preset("variant-k1").train.params.k == 1);
  CHECK(preset("variant-k100").train.params.k == 100);
  CHECK(preset("variant-beta0.25").train.params.beta_meta_init == 0.25);
  CHECK(preset("variant-beta1.0").train.params.beta_meta_init == 1.0);
  const ExperimentConfig f15 = preset("variant-fmax15");
  CHECK(f15.train.params.f_max == 15);
  CHECK(f15.adapt.f_max == 15);
  CHECK(preset("variant-fmax5").adapt.f_max == 5);
  CHECK(f15.phantom == base.phantom);
  CHECK(preset("conventional-sparse10").train.mode == TrainMode::kConventionalSparse);
  CHECK(preset("conventional-sparse5").train.sparse_frames == 5);
  CHECK(preset("random-init").train.mode == TrainMode::kNone);
  const ExperimentConfig dense = preset("conventional-dense");
  CHECK(dense.adapt.full_target_input);
  CHECK(!dense.adapt.few_shot);
  for (const auto& name : preset_names()) CHECK_NOTHROW(preset(name).validate());
  CHECK_THROWS_AS(preset("nope"), ConfigError);
}

TEST_CASE("json round trip and unknown keys") {
  const ExperimentConfig c = preset("variant-k100");
  CHECK(ExperimentConfig::from_json_text(c.to_json_text(), ExperimentConfig{}).to_json_text() == c.to_json_text());
  CHECK_THROWS_AS(ExperimentConfig::from_json_text(R"({"train": {"kk": 3}})", c), ConfigError);
  CHECK_THROWS_AS(ExperimentConfig::from_json_text(R"({"bogus": 1})", c), ConfigError);
  CHECK_THROWS_AS(ExperimentConfig::from_json_text(R"({"train": {"k": "ten"}})", c), ConfigError);
  CHECK_THROWS_AS(ExperimentConfig::from_json_text("{", c), ConfigError);
}

TEST_CASE("hash ignores key order and paths") {
  const ExperimentConfig base = preset("paper-baseline");
  const auto a = ExperimentConfig::from_json_text(R"({"seed": 5, "train": {"k": 3, "episodes": 7}})", base);
  const auto b = ExperimentConfig::from_json_text(R"({"train": {"episodes": 7, "k": 3}, "seed": 5})", base);
  CHECK(a.hash() == b.hash());
  auto moved = a;
  moved.paths.data_dir = "/elsewhere";
  CHECK(moved.hash() == a.hash());
  CHECK(a.hash() != base.hash());
  CHECK(a.data_hash() != base.data_hash());  // seed changed
  auto trained = base;
  trained.train.params.k = 3;
  CHECK(trained.data_hash() == base.data_hash());
}

TEST_CASE("seed sub-streams are distinct") {
  ExperimentConfig c;
  c.seed = 1;
  CHECK(data_seed(c) != init_seed(c));
  CHECK(init_seed(c) != train_seed(c));
  CHECK(c.train_config().seed == train_seed(c));
  auto d = c;
  d.seed = 2;
  CHECK(data_seed(c) != data_seed(d));
}

TEST_CASE("load_config applies the file on top of the preset") {
  const auto path = (std::filesystem::temp_directory_path() / "metareg_test_cfg.json").string();
  {
    std::ofstream f(path);
    f << R"({"preset": "variant-k100", "seed": 9, "train": {"episodes": 4}})";
  }
  const ExperimentConfig c = load_config(path, "");
  CHECK(c.train.params.k == 100);
  CHECK(c.train.params.episodes == 4);
  CHECK(c.seed == 9);
  CHECK(load_config(path, "variant-k1").train.params.k == 1);
  CHECK(load_config("", "").train.params.k == 10);
  {
    std::ofstream f(path);
    f << R"({"train": {"k": 0}})";
  }
  CHECK_THROWS_AS(load_config(path, ""), ConfigError);
  CHECK_THROWS_AS(load_config(path + ".missing", ""), ConfigError);
}
