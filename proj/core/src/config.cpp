#include "metareg/config.hpp"

#include <fstream>
#include <functional>
#include <set>
#include <sstream>

#include "json.hpp"
#include "metareg/rng.hpp"

namespace metareg {

NLOHMANN_JSON_SERIALIZE_ENUM(OptimizerKind, {{OptimizerKind::kAdam, "adam"}, {OptimizerKind::kSgd, "sgd"}})
NLOHMANN_JSON_SERIALIZE_ENUM(TrainMode, {{TrainMode::kMeta, "meta"},
                                         {TrainMode::kJoint, "joint"},
                                         {TrainMode::kConventionalDense, "conventional-dense"},
                                         {TrainMode::kConventionalSparse, "conventional-sparse"},
                                         {TrainMode::kNone, "none"}})

namespace {

using json = nlohmann::json;

// Walks every config field once; the same visit drives writing and reading.
struct Writer {
  json root = json::object();
  json* cur = &root;
  std::vector<json*> stack;

  void begin(const char* name) {
    stack.push_back(cur);
    cur = &(*cur)[name];
    *cur = json::object();
  }
  void end() {
    cur = stack.back();
    stack.pop_back();
  }
  template <class T>
  void field(const char* name, T& value) {
    (*cur)[name] = value;
  }
};

struct Reader {
  const json* cur;
  std::string path;
  std::vector<std::pair<const json*, std::string>> stack;
  std::vector<std::set<std::string>> known{{}};
  bool skip = false;
  int skip_depth = 0;

  explicit Reader(const json& root) : cur(&root) { check_object(root, "<root>"); }

  static void check_object(const json& j, const std::string& where) {
    if (!j.is_object()) throw ConfigError("config section " + where + " must be an object");
  }
  void begin(const char* name) {
    known.back().insert(name);
    known.emplace_back();
    stack.emplace_back(cur, path);
    path = path.empty() ? name : path + "." + name;
    if (skip) {
      ++skip_depth;
      return;
    }
    const auto it = cur->find(name);
    if (it == cur->end()) {
      skip = true;
      skip_depth = 1;
      return;
    }
    check_object(*it, path);
    cur = &*it;
  }
  void end() {
    const bool was_skipping = skip;
    if (skip && --skip_depth == 0) skip = false;
    if (!was_skipping) reject_unknown();
    known.pop_back();
    cur = stack.back().first;
    path = stack.back().second;
    stack.pop_back();
  }
  void reject_unknown() const {
    for (const auto& [key, _] : cur->items()) {
      if (!known.back().contains(key)) {
        throw ConfigError("unknown config key '" + (path.empty() ? key : path + "." + key) + "'");
      }
    }
  }
  template <class T>
  void field(const char* name, T& value) {
    known.back().insert(name);
    if (skip) return;
    const auto it = cur->find(name);
    if (it == cur->end()) return;
    try {
      value = it->template get<T>();
    } catch (const json::exception& e) {
      throw ConfigError("config key '" + path + "." + name + "': " + e.what());
    }
  }
};

template <class V>
void visit(ExperimentConfig& c, V& v) {
  v.field("preset", c.preset);
  v.field("seed", c.seed);

  PhantomConfig& p = c.phantom;
  v.begin("phantom");
  v.field("grid", p.grid);
  v.field("spacing", p.spacing);
  v.field("radius_min", p.radius_min);
  v.field("radius_max", p.radius_max);
  v.field("center_jitter_mm", p.center_jitter_mm);
  v.field("boundary_perturbation", p.boundary_perturbation);
  v.field("deformation_amplitude_mm", p.deformation_amplitude_mm);
  v.field("misalignment_mm", p.misalignment_mm);
  v.field("control_spacing_vox", p.control_spacing_vox);
  v.field("landmarks_min", p.landmarks_min);
  v.field("landmarks_max", p.landmarks_max);
  v.field("landmark_radius_min_vox", p.landmark_radius_min_vox);
  v.field("landmark_radius_max_vox", p.landmark_radius_max_vox);
  v.field("texture_amplitude", p.texture_amplitude);
  v.field("speckle", p.speckle);
  v.field("train_cases", p.train_cases);
  v.field("test_cases", p.test_cases);
  v.field("train_index_offset", p.train_index_offset);
  v.field("test_index_offset", p.test_index_offset);
  v.begin("augment");
  v.field("rotation_deg", p.augment.rotation_deg);
  v.field("scale_min", p.augment.scale_min);
  v.field("scale_max", p.augment.scale_max);
  v.field("translation_mm", p.augment.translation_mm);
  v.end();
  v.end();

  ArchConfig& a = c.arch;
  v.begin("arch");
  v.field("grid", a.grid);
  v.field("levels", a.levels);
  v.field("base_channels", a.base_channels);
  v.field("kernel_size", a.kernel_size);
  v.field("head_kernel_size", a.head_kernel_size);
  v.field("leaky_slope", a.leaky_slope);
  v.field("zero_init_heads", a.zero_init_heads);
  v.end();

  TrainSection& t = c.train;
  v.begin("train");
  v.field("mode", t.mode);
  v.field("k", t.params.k);
  v.field("beta_task", t.params.beta_task);
  v.field("beta_meta_init", t.params.beta_meta_init);
  v.field("beta_meta_final", t.params.beta_meta_final);
  v.field("episodes", t.params.episodes);
  v.field("minibatch", t.params.minibatch);
  v.field("optimizer", t.params.optimizer);
  v.field("f_min", t.params.f_min);
  v.field("f_max", t.params.f_max);
  v.field("reptile_final_only", t.params.reptile_final_only);
  v.field("landmark_label_prob", t.params.landmark_label_prob);
  v.field("sparse_frames", t.sparse_frames);
  v.field("iterations", t.iterations);
  v.field("checkpoint_every", t.checkpoint_every);
  v.begin("loss");
  v.field("alpha_label", t.params.loss.alpha_label);
  v.field("alpha_def", t.params.loss.alpha_def);
  v.field("alpha_image", t.params.loss.alpha_image);
  v.field("sigmas_mm", t.params.loss.sigmas_mm);
  v.end();
  v.end();

  AdaptConfig& d = c.adapt;
  v.begin("adapt");
  v.field("beta_task", d.beta_task);
  v.field("optimizer", d.optimizer);
  v.field("f_min", d.f_min);
  v.field("f_max", d.f_max);
  v.field("few_shot", d.few_shot);
  v.field("full_target_input", d.full_target_input);
  v.field("dsc_threshold", d.dsc_threshold);
  v.begin("loss");
  v.field("alpha_label", d.loss.alpha_label);
  v.field("alpha_def", d.loss.alpha_def);
  v.field("alpha_image", d.loss.alpha_image);
  v.field("sigmas_mm", d.loss.sigmas_mm);
  v.end();
  v.end();

  v.begin("eval");
  v.field("baseline", c.eval.baseline);
  v.field("paper_reference", c.eval.paper_reference);
  v.end();

  v.begin("paths");
  v.field("data_dir", c.paths.data_dir);
  v.field("run_dir", c.paths.run_dir);
  v.end();
}

json to_json(const ExperimentConfig& c) {
  Writer w;
  visit(const_cast<ExperimentConfig&>(c), w);
  return w.root;
}

std::string fnv1a_hex(const std::string& text) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  std::ostringstream os;
  os << std::hex;
  os.width(16);
  os.fill('0');
  os << h;
  return os.str();
}

}  // namespace

std::string to_string(TrainMode mode) { return json(mode).get<std::string>(); }

TrainMode train_mode_from_string(const std::string& name) {
  for (TrainMode m : {TrainMode::kMeta, TrainMode::kJoint, TrainMode::kConventionalDense,
                      TrainMode::kConventionalSparse, TrainMode::kNone}) {
    if (to_string(m) == name) return m;
  }
  throw ConfigError("unknown training mode '" + name + "'");
}

void ExperimentConfig::validate() const {
  phantom.validate();
  arch.validate();
  train.params.validate();
  adapt.validate();
  if (arch.grid != phantom.grid) throw ConfigError("arch.grid must equal phantom.grid");
  if (train.sparse_frames < 1) throw ConfigError("train.sparse_frames must be >= 1");
  if (train.iterations < 0) throw ConfigError("train.iterations must be >= 0");
  if (train.checkpoint_every < 0) throw ConfigError("train.checkpoint_every must be >= 0");
  const std::int64_t slices = phantom.grid[kSliceAxis];
  if (train.params.f_max > slices || adapt.f_max > slices || train.sparse_frames > slices) {
    throw ConfigError("frame counts exceed the " + std::to_string(slices) + " available slices");
  }
}

std::string ExperimentConfig::to_json_text() const { return to_json(*this).dump(2) + "\n"; }

ExperimentConfig ExperimentConfig::from_json_text(const std::string& text, const ExperimentConfig& base) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  ExperimentConfig out = base;
  Reader r(doc);
  visit(out, r);
  r.reject_unknown();
  return out;
}

std::string ExperimentConfig::hash() const {
  json j = to_json(*this);
  j.erase("paths");
  return fnv1a_hex(j.dump());
}

std::string ExperimentConfig::data_hash() const {
  const json j = to_json(*this);
  return fnv1a_hex(json{{"phantom", j["phantom"]}, {"seed", seed}}.dump());
}

TrainConfig ExperimentConfig::train_config() const {
  TrainConfig t = train.params;
  t.seed = train_seed(*this);
  return t;
}

std::uint64_t data_seed(const ExperimentConfig& c) { return derive_seed(c.seed, "data"); }
std::uint64_t init_seed(const ExperimentConfig& c) { return derive_seed(c.seed, "init"); }
std::uint64_t train_seed(const ExperimentConfig& c) { return derive_seed(c.seed, "train"); }

std::vector<std::string> preset_names() {
  return {"paper-baseline",     "variant-k1",           "variant-k100",
          "variant-beta0.25",   "variant-beta1.0",      "variant-fmax5",
          "variant-fmax15",     "conventional-dense",   "conventional-sparse5",
          "conventional-sparse10", "random-init",       "large"};
}

ExperimentConfig preset(const std::string& name) {
  ExperimentConfig c;
  c.preset = name;
  if (name == "paper-baseline") {
  } else if (name == "variant-k1") {
    c.train.params.k = 1;
  } else if (name == "variant-k100") {
    c.train.params.k = 100;
  } else if (name == "variant-beta0.25") {
    c.train.params.beta_meta_init = 0.25;
  } else if (name == "variant-beta1.0") {
    c.train.params.beta_meta_init = 1.0;
  } else if (name == "variant-fmax5") {
    c.train.params.f_max = 5;
    c.adapt.f_max = 5;
  } else if (name == "variant-fmax15") {
    c.train.params.f_max = 15;
    c.adapt.f_max = 15;
  } else if (name == "conventional-dense") {
    c.train.mode = TrainMode::kConventionalDense;
    c.adapt.few_shot = false;
    c.adapt.full_target_input = true;
  } else if (name == "conventional-sparse5") {
    c.train.mode = TrainMode::kConventionalSparse;
    c.train.sparse_frames = 5;
  } else if (name == "conventional-sparse10") {
    c.train.mode = TrainMode::kConventionalSparse;
    c.train.sparse_frames = 10;
  } else if (name == "random-init") {
    c.train.mode = TrainMode::kNone;
  } else if (name == "large") {
    // Same physical extent at twice the resolution.
    c.phantom.grid = {64, 64, 64};
    c.phantom.spacing = 0.5;
    c.phantom.control_spacing_vox = 20.0;
    c.phantom.landmark_radius_min_vox = 3.0;
    c.phantom.landmark_radius_max_vox = 4.0;
    c.arch.grid = c.phantom.grid;
    c.arch.levels = 4;
  } else {
    throw ConfigError("unknown preset '" + name + "'");
  }
  return c;
}

ExperimentConfig load_config(const std::string& path, const std::string& preset_name) {
  std::string text;
  std::string base = preset_name;
  if (!path.empty()) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    text = ss.str();
    // A file naming its own preset starts from it unless one was given.
    if (base.empty()) {
      try {
        const json doc = json::parse(text);
        if (doc.is_object() && doc.contains("preset") && doc["preset"].is_string()) {
          base = doc["preset"].get<std::string>();
        }
      } catch (const json::parse_error&) {
      }
    }
  }
  ExperimentConfig c = preset(base.empty() ? "paper-baseline" : base);
  if (!text.empty()) c = ExperimentConfig::from_json_text(text, c);
  if (!preset_name.empty()) c.preset = preset_name;
  c.validate();
  return c;
}

}  // namespace metareg
