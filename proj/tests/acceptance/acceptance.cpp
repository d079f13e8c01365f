// End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
// exits non-zero when any criterion fails.
//
//   metareg_acceptance --work DIR [--only 1,5,...]
//
// The work directory is wiped first unless METAREG_ACCEPTANCE_REUSE=1, in
// which case finished trainings are reused (checkpoints resume).

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "gradient_suite.hpp"
#include "fixtures.hpp"
#include "metareg/commands.hpp"
#include "metareg/interact.hpp"
#include "metareg/losses.hpp"
#include "metareg/parallel.hpp"

using namespace metareg;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string sci(double v) {
  std::ostringstream s;
  s << std::scientific << std::setprecision(2) << v;
  return s.str();
}

std::string fixed(double v, int digits = 3) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(digits) << v;
  return s.str();
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::ostream& progress() { return std::cerr << "[acceptance] "; }

// --- criterion 1 ------------------------------------------------------------

Outcome gradient_correctness() {
  const auto t0 = Clock::now();
  constexpr int kSeeds = 20;
  bool ok = true;
  double worst_f = 0.0, worst_d = 0.0;
  std::string failed;
  for (const auto& c : testing::gradient_cases()) {
    for (bool is_double : {false, true}) {
      const auto r = testing::run_case(c, is_double, kSeeds);
      (is_double ? worst_d : worst_f) = std::max(is_double ? worst_d : worst_f, r.max_rel);
      if (!r.pass()) {
        ok = false;
        failed += " " + c.name + (is_double ? "/f64" : "/f32");
      }
    }
  }
  const double secs = seconds_since(t0);
  ok = ok && secs < 120.0;
  return {ok, "max rel err f32 " + sci(worst_f) + " (< 1e-3), f64 " + sci(worst_d) +
                  " (< 1e-6), " + std::to_string(kSeeds) + " seeds, " + fixed(secs, 1) + " s" +
                  (failed.empty() ? "" : ", failed:" + failed)};
}

// --- criterion 2 ------------------------------------------------------------

double bending_of(const Shape& g, const std::function<double(int, double, double, double)>& u) {
  Tensor<double> t({3, g[0], g[1], g[2]});
  std::int64_t i = 0;
  for (int c = 0; c < 3; ++c)
    for (std::int64_t d = 0; d < g[0]; ++d)
      for (std::int64_t h = 0; h < g[1]; ++h)
        for (std::int64_t w = 0; w < g[2]; ++w) t[i++] = u(c, double(d), double(h), double(w));
  Tape<double> tape;
  return bending_energy(tape.constant(t)).value().item();
}

double dice_of(const Tensor<double>& p, const Tensor<double>& q) {
  Tape<double> tape;
  return soft_dice(tape.constant(p), tape.constant(q)).value().item();
}

Outcome loss_oracles() {
  const auto t0 = Clock::now();
  const Shape g{6, 7, 5};
  const double be_const = bending_of(g, [](int c, double, double, double) { return 0.7 * (c + 1); });
  const double be_affine = bending_of(g, [](int c, double d, double h, double w) {
    return 0.3 * d - 1.2 * h + 0.05 * w * (c + 1) + c;
  });
  Tensor<double> a({1, 2, 2, 2}), b({1, 2, 2, 2}), half({1, 2, 2, 2});
  for (int i = 0; i < 8; ++i) {
    a[i] = i < 4 ? 1.0 : 0.0;
    b[i] = i < 4 ? 0.0 : 1.0;
    half[i] = i < 2 || i >= 6 ? 1.0 : 0.0;
  }
  const double same = dice_of(a, a), disjoint = dice_of(a, b), overlap = dice_of(a, half);
  Rng rng(3);
  const auto p = testing::uniform_tensor({1, 6, 6, 6}, rng, 0.0, 1.0);
  const auto q = testing::uniform_tensor({1, 6, 6, 6}, rng, 0.0, 1.0);
  LossWeights w;
  w.sigmas_mm = {0.0};
  Tape<double> tape;
  const double ms = multiscale_dice_loss(tape.constant(p), tape.constant(q), w, 1.0).value().item();
  const double single = dice_of(p, q);
  const double secs = seconds_since(t0);
  const bool ok = std::abs(be_const) < 1e-9 && std::abs(be_affine) < 1e-9 && std::abs(same - 1.0) < 1e-9 &&
                  std::abs(disjoint) < 1e-6 && std::abs(overlap - 0.5) < 1e-6 && std::abs(ms + single) < 1e-12 &&
                  secs < 10.0;
  std::ostringstream d;
  d << std::setprecision(3) << "bending const " << be_const << ", affine " << be_affine << "; dice " << same << " / "
    << disjoint << " / " << overlap << "; multiscale{0} " << ms << " vs -dice " << -single << "; " << fixed(secs, 2)
    << " s";
  return {ok, d.str()};
}

// --- criterion 3 ------------------------------------------------------------

NetworkParams scalar_params(float v) {
  NetworkParams p;
  p.tensors.push_back({"x", Tensor<float>::scalar(v)});
  return p;
}

Outcome reptile_algebra() {
  const auto t0 = Clock::now();
  bool ok = true;
  const std::vector<NetworkParams> two{scalar_params(2.0f), scalar_params(4.0f)};
  ok &= reptile_update(scalar_params(0.0f), two, 0.5).tensors[0].value[0] == 1.5f;
  ok &= reptile_update(scalar_params(3.0f), two, 0.0).tensors[0].value[0] == 3.0f;
  const std::vector<NetworkParams> three{scalar_params(1.0f), scalar_params(2.0f), scalar_params(6.0f)};
  ok &= reptile_update(scalar_params(0.0f), three, 0.25).tensors[0].value[0] == 0.75f;
  ArchConfig arch = testing::small_arch();
  arch.zero_init_heads = false;
  for (std::uint64_t s = 0; s < 5; ++s) {
    const NetworkParams phi = init_params(arch, s), star = init_params(arch, s + 100);
    ok &= reptile_update(phi, std::span<const NetworkParams>(&star, 1), 1.0) == star;
  }
  const TrainConfig tc = preset("paper-baseline").train.params;
  const double first = meta_lr(0, tc), last = meta_lr(tc.episodes - 1, tc);
  ok &= first == 0.5 && last == 1e-5;
  const double secs = seconds_since(t0);
  ok &= secs < 1.0;
  std::ostringstream d;
  d << "fixtures exact, k=1 beta=1 lands on phi*_1; meta_lr " << first << " -> " << last << "; " << fixed(secs, 3)
    << " s";
  return {ok, d.str()};
}

// --- criterion 4 ------------------------------------------------------------

bool nested(const SweepSchedule& s, int f_min) {
  for (std::size_t j = 0; j < s.updates.size(); ++j) {
    if (s.updates[j].frames() != j + static_cast<std::size_t>(f_min)) return false;
    if (j > 0) {
      for (auto idx : s.updates[j - 1].slice_indices) {
        if (!s.updates[j].contains(idx)) return false;
      }
    }
  }
  for (auto idx : s.updates.back().slice_indices) {
    if (!s.inference.contains(idx)) return false;
  }
  return true;
}

Outcome interaction_protocol() {
  const auto t0 = Clock::now();
  bool ok = true;
  std::ostringstream d;
  const std::vector<Task> probe{generate_case(preset("paper-baseline").phantom, 7, "probe")};
  for (const auto& [name, updates] : std::vector<std::pair<std::string, std::size_t>>{
           {"paper-baseline", 8}, {"variant-fmax5", 3}, {"variant-fmax15", 13}}) {
    const ExperimentConfig c = preset(name);
    const SweepSchedule s = schedule_for(probe[0], c.adapt.f_min, c.adapt.f_max);
    const bool good = s.updates.size() == updates && nested(s, c.adapt.f_min) &&
                      s.inference.frames() == static_cast<std::size_t>(c.adapt.f_max);
    ok &= good;
    d << name << ": " << s.updates.size() << " updates F=" << s.updates.front().frames() << ".."
      << s.updates.back().frames() << ", inference " << s.inference.frames() << "; ";
  }
  const double secs = seconds_since(t0);
  ok &= secs < 1.0;
  d << fixed(secs, 3) << " s";
  return {ok, d.str()};
}

// --- criterion 9 ------------------------------------------------------------

Outcome phantom_consistency() {
  const auto t0 = Clock::now();
  const ExperimentConfig c = preset("paper-baseline");
  constexpr int kCases = 100;
  double min_dsc = 1.0, max_lm = 0.0;
  int bad = 0;
  for (int i = 0; i < kCases; ++i) {
    const Task t = generate_case(c.phantom, derive_seed(data_seed(c), "case", static_cast<std::uint64_t>(i)),
                                 "check_" + std::to_string(i));
    const double g = dsc(warp_volume(t.source_gland, t.gt_ddf), t.target_gland);
    double worst = 0.0;
    for (std::size_t l = 0; l < t.source_landmarks.size(); ++l) {
      Vec3 a{}, b{};
      if (!centroid_mm(warp_volume(t.source_landmarks[l].label, t.gt_ddf), a) ||
          !centroid_mm(t.target_landmarks[l].label, b)) {
        worst = INFINITY;
        continue;
      }
      worst = std::max(worst, std::hypot(a[0] - b[0], a[1] - b[1], a[2] - b[2]));
    }
    min_dsc = std::min(min_dsc, g);
    max_lm = std::max(max_lm, worst);
    if (!(g > 0.98) || !(worst < c.phantom.spacing)) ++bad;
  }
  const double secs = seconds_since(t0);
  return {bad == 0 && secs < 120.0, std::to_string(kCases) + " cases, min DSC " + fixed(min_dsc, 4) +
                                        ", max landmark error " + fixed(max_lm) + " mm (voxel " +
                                        fixed(c.phantom.spacing, 1) + " mm), " + std::to_string(bad) + " failing, " +
                                        fixed(secs, 1) + " s"};
}

// --- training pipeline (criteria 5-8) --------------------------------------

struct Pipeline {
  std::string work;
  std::ofstream log_file;

  std::string ensure_data(const ExperimentConfig& c, const std::string& dir) {
    if (fs::exists(dir + "/" + kManifestFile)) {
      try {
        if (read_manifest(dir).config_hash == c.data_hash()) return dir;
      } catch (const Error&) {
      }
    }
    progress() << "generating data in " << dir << std::endl;
    fs::remove_all(dir);
    cmd_generate_data(c, dir);
    return dir;
  }

  std::string train(const ExperimentConfig& c, const std::string& data, const std::string& dir) {
    const auto t0 = Clock::now();
    progress() << "training " << to_string(c.train.mode) << " (" << c.preset << ") in " << dir << std::endl;
    cmd_train(c, data, dir, log_file);
    progress() << "  done in " << fixed(seconds_since(t0), 0) << " s" << std::endl;
    return dir + "/" + kCheckpointFile;
  }

  std::vector<CaseMetrics> adapt(const ExperimentConfig& c, const std::string& ckpt, const std::string& data,
                                 const std::string& dir) {
    progress() << "adapting " << dir << std::endl;
    cmd_adapt(c, ckpt, data, "test", dir, log_file);
    return read_cases_csv(dir + "/" + kCasesFile);
  }
};

std::vector<double> final_tres(const std::vector<CaseMetrics>& cases) {
  std::vector<double> out;
  for (const auto& c : cases) out.push_back(c.steps.back().tre_mm);
  return out;
}

std::string slurp(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) return "<missing " + path + ">";
  return {std::istreambuf_iterator<char>(f), {}};
}

struct MetaRun {
  std::string data, ckpt, dir;
  std::vector<CaseMetrics> few_shot;
  double seconds = 0.0;
};

MetaRun meta_run(Pipeline& p, const ExperimentConfig& c, const std::string& name) {
  const auto t0 = Clock::now();
  MetaRun r;
  r.dir = p.work + "/" + name;
  r.data = p.ensure_data(c, r.dir + "/data");
  r.ckpt = p.train(c, r.data, r.dir + "/train");
  r.few_shot = p.adapt(c, r.ckpt, r.data, r.dir + "/adapt");
  r.seconds = seconds_since(t0);
  return r;
}

Outcome few_shot_trend(const MetaRun& run) {
  const auto rows = summarize(run.few_shot);
  if (rows.size() < 2) return {false, "adaptation produced fewer than two rows"};
  const double tre0 = rows.front().median_tre, tre_final = rows.back().median_tre;
  bool dsc_ok = true;
  double worst_drop = 0.0;
  for (std::size_t j = 1; j < rows.size(); ++j) {
    const double drop = rows[j - 1].mean_dsc - rows[j].mean_dsc;
    worst_drop = std::max(worst_drop, drop);
    if (drop > 0.01) dsc_ok = false;
  }
  const bool tre_ok = tre_final <= 0.8 * tre0;
  std::ostringstream d;
  d << "median TRE " << fixed(tre0) << " -> " << fixed(tre_final) << " mm (ratio " << fixed(tre_final / tre0)
    << ", need <= 0.8); mean DSC " << fixed(rows.front().mean_dsc) << " -> " << fixed(rows.back().mean_dsc)
    << " (largest step drop " << fixed(worst_drop) << ", allowed 0.01); " << rows.back().n_cases << " cases; "
    << fixed(run.seconds / 60.0, 1) << " min";
  return {tre_ok && dsc_ok, d.str()};
}

Outcome determinism(const MetaRun& a, const MetaRun& b) {
  const std::vector<std::string> files{"train/" + std::string(kCurveFile), "train/" + std::string(kCheckpointFile),
                                       "adapt/" + std::string(kCasesFile),   "adapt/" + std::string(kSummaryFile),
                                       "adapt/" + std::string(kBoxFile),     "adapt/" + std::string(kParamsFile)};
  std::string differing;
  for (const auto& f : files) {
    if (slurp(a.dir + "/" + f) != slurp(b.dir + "/" + f)) differing += " " + f;
  }
  for (const auto& e : fs::recursive_directory_iterator(a.data)) {
    if (!e.is_regular_file()) continue;
    const fs::path rel = fs::relative(e.path(), a.data);
    if (slurp(e.path().string()) != slurp((fs::path(b.data) / rel).string())) differing += " data/" + rel.string();
  }
  return {differing.empty(), differing.empty() ? "two serial runs: dataset, checkpoint and " +
                                                     std::to_string(files.size() - 1) + " CSVs byte-identical"
                                               : "differing:" + differing};
}

ExperimentConfig with_preset(const std::string& name) {
  ExperimentConfig c = preset(name);
  c.validate();
  return c;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"metareg acceptance run"};
  std::string work = "acceptance_work";
  std::string only;
  app.add_option("--work", work, "scratch directory for datasets and runs");
  app.add_option("--only", only, "comma-separated criteria to run (default all)");
  CLI11_PARSE(app, argc, argv);

  std::set<int> selected;
  {
    std::stringstream s(only);
    for (std::string tok; std::getline(s, tok, ',');) {
      if (!tok.empty()) selected.insert(std::stoi(tok));
    }
  }
  auto wanted = [&](int c) { return selected.empty() || selected.contains(c); };

  const char* reuse = std::getenv("METAREG_ACCEPTANCE_REUSE");
  if (!(reuse && std::string(reuse) == "1")) fs::remove_all(work);
  fs::create_directories(work);
  set_serial(true);

  std::map<int, Outcome> results;
  auto run = [&](int id, const std::function<Outcome()>& fn) {
    if (!wanted(id)) return;
    try {
      results[id] = fn();
    } catch (const std::exception& e) {
      results[id] = {false, std::string("error: ") + e.what()};
    }
    progress() << "criterion " << id << (results[id].pass ? " PASS" : " FAIL") << std::endl;
  };

  run(1, gradient_correctness);
  run(2, loss_oracles);
  run(3, reptile_algebra);
  run(4, interaction_protocol);
  run(9, phantom_consistency);

  if (wanted(5) || wanted(6) || wanted(7) || wanted(8)) {
    Pipeline p{work, std::ofstream(work + "/training.log")};
    try {
      const ExperimentConfig base = with_preset("paper-baseline");
      const MetaRun a = meta_run(p, base, "meta_a");
      run(5, [&] { return few_shot_trend(a); });

      run(8, [&] {
        const MetaRun b = meta_run(p, base, "meta_b");
        return determinism(a, b);
      });

      const auto meta_fs = final_tres(a.few_shot);
      const double tol = mad(meta_fs);
      std::optional<std::vector<double>> sparse_fs;
      std::optional<std::vector<double>> sparse_nofs;
      auto sparse = [&] {
        if (sparse_fs) return;
        ExperimentConfig c = with_preset("conventional-sparse10");
        const std::string dir = work + "/sparse10";
        const std::string ckpt = p.train(c, a.data, dir + "/train");
        sparse_fs = final_tres(p.adapt(c, ckpt, a.data, dir + "/adapt"));
        c.adapt.few_shot = false;
        sparse_nofs = final_tres(p.adapt(c, ckpt, a.data, dir + "/adapt_nofs"));
      };

      run(6, [&] {
        ExperimentConfig nofs = base;
        nofs.adapt.few_shot = false;
        const auto meta_nofs = final_tres(p.adapt(nofs, a.ckpt, a.data, a.dir + "/adapt_nofs"));
        const ExperimentConfig rc = with_preset("random-init");
        const std::string rdir = work + "/random_init";
        const auto rand_fs = final_tres(p.adapt(rc, p.train(rc, a.data, rdir + "/train"), a.data, rdir + "/adapt"));
        sparse();
        const double m_fs = median(meta_fs), m_nofs = median(meta_nofs), r_fs = median(rand_fs);
        const TTestResult t = paired_ttest(meta_fs, rand_fs);
        const double meta_gain = m_nofs - m_fs;
        const double sparse_gain = median(*sparse_nofs) - median(*sparse_fs);
        const bool ok = m_fs < m_nofs && m_fs < r_fs && t.t < 0.0 && t.p < 0.05 && sparse_gain < 0.5 * meta_gain;
        std::ostringstream d;
        d << "median final TRE meta+few-shot " << fixed(m_fs) << " mm vs meta no few-shot " << fixed(m_nofs)
          << ", random-init+few-shot " << fixed(r_fs) << " (paired t " << fixed(t.t, 2) << ", p " << std::setprecision(3)
          << t.p << "); few-shot gain meta " << fixed(meta_gain) << " mm, conventional-sparse " << fixed(sparse_gain)
          << " mm (need < half)";
        return Outcome{ok, d.str()};
      });

      run(7, [&] {
        sparse();
        const ExperimentConfig dc = with_preset("conventional-dense");
        const std::string ddir = work + "/dense";
        const auto dense = final_tres(p.adapt(dc, p.train(dc, a.data, ddir + "/train"), a.data, ddir + "/adapt"));
        const double m = median(meta_fs), s = median(*sparse_fs), d = median(dense);
        const TTestResult t = paired_ttest(meta_fs, *sparse_fs);
        const bool meta_le_sparse = m <= s + tol;
        const bool dense_le_meta = d <= m + tol;
        std::ostringstream o;
        o << "median final TRE dense " << fixed(d) << " / meta " << fixed(m) << " / sparse(10) " << fixed(s)
          << " mm, tolerance (MAD of meta) " << fixed(tol) << "; meta <= sparse(10) " << (meta_le_sparse ? "holds" : "violated")
          << " (required; paired t meta vs sparse(10) " << fixed(t.t, 2) << ", p " << std::setprecision(3) << t.p
          << "); dense <= meta " << (dense_le_meta ? "holds" : "violated") << " (reported)";
        return Outcome{meta_le_sparse, o.str()};
      });
    } catch (const std::exception& e) {
      for (int id : {5, 6, 7, 8}) {
        if (wanted(id) && !results.contains(id)) results[id] = {false, std::string("error: ") + e.what()};
      }
    }
  }

  static const std::map<int, std::string> names{
      {1, "gradient correctness"},  {2, "analytic loss oracles"}, {3, "reptile algebra"},
      {4, "interaction protocol"},  {5, "few-shot trend"},        {6, "initialization value"},
      {7, "sparse-vs-dense ordering"}, {8, "determinism"},        {9, "phantom self-consistency"}};
  bool all = true;
  for (const auto& [id, o] : results) {
    all &= o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << "  criterion " << id << " (" << names.at(id) << "): " << o.detail
              << std::endl;
  }
  return all ? 0 : 1;
}
