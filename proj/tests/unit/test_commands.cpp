#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "fixtures.hpp"
#include "metareg/commands.hpp"

using namespace metareg;
using namespace metareg::testing;
namespace fs = std::filesystem;

namespace {

std::string temp_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("metareg_cmd_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p.string();
}

std::string slurp(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), {}};
}

ExperimentConfig tiny_experiment() {
  ExperimentConfig c;
  c.phantom = small_phantom();
  c.phantom.train_cases = 3;
  c.phantom.test_cases = 2;
  c.arch = small_arch();
  const std::uint64_t keep = c.train.params.seed;
  c.train.params = small_train();
  c.train.params.seed = keep;
  c.adapt.f_max = 5;
  c.adapt.loss.sigmas_mm = {0.0, 2.0};
  c.seed = 3;
  return c;
}

void write_cases(const std::string& path, const std::vector<std::pair<std::string, double>>& rows) {
  std::ofstream f(path);
  f << "# config_hash=x\ncase_id,F,grad_updates,tre_mm,dsc\n";
  for (const auto& [id, tre] : rows) f << id << ",2,0,9.0,0.5\n" << id << ",3,1," << tre << ",0.8\n";
}

}  // namespace

TEST_CASE("data generation is byte-reproducible") {
  const ExperimentConfig c = tiny_experiment();
  const std::string a = temp_dir("gen_a"), b = temp_dir("gen_b");
  const Manifest m = cmd_generate_data(c, a);
  cmd_generate_data(c, b);
  CHECK(m.cases.size() == 5);
  CHECK(m.config_hash == c.data_hash());
  for (const auto& e : fs::recursive_directory_iterator(a)) {
    if (!e.is_regular_file()) continue;
    const fs::path rel = fs::relative(e.path(), a);
    CHECK(slurp(e.path().string()) == slurp((fs::path(b) / rel).string()));
  }
}

TEST_CASE("train, adapt and report on a tiny experiment") {
  ExperimentConfig c = tiny_experiment();
  const std::string data = temp_dir("pipe_data"), run = temp_dir("pipe_run");
  cmd_generate_data(c, data);
  std::ostringstream log;
  const Checkpoint ck = cmd_train(c, data, run, log);
  CHECK(ck.metadata.at("episodes") == "2");
  CHECK(ck.metadata.at("config_hash") == c.hash());
  CHECK(load_checkpoint(run + "/" + kCheckpointFile) == ck);
  CHECK(fs::exists(run + "/" + kCurveFile));

  const auto reports = cmd_adapt(c, run + "/" + kCheckpointFile, data, "test", run + "/adapt", log);
  CHECK(reports.size() == 2);
  for (const char* f : {kCasesFile, kSummaryFile, kBoxFile, kParamsFile}) CHECK(fs::exists(run + "/adapt/" + f));
  const auto cases = read_cases_csv(run + "/adapt/" + kCasesFile);
  REQUIRE(cases.size() == 2);
  CHECK(cases[0].steps.front().grad_updates == 0);

  std::ostringstream out;
  cmd_report(run, true, out);
  CHECK(out.str().find("Grad. Updates") != std::string::npos);
  CHECK(out.str().find("7.02") != std::string::npos);
  std::ostringstream plain;
  cmd_report(run, false, plain);
  CHECK(plain.str().find("7.02") == std::string::npos);

  ExperimentConfig other = c;
  other.seed = 4;
  CHECK_THROWS_AS(cmd_train(other, data, temp_dir("pipe_other"), log), DataError);
}

TEST_CASE("random-init mode writes an untrained checkpoint") {
  ExperimentConfig c = tiny_experiment();
  c.train.mode = TrainMode::kNone;
  const std::string data = temp_dir("none_data"), run = temp_dir("none_run");
  cmd_generate_data(c, data);
  std::ostringstream log;
  const Checkpoint ck = cmd_train(c, data, run, log);
  CHECK(ck.metadata.at("episodes") == "0");
  CHECK(ck.params == init_params(c.arch, init_seed(c)));
}

TEST_CASE("compare ranks methods with paired t-tests") {
  const std::string dir = temp_dir("compare");
  const std::vector<double> a{5.1, 4.8, 6.2, 5.9, 4.4, 5.5, 6.0, 4.9};
  const std::vector<double> b{4.2, 4.9, 5.1, 5.0, 4.0, 4.6, 5.2, 4.1};
  std::vector<std::pair<std::string, double>> ra, rb, rc;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const std::string id = "test_00" + std::to_string(i);
    ra.emplace_back(id, a[i]);
    rb.emplace_back(id, b[i]);
    rc.emplace_back(id, b[i]);
  }
  write_cases(dir + "/a.csv", ra);
  write_cases(dir + "/b.csv", rb);
  write_cases(dir + "/c.csv", rc);
  std::ostringstream out;
  const auto rows = cmd_compare({{"a", dir + "/a.csv"}, {"b", dir + "/b.csv"}, {"c", dir + "/c.csv"}}, "b", dir, out);
  REQUIRE(rows.size() == 3);
  CHECK(rows[1].is_baseline);
  CHECK(rows[0].ttest.t == doctest::Approx(5.256830307758529).epsilon(1e-10));
  CHECK(rows[0].ttest.p == doctest::Approx(0.001177407959415776).epsilon(1e-8));
  CHECK(rows[2].identical);
  CHECK(rows[0].median_tre_mm == doctest::Approx(5.3));
  CHECK(fs::exists(dir + "/" + kCompareFile));

  rb.pop_back();
  write_cases(dir + "/short.csv", rb);
  CHECK_THROWS_AS(cmd_compare({{"a", dir + "/a.csv"}, {"s", dir + "/short.csv"}}, "a", "", out), ContractError);
}

TEST_CASE("report handles missing and empty summaries") {
  std::ostringstream out;
  CHECK_THROWS_AS(cmd_report(temp_dir("empty_report"), true, out), DataError);
  const std::string dir = temp_dir("nodata_report");
  std::ofstream(dir + "/" + kSummaryFile) << "# config_hash=x\nF,grad_updates,median_tre_mm,tre_sd_mm,mean_dsc,dsc_sd,n_cases\n";
  cmd_report(dir, true, out);
  CHECK(out.str().find("no data") != std::string::npos);
}
