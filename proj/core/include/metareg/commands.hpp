#pragma once

#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

#include "metareg/config.hpp"
#include "metareg/dataset_io.hpp"
#include "metareg/evalstats.hpp"

namespace metareg {

// File names inside command output directories.
inline constexpr const char* kCheckpointFile = "checkpoint.bin";
inline constexpr const char* kTrainInfoFile = "train_info.txt";
inline constexpr const char* kCurveFile = "training_curve.csv";
inline constexpr const char* kConfigFile = "config.json";
inline constexpr const char* kCasesFile = "adapt_cases.csv";
inline constexpr const char* kSummaryFile = "adapt_summary.csv";
inline constexpr const char* kBoxFile = "adapt_box.csv";
inline constexpr const char* kParamsFile = "adapt_params.csv";
inline constexpr const char* kCompareFile = "compare.csv";

// Generates both splits under out_dir and writes the manifest.
Manifest cmd_generate_data(const ExperimentConfig& config, const std::string& out_dir);

// Trains according to config.train.mode from the dataset's train split and
// writes the checkpoint, training curve and config into out_dir. An existing
// checkpoint for the same config is resumed.
Checkpoint cmd_train(const ExperimentConfig& config, const std::string& dataset_dir, const std::string& out_dir,
                     std::ostream& log);

// Runs the meta-test sweep on every case of `split` and writes per-case,
// summary, box-statistics and parameter-hash CSVs into out_dir.
std::vector<AdaptationReport> cmd_adapt(const ExperimentConfig& config, const std::string& checkpoint_path,
                                        const std::string& dataset_dir, const std::string& split,
                                        const std::string& out_dir, std::ostream& log);

struct MethodInput {
  std::string name;
  std::string cases_csv;  // per-case adaptation CSV
};

struct MethodComparison {
  std::string name;
  int cases = 0;
  double median_tre_mm = 0.0;
  double mean_dsc = 0.0;
  BoxStats tre_box;
  bool is_baseline = false;
  bool identical = false;  // final TREs equal the baseline's case by case
  TTestResult ttest;       // against the baseline; unset for the baseline
};

// Compares final-row TRE across methods with paired t-tests against the
// baseline (empty: the first method). Writes compare.csv when out_dir is set.
std::vector<MethodComparison> cmd_compare(const std::vector<MethodInput>& methods, const std::string& baseline,
                                          const std::string& out_dir, std::ostream& out);

// Renders every adaptation summary found in run_dir (and its immediate
// subdirectories) as a text table with the few-shot TRE trend.
void cmd_report(const std::string& run_dir, bool paper_reference, std::ostream& out);

// Per-case adaptation CSV reader: rows keyed by case id in file order.
std::vector<CaseMetrics> read_cases_csv(const std::string& path);

}  // namespace metareg
