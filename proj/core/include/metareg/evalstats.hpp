#pragma once

#include <string>
#include <vector>

#include "metareg/volume.hpp"

namespace metareg {

struct StepMetrics {
  int frames = 0;        // F
  int grad_updates = 0;
  double tre_mm = 0.0;
  double dsc = 0.0;

  friend bool operator==(const StepMetrics&, const StepMetrics&) = default;
};

struct CaseMetrics {
  std::string case_id;
  std::vector<StepMetrics> steps;
};

struct SummaryRow {
  int frames = 0;
  int grad_updates = 0;
  double median_tre = 0.0;
  double tre_sd = 0.0;  // sample SD of the raw TREs
  double mean_dsc = 0.0;
  double dsc_sd = 0.0;
  int n_cases = 0;
};

struct TreResult {
  double tre_mm = 0.0;
  int excluded = 0;  // pairs dropped because the warped landmark was empty
};

struct TTestResult {
  double t = 0.0;
  double p = 1.0;
  int dof = 0;
};

struct BoxStats {
  double q1 = 0.0, median = 0.0, q3 = 0.0, p10 = 0.0, p90 = 0.0;
};

double dsc(const Volume& warped_label, const Volume& target_label, double threshold = 0.5);

// RMS distance between centroids of paired landmark labels. Throws DataError
// when every warped landmark is empty.
TreResult tre(const std::vector<Volume>& warped_landmarks, const std::vector<Volume>& target_landmarks);

std::vector<SummaryRow> summarize(const std::vector<CaseMetrics>& cases);

// Two-tailed paired t-test. Throws ContractError on length mismatch and
// DataError when the differences have zero variance.
TTestResult paired_ttest(const std::vector<double>& a, const std::vector<double>& b);

// Regularised incomplete beta I_x(a, b) and the Student t CDF.
double incomplete_beta(double a, double b, double x);
double student_t_cdf(double t, double dof);

// Percentile p in [0, 100] with linear interpolation between closest ranks
// (rank = p/100 * (n - 1)).
double percentile(std::vector<double> values, double p);
BoxStats tukey_summary(const std::vector<double>& values);

double median(std::vector<double> values);
double mean(const std::vector<double>& values);
double sample_sd(const std::vector<double>& values);
// Median absolute deviation from the median.
double mad(const std::vector<double>& values);

}  // namespace metareg
