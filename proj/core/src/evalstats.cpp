#include "metareg/evalstats.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace metareg {

double dsc(const Volume& warped_label, const Volume& target_label, double threshold) {
  if (warped_label.grid() != target_label.grid()) {
    throw DimensionError("dsc: grid mismatch " + shape_str(warped_label.grid()) + " vs " +
                         shape_str(target_label.grid()));
  }
  std::int64_t a = 0, b = 0, both = 0;
  const auto n = warped_label.data.numel();
  for (std::int64_t i = 0; i < n; ++i) {
    const bool x = warped_label.data[i] >= threshold, y = target_label.data[i] >= threshold;
    a += x;
    b += y;
    both += x && y;
  }
  if (a + b == 0) return 1.0;
  return 2.0 * static_cast<double>(both) / static_cast<double>(a + b);
}

TreResult tre(const std::vector<Volume>& warped_landmarks, const std::vector<Volume>& target_landmarks) {
  if (warped_landmarks.size() != target_landmarks.size() || warped_landmarks.empty()) {
    throw ContractError("tre: need equal, nonempty landmark lists (got " + std::to_string(warped_landmarks.size()) +
                        " and " + std::to_string(target_landmarks.size()) + ")");
  }
  TreResult r;
  double sq = 0.0;
  int used = 0;
  for (std::size_t i = 0; i < warped_landmarks.size(); ++i) {
    Vec3 a, b;
    if (!centroid_mm(target_landmarks[i], b)) throw DataError("tre: target landmark " + std::to_string(i) + " is empty");
    if (!centroid_mm(warped_landmarks[i], a)) {
      ++r.excluded;
      continue;
    }
    for (int k = 0; k < 3; ++k) sq += (a[k] - b[k]) * (a[k] - b[k]);
    ++used;
  }
  if (used == 0) throw DataError("tre: every warped landmark is empty");
  r.tre_mm = std::sqrt(sq / used);
  return r;
}

double median(std::vector<double> values) { return percentile(std::move(values), 50.0); }

double mean(const std::vector<double>& values) {
  if (values.empty()) throw ContractError("mean of an empty list");
  double s = 0.0;
  for (double v : values) s += v;
  return s / static_cast<double>(values.size());
}

double sample_sd(const std::vector<double>& values) {
  if (values.size() < 2) return 0.0;
  const double m = mean(values);
  double s = 0.0;
  for (double v : values) s += (v - m) * (v - m);
  return std::sqrt(s / static_cast<double>(values.size() - 1));
}

double mad(const std::vector<double>& values) {
  const double m = median(values);
  std::vector<double> dev;
  dev.reserve(values.size());
  for (double v : values) dev.push_back(std::abs(v - m));
  return median(std::move(dev));
}

double percentile(std::vector<double> values, double p) {
  if (values.empty()) throw ContractError("percentile of an empty list");
  if (!(p >= 0.0 && p <= 100.0)) throw ParameterError("percentile must be in [0, 100]");
  std::sort(values.begin(), values.end());
  const double rank = p / 100.0 * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(rank));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  const double frac = rank - static_cast<double>(lo);
  return values[lo] + frac * (values[hi] - values[lo]);
}

BoxStats tukey_summary(const std::vector<double>& values) {
  return {percentile(values, 25.0), percentile(values, 50.0), percentile(values, 75.0), percentile(values, 10.0),
          percentile(values, 90.0)};
}

std::vector<SummaryRow> summarize(const std::vector<CaseMetrics>& cases) {
  if (cases.empty()) return {};
  const auto& ref = cases.front().steps;
  for (const CaseMetrics& c : cases) {
    if (c.steps.size() != ref.size()) {
      throw ContractError("summarize: case " + c.case_id + " has " + std::to_string(c.steps.size()) +
                          " steps, expected " + std::to_string(ref.size()));
    }
    for (std::size_t j = 0; j < ref.size(); ++j) {
      if (c.steps[j].frames != ref[j].frames || c.steps[j].grad_updates != ref[j].grad_updates) {
        throw ContractError("summarize: case " + c.case_id + " step " + std::to_string(j) +
                            " does not match the step structure of the first case");
      }
    }
  }
  std::vector<SummaryRow> rows;
  for (std::size_t j = 0; j < ref.size(); ++j) {
    std::vector<double> t, d;
    for (const CaseMetrics& c : cases) {
      t.push_back(c.steps[j].tre_mm);
      d.push_back(c.steps[j].dsc);
    }
    rows.push_back({ref[j].frames, ref[j].grad_updates, median(t), sample_sd(t), mean(d), sample_sd(d),
                    static_cast<int>(cases.size())});
  }
  return rows;
}

namespace {

// Continued fraction for the incomplete beta (modified Lentz).
double beta_cf(double a, double b, double x) {
  constexpr int kMaxIter = 500;
  constexpr double kEps = 1e-15;
  constexpr double kTiny = 1e-300;
  const double qab = a + b, qap = a + 1.0, qam = a - 1.0;
  double c = 1.0, d = 1.0 - qab * x / qap;
  if (std::abs(d) < kTiny) d = kTiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= kMaxIter; ++m) {
    const double m2 = 2.0 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::abs(del - 1.0) < kEps) return h;
  }
  throw NumericalFault("incomplete beta continued fraction did not converge");
}

}  // namespace

double incomplete_beta(double a, double b, double x) {
  if (!(a > 0.0 && b > 0.0)) throw ParameterError("incomplete beta needs a, b > 0");
  if (!(x >= 0.0 && x <= 1.0)) throw ParameterError("incomplete beta needs x in [0, 1]");
  if (x == 0.0 || x == 1.0) return x;
  const double ln_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) + b * std::log1p(-x);
  const double front = std::exp(ln_front);
  if (x < (a + 1.0) / (a + b + 2.0)) return front * beta_cf(a, b, x) / a;
  return 1.0 - front * beta_cf(b, a, 1.0 - x) / b;
}

double student_t_cdf(double t, double dof) {
  if (!(dof > 0.0)) throw ParameterError("t distribution needs positive degrees of freedom");
  if (std::isinf(t)) return t > 0 ? 1.0 : 0.0;
  const double x = dof / (dof + t * t);
  const double tail = 0.5 * incomplete_beta(0.5 * dof, 0.5, x);
  return t >= 0.0 ? 1.0 - tail : tail;
}

TTestResult paired_ttest(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) {
    throw ContractError("paired t-test: lengths differ (" + std::to_string(a.size()) + " vs " +
                        std::to_string(b.size()) + ")");
  }
  if (a.size() < 2) throw ContractError("paired t-test needs at least 2 pairs");
  std::vector<double> d(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) d[i] = a[i] - b[i];
  const double m = mean(d);
  const double sd = sample_sd(d);
  TTestResult r;
  r.dof = static_cast<int>(d.size()) - 1;
  if (sd == 0.0) {
    if (m == 0.0) return r;  // identical samples
    throw DataError("paired t-test: differences have zero variance");
  }
  r.t = m / (sd / std::sqrt(static_cast<double>(d.size())));
  const double tail = 0.5 * incomplete_beta(0.5 * r.dof, 0.5, r.dof / (r.dof + r.t * r.t));
  r.p = std::min(1.0, 2.0 * tail);
  return r;
}

}  // namespace metareg
