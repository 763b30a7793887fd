// Summary statistics, confidence intervals, the pooled two-sample t-test and
// Fisher's exact test on 2x2 tables.
#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

namespace defield {

struct SummaryStats {
  std::size_t n = 0;
  double mean = 0.0;
  double sd = 0.0;  ///< sample deviation, n - 1 denominator; 0 when n == 1

  /// A single sample has no spread estimate.
  bool degenerate() const { return n < 2; }
};

struct Interval {
  double lo = 0.0;
  double hi = 0.0;
  double level = 0.95;

  double width() const { return hi - lo; }
};

/// Rows: hypothesis satisfied / not satisfied. Columns: PR (or CR) / neither.
struct Contingency2x2 {
  std::int64_t a = 0, b = 0, c = 0, d = 0;

  std::int64_t total() const { return a + b + c + d; }
  /// Throws InvalidArgument on negative cells or an empty table.
  void validate() const;
  bool operator==(const Contingency2x2&) const = default;
};

/// Throws EmptyInput on an empty span, NonFinite on non-finite samples.
SummaryStats summarize(std::span<const double> samples);

/// Standard normal quantile.
double normal_quantile(double p);

/// mean +- z sd / sqrt(n). Requires n >= 2 and 0 < level < 1.
Interval normal_ci(const SummaryStats& s, double level = 0.95);

/// Percentile bootstrap of the mean. Resample i draws from its own
/// generator seeded by (seed, i), so results do not depend on scheduling.
Interval bootstrap_ci(std::span<const double> samples, int resamples = 1000, double level = 0.95,
                      std::uint64_t seed = 0);

/// Linear interpolation between order statistics of an ascending sample.
double quantile_sorted(std::span<const double> sorted, double p);

struct TTest {
  double t = 0.0;
  double p = 1.0;  ///< two-sided
  double df = 0.0;
};

/// Student's two-sample test with pooled variance. t > 0 when x.mean > y.mean.
TTest pooled_t_test(const SummaryStats& x, const SummaryStats& y);

struct FisherResult {
  /// a d / (b c); +inf when b c == 0 < a d, NaN when both products vanish.
  double odds_ratio = 0.0;
  double p = 1.0;  ///< two-sided, tables no more likely than the observed one
  double hypergeometric_mass = 1.0;  ///< total probability over all tables with these margins
};

FisherResult fisher_exact(const Contingency2x2& t);

/// Box-plot record: quartiles, median and whiskers at the 1% and 99%
/// quantiles (a 98% interval).
struct BoxSummary {
  std::size_t n = 0;
  double mean = 0.0;
  double whisker_lo = 0.0;
  double q1 = 0.0;
  double median = 0.0;
  double q3 = 0.0;
  double whisker_hi = 0.0;
};

BoxSummary box_summary(std::span<const double> samples);

// Machine-readable records: {test, inputs, statistic, p, interval}.
nlohmann::ordered_json interval_json(const Interval& iv);
nlohmann::ordered_json summary_json(const SummaryStats& s);
nlohmann::ordered_json t_test_record(const std::string& x_name, const SummaryStats& x,
                                     const std::string& y_name, const SummaryStats& y,
                                     const TTest& r);
nlohmann::ordered_json fisher_record(const Contingency2x2& t, const FisherResult& r);
nlohmann::ordered_json ci_record(const std::string& method, const std::string& region,
                                 const SummaryStats& s, const Interval& iv);

}  // namespace defield
