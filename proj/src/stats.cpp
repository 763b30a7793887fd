#include "defield/stats.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include <boost/math/distributions/normal.hpp>
#include <boost/math/special_functions/beta.hpp>

#include "defield/error.hpp"

namespace defield {

void Contingency2x2::validate() const {
  if (a < 0 || b < 0 || c < 0 || d < 0) {
    throw Error(ErrorCode::InvalidArgument, "contingency cells must be >= 0");
  }
  if (total() == 0) throw Error(ErrorCode::EmptyInput, "contingency table is empty");
}

SummaryStats summarize(std::span<const double> samples) {
  if (samples.empty()) throw Error(ErrorCode::EmptyInput, "summarize: no samples");
  SummaryStats s;
  s.n = samples.size();
  double sum = 0.0;
  for (double v : samples) {
    if (!std::isfinite(v)) throw Error(ErrorCode::NonFinite, "summarize: non-finite sample");
    sum += v;
  }
  s.mean = sum / static_cast<double>(s.n);
  if (s.n > 1) {
    double ss = 0.0;
    for (double v : samples) ss += (v - s.mean) * (v - s.mean);
    s.sd = std::sqrt(ss / static_cast<double>(s.n - 1));
  }
  return s;
}

double normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0)) throw Error(ErrorCode::InvalidArgument, "quantile needs 0 < p < 1");
  return boost::math::quantile(boost::math::normal_distribution<double>(), p);
}

namespace {

void check_level(double level) {
  if (!(level > 0.0 && level < 1.0)) {
    throw Error(ErrorCode::InvalidArgument, "confidence level must be in (0, 1)");
  }
}

}  // namespace

Interval normal_ci(const SummaryStats& s, double level) {
  check_level(level);
  if (s.n < 2) throw Error(ErrorCode::InvalidArgument, "normal_ci needs n >= 2");
  const double z = normal_quantile(0.5 + 0.5 * level);
  const double half = z * s.sd / std::sqrt(static_cast<double>(s.n));
  return {s.mean - half, s.mean + half, level};
}

double quantile_sorted(std::span<const double> sorted, double p) {
  if (sorted.empty()) throw Error(ErrorCode::EmptyInput, "quantile of an empty sample");
  if (!(p >= 0.0 && p <= 1.0)) throw Error(ErrorCode::InvalidArgument, "quantile p outside [0, 1]");
  const double h = p * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

Interval bootstrap_ci(std::span<const double> samples, int resamples, double level,
                      std::uint64_t seed) {
  check_level(level);
  if (samples.empty()) throw Error(ErrorCode::EmptyInput, "bootstrap_ci: no samples");
  if (resamples < 100) throw Error(ErrorCode::InvalidArgument, "bootstrap_ci needs B >= 100");
  const std::size_t n = samples.size();
  std::vector<double> means(static_cast<std::size_t>(resamples));
  std::uniform_int_distribution<std::size_t> pick(0, n - 1);
  for (int r = 0; r < resamples; ++r) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(r)};
    std::mt19937_64 rng(seq);
    double sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) sum += samples[pick(rng)];
    means[static_cast<std::size_t>(r)] = sum / static_cast<double>(n);
  }
  std::sort(means.begin(), means.end());
  const double alpha = 1.0 - level;
  return {quantile_sorted(means, 0.5 * alpha), quantile_sorted(means, 1.0 - 0.5 * alpha), level};
}

TTest pooled_t_test(const SummaryStats& x, const SummaryStats& y) {
  if (x.n < 2 || y.n < 2) throw Error(ErrorCode::InvalidArgument, "t-test needs n >= 2 per group");
  const double nx = static_cast<double>(x.n), ny = static_cast<double>(y.n);
  const double df = nx + ny - 2.0;
  const double sp2 = ((nx - 1.0) * x.sd * x.sd + (ny - 1.0) * y.sd * y.sd) / df;
  if (!(sp2 > 0.0)) {
    throw Error(ErrorCode::DegenerateInput, "t-test: both groups have zero variance");
  }
  TTest r;
  r.df = df;
  r.t = (x.mean - y.mean) / std::sqrt(sp2 * (1.0 / nx + 1.0 / ny));
  // P(|T| > |t|) = I_{df / (df + t^2)}(df / 2, 1 / 2)
  r.p = r.t == 0.0 ? 1.0 : boost::math::ibeta(0.5 * df, 0.5, df / (df + r.t * r.t));
  return r;
}

FisherResult fisher_exact(const Contingency2x2& t) {
  t.validate();
  const std::int64_t r1 = t.a + t.b, r2 = t.c + t.d, c1 = t.a + t.c, n = t.total();
  auto log_choose = [](std::int64_t m, std::int64_t k) {
    return std::lgamma(double(m) + 1) - std::lgamma(double(k) + 1) - std::lgamma(double(m - k) + 1);
  };
  const double log_denom = log_choose(n, c1);
  auto prob = [&](std::int64_t x) {
    return std::exp(log_choose(r1, x) + log_choose(r2, c1 - x) - log_denom);
  };

  FisherResult r;
  const double ad = double(t.a) * double(t.d), bc = double(t.b) * double(t.c);
  if (bc > 0.0) {
    r.odds_ratio = ad / bc;
  } else {
    r.odds_ratio = ad > 0.0 ? std::numeric_limits<double>::infinity()
                            : std::numeric_limits<double>::quiet_NaN();
  }

  const double observed = prob(t.a) * (1.0 + 1e-7);
  double p = 0.0, mass = 0.0;
  for (std::int64_t x = std::max<std::int64_t>(0, c1 - r2); x <= std::min(r1, c1); ++x) {
    const double px = prob(x);
    mass += px;
    if (px <= observed) p += px;
  }
  r.p = std::min(p, 1.0);
  r.hypergeometric_mass = mass;
  return r;
}

BoxSummary box_summary(std::span<const double> samples) {
  const SummaryStats s = summarize(samples);
  std::vector<double> sorted(samples.begin(), samples.end());
  std::sort(sorted.begin(), sorted.end());
  BoxSummary b;
  b.n = s.n;
  b.mean = s.mean;
  b.whisker_lo = quantile_sorted(sorted, 0.01);
  b.q1 = quantile_sorted(sorted, 0.25);
  b.median = quantile_sorted(sorted, 0.5);
  b.q3 = quantile_sorted(sorted, 0.75);
  b.whisker_hi = quantile_sorted(sorted, 0.99);
  return b;
}

// ---------------------------------------------------------------------------

namespace {

nlohmann::ordered_json number_or_null(double v) {
  if (std::isfinite(v)) return v;
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  return nullptr;
}

}  // namespace

nlohmann::ordered_json interval_json(const Interval& iv) {
  return {{"lo", iv.lo}, {"hi", iv.hi}, {"level", iv.level}};
}

nlohmann::ordered_json summary_json(const SummaryStats& s) {
  return {{"n", s.n}, {"mean", s.mean}, {"sd", s.sd}};
}

nlohmann::ordered_json t_test_record(const std::string& x_name, const SummaryStats& x,
                                     const std::string& y_name, const SummaryStats& y,
                                     const TTest& r) {
  return {{"test", "pooled_t"},
          {"inputs", {{x_name, summary_json(x)}, {y_name, summary_json(y)}, {"df", r.df}}},
          {"statistic", r.t},
          {"p", r.p},
          {"interval", nullptr}};
}

nlohmann::ordered_json fisher_record(const Contingency2x2& t, const FisherResult& r) {
  return {{"test", "fisher_exact"},
          {"inputs", {{"a", t.a}, {"b", t.b}, {"c", t.c}, {"d", t.d}}},
          {"statistic", number_or_null(r.odds_ratio)},
          {"p", r.p},
          {"interval", nullptr}};
}

nlohmann::ordered_json ci_record(const std::string& method, const std::string& region,
                                 const SummaryStats& s, const Interval& iv) {
  return {{"test", method + "_ci"},
          {"inputs", {{"region", region}, {"summary", summary_json(s)}}},
          {"statistic", s.mean},
          {"p", nullptr},
          {"interval", interval_json(iv)}};
}

}  // namespace defield
