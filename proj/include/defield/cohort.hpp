// Patient-level analysis: per-region Jacobian means, the ordering classifier,
// contingency tables, metrics and the population ordering of region means.
#pragma once

#include <array>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "defield/defanalysis.hpp"
#include "defield/registration.hpp"
#include "defield/stats.hpp"

namespace defield {

enum class RecistLabel { CR, PR, SD, PD, DP, NA };

std::string_view recist_name(RecistLabel l);
/// Throws InvalidArgument on unknown labels.
RecistLabel parse_recist(std::string_view s);
inline bool is_responder(RecistLabel l) { return l == RecistLabel::CR || l == RecistLabel::PR; }

/// Per-patient Jacobian means pooled over the analyzed week pairs. A region
/// with no samples has no mean.
struct RegionMeans {
  std::optional<double> mu_R, mu_G, mu_U, mu_N;
  std::array<std::size_t, 4> counts{};  ///< indexed by RegionLabel
  int week_pairs = 0;

  std::optional<double> mean(RegionLabel l) const;
};

RegionMeans region_means(const RegionSamples& pooled, int week_pairs);

enum class Decision { PRClassified, NoDecision };

std::string_view decision_name(Decision d);

struct Classification {
  Decision decision = Decision::NoDecision;
  std::string note;  ///< empty, or why no decision could be made
};

/// PR-classified iff mu_R <= 1, mu_R <= mu_U and mu_R <= mu_G. A missing R, G
/// or U mean gives no-decision with an "insufficient region" note. mu_N is
/// not consulted. Throws NonFinite on non-finite means.
Classification classify(const RegionMeans& m);

struct WeekScan {
  int week = 0;
  std::filesystem::path volume;
  std::filesystem::path mask;
};

struct PatientRecord {
  std::string patient_id;
  std::vector<WeekScan> weeks;  ///< strictly increasing week numbers
  RecistLabel recist = RecistLabel::NA;
};

/// Reads `patient_id,week,volume_path,mask_path,recist`. Relative paths are
/// resolved against the manifest's directory. Patients keep first-seen order.
std::vector<PatientRecord> read_manifest(const std::filesystem::path& path);

/// J samples of one week pair: register, Jacobian of the forward field,
/// warp the earlier mask, partition, collect.
RegionSamples analyze_pair(const Volume& source, const Volume& target, const Mask& source_mask,
                           const Mask& target_mask, const RegistrationParams& params,
                           int week_index = 0);

/// Per-pair samples of one patient, registered once and reused for every
/// week limit.
struct PatientAnalysis {
  std::string patient_id;
  RecistLabel recist = RecistLabel::NA;
  std::vector<RegionSamples> pairs;

  /// Pools the first `week_limit` pairs (all pairs when empty).
  RegionSamples pooled(std::optional<int> week_limit = {}) const;
  RegionMeans means(std::optional<int> week_limit = {}) const;
};

/// Analyzes consecutive week pairs, at most `max_pairs` of them.
PatientAnalysis analyze_patient(const PatientRecord& record, const RegistrationParams& params,
                                std::optional<int> max_pairs = {});

RegionMeans patient_region_means(const PatientRecord& record, const RegistrationParams& params,
                                 std::optional<int> week_limit = {});

/// Runs analyze_patient over a bounded pool of `threads` workers (0 picks
/// the hardware concurrency, capped by DEFIELD_THREADS when set). Results
/// keep input order. The first failure is rethrown after all workers stop.
std::vector<PatientAnalysis> analyze_cohort(
    const std::vector<PatientRecord>& records, const RegistrationParams& params,
    std::optional<int> max_pairs = {}, unsigned threads = 0,
    const std::function<void(const PatientAnalysis&)>& on_done = {});

/// Worker count after applying DEFIELD_THREADS.
unsigned worker_count(unsigned requested, std::size_t jobs);

/// Rows: PR-classified / no-decision. Columns: responder (PR or CR) / not.
/// NA patients are dropped; throws EmptyInput when nothing remains.
Contingency2x2 build_contingency(const std::vector<Decision>& decisions,
                                 const std::vector<RecistLabel>& labels);

/// Percentages; a metric whose denominator is zero is empty.
struct Metrics {
  std::optional<double> accuracy, precision, recall;
};

Metrics metrics(const Contingency2x2& t);

/// One-decimal text for a percentage, "undefined" when empty.
std::string format_percent(const std::optional<double>& v);

inline constexpr std::array<RegionLabel, 4> kOrderingLayout{RegionLabel::R, RegionLabel::G,
                                                            RegionLabel::U, RegionLabel::N};

struct OrderingResult {
  std::array<SummaryStats, 4> summaries;  ///< in kOrderingLayout order
  /// t[i][j] = t(X_i, Y_j) in kOrderingLayout order; zero on the diagonal.
  std::array<std::array<double, 4>, 4> t{};
  std::array<std::array<double, 4>, 4> p{};
  std::array<RegionLabel, 4> ascending{};  ///< regions sorted by mean

  bool holds_expected_order() const;  ///< mu_N <= mu_R <= mu_G <= mu_U
};

/// Pairwise pooled t-tests between all regions. Throws EmptyInput when a
/// region has fewer than two samples.
OrderingResult population_ordering(const RegionSamples& pooled);

// ---------------------------------------------------------------------------
// Published per-patient outcomes

struct FixtureRow {
  std::string patient_id;
  Decision full = Decision::NoDecision;
  Decision three_weeks = Decision::NoDecision;
  RecistLabel rx = RecistLabel::NA;
};

/// `patient_id,classification_full,classification_3w,rx_response`, with
/// Y/N classifications.
std::vector<FixtureRow> read_fixture(const std::filesystem::path& path);

struct ColumnReport {
  std::string column;
  Contingency2x2 table;
  Metrics metrics;
  FisherResult fisher;
};

struct Discrepancy {
  std::string column;
  std::string metric;
  double computed = 0.0;
  double published = 0.0;
};

struct ReproductionReport {
  std::size_t patients = 0;
  std::size_t na = 0;
  std::size_t responders = 0;
  ColumnReport full;
  ColumnReport three_weeks;
  /// Published metrics that differ from the one-decimal computed value by
  /// more than rounding.
  std::vector<Discrepancy> discrepancies;
};

ReproductionReport reproduce_tables(const std::vector<FixtureRow>& rows);

nlohmann::ordered_json to_json(const ReproductionReport& r);
std::string tables_csv(const ReproductionReport& r);

nlohmann::ordered_json to_json(const OrderingResult& r);
nlohmann::ordered_json to_json(const RegionMeans& m);
nlohmann::ordered_json column_json(const ColumnReport& c);

}  // namespace defield
