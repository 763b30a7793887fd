#include "defield/cohort.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <map>
#include <mutex>
#include <sstream>
#include <thread>

#include "defield/volume_io.hpp"

namespace defield {

namespace fs = std::filesystem;

std::string_view recist_name(RecistLabel l) {
  switch (l) {
    case RecistLabel::CR: return "CR";
    case RecistLabel::PR: return "PR";
    case RecistLabel::SD: return "SD";
    case RecistLabel::PD: return "PD";
    case RecistLabel::DP: return "DP";
    case RecistLabel::NA: return "NA";
  }
  return "?";
}

RecistLabel parse_recist(std::string_view s) {
  for (auto l : {RecistLabel::CR, RecistLabel::PR, RecistLabel::SD, RecistLabel::PD,
                 RecistLabel::DP, RecistLabel::NA}) {
    if (s == recist_name(l)) return l;
  }
  throw Error(ErrorCode::InvalidArgument, "unknown response label '" + std::string(s) + "'");
}

std::optional<double> RegionMeans::mean(RegionLabel l) const {
  switch (l) {
    case RegionLabel::N: return mu_N;
    case RegionLabel::U: return mu_U;
    case RegionLabel::R: return mu_R;
    case RegionLabel::G: return mu_G;
  }
  return std::nullopt;
}

RegionMeans region_means(const RegionSamples& pooled, int week_pairs) {
  RegionMeans m;
  m.mu_N = pooled.mean(RegionLabel::N);
  m.mu_U = pooled.mean(RegionLabel::U);
  m.mu_R = pooled.mean(RegionLabel::R);
  m.mu_G = pooled.mean(RegionLabel::G);
  for (auto l : kAllRegions) m.counts[static_cast<int>(l)] = pooled.count(l);
  m.week_pairs = week_pairs;
  return m;
}

std::string_view decision_name(Decision d) {
  return d == Decision::PRClassified ? "PR-classified" : "no-decision";
}

Classification classify(const RegionMeans& m) {
  for (auto l : kAllRegions) {
    const auto v = m.mean(l);
    if (v && !std::isfinite(*v)) throw Error(ErrorCode::NonFinite, "classify: non-finite mean");
  }
  std::string missing;
  for (auto l : {RegionLabel::R, RegionLabel::G, RegionLabel::U}) {
    if (!m.mean(l)) {
      if (!missing.empty()) missing += ", ";
      missing += region_name(l);
    }
  }
  if (!missing.empty()) return {Decision::NoDecision, "insufficient region: " + missing};
  const double r = *m.mu_R;
  const bool ok = r <= 1.0 && r <= *m.mu_U && r <= *m.mu_G;
  return {ok ? Decision::PRClassified : Decision::NoDecision, {}};
}

// ---------------------------------------------------------------------------
// Manifest

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream is(line);
  while (std::getline(is, cell, ',')) {
    const auto b = cell.find_first_not_of(" \t\r");
    const auto e = cell.find_last_not_of(" \t\r");
    out.push_back(b == std::string::npos ? std::string() : cell.substr(b, e - b + 1));
  }
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

std::ifstream open_text(const fs::path& path) {
  if (!fs::exists(path)) throw Error(ErrorCode::FileNotFound, path.string() + ": no such file");
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, path.string() + ": cannot open");
  return in;
}

[[noreturn]] void malformed(const fs::path& path, std::size_t line, const std::string& what) {
  throw Error(ErrorCode::MalformedFile,
              path.string() + ":" + std::to_string(line) + ": " + what);
}

}  // namespace

std::vector<PatientRecord> read_manifest(const fs::path& path) {
  std::ifstream in = open_text(path);
  const fs::path base = path.parent_path();
  std::string line;
  std::size_t lineno = 0;
  if (!std::getline(in, line)) malformed(path, 1, "empty manifest");
  ++lineno;
  const std::vector<std::string> expected{"patient_id", "week", "volume_path", "mask_path",
                                          "recist"};
  if (split_csv_line(line) != expected) {
    malformed(path, lineno, "header must be patient_id,week,volume_path,mask_path,recist");
  }
  std::vector<PatientRecord> records;
  std::map<std::string, std::size_t> index;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto cells = split_csv_line(line);
    if (cells.size() != 5) malformed(path, lineno, "expected 5 columns");
    if (cells[0].empty()) malformed(path, lineno, "empty patient_id");
    int week = 0;
    try {
      std::size_t used = 0;
      week = std::stoi(cells[1], &used);
      if (used != cells[1].size() || week < 0) throw std::invalid_argument("week");
    } catch (const std::exception&) {
      malformed(path, lineno, "week must be a non-negative integer");
    }
    RecistLabel label;
    try {
      label = parse_recist(cells[4]);
    } catch (const Error& e) {
      malformed(path, lineno, e.what());
    }
    auto [it, inserted] = index.try_emplace(cells[0], records.size());
    if (inserted) records.push_back({cells[0], {}, label});
    PatientRecord& rec = records[it->second];
    if (rec.recist != label) malformed(path, lineno, "response label changes within a patient");
    if (!rec.weeks.empty() && week <= rec.weeks.back().week) {
      malformed(path, lineno, "weeks of a patient must be strictly increasing");
    }
    auto resolve = [&](const std::string& p) {
      const fs::path q(p);
      return q.is_absolute() ? q : base / q;
    };
    rec.weeks.push_back({week, resolve(cells[2]), resolve(cells[3])});
  }
  if (records.empty()) throw Error(ErrorCode::EmptyInput, path.string() + ": no patients");
  return records;
}

// ---------------------------------------------------------------------------
// Per-patient analysis

RegionSamples analyze_pair(const Volume& source, const Volume& target, const Mask& source_mask,
                           const Mask& target_mask, const RegistrationParams& params,
                           int week_index) {
  require_same_geometry(source.geometry(), source_mask.geometry(), "analyze_pair");
  require_same_geometry(target.geometry(), target_mask.geometry(), "analyze_pair");
  const RegistrationResult reg = register_volumes(source, target, params);
  const VectorField& g = reg.transform.forward;
  const Mask warped = warp_mask(source_mask, g);
  const RegionPartition part = partition_regions(warped, target_mask, week_index);
  return collect_samples(jacobian_map(g), part);
}

RegionSamples PatientAnalysis::pooled(std::optional<int> week_limit) const {
  std::size_t k = pairs.size();
  if (week_limit) {
    if (*week_limit < 1) throw Error(ErrorCode::InvalidArgument, "week_limit must be >= 1");
    k = std::min(k, static_cast<std::size_t>(*week_limit));
  }
  return pool(std::span<const RegionSamples>(pairs.data(), k));
}

RegionMeans PatientAnalysis::means(std::optional<int> week_limit) const {
  const int used = week_limit ? std::min<int>(*week_limit, static_cast<int>(pairs.size()))
                              : static_cast<int>(pairs.size());
  return region_means(pooled(week_limit), used);
}

PatientAnalysis analyze_patient(const PatientRecord& record, const RegistrationParams& params,
                                std::optional<int> max_pairs) {
  if (record.weeks.size() < 2) {
    throw Error(ErrorCode::InvalidArgument,
                "patient " + record.patient_id + ": at least two weeks are needed");
  }
  if (max_pairs && *max_pairs < 1) {
    throw Error(ErrorCode::InvalidArgument, "week_limit must be >= 1");
  }
  std::size_t n_pairs = record.weeks.size() - 1;
  if (max_pairs) n_pairs = std::min(n_pairs, static_cast<std::size_t>(*max_pairs));

  PatientAnalysis out{record.patient_id, record.recist, {}};
  Volume prev_img = read_volume(record.weeks[0].volume);
  Mask prev_mask = read_mask(record.weeks[0].mask);
  for (std::size_t k = 0; k < n_pairs; ++k) {
    Volume img = read_volume(record.weeks[k + 1].volume);
    Mask mask = read_mask(record.weeks[k + 1].mask);
    out.pairs.push_back(analyze_pair(prev_img, img, prev_mask, mask, params, static_cast<int>(k)));
    prev_img = std::move(img);
    prev_mask = std::move(mask);
  }
  return out;
}

RegionMeans patient_region_means(const PatientRecord& record, const RegistrationParams& params,
                                 std::optional<int> week_limit) {
  return analyze_patient(record, params, week_limit).means(week_limit);
}

unsigned worker_count(unsigned requested, std::size_t jobs) {
  unsigned n = requested ? requested : std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("DEFIELD_THREADS")) {
    char* end = nullptr;
    const long cap = std::strtol(env, &end, 10);
    if (end != env && *end == '\0' && cap >= 1) n = std::min<unsigned>(n, static_cast<unsigned>(cap));
  }
  return static_cast<unsigned>(std::max<std::size_t>(1, std::min<std::size_t>(n, jobs)));
}

std::vector<PatientAnalysis> analyze_cohort(
    const std::vector<PatientRecord>& records, const RegistrationParams& params,
    std::optional<int> max_pairs, unsigned threads,
    const std::function<void(const PatientAnalysis&)>& on_done) {
  params.validate();
  std::vector<PatientAnalysis> results(records.size());
  std::atomic<std::size_t> next{0};
  std::atomic<bool> failed{false};
  std::exception_ptr error;
  std::mutex mu;

  auto worker = [&] {
    while (!failed) {
      const std::size_t i = next++;
      if (i >= records.size()) return;
      try {
        results[i] = analyze_patient(records[i], params, max_pairs);
        if (on_done) {
          std::lock_guard lock(mu);
          on_done(results[i]);
        }
      } catch (...) {
        std::lock_guard lock(mu);
        if (!error) error = std::current_exception();
        failed = true;
      }
    }
  };
  const unsigned n = worker_count(threads, records.size());
  if (n == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (unsigned t = 0; t < n; ++t) pool.emplace_back(worker);
  }
  if (error) std::rethrow_exception(error);
  return results;
}

// ---------------------------------------------------------------------------
// Tables and metrics

Contingency2x2 build_contingency(const std::vector<Decision>& decisions,
                                 const std::vector<RecistLabel>& labels) {
  if (decisions.size() != labels.size()) {
    throw Error(ErrorCode::InvalidArgument, "decisions and labels differ in length");
  }
  Contingency2x2 t;
  for (std::size_t i = 0; i < decisions.size(); ++i) {
    if (labels[i] == RecistLabel::NA) continue;
    const bool yes = decisions[i] == Decision::PRClassified;
    const bool resp = is_responder(labels[i]);
    (yes ? (resp ? t.a : t.b) : (resp ? t.c : t.d)) += 1;
  }
  if (t.total() == 0) {
    throw Error(ErrorCode::EmptyInput, "no patients with a known response remain");
  }
  return t;
}

Metrics metrics(const Contingency2x2& t) {
  t.validate();
  auto pct = [](std::int64_t num, std::int64_t den) -> std::optional<double> {
    if (den == 0) return std::nullopt;
    return 100.0 * double(num) / double(den);
  };
  return {pct(t.a + t.d, t.total()), pct(t.a, t.a + t.b), pct(t.a, t.a + t.c)};
}

std::string format_percent(const std::optional<double>& v) {
  if (!v) return "undefined";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.1f", *v);
  return buf;
}

// ---------------------------------------------------------------------------
// Population ordering

bool OrderingResult::holds_expected_order() const {
  auto mean = [&](RegionLabel l) {
    for (std::size_t i = 0; i < kOrderingLayout.size(); ++i) {
      if (kOrderingLayout[i] == l) return summaries[i].mean;
    }
    return 0.0;
  };
  const double n = mean(RegionLabel::N), r = mean(RegionLabel::R), g = mean(RegionLabel::G),
               u = mean(RegionLabel::U);
  return n <= r && r <= g && g <= u;
}

OrderingResult population_ordering(const RegionSamples& pooled) {
  OrderingResult out;
  for (std::size_t i = 0; i < kOrderingLayout.size(); ++i) {
    const auto l = kOrderingLayout[i];
    if (pooled.count(l) < 2) {
      throw Error(ErrorCode::EmptyInput,
                  "region " + std::string(region_name(l)) + " has fewer than two samples");
    }
    out.summaries[i] = summarize(pooled.values(l));
  }
  for (std::size_t i = 0; i < 4; ++i) {
    out.p[i][i] = 1.0;
    for (std::size_t j = i + 1; j < 4; ++j) {
      const TTest r = pooled_t_test(out.summaries[i], out.summaries[j]);
      out.t[i][j] = r.t;
      out.t[j][i] = -r.t;
      out.p[i][j] = out.p[j][i] = r.p;
    }
  }
  std::array<std::size_t, 4> idx{0, 1, 2, 3};
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    return out.summaries[a].mean < out.summaries[b].mean;
  });
  for (std::size_t k = 0; k < 4; ++k) out.ascending[k] = kOrderingLayout[idx[k]];
  return out;
}

// ---------------------------------------------------------------------------
// Fixture reproduction

std::vector<FixtureRow> read_fixture(const fs::path& path) {
  std::ifstream in = open_text(path);
  std::string line;
  std::size_t lineno = 1;
  if (!std::getline(in, line)) malformed(path, 1, "empty fixture");
  const std::vector<std::string> expected{"patient_id", "classification_full",
                                          "classification_3w", "rx_response"};
  if (split_csv_line(line) != expected) {
    malformed(path, 1,
              "header must be patient_id,classification_full,classification_3w,rx_response");
  }
  auto decision = [&](const std::string& s) {
    if (s == "Y") return Decision::PRClassified;
    if (s == "N") return Decision::NoDecision;
    malformed(path, lineno, "classification must be Y or N, got '" + s + "'");
  };
  std::vector<FixtureRow> rows;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto cells = split_csv_line(line);
    if (cells.size() != 4) malformed(path, lineno, "expected 4 columns");
    FixtureRow row{cells[0], decision(cells[1]), decision(cells[2]), RecistLabel::NA};
    try {
      row.rx = parse_recist(cells[3]);
    } catch (const Error& e) {
      malformed(path, lineno, e.what());
    }
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw Error(ErrorCode::EmptyInput, path.string() + ": no rows");
  return rows;
}

namespace {

struct Published {
  const char* metric;
  double full;
  double three_weeks;
};

// Summary values as printed alongside the per-patient outcomes.
constexpr Published kPublished[] = {
    {"accuracy", 65.7, 65.7},
    {"precision", 75.0, 78.6},
    {"recall", 60.0, 52.4},
};

ColumnReport column_report(const std::string& name, const std::vector<Decision>& d,
                           const std::vector<RecistLabel>& labels) {
  ColumnReport c;
  c.column = name;
  c.table = build_contingency(d, labels);
  c.metrics = metrics(c.table);
  c.fisher = fisher_exact(c.table);
  return c;
}

std::optional<double> metric_by_name(const Metrics& m, std::string_view name) {
  if (name == "accuracy") return m.accuracy;
  if (name == "precision") return m.precision;
  return m.recall;
}

}  // namespace

ReproductionReport reproduce_tables(const std::vector<FixtureRow>& rows) {
  ReproductionReport r;
  std::vector<Decision> full, three;
  std::vector<RecistLabel> labels;
  for (const auto& row : rows) {
    full.push_back(row.full);
    three.push_back(row.three_weeks);
    labels.push_back(row.rx);
    ++r.patients;
    if (row.rx == RecistLabel::NA) ++r.na;
    if (is_responder(row.rx)) ++r.responders;
  }
  r.full = column_report("full", full, labels);
  r.three_weeks = column_report("three_weeks", three, labels);
  for (const auto& p : kPublished) {
    for (const auto* col : {&r.full, &r.three_weeks}) {
      const auto v = metric_by_name(col->metrics, p.metric);
      const double published = col == &r.full ? p.full : p.three_weeks;
      if (v && std::abs(*v - published) > 0.05 + 1e-9) {
        r.discrepancies.push_back({col->column, p.metric, *v, published});
      }
    }
  }
  return r;
}

namespace {

nlohmann::ordered_json optional_number(const std::optional<double>& v) {
  return v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json(nullptr);
}

}  // namespace

nlohmann::ordered_json column_json(const ColumnReport& c) {
  return {{"column", c.column},
          {"contingency", {{"a", c.table.a}, {"b", c.table.b}, {"c", c.table.c}, {"d", c.table.d}}},
          {"metrics",
           {{"accuracy", optional_number(c.metrics.accuracy)},
            {"precision", optional_number(c.metrics.precision)},
            {"recall", optional_number(c.metrics.recall)}}},
          {"metrics_rounded",
           {{"accuracy", format_percent(c.metrics.accuracy)},
            {"precision", format_percent(c.metrics.precision)},
            {"recall", format_percent(c.metrics.recall)}}},
          {"fisher", fisher_record(c.table, c.fisher)}};
}

nlohmann::ordered_json to_json(const ReproductionReport& r) {
  nlohmann::ordered_json j;
  j["patients"] = r.patients;
  j["na"] = r.na;
  j["responders"] = r.responders;
  j["full"] = column_json(r.full);
  j["three_weeks"] = column_json(r.three_weeks);
  auto& d = j["discrepancies"] = nlohmann::ordered_json::array();
  for (const auto& x : r.discrepancies) {
    d.push_back({{"column", x.column},
                 {"metric", x.metric},
                 {"computed", format_percent(x.computed)},
                 {"published", format_percent(x.published)},
                 {"kind", std::abs(x.computed - x.published) <= 0.1 + 1e-9 ? "rounding"
                                                                           : "mismatch"}});
  }
  return j;
}

std::string tables_csv(const ReproductionReport& r) {
  std::ostringstream os;
  os << "column,a,b,c,d,accuracy,precision,recall,odds_ratio,p\n";
  for (const auto* c : {&r.full, &r.three_weeks}) {
    char orbuf[32], pbuf[32];
    std::snprintf(orbuf, sizeof orbuf, "%.4f", c->fisher.odds_ratio);
    std::snprintf(pbuf, sizeof pbuf, "%.5f", c->fisher.p);
    os << c->column << ',' << c->table.a << ',' << c->table.b << ',' << c->table.c << ','
       << c->table.d << ',' << format_percent(c->metrics.accuracy) << ','
       << format_percent(c->metrics.precision) << ',' << format_percent(c->metrics.recall) << ','
       << orbuf << ',' << pbuf << '\n';
  }
  return os.str();
}

nlohmann::ordered_json to_json(const OrderingResult& r) {
  nlohmann::ordered_json j;
  auto& regions = j["regions"] = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i < 4; ++i) {
    regions.push_back({{"region", region_name(kOrderingLayout[i])},
                       {"n", r.summaries[i].n},
                       {"mean", r.summaries[i].mean},
                       {"sd", r.summaries[i].sd}});
  }
  auto t = nlohmann::ordered_json::array();
  auto p = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i < 4; ++i) {
    t.push_back(r.t[i]);
    p.push_back(r.p[i]);
  }
  j["t_matrix"] = std::move(t);
  j["p_matrix"] = std::move(p);
  auto& asc = j["ascending"] = nlohmann::ordered_json::array();
  for (auto l : r.ascending) asc.push_back(region_name(l));
  j["expected_order_holds"] = r.holds_expected_order();
  return j;
}

nlohmann::ordered_json to_json(const RegionMeans& m) {
  nlohmann::ordered_json j;
  for (auto l : kOrderingLayout) {
    j[std::string("mu_") + std::string(region_name(l))] = optional_number(m.mean(l));
  }
  for (auto l : kOrderingLayout) {
    j[std::string("n_") + std::string(region_name(l))] = m.counts[static_cast<int>(l)];
  }
  j["week_pairs"] = m.week_pairs;
  return j;
}

}  // namespace defield
