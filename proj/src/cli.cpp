#include "defield/cli.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "defield/cohort.hpp"
#include "defield/defanalysis.hpp"
#include "defield/phantom.hpp"
#include "defield/stats.hpp"
#include "defield/volume_io.hpp"

#ifndef DEFIELD_DEFAULT_FIXTURE
#define DEFIELD_DEFAULT_FIXTURE "data/patient_outcomes.csv"
#endif

namespace defield {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

void PipelineConfig::validate() const {
  registration.validate();
  auto bad = [](const std::string& what) { throw Error(ErrorCode::InvalidArgument, what); };
  if (bootstrap_resamples < 100) bad("bootstrap_resamples must be >= 100");
  if (week_limit && *week_limit < 1) bad("week_limit must be >= 1 or 'all'");
  if (!(confidence_level > 0.0 && confidence_level < 1.0)) {
    bad("confidence_level must be in (0, 1)");
  }
}

namespace {

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::Io, path.string() + ": cannot open for writing");
  out << text;
  if (!out) throw Error(ErrorCode::Io, path.string() + ": write failed");
}

void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream is(s);
  while (std::getline(is, item, ',')) {
    const auto b = item.find_first_not_of(" \t");
    if (b == std::string::npos) continue;
    out.push_back(item.substr(b, item.find_last_not_of(" \t") - b + 1));
  }
  return out;
}

std::optional<int> parse_auto_int(const std::string& key, const std::string& v,
                                  const char* auto_word) {
  if (v == auto_word) return std::nullopt;
  try {
    std::size_t used = 0;
    const int n = std::stoi(v, &used);
    if (used == v.size()) return n;
  } catch (const std::exception&) {
  }
  throw Error(ErrorCode::InvalidArgument,
              key + " must be an integer or '" + auto_word + "', got '" + v + "'");
}

json optional_json(const std::optional<double>& v) {
  return v ? json(*v) : json(nullptr);
}

// ---------------------------------------------------------------------------
// Region statistics shared by `stats` and `classify`

struct RegionReport {
  json record;
  std::string ci_csv;
  std::string box_csv;
};

RegionReport region_report(const RegionSamples& samples, const PipelineConfig& cfg) {
  RegionReport out;
  json regions = json::array();
  std::ostringstream ci, box;
  ci << "region,n,mean,sd,normal_lo,normal_hi,bootstrap_lo,bootstrap_hi\n";
  box << "region,n,mean,whisker_lo,q1,median,q3,whisker_hi\n";
  for (auto l : kOrderingLayout) {
    const auto& v = samples.values(l);
    const std::string name(region_name(l));
    if (v.size() < 2) {
      regions.push_back({{"region", name}, {"n", v.size()}, {"note", "fewer than two samples"}});
      continue;
    }
    const SummaryStats s = summarize(v);
    const Interval nci = normal_ci(s, cfg.confidence_level);
    const Interval bci =
        bootstrap_ci(v, cfg.bootstrap_resamples, cfg.confidence_level, cfg.bootstrap_seed);
    const BoxSummary b = box_summary(v);
    regions.push_back({{"region", name},
                       {"n", s.n},
                       {"normal", ci_record("normal", name, s, nci)},
                       {"bootstrap", ci_record("bootstrap", name, s, bci)}});
    ci << name << ',' << s.n << ',' << format_number(s.mean) << ',' << format_number(s.sd) << ','
       << format_number(nci.lo) << ',' << format_number(nci.hi) << ',' << format_number(bci.lo)
       << ',' << format_number(bci.hi) << '\n';
    box << name << ',' << b.n << ',' << format_number(b.mean) << ',' << format_number(b.whisker_lo)
        << ',' << format_number(b.q1) << ',' << format_number(b.median) << ','
        << format_number(b.q3) << ',' << format_number(b.whisker_hi) << '\n';
  }
  out.record["confidence_level"] = cfg.confidence_level;
  out.record["bootstrap_resamples"] = cfg.bootstrap_resamples;
  out.record["bootstrap_seed"] = cfg.bootstrap_seed;
  out.record["regions"] = std::move(regions);
  try {
    out.record["ordering"] = to_json(population_ordering(samples));
  } catch (const Error& e) {
    if (e.code() != ErrorCode::EmptyInput && e.code() != ErrorCode::DegenerateInput) throw;
    out.record["ordering"] = nullptr;
    out.record["ordering_note"] = e.what();
  }
  out.ci_csv = ci.str();
  out.box_csv = box.str();
  return out;
}

void write_region_report(const fs::path& dir, const RegionReport& r) {
  write_json(dir / "ci_report.json", r.record);
  write_text(dir / "ci_table.csv", r.ci_csv);
  write_text(dir / "boxplot.csv", r.box_csv);
}

VectorField load_field(const std::string& transform_dir, const std::string& field_path,
                       const std::string& direction) {
  if (!field_path.empty()) return read_field(field_path);
  if (transform_dir.empty()) {
    throw Error(ErrorCode::InvalidArgument, "either --transform or --field is required");
  }
  if (direction != "forward" && direction != "backward") {
    throw Error(ErrorCode::InvalidArgument, "--direction must be forward or backward");
  }
  return read_field(fs::path(transform_dir) / (direction + ".vol"));
}

std::size_t nonpositive_interior(const JacobianMap& j) {
  const auto& g = j.geometry();
  std::size_t n = 0;
  for (std::int64_t z = 1; z + 1 < g.dims[2]; ++z)
    for (std::int64_t y = 1; y + 1 < g.dims[1]; ++y)
      for (std::int64_t x = 1; x + 1 < g.dims[0]; ++x)
        if (!(j[g.index(x, y, z)] > 0.0f)) ++n;
  return n;
}

// ---------------------------------------------------------------------------
// Subcommands

struct RegisterArgs {
  std::string source, target;
};

json cmd_register(const RegisterArgs& a, const PipelineConfig& cfg) {
  const Volume src = read_volume(a.source);
  const Volume tgt = read_volume(a.target);
  const RegistrationResult r = register_volumes(src, tgt, cfg.registration);
  write_transform(cfg.out, r.transform, cfg.registration, r.trace);
  const JacobianMap jf = jacobian_map(r.transform.forward);
  json j;
  j["command"] = "register";
  j["transform_dir"] = cfg.out.string();
  j["iterations"] = r.trace.entries.size();
  j["initial_similarity"] = lcc_similarity(src, tgt, cfg.registration.lcc_sigma);
  j["final_similarity"] =
      lcc_similarity(warp_volume(src, r.transform.forward), tgt, cfg.registration.lcc_sigma);
  j["forward_max_norm"] = r.transform.forward.max_norm();
  j["forward_mean_norm"] = r.transform.forward.mean_norm();
  j["forward_min_jacobian"] = jf.min();
  return j;
}

struct FieldArgs {
  std::string transform, field, direction = "forward";
};

json cmd_jacobian(const FieldArgs& a, const PipelineConfig& cfg) {
  const JacobianMap jm = jacobian_map(load_field(a.transform, a.field, a.direction));
  fs::create_directories(cfg.out);
  write_jacobian(cfg.out / "jacobian.vol", jm);
  return {{"command", "jacobian"},
          {"output", (cfg.out / "jacobian.vol").string()},
          {"min", jm.min()},
          {"mean", jm.mean()},
          {"nonpositive_interior_voxels", nonpositive_interior(jm)}};
}

struct RegionsArgs {
  FieldArgs field;
  std::string prev_mask, next_mask;
  int week = 0;
};

json cmd_regions(const RegionsArgs& a, const PipelineConfig& cfg) {
  const VectorField g = load_field(a.field.transform, a.field.field, a.field.direction);
  const Mask prev = read_mask(a.prev_mask);
  const Mask next = read_mask(a.next_mask);
  require_same_geometry(prev.geometry(), g.geometry(), "regions (previous mask vs field)");
  const RegionPartition part = partition_regions(warp_mask(prev, g), next, a.week);
  const RegionSamples samples = collect_samples(jacobian_map(g), part);
  fs::create_directories(cfg.out);
  write_partition(cfg.out / "partition.vol", part);
  write_samples_csv(cfg.out / "samples.csv", samples);
  json regions = json::array();
  for (auto l : kOrderingLayout) {
    regions.push_back({{"region", region_name(l)},
                       {"voxels", part.count(l)},
                       {"samples", samples.count(l)},
                       {"mean", optional_json(samples.mean(l))}});
  }
  return {{"command", "regions"},
          {"week_index", a.week},
          {"partition", (cfg.out / "partition.vol").string()},
          {"samples", (cfg.out / "samples.csv").string()},
          {"regions", regions}};
}

struct StatsArgs {
  std::vector<std::string> samples;
};

json cmd_stats(const StatsArgs& a, const PipelineConfig& cfg) {
  std::vector<RegionSamples> parts;
  for (const auto& p : a.samples) parts.push_back(read_samples_csv(p));
  const RegionSamples pooled = pool(parts);
  const RegionReport r = region_report(pooled, cfg);
  fs::create_directories(cfg.out);
  write_region_report(cfg.out, r);
  json j = r.record;
  j["command"] = "stats";
  return j;
}

struct ClassifyArgs {
  std::string manifest;
};

std::vector<std::size_t> select_ids(const std::vector<PatientRecord>& records,
                                    const std::vector<std::string>& ids, const char* what) {
  std::vector<std::size_t> out;
  if (ids.empty()) {
    for (std::size_t i = 0; i < records.size(); ++i) out.push_back(i);
    return out;
  }
  for (const auto& id : ids) {
    const auto it = std::find_if(records.begin(), records.end(),
                                 [&](const PatientRecord& r) { return r.patient_id == id; });
    if (it == records.end()) {
      throw Error(ErrorCode::InvalidArgument,
                  std::string(what) + " patient '" + id + "' is not in the manifest");
    }
    out.push_back(static_cast<std::size_t>(it - records.begin()));
  }
  return out;
}

json cmd_classify(const ClassifyArgs& a, const PipelineConfig& cfg, std::ostream& err) {
  const auto records = read_manifest(a.manifest);
  const auto test_idx = select_ids(records, cfg.test, "test");
  const auto pop_idx = select_ids(records, cfg.population, "population");

  std::set<std::size_t> wanted(test_idx.begin(), test_idx.end());
  wanted.insert(pop_idx.begin(), pop_idx.end());
  std::vector<PatientRecord> subset;
  std::map<std::size_t, std::size_t> slot;
  for (std::size_t i : wanted) {
    slot[i] = subset.size();
    subset.push_back(records[i]);
  }
  const auto analyses = analyze_cohort(subset, cfg.registration, std::nullopt, cfg.threads);

  json warnings = json::array();
  auto warn = [&](const std::string& msg) {
    warnings.push_back(msg);
    err << "warning: " << msg << '\n';
  };

  const std::string early_name =
      cfg.week_limit ? "first_" + std::to_string(*cfg.week_limit) + "_pairs" : "all_pairs";
  json patients = json::array();
  std::ostringstream csv;
  csv << "patient_id,recist,decision_full,decision_early,mu_R,mu_G,mu_U,mu_N,note\n";
  std::vector<Decision> d_full, d_early;
  std::vector<RecistLabel> labels;
  for (std::size_t i : test_idx) {
    const PatientAnalysis& pa = analyses[slot[i]];
    const RegionMeans full = pa.means();
    const RegionMeans early = pa.means(cfg.week_limit);
    const Classification cf = classify(full);
    const Classification ce = classify(early);
    bool degenerate = true;
    for (auto l : kAllRegions) {
      if (const auto m = full.mean(l); m && *m != 1.0) degenerate = false;
    }
    std::string note = cf.note;
    if (!ce.note.empty() && ce.note != cf.note) note += (note.empty() ? "" : "; ") + ce.note;
    if (!note.empty()) warn("patient " + pa.patient_id + ": " + note);
    if (degenerate) warn("patient " + pa.patient_id + ": no deformation (all means equal 1)");
    patients.push_back({{"patient_id", pa.patient_id},
                        {"recist", recist_name(pa.recist)},
                        {"full", {{"decision", decision_name(cf.decision)}, {"means", to_json(full)}}},
                        {"early", {{"decision", decision_name(ce.decision)}, {"means", to_json(early)}}},
                        {"degenerate", degenerate},
                        {"note", note}});
    auto cell = [](const std::optional<double>& v) { return v ? format_number(*v) : std::string(); };
    csv << pa.patient_id << ',' << recist_name(pa.recist) << ',' << decision_name(cf.decision)
        << ',' << decision_name(ce.decision) << ',' << cell(full.mu_R) << ',' << cell(full.mu_G)
        << ',' << cell(full.mu_U) << ',' << cell(full.mu_N) << ',' << note << '\n';
    d_full.push_back(cf.decision);
    d_early.push_back(ce.decision);
    labels.push_back(pa.recist);
  }

  json j;
  j["command"] = "classify";
  j["week_limit"] = cfg.week_limit ? json(*cfg.week_limit) : json("all");
  j["patients"] = patients;
  json tables = json::object();
  std::ostringstream tcsv;
  tcsv << "column,a,b,c,d,accuracy,precision,recall,odds_ratio,p\n";
  for (const auto& [name, decisions] :
       {std::pair<std::string, const std::vector<Decision>*>{"full", &d_full},
        std::pair<std::string, const std::vector<Decision>*>{early_name, &d_early}}) {
    try {
      ColumnReport c;
      c.column = name;
      c.table = build_contingency(*decisions, labels);
      c.metrics = metrics(c.table);
      c.fisher = fisher_exact(c.table);
      tables[name] = column_json(c);
      tcsv << name << ',' << c.table.a << ',' << c.table.b << ',' << c.table.c << ','
           << c.table.d << ',' << format_percent(c.metrics.accuracy) << ','
           << format_percent(c.metrics.precision) << ',' << format_percent(c.metrics.recall)
           << ',' << format_number(c.fisher.odds_ratio) << ',' << format_number(c.fisher.p)
           << '\n';
    } catch (const Error& e) {
      if (e.code() != ErrorCode::EmptyInput) throw;
      tables[name] = nullptr;
      warn(name + " contingency: " + e.what());
    }
  }
  j["tables"] = tables;

  std::vector<RegionSamples> pop;
  for (std::size_t i : pop_idx) pop.push_back(analyses[slot[i]].pooled());
  const RegionSamples pooled = pool(pop);
  const RegionReport rr = region_report(pooled, cfg);
  if (rr.record.contains("ordering_note")) {
    warn("population ordering: " + rr.record["ordering_note"].get<std::string>());
  }
  j["population"] = rr.record;
  j["warnings"] = warnings;

  fs::create_directories(cfg.out);
  write_json(cfg.out / "classification.json", j);
  write_text(cfg.out / "patients.csv", csv.str());
  write_text(cfg.out / "tables.csv", tcsv.str());
  write_samples_csv(cfg.out / "population_samples.csv", pooled);
  write_region_report(cfg.out, rr);
  return j;
}

struct PhantomArgs {
  std::string mode = "shrink";
  int patients = 10;
  int size = 40;
  std::uint64_t seed = 1;
  int weeks = 4;
  std::string recist;
  std::optional<double> amplitude, drift, boundary_step, noise_sd, focal_width, tumor_contrast;
};

json cmd_phantom(const PhantomArgs& a, const PipelineConfig& cfg) {
  const GrowthMode mode = parse_growth_mode(a.mode);
  if (a.patients < 1) throw Error(ErrorCode::InvalidArgument, "--patients must be >= 1");
  if (a.size < 16) throw Error(ErrorCode::InvalidArgument, "--size must be >= 16");
  std::string label = a.recist;
  if (label.empty()) {
    label = mode == GrowthMode::Shrink ? "PR" : mode == GrowthMode::Grow ? "PD" : "SD";
  }
  parse_recist(label);
  std::vector<CohortPatientSpec> specs;
  const int width = a.patients >= 100 ? 3 : 2;
  for (int i = 0; i < a.patients; ++i) {
    PhantomSpec s = PhantomSpec::defaults(mode, a.size, a.seed + static_cast<std::uint64_t>(i));
    s.weeks = a.weeks;
    if (a.amplitude) s.amplitude = *a.amplitude;
    if (a.drift) s.drift = *a.drift;
    if (a.boundary_step) s.boundary_step = *a.boundary_step;
    if (a.noise_sd) s.noise_sd = *a.noise_sd;
    if (a.focal_width) s.focal_width = *a.focal_width;
    if (a.tumor_contrast) s.tumor_contrast = *a.tumor_contrast;
    std::string id = std::to_string(i + 1);
    id = "P" + std::string(static_cast<std::size_t>(std::max(0, width - int(id.size()))), '0') + id;
    specs.push_back({id, s, label});
  }
  const fs::path manifest = write_synthetic_cohort(cfg.out, specs);
  return {{"command", "phantom"},
          {"mode", growth_mode_name(mode)},
          {"patients", a.patients},
          {"weeks", a.weeks},
          {"size", a.size},
          {"manifest", manifest.string()}};
}

struct ReproduceArgs {
  std::string fixture = DEFIELD_DEFAULT_FIXTURE;
};

json cmd_reproduce(const ReproduceArgs& a, const PipelineConfig& cfg) {
  const ReproductionReport r = reproduce_tables(read_fixture(a.fixture));
  json j = to_json(r);
  fs::create_directories(cfg.out);
  write_json(cfg.out / "tables.json", j);
  write_text(cfg.out / "tables.csv", tables_csv(r));
  json out;
  out["command"] = "reproduce-paper";
  for (auto& [k, v] : j.items()) out[k] = v;
  return out;
}

int emit_error(std::ostream& err, ErrorCode code, const std::string& message) {
  json j{{"error", error_code_name(code)}, {"message", message}};
  err << j.dump() << '\n';
  return static_cast<int>(code);
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Deformation-field analysis of weekly tumor scans", "defield"};
  app.require_subcommand(1, 1);
  app.fallthrough();
  app.set_config("--config", "", "Flat 'key = value' configuration file");
  app.allow_config_extras(CLI::config_extras_mode::error);

  PipelineConfig cfg;
  std::string exp_steps = "auto", week_limit = "3", population, test, out_dir = ".";
  auto& rp = cfg.registration;
  app.add_option("--pyramid_levels", rp.pyramid_levels, "Pyramid levels");
  app.add_option("--iterations_per_level", rp.iterations_per_level, "Iteration budget per level");
  app.add_option("--lcc_sigma", rp.lcc_sigma, "Local correlation window (voxels)");
  app.add_option("--fluid_sigma", rp.fluid_sigma, "Update smoothing (voxels)");
  app.add_option("--diffusion_sigma", rp.diffusion_sigma, "Velocity smoothing (voxels)");
  app.add_option("--exp_steps", exp_steps, "Scaling-and-squaring steps or 'auto'");
  app.add_option("--step_scale", rp.step_scale, "Initial update step");
  app.add_option("--convergence_tol", rp.convergence_tol, "Relative gain that ends a level");
  app.add_option("--bootstrap_resamples", cfg.bootstrap_resamples, "Bootstrap resamples");
  app.add_option("--bootstrap_seed", cfg.bootstrap_seed, "Bootstrap seed");
  app.add_option("--week_limit", week_limit, "Week pairs in the early column, or 'all'");
  app.add_option("--population", population, "Comma-separated population patient ids");
  app.add_option("--test", test, "Comma-separated test patient ids");
  app.add_option("--out", out_dir, "Output directory");
  app.add_option("--confidence_level", cfg.confidence_level, "Confidence level");
  app.add_option("--threads", cfg.threads, "Worker threads (0 = hardware)");

  RegisterArgs reg;
  auto* c_reg = app.add_subcommand("register", "Register a source volume onto a target");
  c_reg->add_option("--source", reg.source, "Source volume (.vol)")->required();
  c_reg->add_option("--target", reg.target, "Target volume (.vol)")->required();

  FieldArgs jac;
  auto* c_jac = app.add_subcommand("jacobian", "Jacobian determinant map of a transform");
  c_jac->add_option("--transform", jac.transform, "Transform directory");
  c_jac->add_option("--field", jac.field, "Displacement field (.vol)");
  c_jac->add_option("--direction", jac.direction, "forward or backward");

  RegionsArgs rg;
  auto* c_rg = app.add_subcommand("regions", "Partition two delineations and sample J");
  c_rg->add_option("--transform", rg.field.transform, "Transform directory");
  c_rg->add_option("--field", rg.field.field, "Forward displacement field (.vol)");
  c_rg->add_option("--prev-mask", rg.prev_mask, "Earlier week delineation")->required();
  c_rg->add_option("--next-mask", rg.next_mask, "Later week delineation")->required();
  c_rg->add_option("--week", rg.week, "Index of the earlier week");

  StatsArgs st;
  auto* c_st = app.add_subcommand("stats", "Region statistics from samples CSV files");
  c_st->add_option("--samples", st.samples, "Samples CSV (repeatable)")->required();

  ClassifyArgs cl;
  auto* c_cl = app.add_subcommand("classify", "Classify every patient of a cohort manifest");
  c_cl->add_option("--manifest", cl.manifest, "Cohort manifest CSV")->required();

  PhantomArgs ph;
  auto* c_ph = app.add_subcommand("phantom", "Write a synthetic cohort");
  c_ph->add_option("--mode", ph.mode, "shrink, grow or stable");
  c_ph->add_option("--patients", ph.patients, "Number of patients");
  c_ph->add_option("--size", ph.size, "Cubic grid side");
  c_ph->add_option("--seed", ph.seed, "Seed of the first patient");
  c_ph->add_option("--weeks", ph.weeks, "Weeks per patient");
  c_ph->add_option("--recist", ph.recist, "Response label written to the manifest");
  c_ph->add_option("--amplitude", ph.amplitude, "Focal radial gain");
  c_ph->add_option("--drift", ph.drift, "Delineation drift per week (voxels)");
  c_ph->add_option("--boundary_step", ph.boundary_step, "Radius change per week (voxels)");
  c_ph->add_option("--noise_sd", ph.noise_sd, "Image noise deviation");
  c_ph->add_option("--focal_width", ph.focal_width, "Focal map width at the initial radius");
  c_ph->add_option("--tumor_contrast", ph.tumor_contrast, "Intensity offset inside the tumor");

  ReproduceArgs rpa;
  auto* c_rp = app.add_subcommand("reproduce-paper",
                                  "Contingency tables, metrics and Fisher tests from the "
                                  "per-patient outcome fixture");
  c_rp->add_option("--fixture", rpa.fixture, "Fixture CSV");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::FileError& e) {
    return emit_error(err, ErrorCode::FileNotFound, e.what());
  } catch (const CLI::ParseError& e) {
    return emit_error(err, ErrorCode::InvalidArgument, e.what());
  }

  try {
    rp.exp_steps = parse_auto_int("exp_steps", exp_steps, "auto");
    cfg.week_limit = parse_auto_int("week_limit", week_limit, "all");
    cfg.population = split_list(population);
    cfg.test = split_list(test);
    cfg.out = out_dir;
    cfg.validate();

    json result;
    if (c_reg->parsed()) result = cmd_register(reg, cfg);
    else if (c_jac->parsed()) result = cmd_jacobian(jac, cfg);
    else if (c_rg->parsed()) result = cmd_regions(rg, cfg);
    else if (c_st->parsed()) result = cmd_stats(st, cfg);
    else if (c_cl->parsed()) result = cmd_classify(cl, cfg, err);
    else if (c_ph->parsed()) result = cmd_phantom(ph, cfg);
    else if (c_rp->parsed()) result = cmd_reproduce(rpa, cfg);
    out << result.dump(2) << '\n';
    return 0;
  } catch (const Error& e) {
    return emit_error(err, e.code(), e.what());
  } catch (const fs::filesystem_error& e) {
    return emit_error(err, ErrorCode::Io, e.what());
  } catch (const std::bad_alloc&) {
    return emit_error(err, ErrorCode::Io, "out of memory");
  }
}

}  // namespace defield
