#include "defield/registration.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include <json.hpp>

#include "defield/volume_io.hpp"

namespace defield {

namespace fs = std::filesystem;

void RegistrationParams::validate() const {
  auto bad = [](const char* what) { throw Error(ErrorCode::InvalidArgument, what); };
  if (pyramid_levels < 1) bad("pyramid_levels must be >= 1");
  if (iterations_per_level < 1) bad("iterations_per_level must be >= 1");
  if (!(lcc_sigma > 0.0)) bad("lcc_sigma must be > 0");
  if (!(fluid_sigma >= 0.0)) bad("fluid_sigma must be >= 0");
  if (!(diffusion_sigma >= 0.0)) bad("diffusion_sigma must be >= 0");
  if (exp_steps && *exp_steps < 1) bad("exp_steps must be >= 1");
  if (!(step_scale > 0.0 && step_scale <= 2.0)) bad("step_scale must be in (0, 2]");
  if (!(convergence_tol >= 0.0)) bad("convergence_tol must be >= 0");
}

// ---------------------------------------------------------------------------
// Local correlation statistics

namespace {

constexpr double kVarianceFloor = 1e-6;

using Buffer = std::vector<double>;

Buffer to_buffer(const Volume& v) { return Buffer(v.data().begin(), v.data().end()); }

double global_variance(std::span<const double> x) {
  const double n = static_cast<double>(x.size());
  const double mean = std::accumulate(x.begin(), x.end(), 0.0) / n;
  double s = 0.0;
  for (double v : x) s += (v - mean) * (v - mean);
  return s / n;
}

Buffer smoothed(Buffer b, const std::array<std::int64_t, 3>& dims, double sigma) {
  gaussian_smooth_inplace(std::span<double>(b), dims, 1, sigma);
  return b;
}

/// Local mean and variance of the fixed image of a pair; constant per level.
struct FixedStats {
  Buffer image;
  Buffer mean;
  Buffer var;
  double floor = 0.0;
};

FixedStats fixed_stats(const Volume& img, double sigma) {
  const auto& dims = img.geometry().dims;
  FixedStats s;
  s.image = to_buffer(img);
  s.mean = smoothed(s.image, dims, sigma);
  Buffer sq(s.image.size());
  for (std::size_t i = 0; i < sq.size(); ++i) sq[i] = s.image[i] * s.image[i];
  s.var = smoothed(std::move(sq), dims, sigma);
  for (std::size_t i = 0; i < s.var.size(); ++i) s.var[i] -= s.mean[i] * s.mean[i];
  s.floor = kVarianceFloor * global_variance(s.image);
  return s;
}

/// Statistics of a moving image against a fixed one.
struct PairStats {
  Buffer mean;
  Buffer var;
  Buffer cov;
  double energy = 0.0;
};

PairStats pair_stats(const Buffer& moving, double moving_floor, const FixedStats& fixed,
                     const std::array<std::int64_t, 3>& dims, double sigma) {
  const std::size_t n = moving.size();
  PairStats p;
  p.mean = smoothed(moving, dims, sigma);
  Buffer sq(n), cross(n);
  for (std::size_t i = 0; i < n; ++i) {
    sq[i] = moving[i] * moving[i];
    cross[i] = moving[i] * fixed.image[i];
  }
  p.var = smoothed(std::move(sq), dims, sigma);
  p.cov = smoothed(std::move(cross), dims, sigma);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    p.var[i] -= p.mean[i] * p.mean[i];
    p.cov[i] -= p.mean[i] * fixed.mean[i];
    if (p.var[i] > moving_floor && fixed.var[i] > fixed.floor) {
      const double r2 = p.cov[i] * p.cov[i] / (p.var[i] * fixed.var[i]);
      total += std::min(r2, 1.0);
    }
  }
  p.energy = total / static_cast<double>(n);
  return p;
}

/// Demons-normalized displacement update that increases the mean squared
/// LCC of (moving, fixed), following the analytic gradient of the squared
/// local correlation with respect to the moving intensities.
VectorField lcc_update(const Volume& moving_img, const Buffer& moving, double moving_floor,
                       const PairStats& p, const FixedStats& fixed, double sigma) {
  const auto& dims = moving_img.geometry().dims;
  const std::size_t n = moving.size();
  Buffer alpha(n, 0.0), alpha_mf(n, 0.0), beta(n, 0.0), beta_mm(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    if (p.var[i] > moving_floor && fixed.var[i] > fixed.floor) {
      const double a = 2.0 * p.cov[i] / (p.var[i] * fixed.var[i]);
      const double b = a * p.cov[i] / p.var[i];
      alpha[i] = a;
      alpha_mf[i] = a * fixed.mean[i];
      beta[i] = b;
      beta_mm[i] = b * p.mean[i];
    }
  }
  alpha = smoothed(std::move(alpha), dims, sigma);
  alpha_mf = smoothed(std::move(alpha_mf), dims, sigma);
  beta = smoothed(std::move(beta), dims, sigma);
  beta_mm = smoothed(std::move(beta_mm), dims, sigma);

  const VectorField grad = gradient_central(moving_img);
  VectorField u(moving_img.geometry());
  for (std::size_t i = 0; i < n; ++i) {
    const double dEdA =
        fixed.image[i] * alpha[i] - alpha_mf[i] - moving[i] * beta[i] + beta_mm[i];
    // Intensity change that the gradient asks for, in the moving image's units.
    const double delta = 0.5 * dEdA * std::max(p.var[i], moving_floor);
    const Vec3 gr = grad.vec(i);
    const double denom = gr.dot(gr) + delta * delta;
    if (denom > 0.0 && delta != 0.0) u.set(i, (-delta / denom) * gr);
  }
  return u;
}

void require_registrable(const Volume& v, const char* which) {
  for (float x : v.data()) {
    if (!std::isfinite(x)) {
      throw Error(ErrorCode::NonFinite, std::string(which) + " volume has non-finite intensities");
    }
  }
  const auto [lo, hi] = std::minmax_element(v.data().begin(), v.data().end());
  if (*lo == *hi) {
    throw Error(ErrorCode::DegenerateInput,
                std::string(which) + " volume is constant; local correlation is undefined");
  }
}

}  // namespace

double lcc_similarity(const Volume& a, const Volume& b, double lcc_sigma) {
  require_same_geometry(a.geometry(), b.geometry(), "lcc_similarity");
  if (!(lcc_sigma > 0.0)) throw Error(ErrorCode::InvalidArgument, "lcc_sigma must be > 0");
  const FixedStats fb = fixed_stats(b, lcc_sigma);
  const Buffer ba = to_buffer(a);
  const double floor_a = kVarianceFloor * global_variance(ba);
  return pair_stats(ba, floor_a, fb, a.geometry().dims, lcc_sigma).energy;
}

// ---------------------------------------------------------------------------
// Field algebra

int auto_exp_steps(const VectorField& velocity) {
  const double m = velocity.max_norm();
  int k = 2;
  while (m / std::ldexp(1.0, k) >= 0.25 && k < 30) ++k;
  return k;
}

VectorField compose(const VectorField& f, const VectorField& g) {
  require_same_geometry(f.geometry(), g.geometry(), "compose");
  const auto& geo = g.geometry();
  VectorField h(geo);
  std::size_t i = 0;
  for (std::int64_t z = 0; z < geo.dims[2]; ++z)
    for (std::int64_t y = 0; y < geo.dims[1]; ++y)
      for (std::int64_t x = 0; x < geo.dims[0]; ++x, ++i) {
        const Vec3 gi = g.vec(i);
        const Vec3 p = Vec3{double(x), double(y), double(z)} - gi;
        h.set(i, gi + trilinear_sample(f, p));
      }
  return h;
}

VectorField exp_velocity(const VectorField& velocity, std::optional<int> exp_steps) {
  for (float c : velocity.data()) {
    if (!std::isfinite(c)) throw Error(ErrorCode::NonFinite, "velocity field is not finite");
  }
  const int k = exp_steps ? *exp_steps : auto_exp_steps(velocity);
  if (k < 1) throw Error(ErrorCode::InvalidArgument, "exp_steps must be >= 1");
  VectorField g = std::ldexp(1.0, -k) * velocity;
  for (int s = 0; s < k; ++s) g = compose(g, g);
  return g;
}

SymmetricTransform make_transform(VectorField velocity, std::optional<int> exp_steps) {
  SymmetricTransform t;
  t.forward = exp_velocity(velocity, exp_steps);
  t.backward = exp_velocity(-velocity, exp_steps);
  t.velocity = std::move(velocity);
  return t;
}

SymmetricTransform invert(const SymmetricTransform& t) {
  SymmetricTransform r;
  r.velocity = -t.velocity;
  r.forward = t.backward;
  r.backward = t.forward;
  return r;
}

// ---------------------------------------------------------------------------
// Symmetric log-domain demons

namespace {

/// State of one direction (moving warped into the fixed frame) at one level.
struct Direction {
  const Volume* moving = nullptr;
  const FixedStats* fixed = nullptr;
  double moving_floor = 0.0;
  Volume warped;
  Buffer warped_buf;
  PairStats stats;
};

void evaluate(Direction& d, const VectorField& disp, double sigma) {
  d.warped = warp_volume(*d.moving, disp);
  d.warped_buf = to_buffer(d.warped);
  d.stats = pair_stats(d.warped_buf, d.moving_floor, *d.fixed, d.warped.geometry().dims, sigma);
}

int usable_levels(const GridGeometry& g, int requested) {
  int levels = 1;
  auto dims = g.dims;
  while (levels < requested) {
    const auto smallest = *std::min_element(dims.begin(), dims.end());
    if (smallest / 2 < 8) break;
    for (auto& d : dims) d /= 2;
    ++levels;
  }
  return levels;
}

}  // namespace

RegistrationResult register_volumes(const Volume& source, const Volume& target,
                                    const RegistrationParams& params) {
  params.validate();
  require_same_geometry(source.geometry(), target.geometry(), "register");
  require_registrable(source, "source");
  require_registrable(target, "target");

  const int levels = usable_levels(source.geometry(), params.pyramid_levels);
  std::vector<Volume> src_pyr{source}, tgt_pyr{target};
  for (int l = 1; l < levels; ++l) {
    src_pyr.push_back(downsample2(src_pyr.back()));
    tgt_pyr.push_back(downsample2(tgt_pyr.back()));
  }

  RegistrationResult result;
  VectorField velocity(src_pyr.back().geometry());
  const double sigma = params.lcc_sigma;

  for (int level = levels - 1; level >= 0; --level) {
    const Volume& S = src_pyr[static_cast<std::size_t>(level)];
    const Volume& T = tgt_pyr[static_cast<std::size_t>(level)];
    if (velocity.geometry() != S.geometry()) velocity = upsample_field(velocity, S.geometry());

    const FixedStats fixed_t = fixed_stats(T, sigma);
    const FixedStats fixed_s = fixed_stats(S, sigma);
    Direction fwd{&S, &fixed_t, fixed_s.floor, {}, {}, {}};
    Direction bwd{&T, &fixed_s, fixed_t.floor, {}, {}, {}};

    SymmetricTransform current = make_transform(velocity, params.exp_steps);
    evaluate(fwd, current.forward, sigma);
    evaluate(bwd, current.backward, sigma);
    double energy = 0.5 * (fwd.stats.energy + bwd.stats.energy);
    double step = params.step_scale;

    for (int it = 0; it < params.iterations_per_level; ++it) {
      const VectorField uf =
          lcc_update(fwd.warped, fwd.warped_buf, fwd.moving_floor, fwd.stats, *fwd.fixed, sigma);
      const VectorField ub =
          lcc_update(bwd.warped, bwd.warped_buf, bwd.moving_floor, bwd.stats, *bwd.fixed, sigma);
      VectorField update = gaussian_smooth(0.5 * (uf + -ub), params.fluid_sigma);
      const double update_norm = step * update.max_norm();

      VectorField candidate_v =
          gaussian_smooth(velocity + step * update, params.diffusion_sigma);
      SymmetricTransform candidate = make_transform(candidate_v, params.exp_steps);
      Direction cf = fwd, cb = bwd;
      evaluate(cf, candidate.forward, sigma);
      evaluate(cb, candidate.backward, sigma);
      const double cand_energy = 0.5 * (cf.stats.energy + cb.stats.energy);

      TraceEntry entry{level, it, energy, update_norm, step, false};
      if (std::isfinite(cand_energy) && cand_energy >= energy) {
        const double gain = cand_energy - energy;
        velocity = std::move(candidate_v);
        current = std::move(candidate);
        fwd = std::move(cf);
        bwd = std::move(cb);
        energy = cand_energy;
        entry.energy = energy;
        entry.accepted = true;
        result.trace.entries.push_back(entry);
        if (gain <= params.convergence_tol * std::abs(energy)) break;
      } else {
        result.trace.entries.push_back(entry);
        step *= 0.5;
        if (step < params.step_scale / 64.0) break;
      }
    }
    if (level == 0) result.transform = std::move(current);
  }
  return result;
}

// ---------------------------------------------------------------------------
// Serialization

void write_transform(const fs::path& dir, const SymmetricTransform& t,
                     const RegistrationParams& params, const ConvergenceTrace& trace) {
  fs::create_directories(dir);
  write_field(dir / "velocity.vol", t.velocity);
  write_field(dir / "forward.vol", t.forward);
  write_field(dir / "backward.vol", t.backward);

  nlohmann::ordered_json j;
  j["params"] = {
      {"pyramid_levels", params.pyramid_levels},
      {"iterations_per_level", params.iterations_per_level},
      {"lcc_sigma", params.lcc_sigma},
      {"fluid_sigma", params.fluid_sigma},
      {"diffusion_sigma", params.diffusion_sigma},
      {"exp_steps", params.exp_steps ? nlohmann::ordered_json(*params.exp_steps)
                                     : nlohmann::ordered_json("auto")},
      {"step_scale", params.step_scale},
      {"convergence_tol", params.convergence_tol},
  };
  auto& entries = j["trace"] = nlohmann::ordered_json::array();
  for (const auto& e : trace.entries) {
    entries.push_back({{"level", e.level},
                       {"iteration", e.iteration},
                       {"energy", e.energy},
                       {"update_max_norm", e.update_max_norm},
                       {"step_scale", e.step_scale},
                       {"accepted", e.accepted}});
  }
  std::ofstream out(dir / "transform.json");
  if (!out) throw Error(ErrorCode::Io, (dir / "transform.json").string() + ": cannot write");
  out << j.dump(2) << '\n';
}

SymmetricTransform read_transform(const fs::path& dir) {
  SymmetricTransform t;
  t.velocity = read_field(dir / "velocity.vol");
  t.forward = read_field(dir / "forward.vol");
  t.backward = read_field(dir / "backward.vol");
  require_same_geometry(t.velocity.geometry(), t.forward.geometry(), "read_transform");
  require_same_geometry(t.velocity.geometry(), t.backward.geometry(), "read_transform");
  return t;
}

}  // namespace defield
