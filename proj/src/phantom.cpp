#include "defield/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>

#include "defield/volume_io.hpp"

namespace defield {

namespace fs = std::filesystem;

namespace {

template <typename Fn>
void for_each_voxel(const GridGeometry& g, Fn&& fn) {
  std::size_t i = 0;
  for (std::int64_t z = 0; z < g.dims[2]; ++z)
    for (std::int64_t y = 0; y < g.dims[1]; ++y)
      for (std::int64_t x = 0; x < g.dims[0]; ++x, ++i)
        fn(i, Vec3{double(x), double(y), double(z)});
}

const double kMaxRadialGain = std::exp(1.5) / 2.0;

}  // namespace

AffineField affine_field(const Mat3& A, const Vec3& b, const GridGeometry& grid) {
  const double det = determinant(A);
  if (!(det > 0.0)) {
    throw Error(ErrorCode::InvalidArgument, "affine_field: det(A) must be positive");
  }
  const Vec3 c = grid.center();
  AffineField out{VectorField(grid), det};
  for_each_voxel(grid, [&](std::size_t i, const Vec3& z) {
    const Vec3 phi = A * (z - c) + c + b;
    out.field.set(i, z - phi);
  });
  return out;
}

void RadialMap::validate() const {
  if (!(width > 0.0)) throw Error(ErrorCode::InvalidArgument, "radial map width must be > 0");
  if (!(amplitude > -1.0 && amplitude < kMaxRadialGain)) {
    throw Error(ErrorCode::InvalidArgument,
                "radial map amplitude must lie in (-1, e^1.5/2) to stay diffeomorphic");
  }
}

Vec3 RadialMap::forward(const Vec3& x) const {
  const Vec3 d = x - center;
  const double r2 = d.dot(d);
  return center + (1.0 + amplitude * std::exp(-r2 / (2.0 * width * width))) * d;
}

Vec3 RadialMap::inverse(const Vec3& y) const {
  const Vec3 d = y - center;
  const double R = d.norm();
  if (R == 0.0 || amplitude == 0.0) return y;
  auto profile = [&](double r) {
    return r * (1.0 + amplitude * std::exp(-r * r / (2.0 * width * width)));
  };
  double lo = 0.0;
  double hi = amplitude < 0.0 ? R / (1.0 + amplitude) : R;
  while (hi - lo > 1e-7) {
    const double mid = 0.5 * (lo + hi);
    (profile(mid) < R ? lo : hi) = mid;
  }
  return center + (0.5 * (lo + hi) / R) * d;
}

double RadialMap::jacobian(const Vec3& x) const {
  const Vec3 d = x - center;
  const double r2 = d.dot(d);
  const double f = amplitude * std::exp(-r2 / (2.0 * width * width));
  const double r_fprime = -(r2 / (width * width)) * f;
  return (1.0 + f) * (1.0 + f) * (1.0 + f + r_fprime);
}

RadialField radial_gaussian_field(const Vec3& center, double a, double width,
                                  const GridGeometry& grid) {
  const RadialMap map{center, a, width};
  map.validate();
  RadialField out{VectorField(grid), Volume(grid)};
  for_each_voxel(grid, [&](std::size_t i, const Vec3& z) {
    out.field.set(i, z - map.forward(z));
    out.jacobian[i] = static_cast<float>(map.jacobian(z));
  });
  return out;
}

// ---------------------------------------------------------------------------
// Textures

namespace {

// Lattice padding around the nominal extent; deformed coordinates may leave
// the grid by a few voxels.
constexpr std::int64_t kTexturePad = 8;

}  // namespace

BlobTexture::BlobTexture(const GridGeometry& extent, std::uint64_t seed, double density,
                         double min_width, double max_width) {
  if (!(density > 0.0) || !(min_width > 0.0) || max_width < min_width) {
    throw Error(ErrorCode::InvalidArgument, "bad blob texture parameters");
  }
  lo_ = {-double(kTexturePad), -double(kTexturePad), -double(kTexturePad)};
  GridGeometry lattice = extent;
  for (int a = 0; a < 3; ++a) lattice.dims[a] = extent.dims[a] + 2 * kTexturePad;
  lattice.spacing = {1.0, 1.0, 1.0};
  lattice.origin = {0.0, 0.0, 0.0};

  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::int64_t> px(0, lattice.dims[0] - 1),
      py(0, lattice.dims[1] - 1), pz(0, lattice.dims[2] - 1);
  std::uniform_real_distribution<double> amp(0.5, 1.0);
  std::bernoulli_distribution sign(0.5);

  // Blobs are impulses smoothed by a Gaussian of their width; a few width
  // classes keep the rendering separable.
  constexpr int kClasses = 3;
  const auto total = static_cast<std::size_t>(density * double(lattice.voxel_count()));
  std::vector<double> sum(lattice.voxel_count(), 0.0);
  for (int c = 0; c < kClasses; ++c) {
    const double w = min_width + (max_width - min_width) * c / double(kClasses - 1);
    const double peak_scale = std::pow(2.0 * std::numbers::pi, 1.5) * w * w * w;
    std::vector<double> layer(lattice.voxel_count(), 0.0);
    for (std::size_t b = 0; b < total / kClasses; ++b) {
      const auto i = lattice.index(px(rng), py(rng), pz(rng));
      layer[i] += (sign(rng) ? 1.0 : -1.0) * amp(rng) * peak_scale;
    }
    gaussian_smooth_inplace(std::span<double>(layer), lattice.dims, 1, w);
    for (std::size_t i = 0; i < sum.size(); ++i) sum[i] += layer[i];
  }
  double mean = 0.0, sq = 0.0;
  for (double v : sum) mean += v;
  mean /= double(sum.size());
  for (double v : sum) sq += (v - mean) * (v - mean);
  const double sd = std::sqrt(sq / double(sum.size()));
  std::vector<float> values(sum.size());
  for (std::size_t i = 0; i < sum.size(); ++i) {
    values[i] = static_cast<float>(sd > 0.0 ? (sum[i] - mean) / sd : 0.0);
  }
  lattice_ = Volume(lattice, std::move(values));
}

double BlobTexture::operator()(const Vec3& p) const { return trilinear_sample(lattice_, p - lo_); }

Volume BlobTexture::render(const GridGeometry& grid) const {
  Volume out(grid);
  for_each_voxel(grid, [&](std::size_t i, const Vec3& z) {
    out[i] = static_cast<float>((*this)(z));
  });
  return out;
}

namespace {

double soft_inside(double signed_depth, double edge) {
  return 1.0 / (1.0 + std::exp(-signed_depth / edge));
}

}  // namespace

Volume blob_phantom(const GridGeometry& grid, std::uint64_t seed, double radius) {
  const BlobTexture texture(grid, seed);
  const Vec3 c = grid.center();
  Volume out(grid);
  for_each_voxel(grid, [&](std::size_t i, const Vec3& z) {
    const double env = soft_inside(radius - (z - c).norm(), 1.5);
    out[i] = static_cast<float>(env * (2.0 + texture(z)));
  });
  return out;
}

Mask blob_support(const GridGeometry& grid, double radius) {
  const Vec3 c = grid.center();
  Mask out(grid);
  for_each_voxel(grid, [&](std::size_t i, const Vec3& z) {
    out[i] = (z - c).norm() <= radius ? 1 : 0;
  });
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic courses

std::string_view growth_mode_name(GrowthMode m) {
  switch (m) {
    case GrowthMode::Shrink: return "shrink";
    case GrowthMode::Grow: return "grow";
    case GrowthMode::Stable: return "stable";
  }
  return "?";
}

GrowthMode parse_growth_mode(std::string_view s) {
  if (s == "shrink") return GrowthMode::Shrink;
  if (s == "grow") return GrowthMode::Grow;
  if (s == "stable") return GrowthMode::Stable;
  throw Error(ErrorCode::InvalidArgument, "unknown growth mode '" + std::string(s) + "'");
}

PhantomSpec PhantomSpec::defaults(GrowthMode mode, std::int64_t n, std::uint64_t seed) {
  PhantomSpec s;
  const double scale = double(n) / 40.0;
  s.grid = GridGeometry::cube(n);
  s.tumor_center = s.grid.center();
  s.tumor_radius = 7.0 * scale;
  s.focal_width = 6.0 * scale;
  s.body_width = double(n);
  s.mode = mode;
  s.seed = seed;
  switch (mode) {
    case GrowthMode::Shrink:
      s.amplitude = -0.15;
      s.drift = 2.5 * scale;
      s.boundary_step = -1.0 * scale;
      s.body_amplitude = 0.03;
      break;
    case GrowthMode::Grow:
      s.amplitude = 0.15;
      s.drift = 1.0 * scale;
      s.boundary_step = 1.5 * scale;
      s.body_amplitude = 0.03;
      break;
    case GrowthMode::Stable:
      s.amplitude = 0.0;
      s.drift = 0.0;
      s.boundary_step = 0.0;
      s.body_amplitude = 0.0;
      break;
  }
  return s;
}

void PhantomSpec::validate() const {
  auto bad = [](const std::string& what) { throw Error(ErrorCode::InvalidArgument, what); };
  grid.validate();
  if (weeks < 2) bad("phantom needs at least 2 weeks");
  const double min_dim = double(*std::min_element(grid.dims.begin(), grid.dims.end()));
  if (!(tumor_radius > 0.0 && tumor_radius < min_dim / 3.0)) {
    bad("tumor radius must be positive and below min dim / 3");
  }
  if (noise_sd < 0.0) bad("noise_sd must be >= 0");
  if (drift < 0.0) bad("drift must be >= 0");
  switch (mode) {
    case GrowthMode::Shrink:
      if (!(amplitude < 0.0)) bad("shrink mode needs a negative amplitude");
      if (boundary_step > 0.0) bad("shrink mode needs boundary_step <= 0");
      break;
    case GrowthMode::Grow:
      if (!(amplitude > 0.0)) bad("grow mode needs a positive amplitude");
      if (boundary_step < 0.0) bad("grow mode needs boundary_step >= 0");
      break;
    case GrowthMode::Stable:
      if (amplitude != 0.0 || drift != 0.0 || boundary_step != 0.0 || body_amplitude != 0.0) {
        bad("stable mode takes no amplitude, drift, boundary step or body motion");
      }
      break;
  }
  RadialMap{tumor_center, amplitude, focal_width}.validate();
  RadialMap{grid.center(), body_amplitude, body_width}.validate();
  const double last_radius = tumor_radius + boundary_step * (weeks - 1);
  if (last_radius < 1.0) bad("tumor radius shrinks below one voxel within the course");
  const double reach = std::max(tumor_radius, last_radius) + drift * (weeks - 1) + 2.0;
  for (int a = 0; a < 3; ++a) {
    if (tumor_center[a] - reach < 1.0 || tumor_center[a] + reach > double(grid.dims[a] - 2)) {
      bad("tumor leaves the grid within the course");
    }
  }
}

namespace {

/// Anatomy motion from week k to week k+1, in week-k coordinates.
struct WeekMotion {
  RadialMap focal;
  RadialMap body;

  Vec3 forward(const Vec3& x) const { return body.forward(focal.forward(x)); }
  Vec3 inverse(const Vec3& y) const { return focal.inverse(body.inverse(y)); }
  double jacobian(const Vec3& x) const {
    return focal.jacobian(x) * body.jacobian(focal.forward(x));
  }
};

}  // namespace

SyntheticCourse synth_course(const PhantomSpec& spec) {
  spec.validate();
  const auto& grid = spec.grid;
  const int weeks = spec.weeks;

  const BlobTexture background(grid, spec.seed * 7919 + 1);

  std::mt19937_64 dir_rng(spec.seed * 7919 + 3);
  std::normal_distribution<double> unit(0.0, 1.0);
  Vec3 dir{unit(dir_rng), unit(dir_rng), unit(dir_rng)};
  dir = (1.0 / dir.norm()) * dir;

  // Delineations live in week-0 coordinates.
  std::vector<Vec3> centers;
  std::vector<double> radii;
  for (int k = 0; k < weeks; ++k) {
    centers.push_back(spec.tumor_center + (spec.drift * k) * dir);
    radii.push_back(spec.tumor_radius + spec.boundary_step * k);
  }

  // motions[k] carries week k into week k+1; its focal center is the next
  // delineation center expressed in week-k coordinates.
  std::vector<WeekMotion> motions;
  for (int k = 0; k + 1 < weeks; ++k) {
    Vec3 p = centers[static_cast<std::size_t>(k + 1)];
    for (const auto& m : motions) p = m.forward(p);
    // The focal width follows the next delineation so every pair sees the same
    // motion relative to the tumor size.
    const double width = spec.focal_width * radii[static_cast<std::size_t>(k + 1)] / radii[0];
    motions.push_back({RadialMap{p, spec.amplitude, width},
                       RadialMap{grid.center(), spec.body_amplitude, spec.body_width}});
  }

  // Week-k coordinates to week-0 coordinates.
  auto to_week0 = [&](Vec3 y, int k) {
    for (int j = k - 1; j >= 0; --j) y = motions[static_cast<std::size_t>(j)].inverse(y);
    return y;
  };
  auto inside = [&](const Vec3& x0, int k) {
    return (x0 - centers[static_cast<std::size_t>(k)]).norm() <= radii[static_cast<std::size_t>(k)];
  };

  SyntheticCourse course;
  for (int k = 0; k < weeks; ++k) {
    Volume img(grid);
    Mask mask(grid);
    std::seed_seq noise_seq{spec.seed, std::uint64_t(k), std::uint64_t(0x5eed)};
    std::mt19937_64 noise_rng(noise_seq);
    std::normal_distribution<double> noise(0.0, spec.noise_sd > 0.0 ? spec.noise_sd : 1.0);
    const Vec3 ck = centers[static_cast<std::size_t>(k)];
    const double rk = radii[static_cast<std::size_t>(k)];
    for_each_voxel(grid, [&](std::size_t i, const Vec3& y) {
      const Vec3 x0 = to_week0(y, k);
      double v = background(x0);
      if (spec.tumor_contrast != 0.0) {
        v += spec.tumor_contrast * soft_inside(rk - (x0 - ck).norm(), 0.5);
      }
      if (spec.noise_sd > 0.0) v += noise(noise_rng);
      img[i] = static_cast<float>(v);
      mask[i] = inside(x0, k) ? 1 : 0;
    });
    course.images.push_back(std::move(img));
    course.masks.push_back(std::move(mask));
  }

  for (int k = 0; k + 1 < weeks; ++k) {
    const auto& motion = motions[static_cast<std::size_t>(k)];
    VectorField g(grid);
    Volume jac(grid);
    Mask warped(grid);
    for_each_voxel(grid, [&](std::size_t i, const Vec3& y) {
      const Vec3 x = motion.inverse(y);
      g.set(i, y - x);
      jac[i] = static_cast<float>(1.0 / motion.jacobian(x));
      warped[i] = inside(to_week0(x, k), k) ? 1 : 0;
    });
    course.true_forward.push_back(std::move(g));
    course.true_jacobian.push_back(std::move(jac));
    course.true_warped_masks.push_back(std::move(warped));
  }
  return course;
}

fs::path write_synthetic_cohort(const fs::path& dir,
                                const std::vector<CohortPatientSpec>& patients) {
  fs::create_directories(dir);
  const fs::path manifest = dir / "manifest.csv";
  std::ofstream out(manifest, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::Io, manifest.string() + ": cannot open for writing");
  out << "patient_id,week,volume_path,mask_path,recist\n";
  for (const auto& p : patients) {
    const SyntheticCourse course = synth_course(p.spec);
    const fs::path pdir = dir / p.patient_id;
    for (std::size_t k = 0; k < course.images.size(); ++k) {
      const std::string stem = "week" + std::to_string(k);
      write_volume(pdir / (stem + "_image.vol"), course.images[k]);
      write_mask(pdir / (stem + "_mask.vol"), course.masks[k]);
      out << p.patient_id << ',' << k << ',' << p.patient_id << '/' << stem << "_image.vol,"
          << p.patient_id << '/' << stem << "_mask.vol," << p.recist << '\n';
    }
    for (std::size_t k = 0; k < course.true_forward.size(); ++k) {
      write_field(pdir / "truth" / ("pair" + std::to_string(k) + "_forward.vol"),
                  course.true_forward[k]);
    }
  }
  if (!out) throw Error(ErrorCode::Io, manifest.string() + ": write failed");
  return manifest;
}

}  // namespace defield
