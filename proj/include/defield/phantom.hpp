// Synthetic volumes and deformations with closed-form ground truth.
//
// Every field returned here uses the pull-back convention of the rest of
// the library: phi(z) = z - g(z), and the analytic Jacobian is det(dphi/dz).
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "defield/defanalysis.hpp"
#include "defield/volume.hpp"

namespace defield {

struct AffineField {
  VectorField field;
  double jacobian = 1.0;
};

/// phi(z) = A (z - c) + c + b about the grid center c. Requires det(A) > 0.
AffineField affine_field(const Mat3& A, const Vec3& b, const GridGeometry& grid);

struct RadialField {
  VectorField field;
  Volume jacobian;
};

/// Radial Gaussian map about `center`:
///   phi(z) = c + (z - c)(1 + f(r)),  f(r) = a exp(-r^2 / (2 w^2)),
/// with analytic determinant (1 + f)^2 (1 + f + r f'(r)). Positive `a`
/// expands around the center, negative contracts. The map is monotone in r
/// exactly when -1 < a < e^{3/2} / 2.
RadialField radial_gaussian_field(const Vec3& center, double a, double width,
                                  const GridGeometry& grid);

/// One radial Gaussian map, usable pointwise.
struct RadialMap {
  Vec3 center;
  double amplitude = 0.0;
  double width = 1.0;

  void validate() const;
  Vec3 forward(const Vec3& x) const;
  /// Inverse by bisection on the monotone radial profile (|error| < 1e-6 voxels).
  Vec3 inverse(const Vec3& y) const;
  double jacobian(const Vec3& x) const;
};

/// Sum of isotropic Gaussian blobs with random lattice centers, widths and
/// signed amplitudes, normalized to zero mean and unit deviation. Rendered
/// once on a padded lattice around `extent`; continuous coordinates are
/// sampled trilinearly.
class BlobTexture {
 public:
  BlobTexture(const GridGeometry& extent, std::uint64_t seed, double density = 1.0 / 24.0,
              double min_width = 1.5, double max_width = 3.0);

  double operator()(const Vec3& p) const;
  Volume render(const GridGeometry& grid) const;

 private:
  Vec3 lo_;
  Volume lattice_;
};

/// Textured "organ": blob texture under a soft spherical envelope of radius
/// `radius` about the grid center, on a flat background.
Volume blob_phantom(const GridGeometry& grid, std::uint64_t seed, double radius);
/// Envelope of blob_phantom: voxels inside the blob's support.
Mask blob_support(const GridGeometry& grid, double radius);

enum class GrowthMode { Shrink, Grow, Stable };

std::string_view growth_mode_name(GrowthMode m);
GrowthMode parse_growth_mode(std::string_view s);

/// Synthetic weekly course of one patient.
///
/// Between consecutive weeks the anatomy is pushed through a focal radial
/// map (`amplitude`, `focal_width`) centered on the next delineation, then a
/// broad radial "body" map about the grid center. On top of that motion the
/// delineated tumor changes in a way no deformation explains: its center
/// drifts by `drift` voxels along a seeded random direction and its radius
/// changes by `boundary_step` voxels (negative when shrinking). The focal
/// width scales with the next delineation radius. Images show anatomy only,
/// plus `tumor_contrast` inside the delineation (zero by default).
struct PhantomSpec {
  GridGeometry grid = GridGeometry::cube(40);
  Vec3 tumor_center{19.5, 19.5, 19.5};
  double tumor_radius = 7.0;
  GrowthMode mode = GrowthMode::Shrink;
  double amplitude = -0.15;
  double focal_width = 6.0;
  double drift = 2.5;
  double boundary_step = -1.0;
  double body_amplitude = 0.03;
  double body_width = 40.0;
  double tumor_contrast = 0.0;
  double noise_sd = 0.02;
  int weeks = 4;
  std::uint64_t seed = 1;

  /// Default configuration of a mode on a cubic grid of side n.
  static PhantomSpec defaults(GrowthMode mode, std::int64_t n = 40, std::uint64_t seed = 1);

  /// Throws InvalidArgument on violated invariants (radius, amplitude sign,
  /// diffeomorphism guard, tumor staying inside the grid).
  void validate() const;
};

struct SyntheticCourse {
  std::vector<Volume> images;  ///< one per week
  std::vector<Mask> masks;     ///< delineation per week
  /// Ground truth per consecutive pair (k, k+1), all in the week k+1 frame.
  std::vector<VectorField> true_forward;
  std::vector<Volume> true_jacobian;
  std::vector<Mask> true_warped_masks;  ///< week-k delineation carried into week k+1
};

SyntheticCourse synth_course(const PhantomSpec& spec);

/// Writes a cohort directory: per-patient week volumes, masks and ground
/// truth forward fields plus `manifest.csv`. Returns the manifest path.
struct CohortPatientSpec {
  std::string patient_id;
  PhantomSpec spec;
  std::string recist;  ///< label recorded in the manifest
};
std::filesystem::path write_synthetic_cohort(const std::filesystem::path& dir,
                                             const std::vector<CohortPatientSpec>& patients);

}  // namespace defield
