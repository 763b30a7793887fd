// Symmetric log-domain diffeomorphic registration with local correlation
// coefficient (LCC) forces.
//
// The transform is parameterized by a stationary velocity field v. The
// forward displacement g = exp(v) maps the target frame onto the source
// (source warped by g matches the target); the backward displacement
// exp(-v) is its inverse.
#pragma once

#include <filesystem>
#include <optional>
#include <vector>

#include "defield/volume.hpp"

namespace defield {

struct RegistrationParams {
  int pyramid_levels = 3;
  int iterations_per_level = 50;
  double lcc_sigma = 3.0;        ///< Gaussian window of the local correlation, voxels
  double fluid_sigma = 2.0;      ///< smoothing of each update field, voxels
  double diffusion_sigma = 1.5;  ///< smoothing of the velocity after each update, voxels
  std::optional<int> exp_steps;  ///< scaling-and-squaring steps; empty means automatic
  double step_scale = 1.0;
  double convergence_tol = 1e-4;  ///< relative energy change that ends a level

  /// Throws InvalidArgument on any out-of-range field.
  void validate() const;
};

struct SymmetricTransform {
  VectorField velocity;
  VectorField forward;
  VectorField backward;
};

struct TraceEntry {
  int level = 0;  ///< pyramid level, 0 is full resolution
  int iteration = 0;
  double energy = 0.0;  ///< symmetric similarity after the iteration
  double update_max_norm = 0.0;
  double step_scale = 0.0;
  bool accepted = false;
};

struct ConvergenceTrace {
  std::vector<TraceEntry> entries;
};

struct RegistrationResult {
  SymmetricTransform transform;
  ConvergenceTrace trace;
};

/// Mean over voxels of the squared local correlation of `a` and `b` under a
/// Gaussian window. Voxels whose local variance (in either image) is below
/// 1e-6 of that image's global variance contribute 0.
double lcc_similarity(const Volume& a, const Volume& b, double lcc_sigma);

/// Smallest step count with max|v| / 2^k < 0.25.
int auto_exp_steps(const VectorField& velocity);

/// Scaling and squaring: v / 2^k, then k self-compositions.
VectorField exp_velocity(const VectorField& velocity, std::optional<int> exp_steps = {});

/// Displacement of the mapping z -> phi_f(phi_g(z)), i.e.
/// h(z) = g(z) + f(z - g(z)) with trilinear sampling of f.
VectorField compose(const VectorField& f, const VectorField& g);

SymmetricTransform make_transform(VectorField velocity, std::optional<int> exp_steps = {});

/// Swaps forward and backward and negates the velocity.
SymmetricTransform invert(const SymmetricTransform& t);

RegistrationResult register_volumes(const Volume& source, const Volume& target,
                                    const RegistrationParams& params = {});

/// Writes velocity.vol, forward.vol, backward.vol and transform.json into `dir`.
void write_transform(const std::filesystem::path& dir, const SymmetricTransform& t,
                     const RegistrationParams& params, const ConvergenceTrace& trace);
SymmetricTransform read_transform(const std::filesystem::path& dir);

}  // namespace defield
