// Voxel-grid containers and the resampling, smoothing and differentiation
// primitives shared by registration and deformation analysis.
//
// Layout is x-fastest, then y, then z. Displacements are stored in voxel
// (index) units and follow the pull-back convention phi(z) = z - g(z): a
// warped image takes, at voxel z, the source value at z - g(z).
#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "defield/error.hpp"
#include "defield/vec3.hpp"

namespace defield {

struct GridGeometry {
  std::array<std::int64_t, 3> dims{2, 2, 2};
  std::array<double, 3> spacing{1.0, 1.0, 1.0};
  std::array<double, 3> origin{0.0, 0.0, 0.0};

  GridGeometry() = default;
  GridGeometry(std::array<std::int64_t, 3> d, std::array<double, 3> sp = {1.0, 1.0, 1.0},
               std::array<double, 3> org = {0.0, 0.0, 0.0});

  static GridGeometry cube(std::int64_t n) { return GridGeometry({n, n, n}); }

  std::int64_t nx() const { return dims[0]; }
  std::int64_t ny() const { return dims[1]; }
  std::int64_t nz() const { return dims[2]; }
  std::size_t voxel_count() const {
    return static_cast<std::size_t>(dims[0] * dims[1] * dims[2]);
  }
  std::size_t index(std::int64_t x, std::int64_t y, std::int64_t z) const {
    return static_cast<std::size_t>(x + dims[0] * (y + dims[1] * z));
  }
  bool on_face(std::int64_t x, std::int64_t y, std::int64_t z) const {
    return x == 0 || y == 0 || z == 0 || x == dims[0] - 1 || y == dims[1] - 1 ||
           z == dims[2] - 1;
  }
  /// Geometric center in index coordinates.
  Vec3 center() const {
    return {0.5 * static_cast<double>(dims[0] - 1), 0.5 * static_cast<double>(dims[1] - 1),
            0.5 * static_cast<double>(dims[2] - 1)};
  }

  /// Throws InvalidArgument unless all dims >= 2 and all spacings > 0.
  void validate() const;

  bool operator==(const GridGeometry&) const = default;
};

/// Throws GeometryMismatch when the two grids differ.
void require_same_geometry(const GridGeometry& a, const GridGeometry& b, const char* what);

/// Dense voxel grid with `Components` interleaved values per voxel.
///
/// The data constructor checks the value invariants of the concrete
/// alias (finite floats, binary masks). Mutable access is unchecked.
template <typename T, int Components = 1>
class Grid {
 public:
  using value_type = T;
  static constexpr int components = Components;

  Grid() = default;
  explicit Grid(const GridGeometry& geometry, T fill = T{})
      : geometry_(geometry), data_(geometry.voxel_count() * Components, fill) {
    geometry_.validate();
  }
  Grid(const GridGeometry& geometry, std::vector<T> data)
      : geometry_(geometry), data_(std::move(data)) {
    geometry_.validate();
    if (data_.size() != geometry_.voxel_count() * Components) {
      throw Error(ErrorCode::InvalidArgument, "voxel data length does not match grid dims");
    }
    check_values();
  }

  const GridGeometry& geometry() const { return geometry_; }
  std::size_t voxel_count() const { return geometry_.voxel_count(); }

  std::span<const T> data() const { return data_; }
  std::span<T> data() { return data_; }
  const std::vector<T>& vector() const { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  T& at(std::int64_t x, std::int64_t y, std::int64_t z, int c = 0) {
    return data_[geometry_.index(x, y, z) * Components + static_cast<std::size_t>(c)];
  }
  const T& at(std::int64_t x, std::int64_t y, std::int64_t z, int c = 0) const {
    return data_[geometry_.index(x, y, z) * Components + static_cast<std::size_t>(c)];
  }

  bool operator==(const Grid&) const = default;

 private:
  void check_values() const;

  GridGeometry geometry_;
  std::vector<T> data_;
};

template <>
void Grid<float, 1>::check_values() const;
template <>
void Grid<float, 3>::check_values() const;
template <>
void Grid<std::uint8_t, 1>::check_values() const;

using Volume = Grid<float, 1>;
using Mask = Grid<std::uint8_t, 1>;

/// Displacement (or velocity) field, three interleaved components per voxel.
class VectorField : public Grid<float, 3> {
 public:
  using Grid<float, 3>::Grid;
  VectorField(Grid<float, 3> g) : Grid<float, 3>(std::move(g)) {}

  Vec3 vec(std::size_t voxel) const {
    const auto d = data();
    return {d[3 * voxel], d[3 * voxel + 1], d[3 * voxel + 2]};
  }
  void set(std::size_t voxel, const Vec3& v) {
    auto d = data();
    d[3 * voxel] = static_cast<float>(v.x);
    d[3 * voxel + 1] = static_cast<float>(v.y);
    d[3 * voxel + 2] = static_cast<float>(v.z);
  }

  /// Largest Euclidean norm over all voxels.
  double max_norm() const;
  /// Mean Euclidean norm over all voxels.
  double mean_norm() const;
};

VectorField operator+(const VectorField& a, const VectorField& b);
VectorField operator-(const VectorField& a);
VectorField operator*(double s, const VectorField& a);

// ---------------------------------------------------------------------------
// Sampling and warping

/// Trilinear interpolation at a continuous index coordinate. Coordinates
/// outside [0, dim-1] clamp to the boundary.
double trilinear_sample(const Volume& vol, const Vec3& p);
Vec3 trilinear_sample(const VectorField& field, const Vec3& p);

/// out(z) = vol(z - g(z)) with trilinear sampling.
Volume warp_volume(const Volume& vol, const VectorField& disp);

/// Nearest-neighbour resampling of a mask through the same mapping as
/// warp_volume.
Mask warp_mask(const Mask& mask, const VectorField& disp);

// ---------------------------------------------------------------------------
// Differentiation and smoothing

/// Central differences in the interior, one-sided on faces, index units.
VectorField gradient_central(const Volume& vol);

/// Normalized sampled Gaussian, radius ceil(3 sigma). sigma == 0 gives {1}.
std::vector<double> gaussian_kernel(double sigma);

/// Separable Gaussian smoothing in place over a raw interleaved buffer with
/// edge clamping. Exposed for the registration kernels, which work in double.
template <typename T>
void gaussian_smooth_inplace(std::span<T> data, const std::array<std::int64_t, 3>& dims,
                             int components, double sigma);

Volume gaussian_smooth(const Volume& vol, double sigma);
VectorField gaussian_smooth(const VectorField& field, double sigma);

// ---------------------------------------------------------------------------
// Pyramid

/// Halves each dimension: Gaussian pre-smooth (sigma 1) then 2x2x2 block means.
Volume downsample2(const Volume& vol);

/// Geometry of the grid produced by downsample2.
GridGeometry downsampled_geometry(const GridGeometry& fine);

/// Trilinear upsampling onto `target` (a grid twice as fine); displacement
/// magnitudes double to stay in voxel units.
VectorField upsample_field(const VectorField& field, const GridGeometry& target);

}  // namespace defield
