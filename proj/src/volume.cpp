#include "defield/volume.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <string>

namespace defield {

std::string_view error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidArgument: return "invalid_argument";
    case ErrorCode::GeometryMismatch: return "geometry_mismatch";
    case ErrorCode::NonFinite: return "non_finite";
    case ErrorCode::DegenerateInput: return "degenerate_input";
    case ErrorCode::FileNotFound: return "file_not_found";
    case ErrorCode::MalformedFile: return "malformed_file";
    case ErrorCode::Io: return "io_error";
    case ErrorCode::EmptyInput: return "empty_input";
  }
  return "unknown";
}

GridGeometry::GridGeometry(std::array<std::int64_t, 3> d, std::array<double, 3> sp,
                           std::array<double, 3> org)
    : dims(d), spacing(sp), origin(org) {}

void GridGeometry::validate() const {
  for (int a = 0; a < 3; ++a) {
    if (dims[a] < 2) {
      throw Error(ErrorCode::InvalidArgument, "grid dims must all be >= 2");
    }
    if (!(spacing[a] > 0.0) || !std::isfinite(spacing[a])) {
      throw Error(ErrorCode::InvalidArgument, "grid spacing must be positive and finite");
    }
    if (!std::isfinite(origin[a])) {
      throw Error(ErrorCode::InvalidArgument, "grid origin must be finite");
    }
  }
}

void require_same_geometry(const GridGeometry& a, const GridGeometry& b, const char* what) {
  if (a == b) return;
  std::ostringstream os;
  os << what << ": geometry mismatch (" << a.dims[0] << "x" << a.dims[1] << "x" << a.dims[2]
     << " vs " << b.dims[0] << "x" << b.dims[1] << "x" << b.dims[2] << ")";
  throw Error(ErrorCode::GeometryMismatch, os.str());
}

template <>
void Grid<float, 1>::check_values() const {
  for (float v : data_) {
    if (!std::isfinite(v)) throw Error(ErrorCode::NonFinite, "volume contains non-finite values");
  }
}

template <>
void Grid<float, 3>::check_values() const {
  for (float v : data_) {
    if (!std::isfinite(v)) throw Error(ErrorCode::NonFinite, "field contains non-finite values");
  }
}

template <>
void Grid<std::uint8_t, 1>::check_values() const {
  for (auto v : data_) {
    if (v > 1) throw Error(ErrorCode::InvalidArgument, "mask values must be 0 or 1");
  }
}

double VectorField::max_norm() const {
  double m = 0.0;
  for (std::size_t i = 0; i < voxel_count(); ++i) m = std::max(m, vec(i).norm());
  return m;
}

double VectorField::mean_norm() const {
  double s = 0.0;
  for (std::size_t i = 0; i < voxel_count(); ++i) s += vec(i).norm();
  return s / static_cast<double>(voxel_count());
}

VectorField operator+(const VectorField& a, const VectorField& b) {
  require_same_geometry(a.geometry(), b.geometry(), "field addition");
  VectorField out(a.geometry());
  auto o = out.data();
  const auto da = a.data();
  const auto db = b.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = da[i] + db[i];
  return out;
}

VectorField operator-(const VectorField& a) { return -1.0 * a; }

VectorField operator*(double s, const VectorField& a) {
  VectorField out(a.geometry());
  auto o = out.data();
  const auto da = a.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = static_cast<float>(s * da[i]);
  return out;
}

// ---------------------------------------------------------------------------

namespace {

struct Stencil {
  std::size_t base;
  std::size_t dx, dy, dz;  // strides to the +1 neighbour, zero on the clamped edge
  double tx, ty, tz;
};

inline void axis_weights(double p, std::int64_t n, std::int64_t& i0, double& t, bool& at_edge) {
  p = std::clamp(p, 0.0, static_cast<double>(n - 1));
  i0 = static_cast<std::int64_t>(std::floor(p));
  if (i0 >= n - 1) {
    i0 = n - 1;
    t = 0.0;
    at_edge = true;
  } else {
    t = p - static_cast<double>(i0);
    at_edge = false;
  }
}

inline Stencil make_stencil(const GridGeometry& g, const Vec3& p) {
  std::int64_t ix, iy, iz;
  double tx, ty, tz;
  bool ex, ey, ez;
  axis_weights(p.x, g.dims[0], ix, tx, ex);
  axis_weights(p.y, g.dims[1], iy, ty, ey);
  axis_weights(p.z, g.dims[2], iz, tz, ez);
  const auto sx = static_cast<std::size_t>(1);
  const auto sy = static_cast<std::size_t>(g.dims[0]);
  const auto sz = static_cast<std::size_t>(g.dims[0] * g.dims[1]);
  return {g.index(ix, iy, iz), ex ? 0 : sx, ey ? 0 : sy, ez ? 0 : sz, tx, ty, tz};
}

template <int C>
inline double blend(const float* d, const Stencil& s, int c) {
  auto v = [&](std::size_t off) { return static_cast<double>(d[(s.base + off) * C + c]); };
  const double c00 = v(0) * (1 - s.tx) + v(s.dx) * s.tx;
  const double c10 = v(s.dy) * (1 - s.tx) + v(s.dy + s.dx) * s.tx;
  const double c01 = v(s.dz) * (1 - s.tx) + v(s.dz + s.dx) * s.tx;
  const double c11 = v(s.dz + s.dy) * (1 - s.tx) + v(s.dz + s.dy + s.dx) * s.tx;
  const double c0 = c00 * (1 - s.ty) + c10 * s.ty;
  const double c1 = c01 * (1 - s.ty) + c11 * s.ty;
  return c0 * (1 - s.tz) + c1 * s.tz;
}

template <typename Fn>
void for_each_voxel(const GridGeometry& g, Fn&& fn) {
  std::size_t i = 0;
  for (std::int64_t z = 0; z < g.dims[2]; ++z)
    for (std::int64_t y = 0; y < g.dims[1]; ++y)
      for (std::int64_t x = 0; x < g.dims[0]; ++x, ++i) fn(i, x, y, z);
}

}  // namespace

double trilinear_sample(const Volume& vol, const Vec3& p) {
  return blend<1>(vol.data().data(), make_stencil(vol.geometry(), p), 0);
}

Vec3 trilinear_sample(const VectorField& field, const Vec3& p) {
  const auto s = make_stencil(field.geometry(), p);
  const float* d = field.data().data();
  return {blend<3>(d, s, 0), blend<3>(d, s, 1), blend<3>(d, s, 2)};
}

Volume warp_volume(const Volume& vol, const VectorField& disp) {
  require_same_geometry(vol.geometry(), disp.geometry(), "warp_volume");
  const auto& g = vol.geometry();
  Volume out(g);
  auto o = out.data();
  const float* src = vol.data().data();
  for_each_voxel(g, [&](std::size_t i, std::int64_t x, std::int64_t y, std::int64_t z) {
    const Vec3 p = Vec3{double(x), double(y), double(z)} - disp.vec(i);
    o[i] = static_cast<float>(blend<1>(src, make_stencil(g, p), 0));
  });
  return out;
}

Mask warp_mask(const Mask& mask, const VectorField& disp) {
  require_same_geometry(mask.geometry(), disp.geometry(), "warp_mask");
  const auto& g = mask.geometry();
  Mask out(g);
  auto o = out.data();
  auto nearest = [](double p, std::int64_t n) {
    const auto i = static_cast<std::int64_t>(std::floor(p + 0.5));
    return std::clamp<std::int64_t>(i, 0, n - 1);
  };
  for_each_voxel(g, [&](std::size_t i, std::int64_t x, std::int64_t y, std::int64_t z) {
    const Vec3 p = Vec3{double(x), double(y), double(z)} - disp.vec(i);
    o[i] = mask.at(nearest(p.x, g.dims[0]), nearest(p.y, g.dims[1]), nearest(p.z, g.dims[2]));
  });
  return out;
}

VectorField gradient_central(const Volume& vol) {
  const auto& g = vol.geometry();
  VectorField out(g);
  const std::array<std::size_t, 3> stride{1, static_cast<std::size_t>(g.dims[0]),
                                          static_cast<std::size_t>(g.dims[0] * g.dims[1])};
  const float* d = vol.data().data();
  auto o = out.data();
  for_each_voxel(g, [&](std::size_t i, std::int64_t x, std::int64_t y, std::int64_t z) {
    const std::array<std::int64_t, 3> c{x, y, z};
    for (int a = 0; a < 3; ++a) {
      double v;
      if (c[a] == 0) {
        v = double(d[i + stride[a]]) - d[i];
      } else if (c[a] == g.dims[a] - 1) {
        v = double(d[i]) - d[i - stride[a]];
      } else {
        v = 0.5 * (double(d[i + stride[a]]) - d[i - stride[a]]);
      }
      o[3 * i + a] = static_cast<float>(v);
    }
  });
  return out;
}

std::vector<double> gaussian_kernel(double sigma) {
  if (sigma < 0.0 || !std::isfinite(sigma)) {
    throw Error(ErrorCode::InvalidArgument, "gaussian sigma must be >= 0");
  }
  if (sigma == 0.0) return {1.0};
  const auto radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> k(2 * radius + 1);
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    k[i + radius] = std::exp(-0.5 * (i * i) / (sigma * sigma));
    sum += k[i + radius];
  }
  for (auto& w : k) w /= sum;
  return k;
}

template <typename T>
void gaussian_smooth_inplace(std::span<T> data, const std::array<std::int64_t, 3>& dims,
                             int components, double sigma) {
  const auto kernel = gaussian_kernel(sigma);
  if (kernel.size() == 1) return;
  const int radius = static_cast<int>(kernel.size() / 2);
  const std::array<std::int64_t, 3> stride{components, components * dims[0],
                                           components * dims[0] * dims[1]};
  std::vector<double> line;
  for (int axis = 0; axis < 3; ++axis) {
    const std::int64_t n = dims[axis];
    line.assign(static_cast<std::size_t>(n + 2 * radius), 0.0);
    const int a1 = (axis + 1) % 3;
    const int a2 = (axis + 2) % 3;
    for (std::int64_t j2 = 0; j2 < dims[a2]; ++j2) {
      for (std::int64_t j1 = 0; j1 < dims[a1]; ++j1) {
        for (int c = 0; c < components; ++c) {
          const std::int64_t base = j1 * stride[a1] + j2 * stride[a2] + c;
          for (std::int64_t i = 0; i < n; ++i) {
            line[i + radius] = static_cast<double>(data[base + i * stride[axis]]);
          }
          for (int i = 0; i < radius; ++i) {
            line[i] = line[radius];
            line[n + radius + i] = line[n + radius - 1];
          }
          for (std::int64_t i = 0; i < n; ++i) {
            double acc = 0.0;
            const double* src = line.data() + i;
            for (std::size_t k = 0; k < kernel.size(); ++k) acc += kernel[k] * src[k];
            data[base + i * stride[axis]] = static_cast<T>(acc);
          }
        }
      }
    }
  }
}

template void gaussian_smooth_inplace<float>(std::span<float>, const std::array<std::int64_t, 3>&,
                                             int, double);
template void gaussian_smooth_inplace<double>(std::span<double>,
                                              const std::array<std::int64_t, 3>&, int, double);

Volume gaussian_smooth(const Volume& vol, double sigma) {
  Volume out = vol;
  gaussian_smooth_inplace(out.data(), vol.geometry().dims, 1, sigma);
  return out;
}

VectorField gaussian_smooth(const VectorField& field, double sigma) {
  VectorField out = field;
  gaussian_smooth_inplace(out.data(), field.geometry().dims, 3, sigma);
  return out;
}

GridGeometry downsampled_geometry(const GridGeometry& fine) {
  GridGeometry g = fine;
  for (int a = 0; a < 3; ++a) {
    if (fine.dims[a] < 4) {
      throw Error(ErrorCode::InvalidArgument, "downsample2 needs dims >= 4 on every axis");
    }
    g.dims[a] = fine.dims[a] / 2;
    g.spacing[a] = 2.0 * fine.spacing[a];
    g.origin[a] = fine.origin[a] + 0.5 * fine.spacing[a];
  }
  return g;
}

Volume downsample2(const Volume& vol) {
  const GridGeometry cg = downsampled_geometry(vol.geometry());
  const Volume smooth = gaussian_smooth(vol, 1.0);
  Volume out(cg);
  for_each_voxel(cg, [&](std::size_t i, std::int64_t x, std::int64_t y, std::int64_t z) {
    double s = 0.0;
    for (int dz = 0; dz < 2; ++dz)
      for (int dy = 0; dy < 2; ++dy)
        for (int dx = 0; dx < 2; ++dx) s += smooth.at(2 * x + dx, 2 * y + dy, 2 * z + dz);
    out[i] = static_cast<float>(s / 8.0);
  });
  return out;
}

VectorField upsample_field(const VectorField& field, const GridGeometry& target) {
  if (downsampled_geometry(target).dims != field.geometry().dims) {
    throw Error(ErrorCode::GeometryMismatch,
                "upsample_field: target grid is not the 2x refinement of the field grid");
  }
  VectorField out(target);
  for_each_voxel(target, [&](std::size_t i, std::int64_t x, std::int64_t y, std::int64_t z) {
    const Vec3 coarse{(x - 0.5) / 2.0, (y - 0.5) / 2.0, (z - 0.5) / 2.0};
    out.set(i, 2.0 * trilinear_sample(field, coarse));
  });
  return out;
}

}  // namespace defield
