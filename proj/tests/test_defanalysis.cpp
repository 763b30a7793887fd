#include <cmath>

#include <doctest.h>

#include "defield/defanalysis.hpp"
#include "defield/phantom.hpp"
#include "defield/registration.hpp"
#include "test_support.hpp"

using namespace defield;
using defield::testing::interior;

namespace {

// g(z) = (I - A)(z - c), so phi(z) = A (z - c) + c.
VectorField affine_disp(const GridGeometry& g, const Mat3& A) {
  VectorField f(g);
  const Vec3 c = g.center();
  for (std::int64_t z = 0; z < g.nz(); ++z)
    for (std::int64_t y = 0; y < g.ny(); ++y)
      for (std::int64_t x = 0; x < g.nx(); ++x) {
        const Vec3 p = Vec3{double(x), double(y), double(z)} - c;
        f.set(g.index(x, y, z), p - A * p);
      }
  return f;
}

// Masks on a 1-D strip of voxels.
Mask strip(std::initializer_list<int> on) {
  Mask m(GridGeometry({8, 3, 3}));
  for (int x : on) m.at(x, 1, 1) = 1;
  return m;
}

}  // namespace

TEST_CASE("jacobian of simple fields") {
  const auto g = GridGeometry::cube(12);
  SUBCASE("zero field") {
    const auto j = jacobian_map(VectorField(g));
    CHECK(j.min() == 1.0);
    CHECK(j.mean() == 1.0);
  }
  SUBCASE("uniform scaling") {
    const auto j = jacobian_map(affine_disp(g, {{{1.2, 0, 0}, {0, 1.2, 0}, {0, 0, 1.2}}}));
    for (std::int64_t z = 1; z < 11; ++z)
      for (std::int64_t y = 1; y < 11; ++y)
        for (std::int64_t x = 1; x < 11; ++x)
          REQUIRE(j[g.index(x, y, z)] == doctest::Approx(1.728).epsilon(1e-6));
  }
  SUBCASE("shear with known determinant") {
    const auto j = jacobian_map(affine_disp(g, {{{1.1, 0.1, 0}, {0, 0.9, 0.05}, {0.02, 0, 1.0}}}));
    CHECK(j[g.index(5, 6, 7)] == doctest::Approx(0.9901).epsilon(1e-6));
  }
  SUBCASE("errors") {
    VectorField bad(g);
    bad.data()[0] = NAN;
    CHECK_THROWS_AS(jacobian_map(bad), Error);
    CHECK_THROWS_AS(jacobian_map(VectorField(GridGeometry({2, 5, 5}))), Error);
  }
}

TEST_CASE("jacobian obeys the chain rule on linear maps") {
  const auto g = GridGeometry::cube(16);
  const Mat3 A{{{1.1, 0.1, 0}, {0, 0.9, 0.05}, {0.02, 0, 1.0}}};
  const Mat3 B{{{1.05, 0, 0.03}, {0, 1.0, 0}, {0, 0, 0.95}}};
  const auto h = compose(affine_disp(g, A), affine_disp(g, B));
  const auto j = jacobian_map(h);
  for (std::int64_t z = 5; z < 11; ++z)
    for (std::int64_t y = 5; y < 11; ++y)
      for (std::int64_t x = 5; x < 11; ++x)
        REQUIRE(j[g.index(x, y, z)] == doctest::Approx(0.9901 * 0.9975).epsilon(1e-6));
}

TEST_CASE("jacobian of a radial Gaussian field matches the closed form") {
  const auto g = GridGeometry::cube(64);
  const Vec3 c = g.center() + Vec3{0.3, -0.2, 0.1};
  const double a = 0.4, w = 8.0;
  const auto field = radial_gaussian_field(c, a, w, g);
  const auto j = jacobian_map(field.field);
  double worst = 0.0;
  for (std::int64_t z = 1; z < 63; ++z)
    for (std::int64_t y = 1; y < 63; ++y)
      for (std::int64_t x = 1; x < 63; ++x) {
        const Vec3 p{double(x), double(y), double(z)};
        const double r = (p - c).norm();
        const double f = a * std::exp(-r * r / (2 * w * w));
        const double rf = -r * r / (w * w) * f;
        const double truth = (1 + f) * (1 + f) * (1 + f + rf);
        worst = std::max(worst, std::abs(j[g.index(x, y, z)] / truth - 1.0));
      }
  CHECK(worst < 0.02);
}

TEST_CASE("region partition") {
  SUBCASE("identical masks") {
    const auto m = strip({2, 3, 4});
    const auto p = partition_regions(m, m);
    CHECK(p.count(RegionLabel::R) == 0);
    CHECK(p.count(RegionLabel::G) == 0);
    CHECK(p.mask(RegionLabel::U) == m);
    CHECK(p.count(RegionLabel::N) == m.voxel_count() - 3);
  }
  SUBCASE("disjoint masks") {
    const auto a = strip({1, 2});
    const auto b = strip({5, 6});
    const auto p = partition_regions(a, b);
    CHECK(p.count(RegionLabel::U) == 0);
    CHECK(p.mask(RegionLabel::R) == a);
    CHECK(p.mask(RegionLabel::G) == b);
  }
  SUBCASE("overlapping strips") {
    const auto p = partition_regions(strip({2, 3, 4}), strip({3, 4, 5}), 1);
    CHECK(p.mask(RegionLabel::U) == strip({3, 4}));
    CHECK(p.mask(RegionLabel::R) == strip({2}));
    CHECK(p.mask(RegionLabel::G) == strip({5}));
    CHECK(p.week_index == 1);
    std::size_t total = 0;
    for (auto l : kAllRegions) total += p.count(l);
    CHECK(total == p.labels.size());
  }
  SUBCASE("swapping masks exchanges R and G") {
    const auto a = strip({0, 1, 2, 3});
    const auto b = strip({2, 3, 6});
    const auto p = partition_regions(a, b);
    const auto q = partition_regions(b, a);
    CHECK(p.mask(RegionLabel::R) == q.mask(RegionLabel::G));
    CHECK(p.mask(RegionLabel::G) == q.mask(RegionLabel::R));
    CHECK(p.mask(RegionLabel::U) == q.mask(RegionLabel::U));
    CHECK(p.mask(RegionLabel::N) == q.mask(RegionLabel::N));
  }
  SUBCASE("geometry mismatch") {
    CHECK_THROWS_AS(partition_regions(strip({1}), Mask(GridGeometry::cube(3))), Error);
  }
}

TEST_CASE("sample collection") {
  const auto g = GridGeometry::cube(8);
  Mask warped(g), next(g);
  for (std::int64_t z = 2; z < 6; ++z)
    for (std::int64_t y = 2; y < 6; ++y)
      for (std::int64_t x = 2; x < 6; ++x) {
        warped.at(x, y, z) = 1;
        next.at(x, y, z) = x < 5;
      }
  const auto part = partition_regions(warped, next);

  SUBCASE("unit jacobian") {
    const auto s = collect_samples(JacobianMap(Volume(g, 1.0f)), part);
    for (auto l : {RegionLabel::N, RegionLabel::U, RegionLabel::R}) CHECK(*s.mean(l) == 1.0);
    CHECK(s.empty(RegionLabel::G));
    CHECK(!s.mean(RegionLabel::G));
  }
  SUBCASE("planted values") {
    Volume jv(g, 0.5f);
    const Mask u = part.mask(RegionLabel::U);
    for (std::size_t i = 0; i < jv.voxel_count(); ++i)
      if (u[i]) jv[i] = 2.0f;
    const auto s = collect_samples(JacobianMap(jv), part);
    CHECK(*s.mean(RegionLabel::U) == 2.0);
    CHECK(*s.mean(RegionLabel::R) == 0.5);
    CHECK(*s.mean(RegionLabel::N) == 0.5);
  }
  SUBCASE("face voxels are excluded") {
    const auto s = collect_samples(JacobianMap(Volume(g, 1.0f)), part);
    std::size_t interior_n = 0;
    for (std::int64_t z = 0; z < 8; ++z)
      for (std::int64_t y = 0; y < 8; ++y)
        for (std::int64_t x = 0; x < 8; ++x)
          if (interior(g, x, y, z) && part.labels[g.index(x, y, z)] == RegionLabel::N) ++interior_n;
    CHECK(s.count(RegionLabel::N) == interior_n);
    CHECK(s.count(RegionLabel::U) == part.count(RegionLabel::U));
  }
}

TEST_CASE("pooling") {
  RegionSamples a, b;
  a.values(RegionLabel::R) = {1.0, 2.0};
  a.values(RegionLabel::U) = {4.0};
  b.values(RegionLabel::R) = {3.0};
  b.values(RegionLabel::G) = {0.5, 0.7};
  const std::vector<RegionSamples> one{a};
  CHECK(pool(one) == a);
  const std::vector<RegionSamples> two{a, b};
  const auto p = pool(two);
  CHECK(p.count(RegionLabel::R) == 3);
  CHECK(p.count(RegionLabel::G) == 2);
  CHECK(*p.mean(RegionLabel::R) == doctest::Approx((2 * 1.5 + 1 * 3.0) / 3));
}

TEST_CASE("region names") {
  for (auto l : kAllRegions) CHECK(parse_region(region_name(l)) == l);
  CHECK(!parse_region("X"));
}
