#include <cmath>
#include <random>

#include <doctest.h>

#include "defield/volume.hpp"
#include "test_support.hpp"

using namespace defield;
using defield::testing::make_volume;
using defield::testing::uniform_field;

TEST_CASE("geometry validation") {
  CHECK_THROWS_AS(GridGeometry({1, 4, 4}).validate(), Error);
  CHECK_THROWS_AS(GridGeometry({4, 4, 4}, {1.0, 0.0, 1.0}).validate(), Error);
  CHECK_THROWS_AS(Volume(GridGeometry({1, 4, 4})), Error);
  const auto g = GridGeometry::cube(5);
  CHECK(g.voxel_count() == 125);
  CHECK(g.index(1, 2, 3) == 1 + 5 * (2 + 5 * 3));
}

TEST_CASE("grid rejects non-finite and non-binary data") {
  const auto g = GridGeometry::cube(2);
  std::vector<float> v(8, 0.0f);
  v[3] = NAN;
  CHECK_THROWS_AS(Volume(g, v), Error);
  std::vector<std::uint8_t> m(8, 0);
  m[1] = 2;
  CHECK_THROWS_AS(Mask(g, m), Error);
  CHECK_THROWS_AS(Volume(g, std::vector<float>(7, 0.0f)), Error);
}

TEST_CASE("trilinear sampling") {
  SUBCASE("constant") {
    const Volume v(GridGeometry::cube(4), 5.0f);
    CHECK(trilinear_sample(v, {1.3, 0.2, 2.9}) == doctest::Approx(5.0));
    CHECK(trilinear_sample(v, {-3.0, 9.0, 1.0}) == doctest::Approx(5.0));
  }
  SUBCASE("two by two by two ramp") {
    const auto v = make_volume(GridGeometry::cube(2), [](double x, double, double) { return x; });
    CHECK(trilinear_sample(v, {0.5, 0.0, 0.0}) == doctest::Approx(0.5));
  }
  SUBCASE("affine function on 8^3") {
    const auto v = make_volume(GridGeometry::cube(8),
                               [](double x, double y, double z) { return x + 2 * y + 3 * z; });
    CHECK(trilinear_sample(v, {1.25, 2.5, 0.75}) == doctest::Approx(8.5).epsilon(1e-12));
  }
  SUBCASE("exact at integer coordinates") {
    std::mt19937 rng(7);
    std::uniform_real_distribution<float> u(-1.0f, 1.0f);
    Volume v(GridGeometry::cube(5));
    for (auto& x : v.data()) x = u(rng);
    CHECK(trilinear_sample(v, {2, 3, 4}) == v.at(2, 3, 4));
  }
  SUBCASE("clamped outside the grid") {
    const auto v = make_volume(GridGeometry::cube(4), [](double x, double, double) { return x; });
    CHECK(trilinear_sample(v, {-2.0, 1.0, 1.0}) == doctest::Approx(0.0));
    CHECK(trilinear_sample(v, {7.5, 1.0, 1.0}) == doctest::Approx(3.0));
  }
}

TEST_CASE("trilinear sampling reproduces affine functions at random points") {
  const auto g = GridGeometry({9, 7, 6});
  auto f = [](double x, double y, double z) { return 0.5 - 1.5 * x + 0.25 * y + 2.0 * z; };
  const auto v = make_volume(g, f);
  std::mt19937 rng(11);
  std::uniform_real_distribution<double> ux(0, 8), uy(0, 6), uz(0, 5);
  for (int i = 0; i < 500; ++i) {
    const Vec3 p{ux(rng), uy(rng), uz(rng)};
    REQUIRE(trilinear_sample(v, p) == doctest::Approx(f(p.x, p.y, p.z)).epsilon(1e-5));
  }
}

TEST_CASE("warp_volume") {
  const auto g = GridGeometry::cube(8);
  const auto ramp = make_volume(g, [](double x, double y, double z) { return x + 0.1 * y * z; });
  SUBCASE("zero field is the identity") {
    CHECK(warp_volume(ramp, VectorField(g)) == ramp);
  }
  SUBCASE("uniform shift pulls from z - g") {
    const auto x_ramp = make_volume(g, [](double x, double, double) { return x; });
    const auto out = warp_volume(x_ramp, uniform_field(g, {1, 0, 0}));
    for (std::int64_t x = 1; x < 8; ++x) CHECK(out.at(x, 3, 3) == doctest::Approx(x - 1.0));
    CHECK(out.at(0, 3, 3) == doctest::Approx(0.0));
  }
  SUBCASE("constant volume under a smooth field") {
    const Volume c(g, 2.5f);
    VectorField f(g);
    for (std::size_t i = 0; i < f.voxel_count(); ++i) f.set(i, {std::sin(0.3 * double(i)), 0.7, -0.2});
    const auto out = warp_volume(c, f);
    for (float v : out.data()) REQUIRE(v == doctest::Approx(2.5));
  }
  SUBCASE("geometry mismatch") {
    CHECK_THROWS_AS(warp_volume(ramp, VectorField(GridGeometry::cube(4))), Error);
  }
}

TEST_CASE("warp_mask") {
  const auto g = GridGeometry::cube(10);
  Mask m(g);
  m.at(5, 5, 5) = 1;
  SUBCASE("zero field") { CHECK(warp_mask(m, VectorField(g)) == m); }
  SUBCASE("single voxel follows the warp_volume mapping") {
    const auto out = warp_mask(m, uniform_field(g, {1, 0, 0}));
    std::size_t count = 0;
    for (auto v : out.data()) count += v;
    CHECK(count == 1);
    CHECK(out.at(6, 5, 5) == 1);
  }
  SUBCASE("empty mask stays empty") {
    const auto out = warp_mask(Mask(g), uniform_field(g, {0.4, -2.2, 1.7}));
    for (auto v : out.data()) CHECK(v == 0);
  }
  SUBCASE("output stays binary for random fields") {
    std::mt19937 rng(3);
    std::uniform_real_distribution<double> u(-3, 3);
    Mask big(g);
    for (std::size_t i = 0; i < big.voxel_count(); i += 3) big[i] = 1;
    VectorField f(g);
    for (std::size_t i = 0; i < f.voxel_count(); ++i) f.set(i, {u(rng), u(rng), u(rng)});
    const auto out = warp_mask(big, f);
    for (auto v : out.data()) REQUIRE((v == 0 || v == 1));
  }
}

TEST_CASE("gradient_central") {
  const auto g = GridGeometry::cube(8);
  SUBCASE("constant volume") {
    const auto grad = gradient_central(Volume(g, 4.0f));
    CHECK(grad.max_norm() == 0.0);
  }
  SUBCASE("linear volume, faces included") {
    const auto grad = gradient_central(make_volume(g, [](double x, double, double) { return 3 * x; }));
    for (std::size_t i = 0; i < grad.voxel_count(); ++i) {
      const Vec3 d = grad.vec(i);
      REQUIRE(d.x == doctest::Approx(3.0));
      REQUIRE(d.y == doctest::Approx(0.0));
      REQUIRE(d.z == doctest::Approx(0.0));
    }
  }
  SUBCASE("quadratic at an interior voxel") {
    const auto grad = gradient_central(make_volume(g, [](double x, double, double) { return x * x; }));
    CHECK(grad.vec(g.index(4, 2, 2)).x == doctest::Approx((25.0 - 9.0) / 2.0));
  }
}

TEST_CASE("gaussian smoothing") {
  const auto g = GridGeometry::cube(15);
  SUBCASE("sigma zero is the identity") {
    const auto v = make_volume(g, [](double x, double y, double z) { return x * y - z; });
    CHECK(gaussian_smooth(v, 0.0) == v);
  }
  SUBCASE("constant input") {
    const auto out = gaussian_smooth(Volume(g, 1.75f), 2.0);
    for (float v : out.data()) REQUIRE(v == doctest::Approx(1.75));
  }
  SUBCASE("impulse response at the center") {
    Volume v(g);
    v.at(7, 7, 7) = 1.0f;
    double sum = 0.0;
    for (int i = -3; i <= 3; ++i) sum += std::exp(-0.5 * i * i);
    const double w0 = 1.0 / sum;
    const auto out = gaussian_smooth(v, 1.0);
    CHECK(out.at(7, 7, 7) == doctest::Approx(w0 * w0 * w0).epsilon(1e-6));
    CHECK(out.at(8, 7, 7) == doctest::Approx(w0 * w0 * w0 * std::exp(-0.5)).epsilon(1e-6));
  }
  SUBCASE("interior mass is preserved") {
    Volume v(g);
    v.at(7, 6, 8) = 3.0f;
    v.at(6, 7, 7) = -1.0f;
    double total = 0.0;
    const auto out = gaussian_smooth(v, 1.2);
    for (float x : out.data()) total += x;
    CHECK(total == doctest::Approx(2.0).epsilon(1e-5));
  }
  SUBCASE("field components smooth independently") {
    VectorField f = uniform_field(g, {1, -2, 3});
    const auto out = gaussian_smooth(f, 1.5);
    const Vec3 c = out.vec(g.index(0, 14, 3));
    CHECK(c.x == doctest::Approx(1));
    CHECK(c.y == doctest::Approx(-2));
    CHECK(c.z == doctest::Approx(3));
  }
  SUBCASE("negative sigma") { CHECK_THROWS_AS(gaussian_smooth(Volume(g), -0.1), Error); }
}

TEST_CASE("kernel shape") {
  const auto k = gaussian_kernel(1.4);
  CHECK(k.size() == 2 * 5 + 1);
  double s = 0.0;
  for (double w : k) s += w;
  CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(k.front() == doctest::Approx(k.back()));
}

TEST_CASE("pyramid resampling") {
  SUBCASE("constant volume halves") {
    const auto d = downsample2(Volume(GridGeometry::cube(8), 3.0f));
    CHECK(d.geometry().dims == std::array<std::int64_t, 3>{4, 4, 4});
    for (float v : d.data()) CHECK(v == doctest::Approx(3.0));
  }
  SUBCASE("ramp gives block means away from the edges") {
    const auto fine = make_volume(GridGeometry::cube(16),
                                  [](double x, double y, double z) { return x + 2 * y + 3 * z; });
    const auto coarse = downsample2(fine);
    for (std::int64_t z = 2; z < 6; ++z)
      for (std::int64_t y = 2; y < 6; ++y)
        for (std::int64_t x = 2; x < 6; ++x) {
          double mean = 0.0;
          for (int k = 0; k < 8; ++k) {
            mean += fine.at(2 * x + (k & 1), 2 * y + ((k >> 1) & 1), 2 * z + (k >> 2));
          }
          REQUIRE(coarse.at(x, y, z) == doctest::Approx(mean / 8.0).epsilon(1e-5));
        }
  }
  SUBCASE("upsampling doubles displacements") {
    const auto up = upsample_field(uniform_field(GridGeometry::cube(4), {1, 1, 1}),
                                   GridGeometry::cube(8));
    for (std::size_t i = 0; i < up.voxel_count(); ++i) {
      REQUIRE(up.vec(i).x == doctest::Approx(2.0));
      REQUIRE(up.vec(i).z == doctest::Approx(2.0));
    }
  }
  SUBCASE("too small") { CHECK_THROWS_AS(downsample2(Volume(GridGeometry::cube(3))), Error); }
}

TEST_CASE("field arithmetic and norms") {
  const auto g = GridGeometry::cube(3);
  const auto a = uniform_field(g, {3, 4, 0});
  CHECK(a.max_norm() == doctest::Approx(5.0));
  CHECK(a.mean_norm() == doctest::Approx(5.0));
  const auto s = a + (-a);
  CHECK(s.max_norm() == 0.0);
  CHECK((2.0 * a).vec(5).y == doctest::Approx(8.0));
}
