#include <cmath>
#include <map>
#include <random>

#include <doctest.h>

#include "defield/defanalysis.hpp"
#include "defield/phantom.hpp"
#include "defield/registration.hpp"
#include "test_support.hpp"

using namespace defield;
using defield::testing::interior;
using defield::testing::make_volume;
using defield::testing::uniform_field;

namespace {

Volume white_noise(const GridGeometry& g, unsigned seed) {
  std::mt19937 rng(seed);
  std::normal_distribution<float> n(0.0f, 1.0f);
  Volume v(g);
  for (auto& x : v.data()) x = n(rng);
  return v;
}

VectorField linear_field(const GridGeometry& g, double a) {
  VectorField f(g);
  const Vec3 c = g.center();
  for (std::int64_t z = 0; z < g.nz(); ++z)
    for (std::int64_t y = 0; y < g.ny(); ++y)
      for (std::int64_t x = 0; x < g.nx(); ++x)
        f.set(g.index(x, y, z), a * (Vec3{double(x), double(y), double(z)} - c));
  return f;
}

}  // namespace

TEST_CASE("parameter validation") {
  RegistrationParams p;
  CHECK_NOTHROW(p.validate());
  p.step_scale = 2.5;
  CHECK_THROWS_AS(p.validate(), Error);
  p = {};
  p.pyramid_levels = 0;
  CHECK_THROWS_AS(p.validate(), Error);
  p = {};
  p.fluid_sigma = -1;
  CHECK_THROWS_AS(p.validate(), Error);
  p = {};
  p.exp_steps = 0;
  CHECK_THROWS_AS(p.validate(), Error);
}

TEST_CASE("local correlation similarity") {
  const auto g = GridGeometry::cube(16);
  const Volume a = white_noise(g, 1);
  CHECK(lcc_similarity(a, a, 2.0) == doctest::Approx(1.0).epsilon(1e-6));
  Volume b(g);
  for (std::size_t i = 0; i < b.voxel_count(); ++i) b[i] = 2.0f * a[i] + 3.0f;
  CHECK(lcc_similarity(a, b, 2.0) == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(lcc_similarity(a, white_noise(g, 2), 2.0) < 0.2);
  CHECK_THROWS_AS(lcc_similarity(a, Volume(GridGeometry::cube(8)), 2.0), Error);
  CHECK_THROWS_AS(lcc_similarity(a, a, 0.0), Error);
}

TEST_CASE("constant regions contribute zero similarity") {
  const auto g = GridGeometry::cube(12);
  const Volume flat(g, 1.0f);
  CHECK(lcc_similarity(flat, flat, 2.0) == 0.0);
}

TEST_CASE("field composition") {
  const auto g = GridGeometry::cube(8);
  const auto f = uniform_field(g, {1, 0, 0});
  const auto h = uniform_field(g, {2, 0, 0});
  CHECK(compose(VectorField(g), h) == h);
  CHECK(compose(f, VectorField(g)) == f);
  const auto fh = compose(f, h);
  for (std::size_t i = 0; i < fh.voxel_count(); ++i) REQUIRE(fh.vec(i).x == doctest::Approx(3.0));
  CHECK_THROWS_AS(compose(f, VectorField(GridGeometry::cube(4))), Error);
}

TEST_CASE("composition matches mapping composition pointwise") {
  // (z - h(z)) must equal phi_f(phi_g(z)) with phi(z) = z - d(z).
  const auto g = GridGeometry::cube(12);
  const auto f = linear_field(g, 0.05);
  const auto k = linear_field(g, -0.08);
  const auto h = compose(f, k);
  const Vec3 c = g.center();
  for (std::int64_t x = 3; x < 9; ++x) {
    const Vec3 z{double(x), 5.0, 7.0};
    const Vec3 after_g = c + 1.08 * (z - c);
    const Vec3 expected = c + 0.95 * (after_g - c);
    const Vec3 got = z - h.vec(g.index(x, 5, 7));
    CHECK((got - expected).norm() < 1e-5);
  }
}

TEST_CASE("scaling and squaring") {
  const auto g = GridGeometry::cube(24);
  SUBCASE("zero velocity") { CHECK(exp_velocity(VectorField(g)).max_norm() == 0.0); }
  SUBCASE("uniform velocity is reproduced exactly") {
    const auto d = exp_velocity(uniform_field(g, {1.5, 0, 0}), 6);
    for (std::size_t i = 0; i < d.voxel_count(); ++i) REQUIRE(d.vec(i).x == doctest::Approx(1.5));
  }
  SUBCASE("linear velocity follows the flow of z' = -a z") {
    // phi(z) = z - g(z) with the stationary flow of -v gives phi = e^{-a} z.
    for (double a : {-0.2, -0.1, 0.1, 0.2}) {
      const auto d = exp_velocity(linear_field(g, a));
      const double gain = 1.0 - std::exp(-a);
      const Vec3 c = g.center();
      for (std::int64_t z = 6; z < 18; z += 3)
        for (std::int64_t x = 4; x < 20; x += 5) {
          const Vec3 p{double(x), 11.0, double(z)};
          const Vec3 expected = gain * (p - c);
          const Vec3 got = d.vec(g.index(x, 11, z));
          REQUIRE((got - expected).norm() <= 0.01 * expected.norm() + 1e-6);
        }
    }
  }
  SUBCASE("automatic step count") {
    CHECK(auto_exp_steps(VectorField(g)) == 2);
    CHECK(auto_exp_steps(uniform_field(g, {0.9, 0, 0})) == 2);
    CHECK(auto_exp_steps(uniform_field(g, {1.0, 0, 0})) == 3);
    CHECK(auto_exp_steps(uniform_field(g, {6.0, 0, 0})) == 5);
  }
  SUBCASE("non-finite velocity") {
    VectorField v(g);
    v.data()[5] = INFINITY;
    CHECK_THROWS_AS(exp_velocity(v), Error);
  }
}

TEST_CASE("transform inversion") {
  const auto g = GridGeometry::cube(8);
  const auto zero = make_transform(VectorField(g));
  const auto zi = invert(zero);
  CHECK(zi.forward == zero.forward);
  CHECK(zi.backward == zero.backward);

  const auto t = make_transform(uniform_field(g, {0.7, 0, 0}));
  const auto ti = invert(t);
  CHECK(ti.velocity.vec(9).x == doctest::Approx(-0.7));
  CHECK(ti.forward == t.backward);
  const auto tii = invert(ti);
  CHECK(tii.velocity == t.velocity);
  CHECK(tii.forward == t.forward);
  CHECK(tii.backward == t.backward);
}

TEST_CASE("registration of identical volumes stays near identity") {
  const auto g = GridGeometry::cube(24);
  const Volume v = blob_phantom(g, 5, 10.0);
  const auto r = register_volumes(v, v);
  CHECK(r.transform.forward.mean_norm() < 0.05);
  CHECK(r.transform.backward.mean_norm() < 0.05);
}

TEST_CASE("registration input checks") {
  const auto g = GridGeometry::cube(16);
  const Volume v = blob_phantom(g, 5, 6.0);
  CHECK_THROWS_AS(register_volumes(v, Volume(g, 1.0f)), Error);
  CHECK_THROWS_AS(register_volumes(v, Volume(GridGeometry::cube(12), 1.0f)), Error);
  Volume bad = v;
  bad[3] = NAN;
  CHECK_THROWS_AS(register_volumes(bad, v), Error);
}

TEST_CASE("registration recovers a known radial deformation") {
  const auto g = GridGeometry::cube(40);
  const double radius = 16.0;
  const Volume src = blob_phantom(g, 3, radius);
  const auto truth = radial_gaussian_field(g.center() + Vec3{1, -1, 0.5}, -0.35, 7.0, g);
  REQUIRE(truth.field.max_norm() > 1.0);
  const Volume tgt = warp_volume(src, truth.field);

  RegistrationParams p;
  const auto r = register_volumes(src, tgt, p);
  const auto& fwd = r.transform.forward;

  const Mask support = blob_support(g, radius);
  double epe = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < support.voxel_count(); ++i) {
    if (!support[i]) continue;
    epe += (fwd.vec(i) - truth.field.vec(i)).norm();
    ++n;
  }
  CHECK(epe / double(n) < 0.5);

  {
    INFO("similarity does not decrease");
    CHECK(lcc_similarity(warp_volume(src, fwd), tgt, p.lcc_sigma) >=
          lcc_similarity(src, tgt, p.lcc_sigma));
  }
  {
    INFO("fields are diffeomorphic and inverse consistent");
    const auto jf = jacobian_map(fwd);
    const auto jb = jacobian_map(r.transform.backward);
    for (std::int64_t z = 1; z < g.nz() - 1; ++z)
      for (std::int64_t y = 1; y < g.ny() - 1; ++y)
        for (std::int64_t x = 1; x < g.nx() - 1; ++x) {
          const auto i = g.index(x, y, z);
          REQUIRE(jf[i] > 0.0f);
          REQUIRE(jb[i] > 0.0f);
        }
    const auto ic = compose(fwd, r.transform.backward);
    CHECK(ic.mean_norm() < 0.1);
    CHECK(ic.max_norm() < 0.5);
  }
  {
    INFO("trace is bounded and monotone per level");
    CHECK(r.trace.entries.size() <= std::size_t(p.pyramid_levels * p.iterations_per_level));
    std::map<int, double> best;
    for (const auto& e : r.trace.entries) {
      REQUIRE(std::isfinite(e.energy));
      if (!e.accepted) continue;
      if (best.count(e.level)) REQUIRE(e.energy >= best[e.level] - 1e-6);
      best[e.level] = e.energy;
    }
    CHECK(!best.empty());
  }
  {
    INFO("forward field equals the exponential of the velocity");
    const auto again = make_transform(r.transform.velocity, p.exp_steps);
    CHECK(again.forward == fwd);
    CHECK(again.backward == r.transform.backward);
  }
  {
    INFO("swapping source and target negates the velocity");
    const auto rs = register_volumes(tgt, src, p);
    const auto sum = r.transform.velocity + rs.transform.velocity;
    CHECK(sum.mean_norm() < 0.2);
  }
}
