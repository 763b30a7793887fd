// Array convention: volumes are (nz, ny, nx) C-ordered, so x varies fastest
// as in the library; vector fields add a trailing axis of length 3.
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <algorithm>
#include <array>
#include <cstring>
#include <optional>
#include <string>
#include <vector>

#include "defield/cohort.hpp"
#include "defield/defanalysis.hpp"
#include "defield/error.hpp"
#include "defield/phantom.hpp"
#include "defield/registration.hpp"
#include "defield/stats.hpp"

namespace py = pybind11;
using namespace defield;

namespace {

template <typename T>
using CArray = py::array_t<T, py::array::c_style | py::array::forcecast>;

GridGeometry geometry_of(const py::buffer_info& info, int components, const char* what) {
  const auto want = static_cast<py::ssize_t>(components == 1 ? 3 : 4);
  if (info.ndim != want || (components != 1 && info.shape[3] != components)) {
    throw Error(ErrorCode::InvalidArgument,
                std::string(what) + (components == 1 ? " must have shape (nz, ny, nx)"
                                                      : " must have shape (nz, ny, nx, 3)"));
  }
  return GridGeometry({info.shape[2], info.shape[1], info.shape[0]});
}

template <typename G>
G to_grid(const CArray<typename G::value_type>& a, const char* what) {
  const auto info = a.request();
  const auto g = geometry_of(info, G::components, what);
  const auto* p = static_cast<const typename G::value_type*>(info.ptr);
  return G(g, std::vector<typename G::value_type>(p, p + info.size));
}

template <typename G>
py::array_t<typename G::value_type> to_array(const G& grid) {
  const auto& d = grid.geometry().dims;
  std::vector<py::ssize_t> shape{d[2], d[1], d[0]};
  if (G::components != 1) shape.push_back(G::components);
  py::array_t<typename G::value_type> out(shape);
  std::memcpy(out.mutable_data(), grid.data().data(),
              grid.data().size() * sizeof(typename G::value_type));
  return out;
}

Volume to_volume(const CArray<float>& a, const char* what) { return to_grid<Volume>(a, what); }

VectorField to_field(const CArray<float>& a, const char* what) {
  return to_grid<VectorField>(a, what);
}

Mask to_mask(const CArray<std::uint8_t>& a, const char* what) { return to_grid<Mask>(a, what); }

std::vector<double> to_vector(const CArray<double>& a) {
  const auto info = a.request();
  const auto* p = static_cast<const double*>(info.ptr);
  return {p, p + info.size};
}

py::object json_to_py(const nlohmann::ordered_json& j) {
  return py::module_::import("json").attr("loads")(j.dump());
}

py::dict region_dict(const RegionSamples& s) {
  py::dict out;
  for (auto l : kAllRegions) {
    const auto& v = s.values(l);
    py::array_t<double> a(static_cast<py::ssize_t>(v.size()));
    std::copy(v.begin(), v.end(), a.mutable_data());
    out[py::str(std::string(region_name(l)))] = a;
  }
  return out;
}

Contingency2x2 table(std::int64_t a, std::int64_t b, std::int64_t c, std::int64_t d) {
  Contingency2x2 t{a, b, c, d};
  t.validate();
  return t;
}

}  // namespace

PYBIND11_MODULE(_defield, m) {
  m.doc() = "Deformation-field analysis of longitudinal tumor scans.";

  // Leaked on purpose: the type must outlive every translator call.
  static PyObject* exc_type =
      py::exception<Error>(m, "DefieldError", PyExc_ValueError).release().ptr();
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      py::object err = py::reinterpret_borrow<py::object>(exc_type)(e.what());
      err.attr("code") = std::string(error_code_name(e.code()));
      PyErr_SetObject(exc_type, err.ptr());
    }
  });

  m.def(
      "register",
      [](const CArray<float>& source, const CArray<float>& target, int pyramid_levels,
         int iterations_per_level, double lcc_sigma, double fluid_sigma, double diffusion_sigma,
         std::optional<int> exp_steps, double step_scale, double convergence_tol) {
        RegistrationParams p;
        p.pyramid_levels = pyramid_levels;
        p.iterations_per_level = iterations_per_level;
        p.lcc_sigma = lcc_sigma;
        p.fluid_sigma = fluid_sigma;
        p.diffusion_sigma = diffusion_sigma;
        p.exp_steps = exp_steps;
        p.step_scale = step_scale;
        p.convergence_tol = convergence_tol;
        const Volume src = to_volume(source, "source");
        const Volume tgt = to_volume(target, "target");
        RegistrationResult r;
        {
          py::gil_scoped_release release;
          r = register_volumes(src, tgt, p);
        }
        py::list trace;
        for (const auto& e : r.trace.entries) {
          py::dict d;
          d["level"] = e.level;
          d["iteration"] = e.iteration;
          d["energy"] = e.energy;
          d["update_max_norm"] = e.update_max_norm;
          d["step_scale"] = e.step_scale;
          d["accepted"] = e.accepted;
          trace.append(d);
        }
        py::dict out;
        out["velocity"] = to_array(r.transform.velocity);
        out["forward"] = to_array(r.transform.forward);
        out["backward"] = to_array(r.transform.backward);
        out["trace"] = trace;
        return out;
      },
      py::arg("source"), py::arg("target"), py::arg("pyramid_levels") = 3,
      py::arg("iterations_per_level") = 50, py::arg("lcc_sigma") = 3.0,
      py::arg("fluid_sigma") = 2.0, py::arg("diffusion_sigma") = 1.5,
      py::arg("exp_steps") = py::none(), py::arg("step_scale") = 1.0,
      py::arg("convergence_tol") = 1e-4,
      "Symmetric registration; source warped by `forward` matches the target.");

  m.def(
      "exp_velocity",
      [](const CArray<float>& v, std::optional<int> steps) {
        return to_array(exp_velocity(to_field(v, "velocity"), steps));
      },
      py::arg("velocity"), py::arg("exp_steps") = py::none());

  m.def(
      "warp_volume",
      [](const CArray<float>& vol, const CArray<float>& disp) {
        return to_array(warp_volume(to_volume(vol, "volume"), to_field(disp, "displacement")));
      },
      py::arg("volume"), py::arg("displacement"), "out(z) = in(z - g(z)), trilinear.");

  m.def(
      "warp_mask",
      [](const CArray<std::uint8_t>& mask, const CArray<float>& disp) {
        return to_array(warp_mask(to_mask(mask, "mask"), to_field(disp, "displacement")));
      },
      py::arg("mask"), py::arg("displacement"));

  m.def(
      "jacobian_map",
      [](const CArray<float>& disp) {
        return to_array(jacobian_map(to_field(disp, "displacement")).values());
      },
      py::arg("displacement"), "det(d(z - g)/dz) per voxel.");

  m.def(
      "partition_regions",
      [](const CArray<std::uint8_t>& warped, const CArray<std::uint8_t>& next) {
        const auto part =
            partition_regions(to_mask(warped, "tumor_warped"), to_mask(next, "tumor_next"));
        Mask labels(part.geometry);
        for (std::size_t i = 0; i < part.labels.size(); ++i) {
          labels[i] = static_cast<std::uint8_t>(part.labels[i]);
        }
        return to_array(labels);
      },
      py::arg("tumor_warped"), py::arg("tumor_next"), "Labels N=0, U=1, R=2, G=3.");

  m.def(
      "region_samples",
      [](const CArray<float>& jacobian, const CArray<std::uint8_t>& labels) {
        const Volume j = to_volume(jacobian, "jacobian");
        const auto info = labels.request();
        const auto g = geometry_of(info, 1, "labels");
        require_same_geometry(j.geometry(), g, "region_samples");
        RegionPartition part{g, {}, 0};
        part.labels.reserve(g.voxel_count());
        const auto* lp = static_cast<const std::uint8_t*>(info.ptr);
        for (const auto* it = lp; it != lp + info.size; ++it) {
          const auto v = *it;
          if (v > 3) throw Error(ErrorCode::InvalidArgument, "region labels must be 0..3");
          part.labels.push_back(static_cast<RegionLabel>(v));
        }
        return region_dict(collect_samples(JacobianMap(j), part));
      },
      py::arg("jacobian"), py::arg("labels"), "J values per region, face voxels skipped.");

  m.def(
      "lcc_similarity",
      [](const CArray<float>& a, const CArray<float>& b, double sigma) {
        return lcc_similarity(to_volume(a, "a"), to_volume(b, "b"), sigma);
      },
      py::arg("a"), py::arg("b"), py::arg("lcc_sigma") = 3.0);

  m.def(
      "fisher_exact",
      [](std::int64_t a, std::int64_t b, std::int64_t c, std::int64_t d) {
        const auto r = fisher_exact(table(a, b, c, d));
        py::dict out;
        out["odds_ratio"] = r.odds_ratio;
        out["p"] = r.p;
        return out;
      },
      py::arg("a"), py::arg("b"), py::arg("c"), py::arg("d"));

  m.def(
      "pooled_t_test",
      [](const CArray<double>& x, const CArray<double>& y) {
        const auto xs = to_vector(x);
        const auto ys = to_vector(y);
        const auto r = pooled_t_test(summarize(xs), summarize(ys));
        py::dict out;
        out["t"] = r.t;
        out["p"] = r.p;
        out["df"] = r.df;
        return out;
      },
      py::arg("x"), py::arg("y"));

  m.def(
      "bootstrap_ci",
      [](const CArray<double>& samples, int resamples, double level, std::uint64_t seed) {
        const auto iv = bootstrap_ci(to_vector(samples), resamples, level, seed);
        return py::make_tuple(iv.lo, iv.hi);
      },
      py::arg("samples"), py::arg("resamples") = 1000, py::arg("level") = 0.95,
      py::arg("seed") = 0);

  m.def(
      "classify",
      [](std::optional<double> mu_R, std::optional<double> mu_G, std::optional<double> mu_U,
         std::optional<double> mu_N) {
        RegionMeans means;
        means.mu_R = mu_R;
        means.mu_G = mu_G;
        means.mu_U = mu_U;
        means.mu_N = mu_N;
        const auto c = classify(means);
        py::dict out;
        out["decision"] = std::string(decision_name(c.decision));
        out["note"] = c.note;
        return out;
      },
      py::arg("mu_R"), py::arg("mu_G"), py::arg("mu_U"), py::arg("mu_N") = py::none());

  m.def(
      "metrics",
      [](std::int64_t a, std::int64_t b, std::int64_t c, std::int64_t d) {
        const auto r = metrics(table(a, b, c, d));
        py::dict out;
        out["accuracy"] = r.accuracy;
        out["precision"] = r.precision;
        out["recall"] = r.recall;
        return out;
      },
      py::arg("a"), py::arg("b"), py::arg("c"), py::arg("d"), "Percentages; None when undefined.");

  m.def(
      "reproduce_tables",
      [](const std::string& fixture) {
        return json_to_py(to_json(reproduce_tables(read_fixture(fixture))));
      },
      py::arg("fixture"));

  m.def(
      "radial_gaussian_field",
      [](std::array<std::int64_t, 3> shape, std::array<double, 3> center, double a, double width) {
        const GridGeometry g({shape[2], shape[1], shape[0]});
        g.validate();
        const auto r = radial_gaussian_field({center[0], center[1], center[2]}, a, width, g);
        return py::make_tuple(to_array(r.field), to_array(r.jacobian));
      },
      py::arg("shape"), py::arg("center"), py::arg("amplitude"), py::arg("width"),
      "Returns (displacement, analytic Jacobian). `shape` is (nz, ny, nx), `center` is (x, y, z).");
}
