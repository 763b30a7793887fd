#include "defield/defanalysis.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <string>

#include "defield/volume_io.hpp"

namespace defield {

namespace fs = std::filesystem;

double JacobianMap::min() const {
  const auto d = values_.data();
  return *std::min_element(d.begin(), d.end());
}

double JacobianMap::mean() const {
  const auto d = values_.data();
  return std::accumulate(d.begin(), d.end(), 0.0) / static_cast<double>(d.size());
}

std::string_view region_name(RegionLabel l) {
  switch (l) {
    case RegionLabel::N: return "N";
    case RegionLabel::U: return "U";
    case RegionLabel::R: return "R";
    case RegionLabel::G: return "G";
  }
  return "?";
}

std::optional<RegionLabel> parse_region(std::string_view s) {
  for (auto l : kAllRegions) {
    if (region_name(l) == s) return l;
  }
  return std::nullopt;
}

std::size_t RegionPartition::count(RegionLabel l) const {
  return static_cast<std::size_t>(std::count(labels.begin(), labels.end(), l));
}

Mask RegionPartition::mask(RegionLabel l) const {
  Mask m(geometry);
  for (std::size_t i = 0; i < labels.size(); ++i) m[i] = labels[i] == l ? 1 : 0;
  return m;
}

std::optional<double> RegionSamples::mean(RegionLabel l) const {
  const auto& v = values(l);
  if (v.empty()) return std::nullopt;
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

JacobianMap jacobian_map(const VectorField& disp) {
  const auto& g = disp.geometry();
  for (int a = 0; a < 3; ++a) {
    if (g.dims[a] < 3) throw Error(ErrorCode::InvalidArgument, "jacobian_map needs dims >= 3");
  }
  for (float c : disp.data()) {
    if (!std::isfinite(c)) throw Error(ErrorCode::NonFinite, "displacement field is not finite");
  }
  const std::array<std::size_t, 3> stride{1, static_cast<std::size_t>(g.dims[0]),
                                          static_cast<std::size_t>(g.dims[0] * g.dims[1])};
  const float* d = disp.data().data();
  Volume out(g);
  std::size_t i = 0;
  for (std::int64_t z = 0; z < g.dims[2]; ++z)
    for (std::int64_t y = 0; y < g.dims[1]; ++y)
      for (std::int64_t x = 0; x < g.dims[0]; ++x, ++i) {
        const std::array<std::int64_t, 3> c{x, y, z};
        Mat3 m{};
        for (int l = 0; l < 3; ++l) {  // derivative along axis l
          std::size_t lo = i, hi = i;
          double h = 2.0;
          if (c[l] == 0) {
            hi = i + stride[l];
            h = 1.0;
          } else if (c[l] == g.dims[l] - 1) {
            lo = i - stride[l];
            h = 1.0;
          } else {
            lo = i - stride[l];
            hi = i + stride[l];
          }
          for (int k = 0; k < 3; ++k) {
            const double dg = (double(d[3 * hi + k]) - double(d[3 * lo + k])) / h;
            m[k][l] = (k == l ? 1.0 : 0.0) - dg;
          }
        }
        out[i] = static_cast<float>(determinant(m));
      }
  return JacobianMap(std::move(out));
}

RegionPartition partition_regions(const Mask& tumor_warped, const Mask& tumor_next,
                                  int week_index) {
  require_same_geometry(tumor_warped.geometry(), tumor_next.geometry(), "partition_regions");
  RegionPartition p;
  p.geometry = tumor_warped.geometry();
  p.week_index = week_index;
  p.labels.resize(tumor_warped.voxel_count());
  for (std::size_t i = 0; i < p.labels.size(); ++i) {
    const bool w = tumor_warped[i] != 0;
    const bool n = tumor_next[i] != 0;
    p.labels[i] = w ? (n ? RegionLabel::U : RegionLabel::R) : (n ? RegionLabel::G : RegionLabel::N);
  }
  return p;
}

RegionSamples collect_samples(const JacobianMap& jmap, const RegionPartition& part) {
  require_same_geometry(jmap.geometry(), part.geometry, "collect_samples");
  const auto& g = part.geometry;
  RegionSamples s;
  std::size_t i = 0;
  for (std::int64_t z = 0; z < g.dims[2]; ++z)
    for (std::int64_t y = 0; y < g.dims[1]; ++y)
      for (std::int64_t x = 0; x < g.dims[0]; ++x, ++i) {
        if (g.on_face(x, y, z)) continue;
        s.values(part.labels[i]).push_back(jmap[i]);
      }
  return s;
}

RegionSamples pool(std::span<const RegionSamples> parts) {
  RegionSamples out;
  for (auto l : kAllRegions) {
    auto& dst = out.values(l);
    std::size_t n = 0;
    for (const auto& p : parts) n += p.count(l);
    dst.reserve(n);
    for (const auto& p : parts) dst.insert(dst.end(), p.values(l).begin(), p.values(l).end());
  }
  return out;
}

void write_jacobian(const fs::path& path, const JacobianMap& jmap) {
  write_volume(path, jmap.values());
}

JacobianMap read_jacobian(const fs::path& path) { return JacobianMap(read_volume(path)); }

void write_partition(const fs::path& path, const RegionPartition& part) {
  std::vector<std::uint8_t> raw(part.labels.size());
  std::transform(part.labels.begin(), part.labels.end(), raw.begin(),
                 [](RegionLabel l) { return static_cast<std::uint8_t>(l); });
  write_uint8_payload(path, part.geometry, raw);
}

RegionPartition read_partition(const fs::path& path) {
  RegionPartition p;
  const auto raw = read_uint8_payload(path, p.geometry);
  p.labels.resize(raw.size());
  for (std::size_t i = 0; i < raw.size(); ++i) {
    if (raw[i] > 3) {
      throw Error(ErrorCode::MalformedFile, path.string() + ": region label code out of range");
    }
    p.labels[i] = static_cast<RegionLabel>(raw[i]);
  }
  return p;
}

void write_samples_csv(const fs::path& path, const RegionSamples& samples) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::Io, path.string() + ": cannot open for writing");
  out << "label,j_value\n";
  for (auto l : kAllRegions) {
    const auto name = region_name(l);
    for (double v : samples.values(l)) out << name << ',' << format_number(v) << '\n';
  }
  if (!out) throw Error(ErrorCode::Io, path.string() + ": write failed");
}

RegionSamples read_samples_csv(const fs::path& path) {
  if (!fs::exists(path)) throw Error(ErrorCode::FileNotFound, path.string() + ": no such file");
  std::ifstream in(path);
  std::string line;
  if (!std::getline(in, line) || line != "label,j_value") {
    throw Error(ErrorCode::MalformedFile, path.string() + ": expected header 'label,j_value'");
  }
  RegionSamples s;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto comma = line.find(',');
    const auto label =
        comma == std::string::npos ? std::nullopt : parse_region(line.substr(0, comma));
    double v = 0.0;
    bool ok = label.has_value();
    if (ok) {
      try {
        std::size_t used = 0;
        v = std::stod(line.substr(comma + 1), &used);
        ok = used == line.size() - comma - 1 && std::isfinite(v);
      } catch (const std::exception&) {
        ok = false;
      }
    }
    if (!ok) {
      throw Error(ErrorCode::MalformedFile,
                  path.string() + ": bad sample row at line " + std::to_string(lineno));
    }
    s.values(*label).push_back(v);
  }
  return s;
}

}  // namespace defield
