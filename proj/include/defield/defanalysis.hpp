// Jacobian-determinant maps of deformation fields and the growth/decay
// partition of a tumor delineated in two consecutive weeks.
#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "defield/volume.hpp"

namespace defield {

/// Per-voxel determinant of d(phi)/dz for phi(z) = z - g(z).
class JacobianMap {
 public:
  JacobianMap() = default;
  explicit JacobianMap(Volume values) : values_(std::move(values)) {}

  const GridGeometry& geometry() const { return values_.geometry(); }
  const Volume& values() const { return values_; }
  float operator[](std::size_t i) const { return values_[i]; }

  double min() const;
  double mean() const;

 private:
  Volume values_;
};

/// Label codes double as the on-disk encoding.
enum class RegionLabel : std::uint8_t { N = 0, U = 1, R = 2, G = 3 };

inline constexpr std::array<RegionLabel, 4> kAllRegions{RegionLabel::N, RegionLabel::U,
                                                         RegionLabel::R, RegionLabel::G};

std::string_view region_name(RegionLabel l);
std::optional<RegionLabel> parse_region(std::string_view s);

struct RegionPartition {
  GridGeometry geometry;
  std::vector<RegionLabel> labels;
  int week_index = 0;

  std::size_t count(RegionLabel l) const;
  /// Binary mask of one label.
  Mask mask(RegionLabel l) const;
};

/// J values grouped by region label.
class RegionSamples {
 public:
  std::vector<double>& values(RegionLabel l) { return values_[static_cast<int>(l)]; }
  const std::vector<double>& values(RegionLabel l) const { return values_[static_cast<int>(l)]; }
  std::size_t count(RegionLabel l) const { return values(l).size(); }
  bool empty(RegionLabel l) const { return values(l).empty(); }
  /// Sample mean, or nullopt when the region has no samples.
  std::optional<double> mean(RegionLabel l) const;

  bool operator==(const RegionSamples&) const = default;

 private:
  std::array<std::vector<double>, 4> values_;
};

/// Central differences in the interior, one-sided on faces. Zero field gives 1.
JacobianMap jacobian_map(const VectorField& disp);

/// U = warped & next, R = warped \ next, G = next \ warped, N = the rest.
RegionPartition partition_regions(const Mask& tumor_warped, const Mask& tumor_next,
                                  int week_index = 0);

/// Groups J by label. Face voxels are skipped because their one-sided
/// stencils bias the determinant.
RegionSamples collect_samples(const JacobianMap& jmap, const RegionPartition& part);

/// Per-label concatenation.
RegionSamples pool(std::span<const RegionSamples> parts);

void write_jacobian(const std::filesystem::path& path, const JacobianMap& jmap);
JacobianMap read_jacobian(const std::filesystem::path& path);

void write_partition(const std::filesystem::path& path, const RegionPartition& part);
RegionPartition read_partition(const std::filesystem::path& path);

/// CSV with header `label,j_value`, one row per sample, grouped N, U, R, G.
void write_samples_csv(const std::filesystem::path& path, const RegionSamples& samples);
RegionSamples read_samples_csv(const std::filesystem::path& path);

}  // namespace defield
