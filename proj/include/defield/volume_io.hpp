// ".vol" container: a text header of `KEY values` lines closed by one blank
// line, followed by raw little-endian voxel data (x-fastest, then y, then z;
// components interleaved).
//
//   DIMS nx ny nz
//   SPACING sx sy sz
//   ORIGIN ox oy oz
//   DTYPE float32-le | uint8
//   COMPONENTS 3            (vector fields only)
#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "defield/volume.hpp"

namespace defield {

enum class VoxelType { Float32, UInt8 };

struct VolHeader {
  GridGeometry geometry;
  VoxelType type = VoxelType::Float32;
  int components = 1;
};

VolHeader read_vol_header(std::istream& in, const std::string& name);
void write_vol_header(std::ostream& out, const VolHeader& header);

/// Shortest round-trip decimal text for a double.
std::string format_number(double v);
std::string format_number(float v);

Volume read_volume(const std::filesystem::path& path);
void write_volume(const std::filesystem::path& path, const Volume& vol);

Mask read_mask(const std::filesystem::path& path);
void write_mask(const std::filesystem::path& path, const Mask& mask);

VectorField read_field(const std::filesystem::path& path);
void write_field(const std::filesystem::path& path, const VectorField& field);

/// Raw uint8 payload with no value check (label maps with codes beyond 0/1).
std::vector<std::uint8_t> read_uint8_payload(const std::filesystem::path& path,
                                             GridGeometry& geometry);
void write_uint8_payload(const std::filesystem::path& path, const GridGeometry& geometry,
                         const std::vector<std::uint8_t>& data);

}  // namespace defield
