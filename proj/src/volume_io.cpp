#include "defield/volume_io.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <charconv>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

namespace defield {

namespace fs = std::filesystem;

namespace {

[[noreturn]] void malformed(const std::string& name, const std::string& what) {
  throw Error(ErrorCode::MalformedFile, name + ": " + what);
}

std::ifstream open_in(const fs::path& path) {
  if (!fs::exists(path)) {
    throw Error(ErrorCode::FileNotFound, path.string() + ": no such file");
  }
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, path.string() + ": cannot open for reading");
  return in;
}

std::ofstream open_out(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::Io, path.string() + ": cannot open for writing");
  return out;
}

template <typename T>
std::vector<T> read_payload(std::istream& in, std::size_t count, const std::string& name) {
  std::vector<T> data(count);
  in.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(count * sizeof(T)));
  if (static_cast<std::size_t>(in.gcount()) != count * sizeof(T)) {
    malformed(name, "voxel payload is shorter than the header declares");
  }
  if (in.peek() != std::char_traits<char>::eof()) {
    malformed(name, "trailing bytes after voxel payload");
  }
  if constexpr (sizeof(T) > 1 && std::endian::native == std::endian::big) {
    for (auto& v : data) {
      auto bytes = std::bit_cast<std::array<char, sizeof(T)>>(v);
      std::reverse(bytes.begin(), bytes.end());
      v = std::bit_cast<T>(bytes);
    }
  }
  return data;
}

template <typename T>
void write_payload(std::ostream& out, std::span<const T> data) {
  if constexpr (sizeof(T) > 1 && std::endian::native == std::endian::big) {
    for (auto v : data) {
      auto bytes = std::bit_cast<std::array<char, sizeof(T)>>(v);
      std::reverse(bytes.begin(), bytes.end());
      out.write(bytes.data(), sizeof(T));
    }
  } else {
    out.write(reinterpret_cast<const char*>(data.data()),
              static_cast<std::streamsize>(data.size() * sizeof(T)));
  }
}

VolHeader expect_header(std::istream& in, const std::string& name, VoxelType type,
                        int components) {
  VolHeader h = read_vol_header(in, name);
  if (h.type != type) {
    malformed(name, type == VoxelType::UInt8 ? "expected DTYPE uint8" : "expected DTYPE float32-le");
  }
  if (h.components != components) {
    malformed(name, "expected COMPONENTS " + std::to_string(components));
  }
  return h;
}

template <typename G>
void write_grid(const fs::path& path, const G& grid, VoxelType type) {
  auto out = open_out(path);
  write_vol_header(out, {grid.geometry(), type, G::components});
  write_payload(out, grid.data());
  if (!out) throw Error(ErrorCode::Io, path.string() + ": write failed");
}

}  // namespace

std::string format_number(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, end);
}

std::string format_number(float v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, end);
}

VolHeader read_vol_header(std::istream& in, const std::string& name) {
  VolHeader h;
  bool have_dims = false, have_spacing = false, have_origin = false, have_dtype = false;
  std::string line;
  while (true) {
    if (!std::getline(in, line)) malformed(name, "header is not terminated by a blank line");
    if (line.empty()) break;
    std::istringstream ls(line);
    std::string key;
    ls >> key;
    auto read3 = [&](auto& arr) {
      for (auto& v : arr) {
        if (!(ls >> v)) malformed(name, "bad " + key + " line");
      }
    };
    if (key == "DIMS") {
      read3(h.geometry.dims);
      have_dims = true;
    } else if (key == "SPACING") {
      read3(h.geometry.spacing);
      have_spacing = true;
    } else if (key == "ORIGIN") {
      read3(h.geometry.origin);
      have_origin = true;
    } else if (key == "DTYPE") {
      std::string t;
      ls >> t;
      if (t == "float32-le") {
        h.type = VoxelType::Float32;
      } else if (t == "uint8") {
        h.type = VoxelType::UInt8;
      } else {
        malformed(name, "unknown DTYPE '" + t + "'");
      }
      have_dtype = true;
    } else if (key == "COMPONENTS") {
      if (!(ls >> h.components) || (h.components != 1 && h.components != 3)) {
        malformed(name, "COMPONENTS must be 1 or 3");
      }
    } else {
      malformed(name, "unknown header key '" + key + "'");
    }
    std::string rest;
    if (ls >> rest) malformed(name, "trailing tokens on " + key + " line");
  }
  if (!have_dims || !have_spacing || !have_origin || !have_dtype) {
    malformed(name, "header must contain DIMS, SPACING, ORIGIN and DTYPE");
  }
  try {
    h.geometry.validate();
  } catch (const Error& e) {
    malformed(name, e.what());
  }
  return h;
}

void write_vol_header(std::ostream& out, const VolHeader& h) {
  const auto& g = h.geometry;
  out << "DIMS " << g.dims[0] << ' ' << g.dims[1] << ' ' << g.dims[2] << '\n';
  out << "SPACING " << format_number(g.spacing[0]) << ' ' << format_number(g.spacing[1]) << ' '
      << format_number(g.spacing[2]) << '\n';
  out << "ORIGIN " << format_number(g.origin[0]) << ' ' << format_number(g.origin[1]) << ' '
      << format_number(g.origin[2]) << '\n';
  out << "DTYPE " << (h.type == VoxelType::Float32 ? "float32-le" : "uint8") << '\n';
  if (h.components != 1) out << "COMPONENTS " << h.components << '\n';
  out << '\n';
}

Volume read_volume(const fs::path& path) {
  auto in = open_in(path);
  const auto h = expect_header(in, path.string(), VoxelType::Float32, 1);
  return Volume(h.geometry, read_payload<float>(in, h.geometry.voxel_count(), path.string()));
}

void write_volume(const fs::path& path, const Volume& vol) {
  write_grid(path, vol, VoxelType::Float32);
}

Mask read_mask(const fs::path& path) {
  auto in = open_in(path);
  const auto h = expect_header(in, path.string(), VoxelType::UInt8, 1);
  return Mask(h.geometry,
              read_payload<std::uint8_t>(in, h.geometry.voxel_count(), path.string()));
}

void write_mask(const fs::path& path, const Mask& mask) {
  write_grid(path, mask, VoxelType::UInt8);
}

VectorField read_field(const fs::path& path) {
  auto in = open_in(path);
  const auto h = expect_header(in, path.string(), VoxelType::Float32, 3);
  return VectorField(
      h.geometry, read_payload<float>(in, 3 * h.geometry.voxel_count(), path.string()));
}

void write_field(const fs::path& path, const VectorField& field) {
  write_grid(path, field, VoxelType::Float32);
}

std::vector<std::uint8_t> read_uint8_payload(const fs::path& path, GridGeometry& geometry) {
  auto in = open_in(path);
  const auto h = expect_header(in, path.string(), VoxelType::UInt8, 1);
  geometry = h.geometry;
  return read_payload<std::uint8_t>(in, h.geometry.voxel_count(), path.string());
}

void write_uint8_payload(const fs::path& path, const GridGeometry& geometry,
                         const std::vector<std::uint8_t>& data) {
  auto out = open_out(path);
  write_vol_header(out, {geometry, VoxelType::UInt8, 1});
  write_payload(out, std::span<const std::uint8_t>(data));
  if (!out) throw Error(ErrorCode::Io, path.string() + ": write failed");
}

}  // namespace defield
