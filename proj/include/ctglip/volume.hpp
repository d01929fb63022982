#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace ctglip {

/// Extents of a 3D grid. Storage is x-fastest: index = (z * height + y) * width + x.
struct Shape {
  int depth = 0;
  int height = 0;
  int width = 0;

  std::size_t voxels() const {
    return static_cast<std::size_t>(depth) * static_cast<std::size_t>(height) *
           static_cast<std::size_t>(width);
  }
  std::size_t index(int z, int y, int x) const {
    return (static_cast<std::size_t>(z) * height + y) * width + x;
  }
  bool operator==(const Shape&) const = default;
};

/// Intensity volume, normalized to [0, 1].
struct Volume {
  Shape shape;
  std::array<double, 3> spacing{1.0, 1.0, 1.0};  // mm; (x, y, z)
  std::vector<float> voxels;

  bool operator==(const Volume&) const = default;
};

/// Integer organ label map; 0 is background.
struct OrganMask {
  Shape shape;
  std::array<double, 3> spacing{1.0, 1.0, 1.0};
  std::vector<std::uint16_t> labels;

  /// Distinct nonzero labels in ascending order.
  std::vector<int> organ_ids() const;
  bool operator==(const OrganMask&) const = default;
};

// Raw-plus-sidecar file format: `<stem>.json` holds
// {"dims":[x,y,z],"spacing":[x,y,z],"dtype":"f32"|"u16","byte_order":"little"}
// and `<stem>.raw` holds little-endian samples in x-fastest order.
void write_volume(const std::filesystem::path& stem, const Volume& v);
Volume read_volume(const std::filesystem::path& stem);
void write_mask(const std::filesystem::path& stem, const OrganMask& m);
OrganMask read_mask(const std::filesystem::path& stem);

/// Writes bytes to path, throwing IoError naming the path on failure.
void write_file(const std::filesystem::path& path, const std::string& bytes);
std::string read_file(const std::filesystem::path& path);

}  // namespace ctglip
