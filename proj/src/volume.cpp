#include "ctglip/volume.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "ctglip/common.hpp"

namespace ctglip {
namespace {

using nlohmann::json;

std::filesystem::path with_suffix(const std::filesystem::path& stem, const char* suffix) {
  return std::filesystem::path(stem.string() + suffix);
}

template <typename T>
std::string to_little_endian(const std::vector<T>& values) {
  std::string bytes(values.size() * sizeof(T), '\0');
  std::memcpy(bytes.data(), values.data(), bytes.size());
  if constexpr (std::endian::native == std::endian::big) {
    for (std::size_t i = 0; i < bytes.size(); i += sizeof(T)) {
      std::reverse(bytes.begin() + i, bytes.begin() + i + sizeof(T));
    }
  }
  return bytes;
}

template <typename T>
std::vector<T> from_little_endian(std::string bytes, const std::filesystem::path& path) {
  if (bytes.size() % sizeof(T) != 0) {
    throw ValidationError(path.string() + ": payload size is not a multiple of the sample size");
  }
  if constexpr (std::endian::native == std::endian::big) {
    for (std::size_t i = 0; i < bytes.size(); i += sizeof(T)) {
      std::reverse(bytes.begin() + i, bytes.begin() + i + sizeof(T));
    }
  }
  std::vector<T> out(bytes.size() / sizeof(T));
  std::memcpy(out.data(), bytes.data(), bytes.size());
  return out;
}

std::string header_text(const Shape& s, const std::array<double, 3>& spacing, const char* dtype) {
  json h;
  h["dims"] = {s.width, s.height, s.depth};
  h["spacing"] = {spacing[0], spacing[1], spacing[2]};
  h["dtype"] = dtype;
  h["byte_order"] = "little";
  return h.dump(2) + "\n";
}

struct Header {
  Shape shape;
  std::array<double, 3> spacing;
};

Header parse_header(const std::filesystem::path& path, const char* dtype) {
  json h;
  try {
    h = json::parse(read_file(path));
    Header out;
    const auto dims = h.at("dims").get<std::vector<int>>();
    const auto sp = h.at("spacing").get<std::vector<double>>();
    if (dims.size() != 3 || sp.size() != 3) throw ValidationError("dims and spacing need 3 entries");
    out.shape = Shape{dims[2], dims[1], dims[0]};
    out.spacing = {sp[0], sp[1], sp[2]};
    if (h.at("dtype").get<std::string>() != dtype) {
      throw ValidationError(std::string("expected dtype ") + dtype);
    }
    if (h.at("byte_order").get<std::string>() != "little") {
      throw ValidationError("only little-endian payloads are supported");
    }
    if (out.shape.depth <= 0 || out.shape.height <= 0 || out.shape.width <= 0) {
      throw ValidationError("dims must be positive");
    }
    return out;
  } catch (const json::exception& e) {
    throw ValidationError(path.string() + ": " + e.what());
  } catch (const ValidationError& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

}  // namespace

std::vector<int> OrganMask::organ_ids() const {
  std::vector<bool> seen(65536, false);
  for (auto l : labels) seen[l] = true;
  std::vector<int> ids;
  for (int k = 1; k < 65536; ++k) {
    if (seen[k]) ids.push_back(k);
  }
  return ids;
}

void write_file(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed: " + path.string());
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open for reading: " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_volume(const std::filesystem::path& stem, const Volume& v) {
  write_file(with_suffix(stem, ".json"), header_text(v.shape, v.spacing, "f32"));
  write_file(with_suffix(stem, ".raw"), to_little_endian(v.voxels));
}

Volume read_volume(const std::filesystem::path& stem) {
  const auto header = parse_header(with_suffix(stem, ".json"), "f32");
  const auto raw_path = with_suffix(stem, ".raw");
  Volume v;
  v.shape = header.shape;
  v.spacing = header.spacing;
  v.voxels = from_little_endian<float>(read_file(raw_path), raw_path);
  if (v.voxels.size() != v.shape.voxels()) {
    throw ValidationError(raw_path.string() + ": voxel count does not match header dims");
  }
  return v;
}

void write_mask(const std::filesystem::path& stem, const OrganMask& m) {
  write_file(with_suffix(stem, ".json"), header_text(m.shape, m.spacing, "u16"));
  write_file(with_suffix(stem, ".raw"), to_little_endian(m.labels));
}

OrganMask read_mask(const std::filesystem::path& stem) {
  const auto header = parse_header(with_suffix(stem, ".json"), "u16");
  const auto raw_path = with_suffix(stem, ".raw");
  OrganMask m;
  m.shape = header.shape;
  m.spacing = header.spacing;
  m.labels = from_little_endian<std::uint16_t>(read_file(raw_path), raw_path);
  if (m.labels.size() != m.shape.voxels()) {
    throw ValidationError(raw_path.string() + ": label count does not match header dims");
  }
  return m;
}

}  // namespace ctglip
