#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ctglip/reportproc.hpp"
#include "ctglip/volume.hpp"

namespace ctglip::synthdata {

struct OrganSpec {
  int id = 0;
  std::string name;
  /// Abnormality names this organ can carry. Empty means always normal.
  std::vector<std::string> abnormalities;
};

struct CohortSpec {
  int n_subjects = 0;
  std::vector<OrganSpec> organs;
  double abnormality_rate = 0.0;
  Shape shape{20, 20, 20};
  std::array<double, 3> spacing{1.0, 1.0, 1.0};
  std::uint64_t master_seed = 0;
  /// Minimum gap between the mean intensities of two organs.
  double identity_margin = 0.05;
  /// Ellipsoid semi-axis range, in voxels.
  double min_radius = 2.0;
  double max_radius = 3.5;

  /// Throws ValidationError naming the offending field.
  void validate() const;
  reportproc::OrganLexicon lexicon() const;
};

struct GroundTruth {
  std::vector<int> present;
  std::map<int, std::string> abnormality;  // organ id -> abnormality name
  std::map<int, double> intensity;         // organ id -> planted mean intensity

  bool operator==(const GroundTruth&) const = default;
};

struct Subject {
  Volume volume;
  OrganMask mask;
  GroundTruth truth;
  std::string report;
};

/// Mean interior intensity assigned to each organ (ascending id order).
std::map<int, double> intensity_codes(const CohortSpec& spec);

/// Sign of the additive texture for abnormality variant `variant` at (z, y, x).
int texture_sign(int variant, int z, int y, int x);

inline constexpr double kTextureAmplitude = 0.1;
inline constexpr double kBackgroundMax = 0.02;
inline constexpr double kInteriorNoise = 0.02;

/// Pure function of (spec.master_seed, index).
Subject generate_subject(const CohortSpec& spec, int index);

struct ManifestRecord {
  int subject_id = 0;
  std::filesystem::path volume_path;  // stem, relative to the manifest directory
  std::filesystem::path mask_path;
  std::filesystem::path report_path;
  GroundTruth ground_truth;
};

struct Manifest {
  std::filesystem::path path;
  std::vector<ManifestRecord> records;
};

/// Writes subjects/<id>_{vol,mask}.{json,raw}, subjects/<id>_report.txt and manifest.jsonl.
Manifest generate_cohort(const CohortSpec& spec, const std::filesystem::path& out_dir);

Manifest read_manifest(const std::filesystem::path& path);

/// One subject loaded from disk.
struct LoadedSubject {
  int subject_id = 0;
  Volume volume;
  OrganMask mask;
  std::string report;
  GroundTruth truth;
};

std::vector<LoadedSubject> load_subjects(const Manifest& manifest);

}  // namespace ctglip::synthdata
