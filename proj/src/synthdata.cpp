#include "ctglip/synthdata.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <set>
#include <sstream>

#include <json.hpp>

#include "ctglip/common.hpp"

namespace ctglip::synthdata {
namespace {

using nlohmann::json;

constexpr double kCodeLow = 0.15;
constexpr double kCodeHigh = 0.85;
constexpr int kPlacementAttempts = 500;

struct Ellipsoid {
  double cz, cy, cx;
  double rz, ry, rx;

  bool contains(int z, int y, int x) const {
    const double dz = (z - cz) / rz;
    const double dy = (y - cy) / ry;
    const double dx = (x - cx) / rx;
    return dz * dz + dy * dy + dx * dx <= 1.0;
  }
};

std::string capitalized(std::string s) {
  if (!s.empty()) s[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(s[0])));
  return s;
}

std::vector<OrganSpec> sorted_organs(const CohortSpec& spec) {
  auto organs = spec.organs;
  std::sort(organs.begin(), organs.end(),
            [](const OrganSpec& a, const OrganSpec& b) { return a.id < b.id; });
  return organs;
}

// Places one ellipsoid so that it overlaps no labelled voxel and keeps a
// one-voxel gap to other organs. Returns the voxel indices it covers.
std::optional<std::vector<std::size_t>> place(const CohortSpec& spec, const OrganMask& mask, Rng& rng,
                                              Ellipsoid& out) {
  const Shape& s = spec.shape;
  for (int attempt = 0; attempt < kPlacementAttempts; ++attempt) {
    Ellipsoid e{};
    e.rz = rng.uniform(spec.min_radius, spec.max_radius);
    e.ry = rng.uniform(spec.min_radius, spec.max_radius);
    e.rx = rng.uniform(spec.min_radius, spec.max_radius);
    auto center = [&](double r, int extent) {
      const double lo = std::min(r, (extent - 1) / 2.0);
      const double hi = std::max(lo, extent - 1 - r);
      return rng.uniform(lo, hi);
    };
    e.cz = center(e.rz, s.depth);
    e.cy = center(e.ry, s.height);
    e.cx = center(e.rx, s.width);

    const int z0 = std::max(0, static_cast<int>(std::floor(e.cz - e.rz)));
    const int z1 = std::min(s.depth - 1, static_cast<int>(std::ceil(e.cz + e.rz)));
    const int y0 = std::max(0, static_cast<int>(std::floor(e.cy - e.ry)));
    const int y1 = std::min(s.height - 1, static_cast<int>(std::ceil(e.cy + e.ry)));
    const int x0 = std::max(0, static_cast<int>(std::floor(e.cx - e.rx)));
    const int x1 = std::min(s.width - 1, static_cast<int>(std::ceil(e.cx + e.rx)));

    std::vector<std::size_t> cells;
    bool clash = false;
    for (int z = z0; z <= z1 && !clash; ++z) {
      for (int y = y0; y <= y1 && !clash; ++y) {
        for (int x = x0; x <= x1 && !clash; ++x) {
          if (!e.contains(z, y, x)) continue;
          for (int dz = -1; dz <= 1 && !clash; ++dz) {
            for (int dy = -1; dy <= 1 && !clash; ++dy) {
              for (int dx = -1; dx <= 1 && !clash; ++dx) {
                const int zz = z + dz, yy = y + dy, xx = x + dx;
                if (zz < 0 || yy < 0 || xx < 0 || zz >= s.depth || yy >= s.height || xx >= s.width) continue;
                if (mask.labels[s.index(zz, yy, xx)] != 0) clash = true;
              }
            }
          }
          cells.push_back(s.index(z, y, x));
        }
      }
    }
    if (!clash && !cells.empty()) {
      out = e;
      return cells;
    }
  }
  return std::nullopt;
}

json truth_to_json(const GroundTruth& t) {
  json j;
  j["present"] = t.present;
  j["abnormal"] = json::object();
  for (const auto& [id, name] : t.abnormality) j["abnormal"][std::to_string(id)] = name;
  j["intensity"] = json::object();
  for (const auto& [id, v] : t.intensity) j["intensity"][std::to_string(id)] = v;
  return j;
}

GroundTruth truth_from_json(const json& j) {
  GroundTruth t;
  t.present = j.at("present").get<std::vector<int>>();
  for (const auto& [k, v] : j.at("abnormal").items()) t.abnormality[std::stoi(k)] = v.get<std::string>();
  for (const auto& [k, v] : j.at("intensity").items()) t.intensity[std::stoi(k)] = v.get<double>();
  return t;
}

std::string subject_stem(int index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "subject_%05d", index);
  return buf;
}

}  // namespace

void CohortSpec::validate() const {
  if (n_subjects < 0) throw ValidationError("cohort.n_subjects must be non-negative");
  if (!(abnormality_rate >= 0.0 && abnormality_rate <= 1.0)) {
    throw ValidationError("cohort.abnormality_rate must lie in [0, 1]");
  }
  if (shape.depth <= 0 || shape.height <= 0 || shape.width <= 0) {
    throw ValidationError("cohort.shape must be positive");
  }
  if (!(min_radius >= 0.5 && max_radius >= min_radius)) {
    throw ValidationError("cohort.radius must satisfy 0.5 <= min <= max");
  }
  if (!(identity_margin > 0.0)) throw ValidationError("cohort.identity_margin must be positive");
  std::set<int> ids;
  std::set<std::string> names;
  for (const auto& o : organs) {
    if (o.id <= 0 || o.id > 65535) throw ValidationError("cohort.organs: id must lie in 1..65535");
    if (!ids.insert(o.id).second) throw ValidationError("cohort.organs: duplicate organ id " + std::to_string(o.id));
    if (o.name.empty()) throw ValidationError("cohort.organs: empty organ name");
    if (!names.insert(o.name).second) throw ValidationError("cohort.organs: duplicate organ name " + o.name);
    std::set<std::string> seen;
    for (const auto& a : o.abnormalities) {
      if (a.empty()) throw ValidationError("cohort.organs: empty abnormality for " + o.name);
      if (!seen.insert(a).second) throw ValidationError("cohort.organs: duplicate abnormality " + a);
    }
  }
  if (organs.size() > 1 &&
      (kCodeHigh - kCodeLow) / static_cast<double>(organs.size() - 1) < identity_margin) {
    throw ValidationError("cohort.organs: too many organs for cohort.identity_margin");
  }
}

reportproc::OrganLexicon CohortSpec::lexicon() const {
  std::map<int, reportproc::LexiconEntry> entries;
  for (const auto& o : organs) entries[o.id] = {o.name, {}};
  return reportproc::OrganLexicon(std::move(entries));
}

std::map<int, double> intensity_codes(const CohortSpec& spec) {
  const auto organs = sorted_organs(spec);
  std::map<int, double> codes;
  if (organs.size() == 1) {
    codes[organs[0].id] = 0.5 * (kCodeLow + kCodeHigh);
    return codes;
  }
  const double step = organs.empty() ? 0.0 : (kCodeHigh - kCodeLow) / static_cast<double>(organs.size() - 1);
  for (std::size_t i = 0; i < organs.size(); ++i) codes[organs[i].id] = kCodeLow + step * static_cast<double>(i);
  return codes;
}

int texture_sign(int variant, int z, int y, int x) {
  int parity = 0;
  switch (variant % 4) {
    case 0:
      parity = x + y + z;
      break;
    case 1:
      parity = x + y;
      break;
    case 2:
      parity = y + z;
      break;
    default:
      parity = x + z;
      break;
  }
  return (parity & 1) ? 1 : -1;
}

Subject generate_subject(const CohortSpec& spec, int index) {
  spec.validate();
  if (index < 0 || index >= spec.n_subjects) {
    throw ArgumentError("generate_subject: index " + std::to_string(index) + " outside [0, n_subjects)");
  }
  Rng rng(mix_seed(spec.master_seed, static_cast<std::uint64_t>(index)));
  const Shape& s = spec.shape;

  Subject out;
  out.volume.shape = s;
  out.volume.spacing = spec.spacing;
  out.volume.voxels.resize(s.voxels());
  out.mask.shape = s;
  out.mask.spacing = spec.spacing;
  out.mask.labels.assign(s.voxels(), 0);

  for (auto& v : out.volume.voxels) v = static_cast<float>(rng.uniform(0.0, kBackgroundMax));

  const auto organs = sorted_organs(spec);
  const auto codes = intensity_codes(spec);
  std::vector<std::vector<std::size_t>> cells(organs.size());
  for (std::size_t i = 0; i < organs.size(); ++i) {
    Ellipsoid e{};
    auto placed = place(spec, out.mask, rng, e);
    if (!placed) {
      throw PlacementError("cannot place organ '" + organs[i].name + "' in a " + std::to_string(s.depth) + "x" +
                           std::to_string(s.height) + "x" + std::to_string(s.width) + " volume");
    }
    cells[i] = std::move(*placed);
    for (auto c : cells[i]) out.mask.labels[c] = static_cast<std::uint16_t>(organs[i].id);
    out.truth.present.push_back(organs[i].id);
    out.truth.intensity[organs[i].id] = codes.at(organs[i].id);
  }

  std::vector<int> variant(organs.size(), -1);
  for (std::size_t i = 0; i < organs.size(); ++i) {
    if (organs[i].abnormalities.empty()) continue;
    if (rng.uniform() < spec.abnormality_rate) {
      const auto pick = static_cast<int>(rng.below(organs[i].abnormalities.size()));
      variant[i] = pick;
      out.truth.abnormality[organs[i].id] = organs[i].abnormalities[static_cast<std::size_t>(pick)];
    }
  }

  for (std::size_t i = 0; i < organs.size(); ++i) {
    const double code = codes.at(organs[i].id);
    for (auto c : cells[i]) {
      const int x = static_cast<int>(c % static_cast<std::size_t>(s.width));
      const int y = static_cast<int>((c / static_cast<std::size_t>(s.width)) % static_cast<std::size_t>(s.height));
      const int z = static_cast<int>(c / (static_cast<std::size_t>(s.width) * s.height));
      double v = code + rng.uniform(-kInteriorNoise, kInteriorNoise);
      if (variant[i] >= 0) v += kTextureAmplitude * texture_sign(variant[i], z, y, x);
      out.volume.voxels[c] = static_cast<float>(std::clamp(v, 0.0, 1.0));
    }
  }

  std::vector<std::string> sentences;
  for (std::size_t i = 0; i < organs.size(); ++i) {
    const auto& name = organs[i].name;
    if (variant[i] >= 0) {
      sentences.push_back(capitalized(organs[i].abnormalities[static_cast<std::size_t>(variant[i])] + " in " + name) + ".");
      continue;
    }
    switch (rng.below(4)) {
      case 0:
        sentences.push_back(capitalized(name) + " is unremarkable.");
        break;
      case 1:
        sentences.push_back("No evident abnormality in " + name + ".");
        break;
      case 2:
        sentences.push_back(capitalized(name) + " appears normal.");
        break;
      default:
        break;  // silent
    }
  }
  for (std::size_t i = 0; i < sentences.size(); ++i) {
    if (i) out.report += ' ';
    out.report += sentences[i];
  }
  return out;
}

Manifest generate_cohort(const CohortSpec& spec, const std::filesystem::path& out_dir) {
  spec.validate();
  std::error_code ec;
  std::filesystem::create_directories(out_dir / "subjects", ec);
  if (ec) throw IoError("cannot create " + (out_dir / "subjects").string() + ": " + ec.message());

  Manifest manifest;
  manifest.path = out_dir / "manifest.jsonl";
  manifest.records.resize(static_cast<std::size_t>(spec.n_subjects));
  parallel_for(manifest.records.size(), [&](std::size_t i) {
    const int index = static_cast<int>(i);
    const auto subject = generate_subject(spec, index);
    const auto stem = subject_stem(index);
    ManifestRecord rec;
    rec.subject_id = index;
    rec.volume_path = std::filesystem::path("subjects") / (stem + "_vol");
    rec.mask_path = std::filesystem::path("subjects") / (stem + "_mask");
    rec.report_path = std::filesystem::path("subjects") / (stem + "_report.txt");
    rec.ground_truth = subject.truth;
    write_volume(out_dir / rec.volume_path, subject.volume);
    write_mask(out_dir / rec.mask_path, subject.mask);
    write_file(out_dir / rec.report_path, subject.report);
    manifest.records[i] = std::move(rec);
  });

  std::string lines;
  for (const auto& r : manifest.records) {
    json j;
    j["subject_id"] = r.subject_id;
    j["volume_path"] = r.volume_path.generic_string();
    j["mask_path"] = r.mask_path.generic_string();
    j["report_path"] = r.report_path.generic_string();
    j["ground_truth"] = truth_to_json(r.ground_truth);
    lines += j.dump() + "\n";
  }
  write_file(manifest.path, lines);
  return manifest;
}

Manifest read_manifest(const std::filesystem::path& path) {
  Manifest m;
  m.path = path;
  std::istringstream in(read_file(path));
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const auto j = json::parse(line);
      ManifestRecord r;
      r.subject_id = j.at("subject_id").get<int>();
      r.volume_path = j.at("volume_path").get<std::string>();
      r.mask_path = j.at("mask_path").get<std::string>();
      r.report_path = j.at("report_path").get<std::string>();
      r.ground_truth = truth_from_json(j.at("ground_truth"));
      m.records.push_back(std::move(r));
    } catch (const json::exception& e) {
      throw ValidationError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return m;
}

std::vector<LoadedSubject> load_subjects(const Manifest& manifest) {
  const auto base = manifest.path.parent_path();
  std::vector<LoadedSubject> out(manifest.records.size());
  parallel_for(out.size(), [&](std::size_t i) {
    const auto& r = manifest.records[i];
    auto& s = out[i];
    s.subject_id = r.subject_id;
    s.volume = read_volume(base / r.volume_path);
    s.mask = read_mask(base / r.mask_path);
    s.report = read_file(base / r.report_path);
    s.truth = r.ground_truth;
    if (!(s.volume.shape == s.mask.shape)) {
      throw ValidationError("subject " + std::to_string(r.subject_id) + ": volume and mask shapes differ");
    }
  });
  return out;
}

}  // namespace ctglip::synthdata
