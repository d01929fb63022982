#pragma once

// Independent reference implementations used as test oracles. They follow the
// textbook definitions with plain loops and no shared code with the library.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <openssl/evp.h>

#include "ctglip/encoders.hpp"
#include "ctglip/metrics.hpp"
#include "ctglip/synthdata.hpp"
#include "ctglip/volume.hpp"

namespace testsupport {

using Vec = std::vector<double>;

inline Vec random_unit(std::mt19937_64& gen, int d) {
  std::normal_distribution<double> n(0.0, 1.0);
  Vec v(static_cast<std::size_t>(d));
  double s = 0.0;
  for (auto& x : v) {
    x = n(gen);
    s += x * x;
  }
  for (auto& x : v) x /= std::sqrt(s);
  return v;
}

inline std::vector<Vec> random_units(std::mt19937_64& gen, int count, int d) {
  std::vector<Vec> out;
  for (int i = 0; i < count; ++i) out.push_back(random_unit(gen, d));
  return out;
}

inline double dotp(const Vec& a, const Vec& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

// -log(exp(s_match) / sum exp(s_k)), evaluated literally.
inline double neg_log_softmax(double match, const Vec& all) {
  double den = 0.0;
  for (double s : all) den += std::exp(s);
  return -std::log(std::exp(match) / den);
}

/// Symmetric InfoNCE where anchor j's image->text candidates are texts[0..n_text)
/// and its text->image candidates are images[0..M).
inline double naive_contrastive(const std::vector<Vec>& images, const std::vector<Vec>& texts, double tau) {
  const std::size_t M = images.size();
  double total = 0.0;
  for (std::size_t j = 0; j < M; ++j) {
    Vec row, col;
    for (const auto& t : texts) row.push_back(dotp(images[j], t) / tau);
    for (const auto& z : images) col.push_back(dotp(z, texts[j]) / tau);
    const double match = dotp(images[j], texts[j]) / tau;
    total += neg_log_softmax(match, row) + neg_log_softmax(match, col);
  }
  return total / static_cast<double>(M);
}

inline double naive_clip(const std::vector<Vec>& v, const std::vector<Vec>& t, double tau) {
  return naive_contrastive(v, t, tau);
}

inline double naive_organ_text(const std::vector<Vec>& z, const std::vector<Vec>& t, double tau) {
  return naive_contrastive(z, t, tau);
}

/// Abnormality-text loss: organ->text sums over all M + B texts, text->organ over M organs.
inline double naive_abnormality_text(const std::vector<Vec>& z, const std::vector<Vec>& t, double tau) {
  const std::size_t M = z.size();
  double total = 0.0;
  for (std::size_t j = 0; j < M; ++j) {
    double den_it = 0.0;
    for (const auto& tk : t) den_it += std::exp(dotp(z[j], tk) / tau);
    double den_ti = 0.0;
    for (std::size_t k = 0; k < M; ++k) den_ti += std::exp(dotp(z[k], t[j]) / tau);
    const double num = std::exp(dotp(z[j], t[j]) / tau);
    total += -std::log(num / den_it) - std::log(num / den_ti);
  }
  return total / static_cast<double>(M);
}

/// Mean voxel CE + (1 - mean foreground soft dice) with unit weights.
inline double naive_segmentation(const ctglip::encoders::FeatureMap& logits, const ctglip::OrganMask& mask,
                                 double eps) {
  const int K = logits.channels;
  const std::size_t V = mask.labels.size();
  std::vector<Vec> p(static_cast<std::size_t>(K), Vec(V));
  double ce = 0.0;
  for (std::size_t v = 0; v < V; ++v) {
    double den = 0.0;
    for (int k = 0; k < K; ++k) den += std::exp(logits.values[static_cast<std::size_t>(k) * V + v]);
    for (int k = 0; k < K; ++k) {
      p[static_cast<std::size_t>(k)][v] = std::exp(logits.values[static_cast<std::size_t>(k) * V + v]) / den;
    }
    ce -= std::log(p[mask.labels[v]][v]);
  }
  ce /= static_cast<double>(V);
  double dice = 0.0;
  for (int k = 1; k < K; ++k) {
    double inter = 0.0, ps = 0.0, gs = 0.0;
    for (std::size_t v = 0; v < V; ++v) {
      const double g = mask.labels[v] == k ? 1.0 : 0.0;
      inter += p[static_cast<std::size_t>(k)][v] * g;
      ps += p[static_cast<std::size_t>(k)][v];
      gs += g;
    }
    dice += (2.0 * inter + eps) / (ps + gs + eps);
  }
  dice /= (K - 1);
  return ce + (1.0 - dice);
}

/// O(n^2) pair counting: P(pos > neg) + 0.5 P(pos == neg).
inline double brute_auc(const std::vector<ctglip::metrics::Outcome>& outs) {
  double wins = 0.0;
  long pairs = 0;
  for (const auto& a : outs) {
    if (a.label != 1) continue;
    for (const auto& b : outs) {
      if (b.label != 0) continue;
      ++pairs;
      if (a.score > b.score) wins += 1.0;
      else if (a.score == b.score) wins += 0.5;
    }
  }
  return wins / static_cast<double>(pairs);
}

inline double naive_dice(const ctglip::OrganMask& a, const ctglip::OrganMask& b, int cls) {
  long na = 0, nb = 0, both = 0;
  for (int z = 0; z < a.shape.depth; ++z)
    for (int y = 0; y < a.shape.height; ++y)
      for (int x = 0; x < a.shape.width; ++x) {
        const auto i = a.shape.index(z, y, x);
        na += a.labels[i] == cls;
        nb += b.labels[i] == cls;
        both += a.labels[i] == cls && b.labels[i] == cls;
      }
  if (na + nb == 0) return 1.0;
  return 2.0 * both / static_cast<double>(na + nb);
}

/// Per-organ channel means by a direct voxel loop.
inline std::map<int, Vec> naive_pool(const ctglip::encoders::FeatureMap& fm, const ctglip::OrganMask& mask) {
  std::map<int, Vec> sums;
  std::map<int, long> counts;
  const std::size_t V = mask.labels.size();
  for (std::size_t v = 0; v < V; ++v) {
    const int id = mask.labels[v];
    if (id == 0) continue;
    auto& s = sums[id];
    s.resize(static_cast<std::size_t>(fm.channels), 0.0);
    for (int c = 0; c < fm.channels; ++c) s[static_cast<std::size_t>(c)] += fm.values[static_cast<std::size_t>(c) * V + v];
    ++counts[id];
  }
  for (auto& [id, s] : sums) {
    for (auto& x : s) x /= static_cast<double>(counts[id]);
  }
  return sums;
}

/// Central difference of f at x[i].
inline double central_diff(const std::function<double()>& f, double& xi, double h = 1e-5) {
  const double keep = xi;
  xi = keep + h;
  const double up = f();
  xi = keep - h;
  const double down = f();
  xi = keep;
  return (up - down) / (2.0 * h);
}

inline double rel_err(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-6});
}

inline std::string sha256_hex(const std::string& bytes) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr);
  std::ostringstream os;
  for (unsigned i = 0; i < len; ++i) os << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(md[i]);
  return os.str();
}

/// Relative path -> SHA-256 of every regular file below dir.
inline std::map<std::string, std::string> digest_tree(const std::filesystem::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : std::filesystem::recursive_directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    out[std::filesystem::relative(e.path(), dir).string()] = sha256_hex(ctglip::read_file(e.path()));
  }
  return out;
}

/// Fresh scratch directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("ctglip_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

/// Eight organs with one abnormality each, 16^3 volumes.
inline ctglip::synthdata::CohortSpec eight_organ_spec(int n_subjects, std::uint64_t seed, double rate = 0.3,
                                                      int size = 16) {
  static const char* names[] = {"spleen", "pancreas", "aorta", "gallbladder", "kidney", "liver", "lung", "stomach"};
  static const char* abn[] = {"splenomegaly",      "acute pancreatitis", "arteriosclerosis of aorta",
                              "gallbladder stones", "kidney stone",       "fatty liver",
                              "pulmonary nodules",  "gastric wall thickening"};
  ctglip::synthdata::CohortSpec spec;
  spec.n_subjects = n_subjects;
  spec.master_seed = seed;
  spec.abnormality_rate = rate;
  spec.shape = {size, size, size};
  spec.min_radius = size * 0.1;
  spec.max_radius = size * 0.17;
  for (int i = 0; i < 8; ++i) spec.organs.push_back({i + 1, names[i], {abn[i]}});
  return spec;
}

inline std::vector<ctglip::synthdata::LoadedSubject> generate_loaded(const ctglip::synthdata::CohortSpec& spec) {
  std::vector<ctglip::synthdata::LoadedSubject> out;
  for (int i = 0; i < spec.n_subjects; ++i) {
    auto s = ctglip::synthdata::generate_subject(spec, i);
    out.push_back({i, std::move(s.volume), std::move(s.mask), std::move(s.report), std::move(s.truth)});
  }
  return out;
}

}  // namespace testsupport
