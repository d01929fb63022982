#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "ctglip/volume.hpp"

namespace ctglip::encoders {

using Embedding = std::vector<double>;

/// Channel-major 4D array (C, depth, height, width).
struct FeatureMap {
  int channels = 0;
  Shape shape;
  std::vector<double> values;

  std::span<double> channel(int c) {
    return {values.data() + static_cast<std::size_t>(c) * shape.voxels(), shape.voxels()};
  }
  std::span<const double> channel(int c) const {
    return {values.data() + static_cast<std::size_t>(c) * shape.voxels(), shape.voxels()};
  }
};

struct OrganEmbedding {
  int organ_id = 0;
  Embedding vector;
};

struct EncoderConfig {
  /// channels[0] is the input channel count (1); each further entry adds a
  /// stride-1 "same" convolution followed by ReLU.
  std::vector<int> channels{1, 8, 16};
  int kernel = 3;
  int embed_dim = 128;
  int hidden = 768;
  /// Segmentation classes including background (K + 1).
  int num_classes = 2;

  void validate() const;
  int feature_channels() const { return channels.back(); }
  bool operator==(const EncoderConfig&) const = default;
};

/// Offsets of every parameter block inside the flat parameter vector.
struct ParamLayout {
  struct Conv {
    int cin, cout, kernel;
    std::size_t w, b;
  };
  std::vector<Conv> conv;
  std::size_t head_w1, head_b1, head_w2, head_b2;
  std::size_t seg_w, seg_b;
  std::size_t total = 0;

  explicit ParamLayout(const EncoderConfig& cfg);
};

/// Two affine layers with ReLU between, over a flat parameter span.
struct ProjectionHead {
  int in = 0;
  int hidden = 0;
  int out = 0;
  std::span<const double> w1, b1, w2, b2;

  struct Cache {
    std::vector<double> input, hidden_pre, output;
  };
  /// Unnormalized head output.
  std::vector<double> forward(std::span<const double> x, Cache* cache = nullptr) const;
  /// Accumulates parameter gradients into grad (same layout as the owning model)
  /// and returns d(loss)/d(input).
  std::vector<double> backward(const Cache& cache, std::span<const double> d_out, std::span<double> grad,
                               const ParamLayout& layout) const;
};

/// Intermediate activations kept for the backward pass.
struct VisionTrace {
  std::vector<std::vector<double>> acts;  // acts[0] = input, acts[l + 1] = ReLU output of conv l
};

class Model {
 public:
  Model(EncoderConfig cfg, std::uint64_t init_seed);
  Model(EncoderConfig cfg, std::vector<double> params);

  const EncoderConfig& config() const { return cfg_; }
  const ParamLayout& layout() const { return layout_; }
  std::span<const double> params() const { return params_; }
  std::span<double> params() { return params_; }

  ProjectionHead head() const;

  FeatureMap encode(const Volume& v, VisionTrace* trace = nullptr) const;
  /// Accumulates parameter gradients of the conv stack given d(loss)/d(feature map).
  void backward_encoder(const VisionTrace& trace, const Shape& shape, std::span<const double> d_features,
                        std::span<double> grad) const;

  /// Segmentation logits (num_classes, D, H, W) from the feature map.
  FeatureMap segment(const FeatureMap& fm) const;
  /// Accumulates seg-head gradients; adds d(loss)/d(features) into d_features.
  void backward_segment(const FeatureMap& fm, const FeatureMap& d_logits, std::span<double> d_features,
                        std::span<double> grad) const;

 private:
  EncoderConfig cfg_;
  ParamLayout layout_;
  std::vector<double> params_;
};

/// Mean feature vector of one organ region.
struct PooledRegion {
  int organ_id = 0;
  std::size_t count = 0;
  std::vector<double> mean;
};

/// Average of the feature map over each nonzero label, ascending organ id.
std::vector<PooledRegion> pool_regions(const FeatureMap& fm, const OrganMask& mask);
/// Average over every voxel.
std::vector<double> global_pool(const FeatureMap& fm);

/// Scatters d(loss)/d(region mean) back onto the voxels of each region.
void pool_regions_backward(const OrganMask& mask, const std::vector<PooledRegion>& regions,
                           const std::vector<std::vector<double>>& d_means, FeatureMap& d_fm);

/// Unit-normalizes v; returns the original norm.
double normalize(std::vector<double>& v);
/// Backward of y = x / |x| given y, |x| and dy.
std::vector<double> normalize_backward(std::span<const double> y, double norm, std::span<const double> dy);

FeatureMap encode_volume(const Model& model, const Volume& v);
/// Pool -> projection head -> L2 normalize, one embedding per organ in ascending id.
std::vector<OrganEmbedding> organ_pool(const FeatureMap& fm, const OrganMask& mask, const ProjectionHead& head);

// ---------------------------------------------------------------------------
// Text side. Text encoders are frozen: nothing in the library mutates them.

class TextEncoder {
 public:
  virtual ~TextEncoder() = default;
  virtual int dim() const = 0;
  virtual std::vector<Embedding> encode(const std::vector<std::string>& texts) const = 0;
  /// Serialized state, for bitwise frozen-ness checks.
  virtual std::string state_bytes() const = 0;
};

/// Bag-of-words hashing encoder: each lower-cased token maps to a seeded random
/// Gaussian direction; the text embedding is the normalized sum of its tokens.
class StubTextEncoder final : public TextEncoder {
 public:
  StubTextEncoder(int dim, std::uint64_t seed);
  int dim() const override { return dim_; }
  std::vector<Embedding> encode(const std::vector<std::string>& texts) const override;
  std::string state_bytes() const override;

 private:
  int dim_;
  std::uint64_t seed_;
};

/// Whitespace tokens, lower-cased, stripped of leading/trailing punctuation.
std::vector<std::string> stub_tokens(const std::string& text);

std::vector<Embedding> stub_encode_text(const std::vector<std::string>& texts, int d, std::uint64_t seed);

/// Looks up embeddings computed offline by an external encoder, keyed by exact text.
/// File format: {"<text>": [floats...], ...}; vectors are normalized on load.
class PrecomputedTextEncoder final : public TextEncoder {
 public:
  explicit PrecomputedTextEncoder(const std::filesystem::path& path);
  PrecomputedTextEncoder(std::unordered_map<std::string, Embedding> table, int dim);
  int dim() const override { return dim_; }
  std::vector<Embedding> encode(const std::vector<std::string>& texts) const override;
  std::string state_bytes() const override;

 private:
  std::unordered_map<std::string, Embedding> table_;
  int dim_ = 0;
};

double dot(std::span<const double> a, std::span<const double> b);

}  // namespace ctglip::encoders
