#pragma once

#include <vector>

#include "ctglip/encoders.hpp"

namespace ctglip::losses {

using encoders::Embedding;
using encoders::FeatureMap;

struct LossConfig {
  double tau = 0.07;
  double lambda_ot = 0.5;
  double lambda_at = 0.5;
  double lambda_segm = 1.0;
  double dice_epsilon = 1e-5;
  /// Weights of the two halves of the segmentation loss.
  double ce_weight = 1.0;
  double dice_weight = 1.0;

  void validate() const;
  bool operator==(const LossConfig&) const = default;
};

struct LossBreakdown {
  double l_ot = 0.0;
  double l_at = 0.0;
  double l_segm = 0.0;
  double total = 0.0;
};

/// Loss value with gradients w.r.t. both embedding sets. The two directional
/// terms are reported separately (each already averaged).
struct ContrastiveResult {
  double value = 0.0;
  double image_to_text = 0.0;
  double text_to_image = 0.0;
  std::vector<Embedding> d_images;
  std::vector<Embedding> d_texts;
};

/// Symmetric InfoNCE over N matched (image, text) pairs, averaged over N.
ContrastiveResult clip_batch_loss(const std::vector<Embedding>& images, const std::vector<Embedding>& texts,
                                  double tau);

/// Symmetric InfoNCE over the M organ/text pairs of one image.
ContrastiveResult organ_text_loss(const std::vector<Embedding>& organs, const std::vector<Embedding>& texts,
                                  double tau);

/// texts holds the M aligned descriptions followed by B extra negatives. The
/// organ->text denominator spans all M + B texts; the text->organ denominator
/// spans only the M organ embeddings.
ContrastiveResult abnormality_text_loss(const std::vector<Embedding>& organs, const std::vector<Embedding>& texts,
                                        double tau);

struct SegmentationResult {
  double value = 0.0;
  double cross_entropy = 0.0;
  double dice = 0.0;  // 1 - mean foreground soft dice
  FeatureMap d_logits;
};

/// ce_weight * mean voxel cross-entropy + dice_weight * (1 - mean foreground soft dice).
SegmentationResult segmentation_loss(const FeatureMap& logits, const OrganMask& mask, const LossConfig& cfg);

/// Weighted sum of the components. Throws DivergenceError on a NaN component.
LossBreakdown total_loss(double l_ot, double l_at, double l_segm, const LossConfig& cfg);

}  // namespace ctglip::losses
