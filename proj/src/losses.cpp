#include "ctglip/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "ctglip/common.hpp"

namespace ctglip::losses {
namespace {

void check_dims(const std::vector<Embedding>& a, const std::vector<Embedding>& b, const char* who) {
  const std::size_t d = a.front().size();
  auto bad = [d](const Embedding& e) { return e.size() != d; };
  if (d == 0 || std::any_of(a.begin(), a.end(), bad) || std::any_of(b.begin(), b.end(), bad)) {
    throw ArgumentError(std::string(who) + ": embedding dimension mismatch");
  }
}

// Softmax of x in place; returns log-sum-exp. Max-subtracted for stability.
double softmax_inplace(std::vector<double>& x) {
  const double m = *std::max_element(x.begin(), x.end());
  double sum = 0.0;
  for (auto& v : x) {
    v = std::exp(v - m);
    sum += v;
  }
  for (auto& v : x) v /= sum;
  return m + std::log(sum);
}

// Shared engine: M anchors, texts.size() >= M candidates for the organ->text
// direction, first M texts for the text->organ direction.
ContrastiveResult contrastive(const std::vector<Embedding>& z, const std::vector<Embedding>& t, double tau) {
  if (!(tau > 0.0)) throw ArgumentError("contrastive loss: tau must be positive");
  const std::size_t M = z.size();
  const std::size_t N = t.size();
  const std::size_t d = z.front().size();

  // sim[j][k] = z_j . t_k / tau
  std::vector<std::vector<double>> sim(M, std::vector<double>(N));
  for (std::size_t j = 0; j < M; ++j) {
    for (std::size_t k = 0; k < N; ++k) sim[j][k] = encoders::dot(z[j], t[k]) / tau;
  }

  const double inv_m = 1.0 / static_cast<double>(M);
  std::vector<std::vector<double>> d_sim(M, std::vector<double>(N, 0.0));
  ContrastiveResult r;

  for (std::size_t j = 0; j < M; ++j) {
    auto row = sim[j];
    const double lse = softmax_inplace(row);
    r.image_to_text += (lse - sim[j][j]) * inv_m;
    for (std::size_t k = 0; k < N; ++k) d_sim[j][k] += row[k] * inv_m;
    d_sim[j][j] -= inv_m;
  }
  for (std::size_t j = 0; j < M; ++j) {
    std::vector<double> col(M);
    for (std::size_t k = 0; k < M; ++k) col[k] = sim[k][j];
    const double lse = softmax_inplace(col);
    r.text_to_image += (lse - sim[j][j]) * inv_m;
    for (std::size_t k = 0; k < M; ++k) d_sim[k][j] += col[k] * inv_m;
    d_sim[j][j] -= inv_m;
  }
  r.value = r.image_to_text + r.text_to_image;

  r.d_images.assign(M, Embedding(d, 0.0));
  r.d_texts.assign(N, Embedding(d, 0.0));
  for (std::size_t j = 0; j < M; ++j) {
    for (std::size_t k = 0; k < N; ++k) {
      const double g = d_sim[j][k] / tau;
      if (g == 0.0) continue;
      for (std::size_t i = 0; i < d; ++i) {
        r.d_images[j][i] += g * t[k][i];
        r.d_texts[k][i] += g * z[j][i];
      }
    }
  }
  return r;
}

}  // namespace

void LossConfig::validate() const {
  if (!(tau > 0.0)) throw ValidationError("loss.tau must be positive");
  if (!(lambda_ot >= 0.0 && lambda_at >= 0.0 && lambda_segm >= 0.0)) {
    throw ValidationError("loss.lambda_* must be non-negative");
  }
  if (!(dice_epsilon > 0.0)) throw ValidationError("loss.dice_epsilon must be positive");
  if (!(ce_weight >= 0.0 && dice_weight >= 0.0)) throw ValidationError("loss.ce_weight/dice_weight must be non-negative");
}

ContrastiveResult clip_batch_loss(const std::vector<Embedding>& images, const std::vector<Embedding>& texts,
                                  double tau) {
  if (images.empty()) throw ArgumentError("clip_batch_loss: empty batch");
  if (images.size() != texts.size()) throw ArgumentError("clip_batch_loss: image/text counts differ");
  check_dims(images, texts, "clip_batch_loss");
  return contrastive(images, texts, tau);
}

ContrastiveResult organ_text_loss(const std::vector<Embedding>& organs, const std::vector<Embedding>& texts,
                                  double tau) {
  if (organs.empty()) throw ArgumentError("organ_text_loss: no organs (M = 0)");
  if (organs.size() != texts.size()) throw ArgumentError("organ_text_loss: organ/text counts differ");
  check_dims(organs, texts, "organ_text_loss");
  return contrastive(organs, texts, tau);
}

ContrastiveResult abnormality_text_loss(const std::vector<Embedding>& organs, const std::vector<Embedding>& texts,
                                        double tau) {
  if (organs.empty()) throw ArgumentError("abnormality_text_loss: no organs (M = 0)");
  if (texts.size() < organs.size()) throw ArgumentError("abnormality_text_loss: fewer texts than organs");
  check_dims(organs, texts, "abnormality_text_loss");
  return contrastive(organs, texts, tau);
}

SegmentationResult segmentation_loss(const FeatureMap& logits, const OrganMask& mask, const LossConfig& cfg) {
  if (!(logits.shape == mask.shape) || mask.labels.size() != mask.shape.voxels()) {
    throw ArgumentError("segmentation_loss: logits and mask shapes differ");
  }
  const int K = logits.channels;
  if (K < 2) throw ArgumentError("segmentation_loss: need background plus at least one class");
  for (auto l : mask.labels) {
    if (l >= K) throw ArgumentError("segmentation_loss: mask label " + std::to_string(l) + " >= class count " + std::to_string(K));
  }
  const std::size_t V = mask.shape.voxels();
  const double inv_v = 1.0 / static_cast<double>(V);

  // Softmax probabilities, channel-major like the logits.
  std::vector<double> prob(static_cast<std::size_t>(K) * V);
  double ce = 0.0;
  std::vector<double> col(static_cast<std::size_t>(K));
  for (std::size_t v = 0; v < V; ++v) {
    for (int k = 0; k < K; ++k) col[static_cast<std::size_t>(k)] = logits.values[static_cast<std::size_t>(k) * V + v];
    const double truth_logit = col[mask.labels[v]];
    const double lse = softmax_inplace(col);
    ce += lse - truth_logit;
    for (int k = 0; k < K; ++k) prob[static_cast<std::size_t>(k) * V + v] = col[static_cast<std::size_t>(k)];
  }
  ce *= inv_v;

  const double eps = cfg.dice_epsilon;
  const int F = K - 1;
  std::vector<double> inter(static_cast<std::size_t>(K), 0.0), psum(static_cast<std::size_t>(K), 0.0),
      gsum(static_cast<std::size_t>(K), 0.0);
  for (int k = 1; k < K; ++k) {
    const double* p = prob.data() + static_cast<std::size_t>(k) * V;
    for (std::size_t v = 0; v < V; ++v) {
      psum[static_cast<std::size_t>(k)] += p[v];
      if (mask.labels[v] == k) {
        inter[static_cast<std::size_t>(k)] += p[v];
        gsum[static_cast<std::size_t>(k)] += 1.0;
      }
    }
  }
  double mean_dice = 0.0;
  for (int k = 1; k < K; ++k) {
    const auto ku = static_cast<std::size_t>(k);
    mean_dice += (2.0 * inter[ku] + eps) / (psum[ku] + gsum[ku] + eps);
  }
  mean_dice /= F;

  SegmentationResult r;
  r.cross_entropy = ce;
  r.dice = 1.0 - mean_dice;
  r.value = cfg.ce_weight * ce + cfg.dice_weight * r.dice;

  // d/dp of the dice term, then chain through softmax together with CE.
  r.d_logits.channels = K;
  r.d_logits.shape = logits.shape;
  r.d_logits.values.assign(static_cast<std::size_t>(K) * V, 0.0);
  std::vector<double> dp(static_cast<std::size_t>(K));
  for (std::size_t v = 0; v < V; ++v) {
    dp[0] = 0.0;
    for (int k = 1; k < K; ++k) {
      const auto ku = static_cast<std::size_t>(k);
      const double den = psum[ku] + gsum[ku] + eps;
      const double g = mask.labels[v] == k ? 1.0 : 0.0;
      dp[ku] = -cfg.dice_weight / F * (2.0 * g / den - (2.0 * inter[ku] + eps) / (den * den));
    }
    double pdp = 0.0;
    for (int k = 0; k < K; ++k) pdp += prob[static_cast<std::size_t>(k) * V + v] * dp[static_cast<std::size_t>(k)];
    for (int k = 0; k < K; ++k) {
      const auto ku = static_cast<std::size_t>(k);
      const double p = prob[ku * V + v];
      const double d_ce = cfg.ce_weight * (p - (mask.labels[v] == k ? 1.0 : 0.0)) * inv_v;
      r.d_logits.values[ku * V + v] = d_ce + p * (dp[ku] - pdp);
    }
  }
  return r;
}

LossBreakdown total_loss(double l_ot, double l_at, double l_segm, const LossConfig& cfg) {
  if (std::isnan(l_ot) || std::isnan(l_at) || std::isnan(l_segm)) {
    throw DivergenceError("total_loss: NaN loss component");
  }
  LossBreakdown b;
  b.l_ot = l_ot;
  b.l_at = l_at;
  b.l_segm = l_segm;
  b.total = cfg.lambda_ot * l_ot + cfg.lambda_at * l_at + cfg.lambda_segm * l_segm;
  return b;
}

}  // namespace ctglip::losses
