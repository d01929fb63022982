#include <doctest.h>

#include <cmath>
#include <limits>
#include <random>

#include "ctglip/common.hpp"
#include "ctglip/losses.hpp"
#include "support.hpp"

using namespace ctglip;
using namespace ctglip::losses;
using testsupport::Vec;

namespace {

double floored_err(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-4});
}

using LossFn = ContrastiveResult (*)(const std::vector<Embedding>&, const std::vector<Embedding>&, double);

// Max relative error between analytic and central-difference gradients over
// every coordinate of both embedding sets. Negative texts far from every organ
// get gradients near 1e-8, so the denominator is floored at 1e-4 to keep
// finite-difference rounding out of the ratio.
double worst_gradient_error(LossFn fn, std::vector<Vec> a, std::vector<Vec> b, double tau) {
  const auto r = fn(a, b, tau);
  double worst = 0.0;
  auto value = [&] { return fn(a, b, tau).value; };
  for (std::size_t i = 0; i < a.size(); ++i) {
    for (std::size_t k = 0; k < a[i].size(); ++k) {
      const double fd = testsupport::central_diff(value, a[i][k]);
      worst = std::max(worst, floored_err(r.d_images[i][k], fd));
    }
  }
  for (std::size_t i = 0; i < b.size(); ++i) {
    for (std::size_t k = 0; k < b[i].size(); ++k) {
      const double fd = testsupport::central_diff(value, b[i][k]);
      worst = std::max(worst, floored_err(r.d_texts[i][k], fd));
    }
  }
  return worst;
}

encoders::FeatureMap random_logits(std::mt19937_64& gen, int K, Shape s, double scale) {
  std::uniform_real_distribution<double> u(-scale, scale);
  encoders::FeatureMap fm;
  fm.channels = K;
  fm.shape = s;
  fm.values.resize(static_cast<std::size_t>(K) * s.voxels());
  for (auto& x : fm.values) x = u(gen);
  return fm;
}

OrganMask random_mask(std::mt19937_64& gen, int K, Shape s) {
  std::uniform_int_distribution<int> u(0, K - 1);
  OrganMask m;
  m.shape = s;
  m.labels.resize(s.voxels());
  for (auto& l : m.labels) l = static_cast<std::uint16_t>(u(gen));
  return m;
}

}  // namespace

TEST_CASE("clip loss of a single matched pair is zero") {
  const Vec v{0.6, 0.8};
  CHECK(clip_batch_loss({v}, {v}, 0.07).value == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("clip loss on two orthogonal matched pairs at tau 1") {
  const Vec a{1.0, 0.0}, b{0.0, 1.0};
  const double expected = 2.0 * std::log1p(std::exp(-1.0));
  CHECK(clip_batch_loss({a, b}, {a, b}, 1.0).value == doctest::Approx(expected).epsilon(1e-12));
  CHECK(expected == doctest::Approx(0.62652).epsilon(1e-5));
}

TEST_CASE("organ-text loss of one organ matching its text is zero") {
  const Vec z{0.0, 1.0, 0.0};
  CHECK(organ_text_loss({z}, {z}, 0.07).value == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("abnormality loss with one extra orthogonal negative") {
  const Vec z{1.0, 0.0}, neg{0.0, 1.0};
  const auto r = abnormality_text_loss({z}, {z, neg}, 1.0);
  CHECK(r.value == doctest::Approx(std::log1p(std::exp(-1.0))).epsilon(1e-12));
  CHECK(r.text_to_image == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("contrastive losses match the naive loop oracle") {
  std::mt19937_64 gen(11);
  std::uniform_int_distribution<int> nd(1, 6), bd(0, 12);
  std::uniform_real_distribution<double> taud(0.05, 1.0);
  for (int trial = 0; trial < 100; ++trial) {
    const int n = nd(gen), b = bd(gen);
    const double tau = taud(gen);
    const auto v = testsupport::random_units(gen, n, 8);
    auto t = testsupport::random_units(gen, n + b, 8);
    CHECK(abnormality_text_loss(v, t, tau).value ==
          doctest::Approx(testsupport::naive_abnormality_text(v, t, tau)).epsilon(1e-10));
    t.resize(static_cast<std::size_t>(n));
    CHECK(clip_batch_loss(v, t, tau).value == doctest::Approx(testsupport::naive_clip(v, t, tau)).epsilon(1e-10));
    CHECK(organ_text_loss(v, t, tau).value == doctest::Approx(testsupport::naive_organ_text(v, t, tau)).epsilon(1e-10));
  }
}

TEST_CASE("abnormality loss without negatives reduces to the organ-text loss") {
  std::mt19937_64 gen(12);
  std::uniform_int_distribution<int> md(1, 6);
  for (int trial = 0; trial < 50; ++trial) {
    const int m = md(gen);
    const auto z = testsupport::random_units(gen, m, 8);
    const auto t = testsupport::random_units(gen, m, 8);
    CHECK(std::abs(abnormality_text_loss(z, t, 0.07).value - organ_text_loss(z, t, 0.07).value) <= 1e-12);
  }
}

TEST_CASE("contrastive gradients agree with central differences") {
  std::mt19937_64 gen(13);
  std::uniform_int_distribution<int> nd(1, 5), bd(0, 8);
  for (int trial = 0; trial < 20; ++trial) {
    const int n = nd(gen), b = bd(gen);
    const auto v = testsupport::random_units(gen, n, 6);
    const auto t = testsupport::random_units(gen, n, 6);
    auto tb = t;
    for (auto& x : testsupport::random_units(gen, b, 6)) tb.push_back(x);
    CHECK(worst_gradient_error(&clip_batch_loss, v, t, 0.07) <= 1e-4);
    CHECK(worst_gradient_error(&organ_text_loss, v, t, 0.07) <= 1e-4);
    CHECK(worst_gradient_error(&abnormality_text_loss, v, tb, 0.07) <= 1e-4);
  }
}

TEST_CASE("dictionary negatives only enter the organ-to-text term") {
  std::mt19937_64 gen(14);
  const auto z = testsupport::random_units(gen, 3, 8);
  auto t = testsupport::random_units(gen, 7, 8);
  const auto before = abnormality_text_loss(z, t, 0.07);
  t[5] = testsupport::random_unit(gen, 8);
  const auto after = abnormality_text_loss(z, t, 0.07);
  CHECK(after.text_to_image == before.text_to_image);
  CHECK(after.image_to_text != before.image_to_text);
  // Gradient reaches the negative only through the organ-to-text denominator.
  CHECK(testsupport::dotp(before.d_texts[5], before.d_texts[5]) > 0.0);
}

TEST_CASE("organ-text loss is invariant to a joint permutation") {
  std::mt19937_64 gen(15);
  auto z = testsupport::random_units(gen, 5, 8);
  auto t = testsupport::random_units(gen, 5, 8);
  const double base = organ_text_loss(z, t, 0.07).value;
  std::vector<int> perm{3, 0, 4, 1, 2};
  std::vector<Vec> zp, tp;
  for (int i : perm) {
    zp.push_back(z[static_cast<std::size_t>(i)]);
    tp.push_back(t[static_cast<std::size_t>(i)]);
  }
  CHECK(organ_text_loss(zp, tp, 0.07).value == doctest::Approx(base).epsilon(1e-12));
}

TEST_CASE("losses fall as matched pairs align and mismatches separate") {
  // Two pairs on a circle: matched similarity cos(a), mismatched cos(pi - a).
  double prev = std::numeric_limits<double>::infinity();
  for (int step = 0; step <= 10; ++step) {
    const double a = M_PI / 2 * (1.0 - step / 10.0);
    const Vec v1{1.0, 0.0}, v2{-1.0, 0.0};
    const Vec t1{std::cos(a), std::sin(a)}, t2{-std::cos(a), std::sin(a)};
    const double l = organ_text_loss({v1, v2}, {t1, t2}, 0.07).value;
    CHECK(l < prev);
    CHECK(l >= 0.0);
    prev = l;
  }
}

TEST_CASE("contrastive losses reject malformed inputs") {
  const Vec a{1.0, 0.0};
  CHECK_THROWS_AS(organ_text_loss({}, {}, 0.07), ArgumentError);
  CHECK_THROWS_AS(abnormality_text_loss({a, a}, {a}, 0.07), ArgumentError);
  CHECK_THROWS_AS(clip_batch_loss({a}, {Vec{1.0, 0.0, 0.0}}, 0.07), ArgumentError);
}

TEST_CASE("segmentation loss vanishes for a confident correct prediction") {
  std::mt19937_64 gen(16);
  const Shape s{3, 4, 5};
  const auto mask = random_mask(gen, 3, s);
  encoders::FeatureMap logits;
  logits.channels = 3;
  logits.shape = s;
  logits.values.resize(3 * s.voxels());
  for (std::size_t v = 0; v < s.voxels(); ++v) {
    for (int k = 0; k < 3; ++k) logits.values[k * s.voxels() + v] = mask.labels[v] == k ? 50.0 : -50.0;
  }
  const auto r = segmentation_loss(logits, mask, LossConfig{});
  CHECK(r.value == doctest::Approx(0.0).epsilon(1e-8));
}

TEST_CASE("segmentation loss with uniform logits on a balanced two-class mask") {
  const Shape s{1, 2, 4};
  OrganMask mask;
  mask.shape = s;
  mask.labels = {0, 1, 0, 1, 0, 1, 0, 1};
  encoders::FeatureMap logits;
  logits.channels = 2;
  logits.shape = s;
  logits.values.assign(16, 0.3);
  const auto r = segmentation_loss(logits, mask, LossConfig{});
  CHECK(r.cross_entropy == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  // p = 0.5 everywhere: dice = (2 * 2 + eps) / (4 + 4 + eps).
  const double eps = 1e-5;
  CHECK(r.dice == doctest::Approx(1.0 - (4.0 + eps) / (8.0 + eps)).epsilon(1e-12));
  CHECK(r.value == doctest::Approx(testsupport::naive_segmentation(logits, mask, eps)).epsilon(1e-12));
}

TEST_CASE("segmentation loss matches the naive voxel loop and its gradient") {
  std::mt19937_64 gen(17);
  for (int trial = 0; trial < 5; ++trial) {
    const Shape s{2, 3, 4};
    auto logits = random_logits(gen, 4, s, 3.0);
    const auto mask = random_mask(gen, 4, s);
    const LossConfig cfg;
    const auto r = segmentation_loss(logits, mask, cfg);
    CHECK(r.value == doctest::Approx(testsupport::naive_segmentation(logits, mask, cfg.dice_epsilon)).epsilon(1e-8));
    double worst = 0.0;
    for (std::size_t i = 0; i < logits.values.size(); ++i) {
      const double fd = testsupport::central_diff([&] { return segmentation_loss(logits, mask, cfg).value; },
                                                  logits.values[i]);
      worst = std::max(worst, testsupport::rel_err(r.d_logits.values[i], fd));
    }
    CHECK(worst <= 1e-4);
  }
}

TEST_CASE("segmentation loss rejects labels beyond the class count") {
  OrganMask mask;
  mask.shape = {1, 1, 2};
  mask.labels = {0, 5};
  encoders::FeatureMap logits;
  logits.channels = 2;
  logits.shape = mask.shape;
  logits.values.assign(4, 0.0);
  CHECK_THROWS_AS(segmentation_loss(logits, mask, LossConfig{}), ArgumentError);
}

TEST_CASE("default loss weights and the weighted total") {
  const LossConfig cfg;
  CHECK(cfg.tau == 0.07);
  CHECK(cfg.lambda_ot == 0.5);
  CHECK(cfg.lambda_at == 0.5);
  CHECK(cfg.lambda_segm == 1.0);
  CHECK(total_loss(0, 0, 0, cfg).total == 0.0);
  CHECK(total_loss(1, 1, 1, cfg).total == 2.0);
  CHECK(total_loss(0.4, 0.6, 0.2, cfg).total == doctest::Approx(0.7).epsilon(1e-15));
  const auto b = total_loss(0.4, 0.6, 0.2, cfg);
  CHECK(b.l_ot == 0.4);
  CHECK(b.l_at == 0.6);
  CHECK(b.l_segm == 0.2);
}

TEST_CASE("a NaN loss component signals divergence") {
  CHECK_THROWS_AS(total_loss(std::nan(""), 0, 0, LossConfig{}), DivergenceError);
}

TEST_CASE("loss config validation") {
  LossConfig cfg;
  cfg.tau = 0.0;
  CHECK_THROWS_AS(cfg.validate(), ValidationError);
  cfg = {};
  cfg.lambda_ot = -1.0;
  CHECK_THROWS_AS(cfg.validate(), ValidationError);
}
