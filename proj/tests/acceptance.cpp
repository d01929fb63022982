// Acceptance run: one PASS/FAIL line per criterion. Exits non-zero if any fail.

#include <chrono>
#include <cstdio>
#include <iostream>
#include <random>
#include <set>
#include <sstream>

#include "ctglip/common.hpp"
#include "ctglip/config.hpp"
#include "ctglip/losses.hpp"
#include "ctglip/metrics.hpp"
#include "ctglip/reportproc.hpp"
#include "ctglip/synthdata.hpp"
#include "ctglip/trainer.hpp"
#include "ctglip/zeroshot.hpp"
#include "support.hpp"

using namespace ctglip;
using testsupport::Vec;

namespace {

const std::filesystem::path kData = CTGLIP_DATA_DIR;

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

using LossFn = losses::ContrastiveResult (*)(const std::vector<Vec>&, const std::vector<Vec>&, double);

Outcome loss_oracles() {
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 gen(101);
  std::uniform_int_distribution<int> nd(1, 6), bd(0, 12);
  std::uniform_real_distribution<double> taud(0.05, 1.0);
  double worst = 0.0;
  auto rel = [](double a, double b) { return std::abs(a - b) / std::max(std::abs(b), 1.0); };
  for (int i = 0; i < 100; ++i) {
    const int n = nd(gen), b = bd(gen);
    const double tau = taud(gen);
    const auto v = testsupport::random_units(gen, n, 8);
    auto t = testsupport::random_units(gen, n + b, 8);
    worst = std::max(worst, rel(losses::abnormality_text_loss(v, t, tau).value, testsupport::naive_abnormality_text(v, t, tau)));
    t.resize(static_cast<std::size_t>(n));
    worst = std::max(worst, rel(losses::clip_batch_loss(v, t, tau).value, testsupport::naive_clip(v, t, tau)));
    worst = std::max(worst, rel(losses::organ_text_loss(v, t, tau).value, testsupport::naive_organ_text(v, t, tau)));
  }
  const double secs = seconds_since(t0);
  return {worst <= 1e-10 && secs < 10.0, fmt("max deviation %.3g over 100 instances, %.2fs", worst, secs)};
}

// Denominator floored at 1e-4: see the unit tests for why.
double grad_err(double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-4}); }

double contrastive_grad_error(LossFn fn, std::vector<Vec> a, std::vector<Vec> b, double tau) {
  const auto r = fn(a, b, tau);
  auto value = [&] { return fn(a, b, tau).value; };
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t k = 0; k < a[i].size(); ++k)
      worst = std::max(worst, grad_err(r.d_images[i][k], testsupport::central_diff(value, a[i][k], 1e-5)));
  for (std::size_t i = 0; i < b.size(); ++i)
    for (std::size_t k = 0; k < b[i].size(); ++k)
      worst = std::max(worst, grad_err(r.d_texts[i][k], testsupport::central_diff(value, b[i][k], 1e-5)));
  return worst;
}

Outcome gradient_checks() {
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 gen(202);
  std::uniform_int_distribution<int> nd(1, 6), bd(0, 12);
  double worst_clip = 0.0, worst_ot = 0.0, worst_at = 0.0, worst_seg = 0.0;
  for (int i = 0; i < 20; ++i) {
    const int n = nd(gen), b = bd(gen);
    const auto v = testsupport::random_units(gen, n, 8);
    const auto t = testsupport::random_units(gen, n, 8);
    auto tb = t;
    for (auto& x : testsupport::random_units(gen, b, 8)) tb.push_back(x);
    worst_clip = std::max(worst_clip, contrastive_grad_error(&losses::clip_batch_loss, v, t, 0.07));
    worst_ot = std::max(worst_ot, contrastive_grad_error(&losses::organ_text_loss, v, t, 0.07));
    worst_at = std::max(worst_at, contrastive_grad_error(&losses::abnormality_text_loss, v, tb, 0.07));
  }
  const losses::LossConfig cfg;
  for (int i = 0; i < 20; ++i) {
    const Shape s{2, 3, 3};
    const int K = 4;
    std::uniform_real_distribution<double> u(-2.0, 2.0);
    std::uniform_int_distribution<int> lab(0, K - 1);
    encoders::FeatureMap logits{K, s, std::vector<double>(K * s.voxels())};
    for (auto& x : logits.values) x = u(gen);
    OrganMask mask;
    mask.shape = s;
    for (std::size_t v = 0; v < s.voxels(); ++v) mask.labels.push_back(static_cast<std::uint16_t>(lab(gen)));
    const auto r = losses::segmentation_loss(logits, mask, cfg);
    for (std::size_t k = 0; k < logits.values.size(); ++k) {
      const double fd = testsupport::central_diff([&] { return losses::segmentation_loss(logits, mask, cfg).value; },
                                                  logits.values[k], 1e-5);
      worst_seg = std::max(worst_seg, grad_err(r.d_logits.values[k], fd));
    }
  }
  const double worst = std::max({worst_clip, worst_ot, worst_at, worst_seg});
  const double secs = seconds_since(t0);
  return {worst <= 1e-4 && secs < 60.0,
          fmt("max rel err clip %.2g, organ-text %.2g, abnormality-text %.2g, segmentation %.2g, %.2fs", worst_clip,
              worst_ot, worst_at, worst_seg, secs)};
}

Outcome no_negative_reduction() {
  std::mt19937_64 gen(303);
  std::uniform_int_distribution<int> md(1, 6);
  double worst = 0.0;
  for (int i = 0; i < 50; ++i) {
    const int m = md(gen);
    const auto z = testsupport::random_units(gen, m, 8);
    const auto t = testsupport::random_units(gen, m, 8);
    worst = std::max(worst, std::abs(losses::abnormality_text_loss(z, t, 0.07).value - losses::organ_text_loss(z, t, 0.07).value));
  }
  return {worst <= 1e-12, fmt("max |difference| %.3g over 50 instances", worst)};
}

Outcome reference_values() {
  const double f1 = *metrics::f1_score(0.3947, 0.7859);
  const bool f1_ok = std::abs(f1 - 0.5255) <= 1e-4;
  const bool lr_ok = trainer::cosine_lr(0, 500, 1e-3, 1e-6) == 1e-3 && trainer::cosine_lr(500, 500, 1e-3, 1e-6) == 1e-6;
  const losses::LossConfig d;
  const bool cfg_ok = d.tau == 0.07 && d.lambda_ot == 0.5 && d.lambda_at == 0.5 && d.lambda_segm == 1.0;
  const double total = losses::total_loss(1.0, 1.0, 1.0, d).total;
  return {f1_ok && lr_ok && cfg_ok && total == 2.0,
          fmt("f1 %.4f, lr endpoints %s, defaults %s, total(1,1,1) %.1f", f1, lr_ok ? "exact" : "off",
              cfg_ok ? "ok" : "off", total)};
}

Outcome metric_oracles() {
  std::mt19937_64 gen(404);
  std::uniform_int_distribution<int> nd(2, 40), levels(1, 6), bit(0, 1);
  int auc_bad = 0;
  for (int i = 0; i < 200; ++i) {
    const int n = nd(gen), L = levels(gen);
    std::uniform_int_distribution<int> sd(0, L);
    std::vector<metrics::Outcome> outs;
    for (int k = 0; k < n; ++k) outs.push_back({sd(gen) / static_cast<double>(L), bit(gen)});
    outs.push_back({sd(gen) / static_cast<double>(L), 0});
    outs.push_back({sd(gen) / static_cast<double>(L), 1});
    if (metrics::auc(outs) != testsupport::brute_auc(outs)) ++auc_bad;
  }
  double dice_worst = 0.0, pool_worst = 0.0;
  std::uniform_int_distribution<int> lab(0, 4);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int i = 0; i < 50; ++i) {
    const Shape s{4, 5, 6};
    OrganMask a, b;
    a.shape = b.shape = s;
    for (std::size_t v = 0; v < s.voxels(); ++v) {
      a.labels.push_back(static_cast<std::uint16_t>(lab(gen)));
      b.labels.push_back(static_cast<std::uint16_t>(lab(gen)));
    }
    for (int c = 0; c <= 5; ++c) dice_worst = std::max(dice_worst, std::abs(metrics::dice_score(a, b, c) - testsupport::naive_dice(a, b, c)));
    encoders::FeatureMap fm{3, s, std::vector<double>(3 * s.voxels())};
    for (auto& x : fm.values) x = u(gen);
    const auto ref = testsupport::naive_pool(fm, a);
    for (const auto& r : encoders::pool_regions(fm, a))
      for (int c = 0; c < 3; ++c) pool_worst = std::max(pool_worst, std::abs(r.mean[c] - ref.at(r.organ_id)[c]));
  }
  return {auc_bad == 0 && dice_worst <= 1e-6 && pool_worst <= 1e-6,
          fmt("auc mismatches %d/200, dice max dev %.2g, pooling max dev %.2g", auc_bad, dice_worst, pool_worst)};
}

struct RunScores {
  double top1 = 0.0;
  double auc = 0.0;
  double secs = 0.0;
};

RunScores train_and_score(const config::RunConfig& rc, trainer::TrainConfig train, const trainer::TrainingData& data,
                          const std::vector<synthdata::LoadedSubject>& test,
                          const std::vector<zeroshot::AbnormalityProbe>& probes, const std::string& tag) {
  const auto t0 = std::chrono::steady_clock::now();
  auto enc = rc.encoder;
  enc.num_classes = data.lexicon.max_id() + 1;
  const auto ckpt = trainer::fit(train, rc.loss, enc, data, testsupport::scratch_dir("acceptance_" + tag));
  const auto model = ckpt.model();
  RunScores s;
  s.top1 = zeroshot::evaluate_organs(model, *data.text, test, data.lexicon).top1;
  std::vector<metrics::Outcome> outs;
  for (const auto& r : zeroshot::evaluate_abnormality(model, *data.text, test, probes, rc.loss.tau))
    outs.push_back({r.score, r.ground_truth});
  s.auc = metrics::auc(outs);
  s.secs = seconds_since(t0);
  std::cout << fmt("  %-8s top1 %.4f  auc %.4f  (%.0fs)", tag.c_str(), s.top1, s.auc, s.secs) << std::endl;
  return s;
}

Outcome end_to_end(bool& frozen_ok, std::string& frozen_detail) {
  const auto rc = config::load_run_config(kData / "acceptance" / "config.json");
  auto all = testsupport::generate_loaded(rc.cohort);
  std::vector<synthdata::LoadedSubject> test(all.begin() + 200, all.end());
  all.resize(200);
  const auto text = rc.make_text_encoder();
  trainer::TrainingData data;
  data.subjects = std::move(all);
  data.lexicon = rc.load_lexicon();
  data.dictionary = rc.load_dictionary(data.lexicon);
  data.text = text.get();
  const auto probes = zeroshot::load_probes(*rc.probes, data.lexicon);

  const auto text_before = text->state_bytes();
  const auto full = train_and_score(rc, rc.train, data, test, probes, "full");
  frozen_ok = text->state_bytes() == text_before;
  frozen_detail = fmt("text encoder state (%zu bytes) %s across a %ld-step fit", text_before.size(),
                      frozen_ok ? "unchanged" : "CHANGED", 25L * rc.train.epochs);

  auto vanilla_cfg = rc.train;
  vanilla_cfg.vanilla_clip = true;
  const auto vanilla = train_and_score(rc, vanilla_cfg, data, test, probes, "vanilla");
  auto at_cfg = rc.train;
  at_cfg.enable_ot = false;
  at_cfg.enable_dict = false;
  const auto at = train_and_score(rc, at_cfg, data, test, probes, "AT");
  auto atot_cfg = rc.train;
  atot_cfg.enable_dict = false;
  const auto atot = train_and_score(rc, atot_cfg, data, test, probes, "AT+OT");

  const bool absolute = full.top1 >= 0.95 && full.auc >= 0.90;
  const bool beats_vanilla = vanilla.top1 < full.top1 && vanilla.auc < full.auc;
  const bool ordering = at.auc <= atot.auc && atot.auc <= full.auc + 0.02;
  const double secs = full.secs + vanilla.secs + at.secs + atot.secs;
  return {absolute && beats_vanilla && ordering,
          fmt("full top1 %.3f auc %.3f; vanilla %.3f/%.3f; AUC AT %.3f, AT+OT %.3f, full %.3f; "
              "thresholds %s, vanilla lower %s, ordering %s; %.0fs",
              full.top1, full.auc, vanilla.top1, vanilla.auc, at.auc, atot.auc, full.auc, absolute ? "met" : "missed",
              beats_vanilla ? "yes" : "no", ordering ? "holds" : "violated", secs)};
}

Outcome determinism() {
  auto spec = testsupport::eight_organ_spec(12, 5, 0.4, 12);
  const auto d1 = testsupport::scratch_dir("acc_det_a"), d2 = testsupport::scratch_dir("acc_det_b");
  synthdata::generate_cohort(spec, d1);
  synthdata::generate_cohort(spec, d2);
  const auto h1 = testsupport::digest_tree(d1), h2 = testsupport::digest_tree(d2);
  const bool cohort_ok = h1 == h2 && !h1.empty();

  encoders::StubTextEncoder text(16, 2);
  trainer::TrainingData data;
  data.subjects = synthdata::load_subjects(synthdata::read_manifest(d1 / "manifest.jsonl"));
  data.lexicon = spec.lexicon();
  std::map<int, std::vector<std::string>> dict;
  for (const auto& o : spec.organs) dict[o.id] = {o.abnormalities[0] + " in " + o.name};
  data.dictionary = abnodict::AbnormalityDictionary(dict);
  data.text = &text;
  encoders::EncoderConfig enc;
  enc.channels = {1, 4, 4};
  enc.embed_dim = 16;
  enc.hidden = 32;
  enc.num_classes = 9;
  trainer::TrainConfig tc;
  tc.batch_size = 4;
  tc.epochs = 3;
  tc.seed = 9;
  tc.negatives_per_organ = 1;
  const losses::LossConfig lc;
  const auto r1 = testsupport::scratch_dir("acc_run_a"), r2 = testsupport::scratch_dir("acc_run_b");
  trainer::fit(tc, lc, enc, data, r1);
  trainer::fit(tc, lc, enc, data, r2);
  const bool run_ok = read_file(r1 / "metrics.jsonl") == read_file(r2 / "metrics.jsonl") &&
                      read_file(r1 / "final.ckpt") == read_file(r2 / "final.ckpt");

  const auto r3 = testsupport::scratch_dir("acc_run_c");
  trainer::FitOptions stop;
  stop.stop_after = 5;
  trainer::fit(tc, lc, enc, data, r3, stop);
  trainer::FitOptions resume;
  resume.resume_from = r3 / "interrupted.ckpt";
  const auto resumed = trainer::fit(tc, lc, enc, data, r3, resume);
  const bool resume_ok = resumed.params == trainer::Checkpoint::load(r1 / "final.ckpt").params;
  return {cohort_ok && run_ok && resume_ok,
          fmt("cohort digests (%zu files) %s, trajectories %s, resume after step 5 %s", h1.size(),
              cohort_ok ? "equal" : "differ", run_ok ? "identical" : "differ", resume_ok ? "exact" : "differs")};
}

Outcome report_round_trip() {
  // Normal organs may be left out of a report, so every statement that is made
  // must agree with the ground truth and every abnormal organ must be stated.
  const auto spec = testsupport::eight_organ_spec(500, 77, 0.3, 16);
  const auto lex = spec.lexicon();
  long errors = 0, statements = 0;
  for (int i = 0; i < spec.n_subjects; ++i) {
    const auto s = synthdata::generate_subject(spec, i);
    const auto parsed = reportproc::parse_report(s.report, lex);
    bool ok = parsed.unassigned.empty();
    std::set<int> abnormal;
    for (const auto& d : parsed.descriptions) {
      ++statements;
      const bool truly_abnormal = s.truth.abnormality.count(d.organ_id) > 0;
      const bool present = std::find(s.truth.present.begin(), s.truth.present.end(), d.organ_id) != s.truth.present.end();
      ok = ok && present && truly_abnormal == (d.polarity == reportproc::Polarity::abnormal);
      if (d.polarity == reportproc::Polarity::abnormal) abnormal.insert(d.organ_id);
    }
    std::set<int> truth;
    for (const auto& [id, name] : s.truth.abnormality) truth.insert(id);
    errors += !(ok && abnormal == truth);
  }
  return {errors == 0, fmt("%ld reports with errors out of 500 (%ld organ statements)", errors, statements)};
}

}  // namespace

int main() {
  const auto t0 = std::chrono::steady_clock::now();
  std::vector<std::pair<int, Outcome>> results;
  auto guarded = [&](int id, auto fn) {
    try {
      results.push_back({id, fn()});
    } catch (const std::exception& e) {
      results.push_back({id, {false, std::string("threw: ") + e.what()}});
    }
  };
  guarded(1, loss_oracles);
  guarded(2, gradient_checks);
  guarded(3, no_negative_reduction);
  guarded(4, reference_values);
  guarded(5, metric_oracles);
  bool frozen_ok = false;
  std::string frozen_detail = "not run";
  guarded(6, [&] { return end_to_end(frozen_ok, frozen_detail); });
  guarded(7, determinism);
  results.push_back({8, {frozen_ok, frozen_detail}});
  guarded(9, report_round_trip);

  std::sort(results.begin(), results.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  int failed = 0;
  std::cout << "\n";
  for (const auto& [id, r] : results) {
    std::cout << "criterion " << id << ": " << (r.pass ? "PASS" : "FAIL") << "  " << r.detail << "\n";
    failed += !r.pass;
  }
  std::cout << fmt("%d/9 passed in %.0fs", 9 - failed, seconds_since(t0)) << std::endl;
  return failed == 0 ? 0 : 1;
}
