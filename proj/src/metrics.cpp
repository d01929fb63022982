#include "ctglip/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <json.hpp>

#include "ctglip/common.hpp"

namespace ctglip::metrics {
namespace {

std::optional<double> ratio(long num, long den) {
  if (den == 0) return std::nullopt;
  return static_cast<double>(num) / static_cast<double>(den);
}

std::optional<double> mean_of_defined(const std::vector<std::optional<double>>& xs) {
  double sum = 0.0;
  int n = 0;
  for (const auto& x : xs) {
    if (x) {
      sum += *x;
      ++n;
    }
  }
  if (n == 0) return std::nullopt;
  return sum / n;
}

nlohmann::json opt(const std::optional<double>& x) { return x ? nlohmann::json(*x) : nlohmann::json(nullptr); }

}  // namespace

double top1_accuracy(const std::vector<int>& pred, const std::vector<int>& truth) {
  if (pred.size() != truth.size()) throw ArgumentError("top1_accuracy: length mismatch");
  if (pred.empty()) throw ArgumentError("top1_accuracy: empty input");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hits += pred[i] == truth[i];
  return static_cast<double>(hits) / static_cast<double>(pred.size());
}

std::optional<double> f1_score(std::optional<double> ppv, std::optional<double> sensitivity) {
  if (!ppv || !sensitivity) return std::nullopt;
  if (*ppv + *sensitivity == 0.0) return std::nullopt;
  return 2.0 * *ppv * *sensitivity / (*ppv + *sensitivity);
}

BinaryStats binary_stats(const std::vector<Outcome>& outcomes, double threshold) {
  BinaryStats s;
  for (const auto& o : outcomes) {
    if (o.label != 0 && o.label != 1) throw ArgumentError("binary_stats: labels must be 0 or 1");
    const bool predicted = o.score >= threshold;
    if (predicted && o.label) ++s.tp;
    else if (predicted) ++s.fp;
    else if (o.label) ++s.fn;
    else ++s.tn;
  }
  s.ppv = ratio(s.tp, s.tp + s.fp);
  s.sensitivity = ratio(s.tp, s.tp + s.fn);
  s.f1 = f1_score(s.ppv, s.sensitivity);
  return s;
}

double auc(const std::vector<Outcome>& outcomes) {
  const std::size_t n = outcomes.size();
  long pos = 0;
  for (const auto& o : outcomes) {
    if (o.label != 0 && o.label != 1) throw ArgumentError("auc: labels must be 0 or 1");
    if (!std::isfinite(o.score)) throw ArgumentError("auc: non-finite score");
    pos += o.label;
  }
  const long neg = static_cast<long>(n) - pos;
  if (pos == 0 || neg == 0) throw ArgumentError("auc: undefined with a single class");

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return outcomes[a].score < outcomes[b].score; });
  // Twice the midrank keeps every quantity an integer.
  long rank_sum_x2 = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && outcomes[order[j]].score == outcomes[order[i]].score) ++j;
    const long twice_midrank = static_cast<long>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k) {
      if (outcomes[order[k]].label) rank_sum_x2 += twice_midrank;
    }
    i = j;
  }
  const long u_x2 = rank_sum_x2 - pos * (pos + 1);
  return static_cast<double>(u_x2) / (2.0 * static_cast<double>(pos) * static_cast<double>(neg));
}

double dice_score(const OrganMask& pred, const OrganMask& truth, int class_id) {
  if (!(pred.shape == truth.shape) || pred.labels.size() != truth.labels.size()) {
    throw ArgumentError("dice_score: mask shapes differ");
  }
  long a = 0, b = 0, both = 0;
  for (std::size_t i = 0; i < pred.labels.size(); ++i) {
    const bool in_a = pred.labels[i] == class_id;
    const bool in_b = truth.labels[i] == class_id;
    a += in_a;
    b += in_b;
    both += in_a && in_b;
  }
  if (a + b == 0) return 1.0;
  return 2.0 * static_cast<double>(both) / static_cast<double>(a + b);
}

GroupedReport grouped_report(const std::map<std::string, std::vector<Outcome>>& by_group, double threshold) {
  GroupedReport r;
  std::vector<Outcome> pooled;
  std::vector<std::optional<double>> ppv, sens, f1, aucs;
  for (const auto& [name, outs] : by_group) {
    GroupedReport::Row row;
    row.count = outs.size();
    row.stats = binary_stats(outs, threshold);
    const bool both = std::any_of(outs.begin(), outs.end(), [](const Outcome& o) { return o.label == 1; }) &&
                      std::any_of(outs.begin(), outs.end(), [](const Outcome& o) { return o.label == 0; });
    if (both) row.auc = auc(outs);
    ppv.push_back(row.stats.ppv);
    sens.push_back(row.stats.sensitivity);
    f1.push_back(row.stats.f1);
    aucs.push_back(row.auc);
    pooled.insert(pooled.end(), outs.begin(), outs.end());
    r.groups.emplace(name, row);
  }
  r.micro.count = pooled.size();
  r.micro.stats = binary_stats(pooled, threshold);
  const bool both = std::any_of(pooled.begin(), pooled.end(), [](const Outcome& o) { return o.label == 1; }) &&
                    std::any_of(pooled.begin(), pooled.end(), [](const Outcome& o) { return o.label == 0; });
  if (both) r.micro.auc = auc(pooled);
  r.macro_ppv = mean_of_defined(ppv);
  r.macro_sensitivity = mean_of_defined(sens);
  r.macro_f1 = mean_of_defined(f1);
  r.macro_auc = mean_of_defined(aucs);
  return r;
}

std::string grouped_report_json(const GroupedReport& r) {
  using nlohmann::json;
  auto row_json = [](const GroupedReport::Row& row) {
    return json{{"count", row.count},
                {"tp", row.stats.tp},
                {"fp", row.stats.fp},
                {"tn", row.stats.tn},
                {"fn", row.stats.fn},
                {"ppv", opt(row.stats.ppv)},
                {"sensitivity", opt(row.stats.sensitivity)},
                {"f1", opt(row.stats.f1)},
                {"auc", opt(row.auc)}};
  };
  json doc;
  doc["micro"] = row_json(r.micro);
  doc["macro"] = {{"ppv", opt(r.macro_ppv)},
                  {"sensitivity", opt(r.macro_sensitivity)},
                  {"f1", opt(r.macro_f1)},
                  {"auc", opt(r.macro_auc)}};
  doc["per_abnormality"] = json::object();
  for (const auto& [name, row] : r.groups) doc["per_abnormality"][name] = row_json(row);
  return doc.dump(2);
}

}  // namespace ctglip::metrics
