#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ctglip/volume.hpp"

namespace ctglip::metrics {

struct Outcome {
  double score = 0.0;
  int label = 0;  // 0 or 1
};

struct BinaryStats {
  long tp = 0, fp = 0, tn = 0, fn = 0;
  // Absent when the ratio's denominator is zero.
  std::optional<double> ppv;
  std::optional<double> sensitivity;
  std::optional<double> f1;
};

/// Fraction of positions where pred == truth.
double top1_accuracy(const std::vector<int>& pred, const std::vector<int>& truth);

/// Counts at `score >= threshold` predicted positive.
BinaryStats binary_stats(const std::vector<Outcome>& outcomes, double threshold = 0.5);

/// Harmonic mean; absent if either input is absent or both are zero.
std::optional<double> f1_score(std::optional<double> ppv, std::optional<double> sensitivity);

/// Exact Mann-Whitney AUC with midranks: P(pos > neg) + 0.5 P(pos == neg).
/// Throws ArgumentError if either class is missing.
double auc(const std::vector<Outcome>& outcomes);

/// 2|A n B| / (|A| + |B|) over voxels equal to class_id; 1.0 when both are empty.
double dice_score(const OrganMask& pred, const OrganMask& truth, int class_id);

/// Micro (pooled) and macro (mean over groups of defined values) summaries of
/// grouped binary outcomes.
struct GroupedReport {
  struct Row {
    std::size_t count = 0;
    BinaryStats stats;
    std::optional<double> auc;
  };
  std::map<std::string, Row> groups;
  Row micro;
  std::optional<double> macro_ppv, macro_sensitivity, macro_f1, macro_auc;
};

GroupedReport grouped_report(const std::map<std::string, std::vector<Outcome>>& by_group, double threshold = 0.5);

/// JSON document keyed by metric and aggregation mode.
std::string grouped_report_json(const GroupedReport& r);

}  // namespace ctglip::metrics
