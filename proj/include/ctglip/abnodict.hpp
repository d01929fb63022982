#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "ctglip/reportproc.hpp"

namespace ctglip::abnodict {

using reportproc::OrganDescription;

/// Organ id -> abnormal description strings. Immutable once built.
class AbnormalityDictionary {
 public:
  AbnormalityDictionary() = default;
  /// Rejects empty strings and duplicates within one organ's list.
  explicit AbnormalityDictionary(std::map<int, std::vector<std::string>> entries);

  const std::map<int, std::vector<std::string>>& entries() const { return entries_; }
  std::size_t total_size() const { return total_size_; }
  const std::vector<std::string>* find(int organ_id) const;

 private:
  std::map<int, std::vector<std::string>> entries_;
  std::size_t total_size_ = 0;
};

/// Parses {"<organ name>": ["...", ...]}; names are resolved through the lexicon.
AbnormalityDictionary dictionary_from_json(const std::string& text, const reportproc::OrganLexicon& lexicon);
AbnormalityDictionary load_dictionary(const std::filesystem::path& path, const reportproc::OrganLexicon& lexicon);

/// For each normal organ with entries: min(T, available) strings sampled without
/// replacement, seeded by (seed, organ_id). Ordered by organ, then draw.
std::vector<OrganDescription> sample_negatives(const AbnormalityDictionary& dict,
                                               const std::vector<int>& normal_organ_ids, int T,
                                               std::uint64_t seed);

/// M image descriptions followed by B dictionary negatives.
struct TextBatch {
  std::vector<OrganDescription> descriptions;
  int M = 0;
  int M_prime = 0;
  int T = 0;
  int B = 0;
  /// (M - M') * T before the cap and before dropping organs without entries.
  int B_formula = 0;

  std::vector<std::string> texts() const;
};

struct NegativeOptions {
  int per_normal_organ = 0;  // T
  int max_negatives = 512;
  std::uint64_t seed = 0;
};

TextBatch assemble_text_batch(const std::vector<OrganDescription>& parsed, const std::vector<int>& present_organs,
                              const reportproc::OrganLexicon& lexicon, const AbnormalityDictionary& dict,
                              const NegativeOptions& options);

}  // namespace ctglip::abnodict
