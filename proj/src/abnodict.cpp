#include "ctglip/abnodict.hpp"

#include <algorithm>
#include <numeric>
#include <set>

#include <json.hpp>

#include "ctglip/common.hpp"
#include "ctglip/volume.hpp"

namespace ctglip::abnodict {
namespace {

using nlohmann::json;
using reportproc::Polarity;
using reportproc::Source;

// Chooses k of n indices without replacement; draws are a partial Fisher-Yates.
std::vector<std::size_t> choose(std::size_t n, std::size_t k, Rng& rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  for (std::size_t i = 0; i < k; ++i) {
    const auto j = i + static_cast<std::size_t>(rng.below(n - i));
    std::swap(idx[i], idx[j]);
  }
  idx.resize(k);
  return idx;
}

}  // namespace

AbnormalityDictionary::AbnormalityDictionary(std::map<int, std::vector<std::string>> entries)
    : entries_(std::move(entries)) {
  for (const auto& [organ, list] : entries_) {
    std::set<std::string> seen;
    for (const auto& s : list) {
      if (s.empty()) throw ValidationError("dictionary: empty description for organ " + std::to_string(organ));
      if (!seen.insert(s).second) {
        throw ValidationError("dictionary: duplicate description '" + s + "' for organ " + std::to_string(organ));
      }
    }
    total_size_ += list.size();
  }
}

const std::vector<std::string>* AbnormalityDictionary::find(int organ_id) const {
  const auto it = entries_.find(organ_id);
  return it == entries_.end() ? nullptr : &it->second;
}

AbnormalityDictionary dictionary_from_json(const std::string& text, const reportproc::OrganLexicon& lexicon) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ValidationError(std::string("dictionary: parse error at byte ") + std::to_string(e.byte) + ": " + e.what());
  }
  if (!doc.is_object()) throw ValidationError("dictionary: expected an object keyed by organ name");
  std::map<int, std::vector<std::string>> entries;
  for (const auto& [name, list] : doc.items()) {
    const auto id = lexicon.find(name);
    if (!id) throw ValidationError("dictionary: organ '" + name + "' not in lexicon");
    if (!list.is_array()) throw ValidationError("dictionary: entry for '" + name + "' must be a list");
    auto& dst = entries[*id];
    for (const auto& s : list) {
      if (!s.is_string()) throw ValidationError("dictionary: non-string description under '" + name + "'");
      dst.push_back(s.get<std::string>());
    }
  }
  return AbnormalityDictionary(std::move(entries));
}

AbnormalityDictionary load_dictionary(const std::filesystem::path& path, const reportproc::OrganLexicon& lexicon) {
  try {
    return dictionary_from_json(read_file(path), lexicon);
  } catch (const ValidationError& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

std::vector<OrganDescription> sample_negatives(const AbnormalityDictionary& dict,
                                               const std::vector<int>& normal_organ_ids, int T,
                                               std::uint64_t seed) {
  if (T < 0) throw ArgumentError("sample_negatives: T must be non-negative");
  std::vector<OrganDescription> out;
  if (T == 0) return out;
  for (int organ : normal_organ_ids) {
    const auto* list = dict.find(organ);
    if (!list || list->empty()) continue;
    Rng rng(mix_seed(seed, static_cast<std::uint64_t>(organ)));
    const auto k = std::min(static_cast<std::size_t>(T), list->size());
    for (auto i : choose(list->size(), k, rng)) {
      out.push_back(OrganDescription{organ, Polarity::abnormal, (*list)[i], Source::dictionary});
    }
  }
  return out;
}

std::vector<std::string> TextBatch::texts() const {
  std::vector<std::string> out;
  out.reserve(descriptions.size());
  for (const auto& d : descriptions) out.push_back(d.text);
  return out;
}

TextBatch assemble_text_batch(const std::vector<OrganDescription>& parsed, const std::vector<int>& present_organs,
                              const reportproc::OrganLexicon& lexicon, const AbnormalityDictionary& dict,
                              const NegativeOptions& options) {
  if (options.max_negatives < 0) throw ArgumentError("assemble_text_batch: max_negatives must be non-negative");
  const std::set<int> present(present_organs.begin(), present_organs.end());
  for (const auto& d : parsed) {
    if (!present.count(d.organ_id)) {
      throw ValidationError("assemble_text_batch: parsed organ " + std::to_string(d.organ_id) +
                            " is not present in the image");
    }
  }

  TextBatch batch;
  batch.T = options.per_normal_organ;
  std::vector<int> normal;
  for (int organ : present_organs) {
    const auto& name = lexicon.name(organ);
    const auto hit = std::find_if(parsed.begin(), parsed.end(), [&](const OrganDescription& d) {
      return d.organ_id == organ && d.polarity == Polarity::abnormal;
    });
    if (hit != parsed.end()) {
      batch.descriptions.push_back(*hit);
      ++batch.M_prime;
    } else {
      batch.descriptions.push_back(
          OrganDescription{organ, Polarity::normal, reportproc::normal_template(name), Source::template_text});
      normal.push_back(organ);
    }
  }
  batch.M = static_cast<int>(present_organs.size());
  batch.B_formula = (batch.M - batch.M_prime) * batch.T;

  std::set<std::string> real;
  for (const auto& d : batch.descriptions) real.insert(d.text);
  auto negatives = sample_negatives(dict, normal, options.per_normal_organ, options.seed);
  std::erase_if(negatives, [&](const OrganDescription& d) { return real.count(d.text) != 0; });

  if (negatives.size() > static_cast<std::size_t>(options.max_negatives)) {
    Rng rng(mix_seed(options.seed, 0xcafeULL));
    auto keep = choose(negatives.size(), static_cast<std::size_t>(options.max_negatives), rng);
    std::sort(keep.begin(), keep.end());
    std::vector<OrganDescription> kept;
    kept.reserve(keep.size());
    for (auto i : keep) kept.push_back(std::move(negatives[i]));
    negatives = std::move(kept);
  }
  batch.B = static_cast<int>(negatives.size());
  for (auto& n : negatives) batch.descriptions.push_back(std::move(n));
  return batch;
}

}  // namespace ctglip::abnodict
