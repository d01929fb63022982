#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <string>

#include <json.hpp>

#include "ctglip/encoders.hpp"
#include "ctglip/losses.hpp"
#include "ctglip/synthdata.hpp"
#include "ctglip/trainer.hpp"

namespace ctglip::config {

struct TextEncoderConfig {
  std::string kind = "stub";  // "stub" | "precomputed"
  std::uint64_t seed = 0;
  std::filesystem::path path;  // precomputed embeddings file
};

/// Everything a CLI run needs. Paths are resolved against the config file's directory.
struct RunConfig {
  synthdata::CohortSpec cohort;
  encoders::EncoderConfig encoder;
  trainer::TrainConfig train;
  losses::LossConfig loss;
  TextEncoderConfig text;
  std::optional<std::filesystem::path> lexicon;
  std::optional<std::filesystem::path> dictionary;
  std::optional<std::filesystem::path> probes;

  /// Lexicon from paths.lexicon, else derived from the cohort organs.
  reportproc::OrganLexicon load_lexicon() const;
  abnodict::AbnormalityDictionary load_dictionary(const reportproc::OrganLexicon& lexicon) const;
  std::unique_ptr<encoders::TextEncoder> make_text_encoder() const;
};

/// Parses and validates; unknown keys and out-of-range values raise
/// ValidationError naming the field (e.g. "cohort.abnormality_rate").
RunConfig parse_run_config(const std::string& text, const std::filesystem::path& base_dir);
RunConfig load_run_config(const std::filesystem::path& path);

nlohmann::json to_json(const synthdata::CohortSpec& c);
nlohmann::json to_json(const encoders::EncoderConfig& c);
nlohmann::json to_json(const trainer::TrainConfig& c);
nlohmann::json to_json(const losses::LossConfig& c);

synthdata::CohortSpec cohort_from_json(const nlohmann::json& j);
/// num_classes is not part of the JSON block unless `with_classes`.
encoders::EncoderConfig encoder_from_json(const nlohmann::json& j, bool with_classes = false);
trainer::TrainConfig train_from_json(const nlohmann::json& j);
losses::LossConfig loss_from_json(const nlohmann::json& j);

}  // namespace ctglip::config
