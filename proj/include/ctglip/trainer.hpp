#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "ctglip/abnodict.hpp"
#include "ctglip/common.hpp"
#include "ctglip/encoders.hpp"
#include "ctglip/losses.hpp"
#include "ctglip/reportproc.hpp"
#include "ctglip/synthdata.hpp"

namespace ctglip::trainer {

struct TrainConfig {
  int batch_size = 8;
  int epochs = 20;
  double lr_init = 1e-3;
  double lr_final = 1e-6;
  double weight_decay = 3e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 0;
  bool enable_ot = true;
  bool enable_at = true;
  bool enable_dict = true;
  bool enable_segm = true;
  /// Whole-volume vs whole-report baseline; the grounded flags are ignored.
  bool vanilla_clip = false;
  int negatives_per_organ = 4;  // T
  int max_negatives = 512;
  /// Write an intermediate checkpoint every N steps (0 = final only).
  int checkpoint_every = 0;

  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

/// lr_final + (lr_init - lr_final) * (1 + cos(pi * step / total_steps)) / 2.
double cosine_lr(long step, long total_steps, double lr_init, double lr_final);

/// Adam with L2 weight decay folded into the gradient.
struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  long step = 0;

  void update(std::span<double> params, std::span<const double> grad, double lr, const TrainConfig& cfg);
};

struct Checkpoint {
  static constexpr char kMagic[9] = "CTGLIP01";
  static constexpr std::uint32_t kVersion = 1;

  encoders::EncoderConfig encoder;
  TrainConfig train;
  losses::LossConfig loss;
  long step = 0;
  std::uint64_t rng_state = 0;
  std::vector<double> params;
  AdamState adam;

  std::string serialize() const;
  static Checkpoint deserialize(const std::string& bytes);
  void save(const std::filesystem::path& path) const;
  static Checkpoint load(const std::filesystem::path& path);

  encoders::Model model() const { return encoders::Model(encoder, params); }
};

struct TrainingData {
  std::vector<synthdata::LoadedSubject> subjects;
  reportproc::OrganLexicon lexicon;
  abnodict::AbnormalityDictionary dictionary;
  const encoders::TextEncoder* text = nullptr;
};

/// One optimisation step's log entry.
struct StepRecord {
  long step = 0;  // 1-based count of completed updates
  double lr = 0.0;
  losses::LossBreakdown loss;
  double l_clip = 0.0;
  bool vanilla = false;
  /// Dictionary negatives appended across the batch (sum of B).
  int negatives = 0;

  std::string to_json() const;
};

class Trainer {
 public:
  Trainer(const TrainConfig& train, const losses::LossConfig& loss, const encoders::EncoderConfig& encoder,
          const TrainingData& data);
  Trainer(const Checkpoint& ckpt, const TrainingData& data);

  /// One update over the given subject indices. Throws DivergenceError naming
  /// the batch's subject ids on a non-finite loss.
  StepRecord train_step(std::span<const std::size_t> batch);

  long total_steps() const;
  /// Subject order for one epoch; a pure function of (seed, epoch).
  std::vector<std::size_t> epoch_order(int epoch) const;

  long step() const { return adam_.step; }
  const encoders::Model& model() const { return model_; }
  Checkpoint checkpoint() const;

 private:
  struct Prepared;
  const encoders::Embedding& embed(const std::string& text);
  StepRecord grounded_step(std::span<const std::size_t> batch, double lr);
  StepRecord vanilla_step(std::span<const std::size_t> batch, double lr);
  std::string batch_ids(std::span<const std::size_t> batch) const;

  TrainConfig cfg_;
  losses::LossConfig loss_cfg_;
  const TrainingData& data_;
  encoders::Model model_;
  AdamState adam_;
  Rng rng_;
  std::vector<std::vector<reportproc::OrganDescription>> parsed_;
  std::unordered_map<std::string, encoders::Embedding> text_cache_;
};

struct FitOptions {
  std::optional<std::filesystem::path> resume_from;
  /// Stop (with a checkpoint) after this many completed steps; simulates an interruption.
  std::optional<long> stop_after;
  bool quiet = true;
};

/// Runs epochs * ceil(n / batch_size) steps, writing out_dir/metrics.jsonl,
/// periodic checkpoints and out_dir/final.ckpt.
Checkpoint fit(const TrainConfig& train, const losses::LossConfig& loss, const encoders::EncoderConfig& encoder,
               const TrainingData& data, const std::filesystem::path& out_dir, const FitOptions& options = {});

}  // namespace ctglip::trainer
