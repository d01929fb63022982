#include "ctglip/trainer.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iostream>
#include <numbers>
#include <sstream>

#include <json.hpp>

#include "ctglip/common.hpp"
#include "ctglip/config.hpp"
#include "ctglip/volume.hpp"

namespace ctglip::trainer {
namespace {

using encoders::Embedding;
using nlohmann::json;

// Used when a report has no sentence at all (every organ silent).
constexpr const char* kEmptyReportText = "no evident abnormality";

class ByteWriter {
 public:
  template <typename T>
  void put(T value) {
    static_assert(std::is_trivially_copyable_v<T>);
    char buf[sizeof(T)];
    std::memcpy(buf, &value, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(T));
    out_.append(buf, sizeof(T));
  }
  void put_bytes(const std::string& s) {
    put<std::uint64_t>(s.size());
    out_ += s;
  }
  void put_doubles(const std::vector<double>& v) {
    put<std::uint64_t>(v.size());
    for (double x : v) put(x);
  }
  std::string take() { return std::move(out_); }

 private:
  std::string out_;
};

class ByteReader {
 public:
  explicit ByteReader(const std::string& in) : in_(in) {}
  template <typename T>
  T get() {
    need(sizeof(T));
    char buf[sizeof(T)];
    std::memcpy(buf, in_.data() + pos_, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(T));
    pos_ += sizeof(T);
    T value;
    std::memcpy(&value, buf, sizeof(T));
    return value;
  }
  std::string get_bytes() {
    const auto n = get<std::uint64_t>();
    need(n);
    std::string s = in_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::vector<double> get_doubles() {
    const auto n = get<std::uint64_t>();
    need(n * sizeof(double));
    std::vector<double> v(n);
    for (auto& x : v) x = get<double>();
    return v;
  }
  std::string raw(std::size_t n) {
    need(n);
    std::string s = in_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == in_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > in_.size()) throw ValidationError("checkpoint: truncated file");
  }
  const std::string& in_;
  std::size_t pos_ = 0;
};

void add_into(std::vector<double>& dst, const std::vector<double>& src, double scale) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += scale * src[i];
}

}  // namespace

void TrainConfig::validate() const {
  if (batch_size <= 0) throw ValidationError("train.batch_size must be positive");
  if (epochs < 0) throw ValidationError("train.epochs must be non-negative");
  if (!(lr_init >= 0.0 && lr_final >= 0.0)) throw ValidationError("train.lr_init/lr_final must be non-negative");
  if (!(lr_final <= lr_init)) throw ValidationError("train.lr_final must not exceed train.lr_init");
  if (!(weight_decay >= 0.0)) throw ValidationError("train.weight_decay must be non-negative");
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) {
    throw ValidationError("train.beta1/beta2 must lie in [0, 1)");
  }
  if (!(adam_eps > 0.0)) throw ValidationError("train.adam_eps must be positive");
  if (negatives_per_organ < 0) throw ValidationError("train.negatives_per_organ must be non-negative");
  if (max_negatives < 0) throw ValidationError("train.max_negatives must be non-negative");
  if (checkpoint_every < 0) throw ValidationError("train.checkpoint_every must be non-negative");
  if (!vanilla_clip && !enable_ot && !enable_at && !enable_segm) {
    throw ValidationError("train: grounded mode needs at least one of enable_ot, enable_at, enable_segm");
  }
}

double cosine_lr(long step, long total_steps, double lr_init, double lr_final) {
  if (total_steps < 1) throw ArgumentError("cosine_lr: total_steps must be at least 1");
  if (step < 0 || step > total_steps) throw ArgumentError("cosine_lr: step outside [0, total_steps]");
  if (step == 0) return lr_init;
  if (step == total_steps) return lr_final;
  const double phase = std::numbers::pi * static_cast<double>(step) / static_cast<double>(total_steps);
  return lr_final + 0.5 * (lr_init - lr_final) * (1.0 + std::cos(phase));
}

void AdamState::update(std::span<double> params, std::span<const double> grad, double lr, const TrainConfig& cfg) {
  if (m.empty()) {
    m.assign(params.size(), 0.0);
    v.assign(params.size(), 0.0);
  }
  ++step;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grad[i] + cfg.weight_decay * params[i];
    m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
    v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
    const double m_hat = m[i] / bc1;
    const double v_hat = v[i] / bc2;
    params[i] -= lr * m_hat / (std::sqrt(v_hat) + cfg.adam_eps);
  }
}

std::string Checkpoint::serialize() const {
  ByteWriter w;
  std::string magic(kMagic, 8);
  for (char c : magic) w.put(c);
  w.put<std::uint32_t>(kVersion);
  const json snapshot = {{"encoder", config::to_json(encoder)},
                         {"train", config::to_json(train)},
                         {"loss", config::to_json(loss)}};
  w.put_bytes(snapshot.dump());
  w.put<std::int64_t>(step);
  w.put<std::uint64_t>(rng_state);
  w.put<std::int64_t>(adam.step);
  w.put_doubles(params);
  w.put_doubles(adam.m);
  w.put_doubles(adam.v);
  return w.take();
}

Checkpoint Checkpoint::deserialize(const std::string& bytes) {
  ByteReader r(bytes);
  if (r.raw(8) != std::string(kMagic, 8)) throw ValidationError("checkpoint: bad magic bytes");
  const auto version = r.get<std::uint32_t>();
  if (version != kVersion) throw ValidationError("checkpoint: unsupported version " + std::to_string(version));
  Checkpoint c;
  try {
    const auto snapshot = json::parse(r.get_bytes());
    c.encoder = config::encoder_from_json(snapshot.at("encoder"), true);
    c.train = config::train_from_json(snapshot.at("train"));
    c.loss = config::loss_from_json(snapshot.at("loss"));
  } catch (const json::exception& e) {
    throw ValidationError(std::string("checkpoint: bad config snapshot: ") + e.what());
  }
  c.step = r.get<std::int64_t>();
  c.rng_state = r.get<std::uint64_t>();
  c.adam.step = r.get<std::int64_t>();
  c.params = r.get_doubles();
  c.adam.m = r.get_doubles();
  c.adam.v = r.get_doubles();
  if (!r.done()) throw ValidationError("checkpoint: trailing bytes");
  if (c.params.size() != encoders::ParamLayout(c.encoder).total) {
    throw ValidationError("checkpoint: parameter count does not match the encoder config");
  }
  return c;
}

void Checkpoint::save(const std::filesystem::path& path) const { write_file(path, serialize()); }

Checkpoint Checkpoint::load(const std::filesystem::path& path) {
  try {
    return deserialize(read_file(path));
  } catch (const ValidationError& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

std::string StepRecord::to_json() const {
  json j;
  j["step"] = step;
  j["lr"] = lr;
  if (vanilla) {
    j["l_clip"] = l_clip;
    j["total"] = loss.total;
  } else {
    j["l_ot"] = loss.l_ot;
    j["l_at"] = loss.l_at;
    j["l_segm"] = loss.l_segm;
    j["total"] = loss.total;
    j["negatives"] = negatives;
  }
  return j.dump();
}

Trainer::Trainer(const TrainConfig& train, const losses::LossConfig& loss, const encoders::EncoderConfig& encoder,
                 const TrainingData& data)
    : cfg_(train),
      loss_cfg_(loss),
      data_(data),
      model_(encoder, mix_seed(train.seed, 0x6d6f64656cULL)),
      rng_(mix_seed(train.seed, 0x747261696eULL)) {
  cfg_.validate();
  loss_cfg_.validate();
  if (!data_.text) throw ArgumentError("trainer: no text encoder");
  if (data_.text->dim() != encoder.embed_dim) throw ValidationError("trainer: text and image embedding dims differ");
  if (data_.lexicon.max_id() >= encoder.num_classes) {
    throw ValidationError("trainer: encoder.num_classes must exceed the largest lexicon organ id");
  }
  for (const auto& s : data_.subjects) {
    auto parsed = reportproc::parse_report(s.report, data_.lexicon).descriptions;
    const auto present = s.mask.organ_ids();
    std::erase_if(parsed, [&](const reportproc::OrganDescription& d) {
      return !std::binary_search(present.begin(), present.end(), d.organ_id);
    });
    parsed_.push_back(std::move(parsed));
  }
}

Trainer::Trainer(const Checkpoint& ckpt, const TrainingData& data) : Trainer(ckpt.train, ckpt.loss, ckpt.encoder, data) {
  model_ = ckpt.model();
  adam_ = ckpt.adam;
  rng_.set_state(ckpt.rng_state);
}

Checkpoint Trainer::checkpoint() const {
  Checkpoint c;
  c.encoder = model_.config();
  c.train = cfg_;
  c.loss = loss_cfg_;
  c.step = adam_.step;
  c.rng_state = rng_.state();
  c.params.assign(model_.params().begin(), model_.params().end());
  c.adam = adam_;
  return c;
}

long Trainer::total_steps() const {
  const long n = static_cast<long>(data_.subjects.size());
  const long per_epoch = (n + cfg_.batch_size - 1) / cfg_.batch_size;
  return per_epoch * cfg_.epochs;
}

std::vector<std::size_t> Trainer::epoch_order(int epoch) const {
  std::vector<std::size_t> order(data_.subjects.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(mix_seed(cfg_.seed, 0x65706f6368000000ULL + static_cast<std::uint64_t>(epoch)));
  for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
  return order;
}

const Embedding& Trainer::embed(const std::string& text) {
  auto it = text_cache_.find(text);
  if (it == text_cache_.end()) it = text_cache_.emplace(text, data_.text->encode({text}).front()).first;
  return it->second;
}

std::string Trainer::batch_ids(std::span<const std::size_t> batch) const {
  std::string s;
  for (auto i : batch) s += (s.empty() ? "" : ",") + std::to_string(data_.subjects[i].subject_id);
  return s;
}

StepRecord Trainer::train_step(std::span<const std::size_t> batch) {
  if (batch.empty()) throw ArgumentError("train_step: empty batch");
  const long total = std::max(1L, total_steps());
  const double lr = cosine_lr(std::min(adam_.step, total), total, cfg_.lr_init, cfg_.lr_final);
  return cfg_.vanilla_clip ? vanilla_step(batch, lr) : grounded_step(batch, lr);
}

struct Trainer::Prepared {
  std::vector<int> present;
  std::vector<const Embedding*> ot_texts;
  std::vector<const Embedding*> at_texts;
  int negatives = 0;
};

StepRecord Trainer::grounded_step(std::span<const std::size_t> batch, double lr) {
  const std::size_t n = batch.size();
  const abnodict::AbnormalityDictionary empty_dict;

  // Serial preparation: text batches and embeddings (the cache is not shared across threads).
  std::vector<Prepared> prep(n);
  for (std::size_t b = 0; b < n; ++b) {
    const auto& subject = data_.subjects[batch[b]];
    auto& p = prep[b];
    p.present = subject.mask.organ_ids();
    const std::uint64_t neg_seed = rng_.next();
    if (p.present.empty()) continue;
    if (cfg_.enable_ot) {
      for (int organ : p.present) p.ot_texts.push_back(&embed(reportproc::organ_template(data_.lexicon.name(organ))));
    }
    if (cfg_.enable_at) {
      abnodict::NegativeOptions opts{cfg_.negatives_per_organ, cfg_.max_negatives, neg_seed};
      const auto tb = abnodict::assemble_text_batch(parsed_[batch[b]], p.present, data_.lexicon,
                                                    cfg_.enable_dict ? data_.dictionary : empty_dict, opts);
      p.negatives = tb.B;
      for (const auto& d : tb.descriptions) p.at_texts.push_back(&embed(d.text));
    }
  }

  struct Out {
    losses::LossBreakdown loss;
    std::vector<double> grad;
  };
  std::vector<Out> outs(n);
  const double inv_n = 1.0 / static_cast<double>(n);

  parallel_for(n, [&](std::size_t b) {
    const auto& subject = data_.subjects[batch[b]];
    const auto& p = prep[b];
    auto& out = outs[b];
    out.grad.assign(model_.params().size(), 0.0);

    encoders::VisionTrace trace;
    const auto fm = model_.encode(subject.volume, &trace);
    encoders::FeatureMap d_fm{fm.channels, fm.shape, std::vector<double>(fm.values.size(), 0.0)};

    double l_ot = 0.0, l_at = 0.0, l_segm = 0.0;
    if (!p.present.empty() && (cfg_.enable_ot || cfg_.enable_at)) {
      const auto head = model_.head();
      const auto regions = encoders::pool_regions(fm, subject.mask);
      const std::size_t M = regions.size();
      std::vector<encoders::ProjectionHead::Cache> caches(M);
      std::vector<Embedding> z(M);
      std::vector<double> norms(M);
      for (std::size_t j = 0; j < M; ++j) {
        z[j] = head.forward(regions[j].mean, &caches[j]);
        norms[j] = encoders::normalize(z[j]);
      }
      std::vector<Embedding> dz(M, Embedding(z.front().size(), 0.0));
      auto deref = [](const std::vector<const Embedding*>& v) {
        std::vector<Embedding> out;
        out.reserve(v.size());
        for (const auto* e : v) out.push_back(*e);
        return out;
      };
      if (cfg_.enable_ot) {
        const auto r = losses::organ_text_loss(z, deref(p.ot_texts), loss_cfg_.tau);
        l_ot = r.value;
        for (std::size_t j = 0; j < M; ++j) add_into(dz[j], r.d_images[j], loss_cfg_.lambda_ot);
      }
      if (cfg_.enable_at) {
        const auto r = losses::abnormality_text_loss(z, deref(p.at_texts), loss_cfg_.tau);
        l_at = r.value;
        for (std::size_t j = 0; j < M; ++j) add_into(dz[j], r.d_images[j], loss_cfg_.lambda_at);
      }
      std::vector<std::vector<double>> d_means(M);
      for (std::size_t j = 0; j < M; ++j) {
        for (auto& g : dz[j]) g *= inv_n;
        const auto d_head = encoders::normalize_backward(z[j], norms[j], dz[j]);
        d_means[j] = head.backward(caches[j], d_head, out.grad, model_.layout());
      }
      encoders::pool_regions_backward(subject.mask, regions, d_means, d_fm);
    }
    if (cfg_.enable_segm) {
      const auto logits = model_.segment(fm);
      auto seg = losses::segmentation_loss(logits, subject.mask, loss_cfg_);
      l_segm = seg.value;
      const double scale = loss_cfg_.lambda_segm * inv_n;
      for (auto& g : seg.d_logits.values) g *= scale;
      model_.backward_segment(fm, seg.d_logits, d_fm.values, out.grad);
    }
    out.loss = losses::LossBreakdown{l_ot, l_at, l_segm, 0.0};
    model_.backward_encoder(trace, fm.shape, d_fm.values, out.grad);
  });

  StepRecord rec;
  rec.lr = lr;
  std::vector<double> grad(model_.params().size(), 0.0);
  double l_ot = 0.0, l_at = 0.0, l_segm = 0.0;
  for (std::size_t b = 0; b < n; ++b) {
    l_ot += outs[b].loss.l_ot * inv_n;
    l_at += outs[b].loss.l_at * inv_n;
    l_segm += outs[b].loss.l_segm * inv_n;
    add_into(grad, outs[b].grad, 1.0);
    rec.negatives += prep[b].negatives;
  }
  try {
    rec.loss = losses::total_loss(l_ot, l_at, l_segm, loss_cfg_);
  } catch (const DivergenceError&) {
    throw DivergenceError("non-finite loss at step " + std::to_string(adam_.step + 1) + " on subjects [" +
                          batch_ids(batch) + "]");
  }
  if (!std::isfinite(rec.loss.total)) {
    throw DivergenceError("non-finite loss at step " + std::to_string(adam_.step + 1) + " on subjects [" +
                          batch_ids(batch) + "]");
  }
  adam_.update(model_.params(), grad, lr, cfg_);
  rec.step = adam_.step;
  return rec;
}

StepRecord Trainer::vanilla_step(std::span<const std::size_t> batch, double lr) {
  const std::size_t n = batch.size();
  std::vector<Embedding> texts;
  for (auto i : batch) {
    const auto& report = data_.subjects[i].report;
    texts.push_back(embed(encoders::stub_tokens(report).empty() ? kEmptyReportText : report));
  }
  rng_.next();  // keeps the generator advancing identically in both modes

  struct Fwd {
    encoders::VisionTrace trace;
    encoders::FeatureMap fm;
    std::vector<double> pooled;
    encoders::ProjectionHead::Cache cache;
    Embedding v;
    double norm = 0.0;
  };
  std::vector<Fwd> fwd(n);
  const auto head = model_.head();
  parallel_for(n, [&](std::size_t b) {
    auto& f = fwd[b];
    f.fm = model_.encode(data_.subjects[batch[b]].volume, &f.trace);
    f.pooled = encoders::global_pool(f.fm);
    f.v = head.forward(f.pooled, &f.cache);
    f.norm = encoders::normalize(f.v);
  });

  std::vector<Embedding> images;
  for (const auto& f : fwd) images.push_back(f.v);
  const auto r = losses::clip_batch_loss(images, texts, loss_cfg_.tau);
  if (!std::isfinite(r.value)) {
    throw DivergenceError("non-finite loss at step " + std::to_string(adam_.step + 1) + " on subjects [" +
                          batch_ids(batch) + "]");
  }

  std::vector<std::vector<double>> grads(n);
  parallel_for(n, [&](std::size_t b) {
    auto& f = fwd[b];
    auto& g = grads[b];
    g.assign(model_.params().size(), 0.0);
    const auto d_head = encoders::normalize_backward(f.v, f.norm, r.d_images[b]);
    const auto d_pooled = head.backward(f.cache, d_head, g, model_.layout());
    const double inv_v = 1.0 / static_cast<double>(f.fm.shape.voxels());
    std::vector<double> d_fm(f.fm.values.size());
    for (int c = 0; c < f.fm.channels; ++c) {
      const double val = d_pooled[static_cast<std::size_t>(c)] * inv_v;
      std::fill_n(d_fm.begin() + static_cast<std::ptrdiff_t>(c * f.fm.shape.voxels()), f.fm.shape.voxels(), val);
    }
    model_.backward_encoder(f.trace, f.fm.shape, d_fm, g);
  });

  std::vector<double> grad(model_.params().size(), 0.0);
  for (const auto& g : grads) add_into(grad, g, 1.0);

  StepRecord rec;
  rec.vanilla = true;
  rec.lr = lr;
  rec.l_clip = r.value;
  rec.loss.total = r.value;
  adam_.update(model_.params(), grad, lr, cfg_);
  rec.step = adam_.step;
  return rec;
}

Checkpoint fit(const TrainConfig& train, const losses::LossConfig& loss, const encoders::EncoderConfig& encoder,
               const TrainingData& data, const std::filesystem::path& out_dir, const FitOptions& options) {
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create " + out_dir.string() + ": " + ec.message());

  std::optional<Trainer> trainer;
  const auto metrics_path = out_dir / "metrics.jsonl";
  std::string metrics;
  if (options.resume_from) {
    const auto ckpt = Checkpoint::load(*options.resume_from);
    if (!(ckpt.train == train) || !(ckpt.loss == loss) || !(ckpt.encoder == encoder)) {
      throw ValidationError("resume: checkpoint configuration differs from the requested run");
    }
    trainer.emplace(ckpt, data);
    // Keep the log lines up to the resumed step only.
    if (std::filesystem::exists(metrics_path)) {
      std::istringstream in(read_file(metrics_path));
      std::string line;
      while (std::getline(in, line)) {
        if (line.empty()) continue;
        if (json::parse(line).at("step").get<long>() <= ckpt.step) metrics += line + "\n";
      }
    }
  } else {
    trainer.emplace(train, loss, encoder, data);
  }

  const long total = trainer->total_steps();
  const long per_epoch = data.subjects.empty() ? 0 : (static_cast<long>(data.subjects.size()) + train.batch_size - 1) / train.batch_size;
  auto flush_metrics = [&] { write_file(metrics_path, metrics); };

  while (trainer->step() < total) {
    if (options.stop_after && trainer->step() >= *options.stop_after) break;
    const long s = trainer->step();
    const int epoch = static_cast<int>(s / per_epoch);
    const long pos = s % per_epoch;
    const auto order = trainer->epoch_order(epoch);
    const std::size_t begin = static_cast<std::size_t>(pos) * static_cast<std::size_t>(train.batch_size);
    const std::size_t end = std::min(order.size(), begin + static_cast<std::size_t>(train.batch_size));
    const std::span<const std::size_t> batch(order.data() + begin, end - begin);

    StepRecord rec;
    try {
      rec = trainer->train_step(batch);
    } catch (const DivergenceError& e) {
      flush_metrics();
      const auto dump = out_dir / "divergence.json";
      std::vector<int> ids;
      for (auto i : batch) ids.push_back(data.subjects[i].subject_id);
      write_file(dump, json{{"step", s + 1}, {"subjects", ids}, {"message", e.what()}}.dump(2) + "\n");
      throw DivergenceError(std::string(e.what()) + " (diagnostics: " + dump.string() + ")");
    }
    metrics += rec.to_json() + "\n";
    if (!options.quiet) std::cerr << rec.to_json() << "\n";
    if (train.checkpoint_every > 0 && rec.step % train.checkpoint_every == 0) {
      char name[64];
      std::snprintf(name, sizeof name, "checkpoint_step_%06ld.ckpt", rec.step);
      trainer->checkpoint().save(out_dir / name);
      flush_metrics();
    }
  }
  flush_metrics();
  auto ckpt = trainer->checkpoint();
  ckpt.save(out_dir / (trainer->step() >= total ? "final.ckpt" : "interrupted.ckpt"));
  return ckpt;
}

}  // namespace ctglip::trainer
