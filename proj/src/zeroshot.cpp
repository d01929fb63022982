#include "ctglip/zeroshot.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <json.hpp>

#include "ctglip/common.hpp"
#include "ctglip/metrics.hpp"
#include "ctglip/volume.hpp"

namespace ctglip::zeroshot {

std::vector<AbnormalityProbe> probes_from_json(const std::string& text, const reportproc::OrganLexicon& lexicon) {
  std::vector<AbnormalityProbe> out;
  try {
    const auto doc = nlohmann::json::parse(text);
    if (!doc.is_array()) throw ValidationError("probes: expected a list");
    for (const auto& p : doc) {
      const auto organ = p.at("organ").get<std::string>();
      const auto id = lexicon.find(organ);
      if (!id) throw ValidationError("probes: organ '" + organ + "' not in lexicon");
      AbnormalityProbe probe{*id, p.at("abnormality").get<std::string>(), p.at("positive_text").get<std::string>(),
                             p.at("negative_text").get<std::string>()};
      if (probe.positive_text == probe.negative_text) {
        throw ValidationError("probes: positive and negative texts are identical for '" + probe.abnormality + "'");
      }
      out.push_back(std::move(probe));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("probes: ") + e.what());
  }
  return out;
}

std::vector<AbnormalityProbe> load_probes(const std::filesystem::path& path, const reportproc::OrganLexicon& lexicon) {
  try {
    return probes_from_json(read_file(path), lexicon);
  } catch (const ValidationError& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

std::string probes_to_json(const std::vector<AbnormalityProbe>& probes, const reportproc::OrganLexicon& lexicon) {
  nlohmann::json doc = nlohmann::json::array();
  for (const auto& p : probes) {
    doc.push_back({{"organ", lexicon.name(p.organ_id)},
                   {"abnormality", p.abnormality},
                   {"positive_text", p.positive_text},
                   {"negative_text", p.negative_text}});
  }
  return doc.dump(2) + "\n";
}

AbnormalityProbe make_probe(int organ_id, const std::string& abnormality, const reportproc::OrganLexicon& lexicon) {
  const auto& name = lexicon.name(organ_id);
  return {organ_id, abnormality, abnormality + " in " + name, reportproc::normal_template(name)};
}

int nearest_organ(const encoders::Embedding& region, const std::map<int, encoders::Embedding>& candidates) {
  if (candidates.empty()) throw ArgumentError("nearest_organ: no candidates");
  int best = candidates.begin()->first;
  double best_sim = -std::numeric_limits<double>::infinity();
  // Ascending id order plus a strict comparison keeps the lowest id on ties.
  for (const auto& [id, t] : candidates) {
    const double s = encoders::dot(region, t);
    if (s > best_sim) {
      best_sim = s;
      best = id;
    }
  }
  return best;
}

std::map<int, encoders::Embedding> organ_prompt_embeddings(const encoders::TextEncoder& text,
                                                           const reportproc::OrganLexicon& lexicon) {
  std::vector<std::string> prompts;
  std::vector<int> ids;
  for (const auto& [id, e] : lexicon.entries()) {
    ids.push_back(id);
    prompts.push_back(reportproc::organ_template(e.name));
  }
  auto embs = text.encode(prompts);
  std::map<int, encoders::Embedding> out;
  for (std::size_t i = 0; i < ids.size(); ++i) out.emplace(ids[i], std::move(embs[i]));
  return out;
}

std::map<int, int> classify_organs(const std::vector<encoders::OrganEmbedding>& regions,
                                   const std::map<int, encoders::Embedding>& prompts) {
  std::map<int, int> out;
  for (const auto& r : regions) out[r.organ_id] = nearest_organ(r.vector, prompts);
  return out;
}

std::map<int, int> classify_organs(const encoders::Model& model, const encoders::TextEncoder& text,
                                   const Volume& volume, const OrganMask& mask,
                                   const reportproc::OrganLexicon& lexicon) {
  if (mask.organ_ids().empty()) return {};
  const auto fm = model.encode(volume);
  return classify_organs(encoders::organ_pool(fm, mask, model.head()), organ_prompt_embeddings(text, lexicon));
}

Detection two_way_decision(double s_pos, double s_neg, double tau) {
  if (!(tau > 0.0)) throw ArgumentError("detect_abnormality: tau must be positive");
  Detection d;
  d.s_pos = s_pos;
  d.s_neg = s_neg;
  d.score = 1.0 / (1.0 + std::exp((s_neg - s_pos) / tau));
  d.label = s_pos > s_neg ? Label::abnormal : Label::normal;
  return d;
}

Detection detect_abnormality(const std::vector<encoders::OrganEmbedding>& regions, const encoders::TextEncoder& text,
                             const AbnormalityProbe& probe, double tau) {
  const auto it = std::find_if(regions.begin(), regions.end(),
                               [&](const encoders::OrganEmbedding& r) { return r.organ_id == probe.organ_id; });
  if (it == regions.end()) {
    throw ArgumentError("detect_abnormality: organ " + std::to_string(probe.organ_id) + " missing from mask");
  }
  const auto t = text.encode({probe.positive_text, probe.negative_text});
  return two_way_decision(encoders::dot(it->vector, t[0]), encoders::dot(it->vector, t[1]), tau);
}

Detection detect_abnormality(const encoders::Model& model, const encoders::TextEncoder& text, const Volume& volume,
                             const OrganMask& mask, const AbnormalityProbe& probe, double tau) {
  const auto ids = mask.organ_ids();
  if (!std::binary_search(ids.begin(), ids.end(), probe.organ_id)) {
    throw ArgumentError("detect_abnormality: organ " + std::to_string(probe.organ_id) + " missing from mask");
  }
  const auto fm = model.encode(volume);
  return detect_abnormality(encoders::organ_pool(fm, mask, model.head()), text, probe, tau);
}

OrganEvaluation evaluate_organs(const encoders::Model& model, const encoders::TextEncoder& text,
                                const std::vector<synthdata::LoadedSubject>& subjects,
                                const reportproc::OrganLexicon& lexicon) {
  const auto prompts = organ_prompt_embeddings(text, lexicon);
  std::vector<std::vector<OrganEvaluation::Row>> per_subject(subjects.size());
  parallel_for(subjects.size(), [&](std::size_t i) {
    const auto& s = subjects[i];
    if (s.mask.organ_ids().empty()) return;
    const auto regions = encoders::organ_pool(model.encode(s.volume), s.mask, model.head());
    for (const auto& [organ, predicted] : classify_organs(regions, prompts)) {
      per_subject[i].push_back({s.subject_id, organ, predicted});
    }
  });
  OrganEvaluation out;
  std::vector<int> pred, truth;
  for (auto& rows : per_subject) {
    for (auto& r : rows) {
      pred.push_back(r.predicted);
      truth.push_back(r.organ);
      out.rows.push_back(r);
    }
  }
  if (!pred.empty()) out.top1 = metrics::top1_accuracy(pred, truth);
  return out;
}

std::string AbnormalityRow::to_json(const reportproc::OrganLexicon& lexicon) const {
  return nlohmann::json{{"subject", subject},
                        {"organ", lexicon.name(organ)},
                        {"abnormality", abnormality},
                        {"score", score},
                        {"label", label == Label::abnormal ? "abnormal" : "normal"},
                        {"ground_truth", ground_truth}}
      .dump();
}

std::vector<AbnormalityRow> evaluate_abnormality(const encoders::Model& model, const encoders::TextEncoder& text,
                                                 const std::vector<synthdata::LoadedSubject>& subjects,
                                                 const std::vector<AbnormalityProbe>& probes, double tau) {
  std::vector<std::pair<encoders::Embedding, encoders::Embedding>> probe_texts;
  for (const auto& p : probes) {
    auto t = text.encode({p.positive_text, p.negative_text});
    probe_texts.emplace_back(std::move(t[0]), std::move(t[1]));
  }
  std::vector<std::vector<AbnormalityRow>> per_subject(subjects.size());
  parallel_for(subjects.size(), [&](std::size_t i) {
    const auto& s = subjects[i];
    const auto ids = s.mask.organ_ids();
    if (ids.empty()) return;
    const auto regions = encoders::organ_pool(model.encode(s.volume), s.mask, model.head());
    for (std::size_t k = 0; k < probes.size(); ++k) {
      const auto& p = probes[k];
      const auto it = std::find_if(regions.begin(), regions.end(),
                                   [&](const encoders::OrganEmbedding& r) { return r.organ_id == p.organ_id; });
      if (it == regions.end()) continue;
      const auto d = two_way_decision(encoders::dot(it->vector, probe_texts[k].first),
                                      encoders::dot(it->vector, probe_texts[k].second), tau);
      const auto truth = s.truth.abnormality.find(p.organ_id);
      const int gt = truth != s.truth.abnormality.end() && truth->second == p.abnormality ? 1 : 0;
      per_subject[i].push_back({s.subject_id, p.organ_id, p.abnormality, d.score, d.label, gt});
    }
  });
  std::vector<AbnormalityRow> out;
  for (auto& rows : per_subject) {
    for (auto& r : rows) out.push_back(std::move(r));
  }
  return out;
}

}  // namespace ctglip::zeroshot
