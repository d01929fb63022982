#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "ctglip/encoders.hpp"
#include "ctglip/reportproc.hpp"
#include "ctglip/synthdata.hpp"

namespace ctglip::zeroshot {

struct AbnormalityProbe {
  int organ_id = 0;
  std::string abnormality;
  std::string positive_text;
  std::string negative_text;
};

/// File: [{"organ": name, "abnormality": ..., "positive_text": ..., "negative_text": ...}, ...]
std::vector<AbnormalityProbe> load_probes(const std::filesystem::path& path, const reportproc::OrganLexicon& lexicon);
std::vector<AbnormalityProbe> probes_from_json(const std::string& text, const reportproc::OrganLexicon& lexicon);
std::string probes_to_json(const std::vector<AbnormalityProbe>& probes, const reportproc::OrganLexicon& lexicon);

/// "{abnormality} in {organ}" against normal_template(organ).
AbnormalityProbe make_probe(int organ_id, const std::string& abnormality, const reportproc::OrganLexicon& lexicon);

/// Argmax-cosine organ among the candidates; ties go to the lowest organ id.
int nearest_organ(const encoders::Embedding& region, const std::map<int, encoders::Embedding>& candidates);

/// organ_template(name) embeddings for every lexicon organ.
std::map<int, encoders::Embedding> organ_prompt_embeddings(const encoders::TextEncoder& text,
                                                           const reportproc::OrganLexicon& lexicon);

/// Region id in the mask -> predicted organ id.
std::map<int, int> classify_organs(const encoders::Model& model, const encoders::TextEncoder& text,
                                   const Volume& volume, const OrganMask& mask,
                                   const reportproc::OrganLexicon& lexicon);
std::map<int, int> classify_organs(const std::vector<encoders::OrganEmbedding>& regions,
                                   const std::map<int, encoders::Embedding>& prompts);

enum class Label { normal, abnormal };

struct Detection {
  double score = 0.5;
  Label label = Label::normal;
  double s_pos = 0.0;
  double s_neg = 0.0;
};

/// exp(s_pos/tau) / (exp(s_pos/tau) + exp(s_neg/tau)); abnormal iff s_pos > s_neg.
Detection two_way_decision(double s_pos, double s_neg, double tau);

/// Uses the organ's pooled embedding; throws ArgumentError if the organ is absent.
Detection detect_abnormality(const std::vector<encoders::OrganEmbedding>& regions, const encoders::TextEncoder& text,
                             const AbnormalityProbe& probe, double tau);
Detection detect_abnormality(const encoders::Model& model, const encoders::TextEncoder& text, const Volume& volume,
                             const OrganMask& mask, const AbnormalityProbe& probe, double tau);

// ---------------------------------------------------------------------------
// Cohort-level evaluation.

struct OrganEvaluation {
  struct Row {
    int subject = 0;
    int organ = 0;
    int predicted = 0;
  };
  std::vector<Row> rows;
  double top1 = 0.0;
};

OrganEvaluation evaluate_organs(const encoders::Model& model, const encoders::TextEncoder& text,
                                const std::vector<synthdata::LoadedSubject>& subjects,
                                const reportproc::OrganLexicon& lexicon);

struct AbnormalityRow {
  int subject = 0;
  int organ = 0;
  std::string abnormality;
  double score = 0.0;
  Label label = Label::normal;
  int ground_truth = 0;

  std::string to_json(const reportproc::OrganLexicon& lexicon) const;
};

/// One row per (subject, probe) whose organ is present in the subject's mask.
std::vector<AbnormalityRow> evaluate_abnormality(const encoders::Model& model, const encoders::TextEncoder& text,
                                                 const std::vector<synthdata::LoadedSubject>& subjects,
                                                 const std::vector<AbnormalityProbe>& probes, double tau);

}  // namespace ctglip::zeroshot
