// Command-line front end: synth, train, eval-organs, eval-abnormality, report-parse.
//
// Exit codes: 0 success, 1 I/O failure, 2 invalid input, 3 numeric divergence.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "ctglip/common.hpp"
#include "ctglip/config.hpp"
#include "ctglip/metrics.hpp"
#include "ctglip/reportproc.hpp"
#include "ctglip/synthdata.hpp"
#include "ctglip/trainer.hpp"
#include "ctglip/zeroshot.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace ctglip;

namespace {

enum Exit { kOk = 0, kIo = 1, kInvalid = 2, kDiverged = 3 };

void require_file(const fs::path& p, const std::string& what) {
  if (!fs::is_regular_file(p)) throw ValidationError("missing " + what + ": " + p.string());
}

std::string fmt(std::optional<double> x, double scale = 100.0) {
  if (!x) return "   n/a";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%6.2f", *x * scale);
  return buf;
}

void emit(const std::string& text, const std::string& out) {
  if (out.empty() || out == "-") {
    std::cout << text;
    return;
  }
  write_file(out, text);
}

std::vector<synthdata::LoadedSubject> load_data(const std::string& manifest) {
  require_file(manifest, "manifest");
  return synthdata::load_subjects(synthdata::read_manifest(manifest));
}

// ---- synth -------------------------------------------------------------------

struct SynthArgs {
  std::string config, out;
};

int run_synth(const SynthArgs& a) {
  require_file(a.config, "config");
  const auto rc = config::load_run_config(a.config);
  const auto manifest = synthdata::generate_cohort(rc.cohort, a.out);
  std::cout << manifest.path.string() << "\n";
  return kOk;
}

// ---- train -------------------------------------------------------------------

struct TrainArgs {
  std::string config, data, out, mode = "grounded", resume;
  bool no_dict = false, no_ot = false, verbose = false;
  std::optional<int> epochs;
};

int run_train(const TrainArgs& a) {
  require_file(a.config, "config");
  auto rc = config::load_run_config(a.config);
  if (a.mode == "vanilla") {
    rc.train.vanilla_clip = true;
  } else if (a.mode != "grounded") {
    throw ValidationError("--mode must be vanilla or grounded");
  }
  if (a.no_dict) rc.train.enable_dict = false;
  if (a.no_ot) rc.train.enable_ot = false;
  if (a.epochs) rc.train.epochs = *a.epochs;
  rc.train.validate();

  trainer::TrainingData data;
  data.lexicon = rc.load_lexicon();
  data.dictionary = rc.load_dictionary(data.lexicon);
  const auto text = rc.make_text_encoder();
  data.text = text.get();
  data.subjects = load_data(a.data);
  rc.encoder.num_classes = data.lexicon.max_id() + 1;

  trainer::FitOptions opts;
  opts.quiet = !a.verbose;
  if (!a.resume.empty()) {
    require_file(a.resume, "checkpoint");
    opts.resume_from = a.resume;
  }
  const auto ckpt = trainer::fit(rc.train, rc.loss, rc.encoder, data, a.out, opts);
  std::cout << "steps " << ckpt.step << "\n"
            << "checkpoint " << (fs::path(a.out) / "final.ckpt").string() << "\n"
            << "metrics " << (fs::path(a.out) / "metrics.jsonl").string() << "\n";
  return kOk;
}

// ---- evaluation --------------------------------------------------------------

struct EvalArgs {
  std::string config, checkpoint, data, out, probes;
};

struct EvalContext {
  config::RunConfig rc;
  reportproc::OrganLexicon lexicon;
  std::unique_ptr<encoders::TextEncoder> text;
  trainer::Checkpoint ckpt;
  std::vector<synthdata::LoadedSubject> subjects;
};

EvalContext load_eval(const EvalArgs& a) {
  require_file(a.config, "config");
  require_file(a.checkpoint, "checkpoint");
  EvalContext ctx;
  ctx.rc = config::load_run_config(a.config);
  ctx.lexicon = ctx.rc.load_lexicon();
  ctx.text = ctx.rc.make_text_encoder();
  ctx.ckpt = trainer::Checkpoint::load(a.checkpoint);
  ctx.subjects = load_data(a.data);
  return ctx;
}

int run_eval_organs(const EvalArgs& a) {
  const auto ctx = load_eval(a);
  const auto model = ctx.ckpt.model();
  const auto ev = zeroshot::evaluate_organs(model, *ctx.text, ctx.subjects, ctx.lexicon);

  std::map<int, std::pair<int, int>> per_organ;  // hits, total
  json rows = json::array();
  for (const auto& r : ev.rows) {
    auto& [hits, total] = per_organ[r.organ];
    hits += r.organ == r.predicted;
    ++total;
    rows.push_back({{"subject", r.subject},
                    {"organ", ctx.lexicon.name(r.organ)},
                    {"predicted", ctx.lexicon.name(r.predicted)}});
  }
  json doc{{"top1", ev.top1}, {"regions", ev.rows.size()}, {"organs", ctx.lexicon.entries().size()}};
  doc["per_organ"] = json::object();
  for (const auto& [id, ht] : per_organ) {
    doc["per_organ"][ctx.lexicon.name(id)] = static_cast<double>(ht.first) / ht.second;
  }
  doc["rows"] = rows;
  emit(doc.dump(2) + "\n", a.out);

  std::cerr << "organ           top-1 (%)\n";
  for (const auto& [id, ht] : per_organ) {
    std::fprintf(stderr, "%-15s %s\n", ctx.lexicon.name(id).c_str(),
                 fmt(static_cast<double>(ht.first) / ht.second).c_str());
  }
  std::fprintf(stderr, "%-15s %s  (%zu regions, %zu-way)\n", "all", fmt(ev.top1).c_str(), ev.rows.size(),
               ctx.lexicon.entries().size());
  return kOk;
}

int run_eval_abnormality(const EvalArgs& a) {
  const auto ctx = load_eval(a);
  std::optional<fs::path> probe_path = ctx.rc.probes;
  if (!a.probes.empty()) probe_path = a.probes;
  if (!probe_path) throw ValidationError("missing probes: pass --probes or set paths.probes in the config");
  require_file(*probe_path, "probes");
  const auto probes = zeroshot::load_probes(*probe_path, ctx.lexicon);

  const auto model = ctx.ckpt.model();
  const auto rows = zeroshot::evaluate_abnormality(model, *ctx.text, ctx.subjects, probes, ctx.ckpt.loss.tau);
  std::string jsonl;
  std::map<std::string, std::vector<metrics::Outcome>> groups;
  for (const auto& r : rows) {
    jsonl += r.to_json(ctx.lexicon) + "\n";
    groups[r.abnormality].push_back({r.score, r.ground_truth});
  }
  const auto report = metrics::grouped_report(groups);
  if (a.out.empty() || a.out == "-") {
    std::cout << jsonl;
  } else {
    write_file(a.out, jsonl);
    write_file(fs::path(a.out).replace_extension(".summary.json"), metrics::grouped_report_json(report) + "\n");
  }

  std::fprintf(stderr, "%-28s %5s %6s %6s %6s %6s\n", "abnormality", "n", "PPV", "Sens", "F1", "AUC");
  for (const auto& [name, row] : report.groups) {
    std::fprintf(stderr, "%-28s %5zu %s %s %s %s\n", name.c_str(), row.count, fmt(row.stats.ppv).c_str(),
                 fmt(row.stats.sensitivity).c_str(), fmt(row.stats.f1).c_str(), fmt(row.auc).c_str());
  }
  std::fprintf(stderr, "%-28s %5zu %s %s %s %s\n", "micro (pooled)", report.micro.count,
               fmt(report.micro.stats.ppv).c_str(), fmt(report.micro.stats.sensitivity).c_str(),
               fmt(report.micro.stats.f1).c_str(), fmt(report.micro.auc).c_str());
  std::fprintf(stderr, "%-28s %5s %s %s %s %s\n", "macro (per abnormality)", "", fmt(report.macro_ppv).c_str(),
               fmt(report.macro_sensitivity).c_str(), fmt(report.macro_f1).c_str(), fmt(report.macro_auc).c_str());
  return kOk;
}

// ---- report-parse --------------------------------------------------------------

struct ParseArgs {
  std::string lexicon, config, reports, data, out;
};

int run_report_parse(const ParseArgs& a) {
  reportproc::OrganLexicon lexicon;
  if (!a.lexicon.empty()) {
    require_file(a.lexicon, "lexicon");
    lexicon = reportproc::load_lexicon(a.lexicon);
  } else if (!a.config.empty()) {
    require_file(a.config, "config");
    lexicon = config::load_run_config(a.config).load_lexicon();
  } else {
    throw ValidationError("missing lexicon: pass --lexicon or --config");
  }
  if (a.reports.empty() == a.data.empty()) throw ValidationError("pass exactly one of --reports or --data");

  json doc = json::object();
  long checked = 0, mismatches = 0;
  if (!a.reports.empty()) {
    if (!fs::is_directory(a.reports)) throw ValidationError("missing report directory: " + a.reports);
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(a.reports)) {
      if (e.is_regular_file() && e.path().extension() == ".txt") files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
      const auto r = reportproc::parse_report(read_file(f), lexicon);
      doc[f.filename().string()] = json::parse(reportproc::parse_result_to_json(r, lexicon));
    }
  } else {
    require_file(a.data, "manifest");
    const auto manifest = synthdata::read_manifest(a.data);
    const auto dir = manifest.path.parent_path();
    for (const auto& rec : manifest.records) {
      const auto r = reportproc::parse_report(read_file(dir / rec.report_path), lexicon);
      std::map<int, std::string> abnormal;
      for (const auto& d : r.descriptions) {
        if (d.polarity == reportproc::Polarity::abnormal) abnormal[d.organ_id] = d.text;
      }
      std::set<int> parsed_ids, truth_ids;
      for (const auto& [id, _] : abnormal) parsed_ids.insert(id);
      for (const auto& [id, _] : rec.ground_truth.abnormality) truth_ids.insert(id);
      ++checked;
      const bool ok = parsed_ids == truth_ids;
      mismatches += !ok;
      auto entry = json::parse(reportproc::parse_result_to_json(r, lexicon));
      doc[std::to_string(rec.subject_id)] = {{"parsed", entry}, {"matches_ground_truth", ok}};
    }
  }
  emit(doc.dump(2) + "\n", a.out);
  if (!a.data.empty()) {
    std::fprintf(stderr, "reports %ld  mismatched %ld\n", checked, mismatches);
  } else {
    std::fprintf(stderr, "reports %zu\n", doc.size());
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Grounded CT vision-language pretraining on synthetic cohorts"};
  app.require_subcommand(1);

  SynthArgs synth;
  auto* s = app.add_subcommand("synth", "Generate a synthetic cohort");
  s->add_option("--config", synth.config, "Run config file")->required();
  s->add_option("--out", synth.out, "Output directory")->required();

  TrainArgs train;
  auto* t = app.add_subcommand("train", "Pretrain the vision encoder");
  t->add_option("--config", train.config, "Run config file")->required();
  t->add_option("--data", train.data, "Cohort manifest")->required();
  t->add_option("--out", train.out, "Output directory")->required();
  t->add_option("--mode", train.mode, "grounded or vanilla")->check(CLI::IsMember({"grounded", "vanilla"}));
  t->add_flag("--no-dict", train.no_dict, "Disable dictionary negatives");
  t->add_flag("--no-ot", train.no_ot, "Disable organ-text alignment");
  t->add_option("--epochs", train.epochs, "Override train.epochs");
  t->add_option("--resume", train.resume, "Continue from a checkpoint");
  t->add_flag("-v,--verbose", train.verbose, "Print every step record");

  EvalArgs organs;
  auto* eo = app.add_subcommand("eval-organs", "Zero-shot organ classification");
  EvalArgs abn;
  auto* ea = app.add_subcommand("eval-abnormality", "Zero-shot abnormality detection");
  for (auto [cmd, args] : {std::pair{eo, &organs}, std::pair{ea, &abn}}) {
    cmd->add_option("--config", args->config, "Run config file (lexicon, text encoder)")->required();
    cmd->add_option("--checkpoint", args->checkpoint, "Trained checkpoint")->required();
    cmd->add_option("--data", args->data, "Cohort manifest")->required();
    cmd->add_option("--out", args->out, "Results file (default: stdout)");
  }
  ea->add_option("--probes", abn.probes, "Probe file (overrides paths.probes)");

  ParseArgs parse;
  auto* rp = app.add_subcommand("report-parse", "Split reports into per-organ descriptions");
  rp->add_option("--lexicon", parse.lexicon, "Organ lexicon file");
  rp->add_option("--config", parse.config, "Run config (lexicon source when --lexicon is absent)");
  rp->add_option("--reports", parse.reports, "Directory of .txt reports");
  rp->add_option("--data", parse.data, "Cohort manifest; compares against its ground truth");
  rp->add_option("--out", parse.out, "Results file (default: stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kInvalid;
  }

  try {
    if (*s) return run_synth(synth);
    if (*t) return run_train(train);
    if (*eo) return run_eval_organs(organs);
    if (*ea) return run_eval_abnormality(abn);
    if (*rp) return run_report_parse(parse);
  } catch (const DivergenceError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kDiverged;
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kIo;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kIo;
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kInvalid;
  } catch (const ArgumentError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kInvalid;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kInvalid;
  }
  return kOk;
}
