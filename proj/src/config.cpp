#include "ctglip/config.hpp"

#include <set>

#include "ctglip/common.hpp"
#include "ctglip/volume.hpp"

namespace ctglip::config {
namespace {

using nlohmann::json;

// Reads fields from one JSON object, remembering which keys were consumed so
// leftovers can be rejected.
class Fields {
 public:
  Fields(const json& obj, std::string prefix) : obj_(obj), prefix_(std::move(prefix)) {
    if (!obj_.is_object()) throw ValidationError(where("") + " must be an object");
  }

  template <typename T>
  void read(const char* key, T& dst) {
    used_.insert(key);
    if (!obj_.contains(key)) return;
    try {
      dst = obj_.at(key).get<T>();
    } catch (const json::exception&) {
      throw ValidationError(where(key) + " has the wrong type");
    }
  }

  const json* child(const char* key) {
    used_.insert(key);
    return obj_.contains(key) ? &obj_.at(key) : nullptr;
  }

  std::string where(const std::string& key) const {
    if (prefix_.empty()) return key.empty() ? "config" : key;
    return key.empty() ? prefix_ : prefix_ + "." + key;
  }

  void finish() const {
    for (const auto& [k, _] : obj_.items()) {
      if (!used_.count(k)) throw ValidationError("unknown key " + where(k));
    }
  }

 private:
  const json& obj_;
  std::string prefix_;
  std::set<std::string> used_;
};

}  // namespace

json to_json(const synthdata::CohortSpec& c) {
  json organs = json::array();
  for (const auto& o : c.organs) organs.push_back({{"id", o.id}, {"name", o.name}, {"abnormalities", o.abnormalities}});
  return {{"n_subjects", c.n_subjects},
          {"organs", organs},
          {"abnormality_rate", c.abnormality_rate},
          {"shape", {c.shape.depth, c.shape.height, c.shape.width}},
          {"spacing", c.spacing},
          {"seed", c.master_seed},
          {"identity_margin", c.identity_margin},
          {"radius", {c.min_radius, c.max_radius}}};
}

synthdata::CohortSpec cohort_from_json(const json& j) {
  synthdata::CohortSpec c;
  Fields f(j, "cohort");
  f.read("n_subjects", c.n_subjects);
  f.read("abnormality_rate", c.abnormality_rate);
  f.read("seed", c.master_seed);
  f.read("identity_margin", c.identity_margin);
  f.read("spacing", c.spacing);
  std::vector<int> shape{c.shape.depth, c.shape.height, c.shape.width};
  f.read("shape", shape);
  if (shape.size() != 3) throw ValidationError("cohort.shape needs [depth, height, width]");
  c.shape = Shape{shape[0], shape[1], shape[2]};
  std::vector<double> radius{c.min_radius, c.max_radius};
  f.read("radius", radius);
  if (radius.size() != 2) throw ValidationError("cohort.radius needs [min, max]");
  c.min_radius = radius[0];
  c.max_radius = radius[1];
  if (const json* organs = f.child("organs")) {
    if (!organs->is_array()) throw ValidationError("cohort.organs must be a list");
    for (std::size_t i = 0; i < organs->size(); ++i) {
      Fields of((*organs)[i], "cohort.organs[" + std::to_string(i) + "]");
      synthdata::OrganSpec o;
      of.read("id", o.id);
      of.read("name", o.name);
      of.read("abnormalities", o.abnormalities);
      of.finish();
      c.organs.push_back(std::move(o));
    }
  }
  f.finish();
  c.validate();
  return c;
}

json to_json(const encoders::EncoderConfig& c) {
  return {{"channels", c.channels}, {"kernel", c.kernel}, {"d", c.embed_dim}, {"hidden", c.hidden},
          {"num_classes", c.num_classes}};
}

encoders::EncoderConfig encoder_from_json(const json& j, bool with_classes) {
  encoders::EncoderConfig c;
  Fields f(j, "encoder");
  f.read("channels", c.channels);
  f.read("kernel", c.kernel);
  f.read("d", c.embed_dim);
  f.read("hidden", c.hidden);
  if (with_classes) f.read("num_classes", c.num_classes);
  f.finish();
  c.validate();
  return c;
}

json to_json(const trainer::TrainConfig& c) {
  return {{"batch_size", c.batch_size},
          {"epochs", c.epochs},
          {"lr_init", c.lr_init},
          {"lr_final", c.lr_final},
          {"weight_decay", c.weight_decay},
          {"beta1", c.beta1},
          {"beta2", c.beta2},
          {"adam_eps", c.adam_eps},
          {"seed", c.seed},
          {"enable_ot", c.enable_ot},
          {"enable_at", c.enable_at},
          {"enable_dict", c.enable_dict},
          {"enable_segm", c.enable_segm},
          {"vanilla_clip", c.vanilla_clip},
          {"negatives_per_organ", c.negatives_per_organ},
          {"max_negatives", c.max_negatives},
          {"checkpoint_every", c.checkpoint_every}};
}

trainer::TrainConfig train_from_json(const json& j) {
  trainer::TrainConfig c;
  Fields f(j, "train");
  f.read("batch_size", c.batch_size);
  f.read("epochs", c.epochs);
  f.read("lr_init", c.lr_init);
  f.read("lr_final", c.lr_final);
  f.read("weight_decay", c.weight_decay);
  f.read("beta1", c.beta1);
  f.read("beta2", c.beta2);
  f.read("adam_eps", c.adam_eps);
  f.read("seed", c.seed);
  f.read("enable_ot", c.enable_ot);
  f.read("enable_at", c.enable_at);
  f.read("enable_dict", c.enable_dict);
  f.read("enable_segm", c.enable_segm);
  f.read("vanilla_clip", c.vanilla_clip);
  f.read("negatives_per_organ", c.negatives_per_organ);
  f.read("max_negatives", c.max_negatives);
  f.read("checkpoint_every", c.checkpoint_every);
  f.finish();
  c.validate();
  return c;
}

json to_json(const losses::LossConfig& c) {
  return {{"tau", c.tau},
          {"lambda_ot", c.lambda_ot},
          {"lambda_at", c.lambda_at},
          {"lambda_segm", c.lambda_segm},
          {"dice_epsilon", c.dice_epsilon},
          {"ce_weight", c.ce_weight},
          {"dice_weight", c.dice_weight}};
}

losses::LossConfig loss_from_json(const json& j) {
  losses::LossConfig c;
  Fields f(j, "loss");
  f.read("tau", c.tau);
  f.read("lambda_ot", c.lambda_ot);
  f.read("lambda_at", c.lambda_at);
  f.read("lambda_segm", c.lambda_segm);
  f.read("dice_epsilon", c.dice_epsilon);
  f.read("ce_weight", c.ce_weight);
  f.read("dice_weight", c.dice_weight);
  f.finish();
  c.validate();
  return c;
}

RunConfig parse_run_config(const std::string& text, const std::filesystem::path& base_dir) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ValidationError(std::string("config: parse error at byte ") + std::to_string(e.byte));
  }
  RunConfig rc;
  Fields f(doc, "");
  if (const json* c = f.child("cohort")) rc.cohort = cohort_from_json(*c);
  if (const json* c = f.child("encoder")) rc.encoder = encoder_from_json(*c);
  if (const json* c = f.child("train")) rc.train = train_from_json(*c);
  if (const json* c = f.child("loss")) rc.loss = loss_from_json(*c);
  if (const json* c = f.child("text_encoder")) {
    Fields tf(*c, "text_encoder");
    tf.read("kind", rc.text.kind);
    tf.read("seed", rc.text.seed);
    std::string p;
    tf.read("path", p);
    tf.finish();
    if (rc.text.kind != "stub" && rc.text.kind != "precomputed") {
      throw ValidationError("text_encoder.kind must be \"stub\" or \"precomputed\"");
    }
    if (rc.text.kind == "precomputed") {
      if (p.empty()) throw ValidationError("text_encoder.path is required for precomputed embeddings");
      rc.text.path = base_dir / p;
    }
  }
  if (const json* c = f.child("paths")) {
    Fields pf(*c, "paths");
    std::string lex, dict, probes;
    pf.read("lexicon", lex);
    pf.read("dictionary", dict);
    pf.read("probes", probes);
    pf.finish();
    if (!lex.empty()) rc.lexicon = base_dir / lex;
    if (!dict.empty()) rc.dictionary = base_dir / dict;
    if (!probes.empty()) rc.probes = base_dir / probes;
  }
  f.finish();
  return rc;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  return parse_run_config(read_file(path), path.parent_path());
}

reportproc::OrganLexicon RunConfig::load_lexicon() const {
  if (lexicon) return reportproc::load_lexicon(*lexicon);
  return cohort.lexicon();
}

abnodict::AbnormalityDictionary RunConfig::load_dictionary(const reportproc::OrganLexicon& lex) const {
  if (dictionary) return abnodict::load_dictionary(*dictionary, lex);
  return {};
}

std::unique_ptr<encoders::TextEncoder> RunConfig::make_text_encoder() const {
  if (text.kind == "precomputed") {
    auto enc = std::make_unique<encoders::PrecomputedTextEncoder>(text.path);
    if (enc->dim() != encoder.embed_dim) {
      throw ValidationError("text_encoder: embedding dimension does not match encoder.d");
    }
    return enc;
  }
  return std::make_unique<encoders::StubTextEncoder>(encoder.embed_dim, text.seed);
}

}  // namespace ctglip::config
