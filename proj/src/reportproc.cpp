#include "ctglip/reportproc.hpp"

#include <algorithm>
#include <cctype>
#include <set>

#include <json.hpp>

#include "ctglip/common.hpp"
#include "ctglip/volume.hpp"

namespace ctglip::reportproc {
namespace {

using nlohmann::json;

std::vector<std::string> words(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isalnum(c)) {
      cur.push_back(static_cast<char>(std::tolower(c)));
    } else if (!cur.empty()) {
      out.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

std::string lower(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

std::string trim(std::string_view s) {
  std::size_t b = 0;
  std::size_t e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

bool matches_at(const std::vector<std::string>& hay, std::size_t pos,
                const std::vector<std::string>& needle) {
  if (needle.empty() || pos + needle.size() > hay.size()) return false;
  return std::equal(needle.begin(), needle.end(), hay.begin() + static_cast<std::ptrdiff_t>(pos));
}

bool contains_phrase(const std::vector<std::string>& hay, const std::vector<std::string>& needle) {
  for (std::size_t i = 0; i < hay.size(); ++i) {
    if (matches_at(hay, i, needle)) return true;
  }
  return false;
}

struct Span {
  std::size_t begin;
  std::size_t end;
  int organ;
};

// Organs mentioned in a tokenized sentence. Matches nested inside a longer
// match (e.g. "kidney" inside "left kidney") are discarded.
std::set<int> mentioned_organs(const std::vector<std::string>& tokens,
                               const std::vector<std::pair<std::vector<std::string>, int>>& phrases) {
  std::vector<Span> spans;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    for (const auto& [phrase, organ] : phrases) {
      if (matches_at(tokens, i, phrase)) spans.push_back({i, i + phrase.size(), organ});
    }
  }
  std::set<int> organs;
  for (const auto& s : spans) {
    const bool nested = std::any_of(spans.begin(), spans.end(), [&](const Span& o) {
      return o.begin <= s.begin && s.end <= o.end && (o.end - o.begin) > (s.end - s.begin);
    });
    if (!nested) organs.insert(s.organ);
  }
  return organs;
}

}  // namespace

OrganLexicon::OrganLexicon(std::map<int, LexiconEntry> entries) : entries_(std::move(entries)) {
  std::map<std::string, int> owner;
  std::set<std::string> names;
  for (const auto& [id, e] : entries_) {
    if (id <= 0 || id > 65535) {
      throw ValidationError("lexicon: organ id " + std::to_string(id) + " outside 1..65535");
    }
    if (trim(e.name).empty()) throw ValidationError("lexicon: organ " + std::to_string(id) + " has an empty name");
    if (!names.insert(lower(e.name)).second) {
      throw ValidationError("lexicon: duplicate canonical name '" + e.name + "'");
    }
    std::set<std::string> own{lower(e.name)};
    for (const auto& s : e.synonyms) {
      if (words(s).empty()) {
        throw ValidationError("lexicon: organ " + std::to_string(id) + " has an empty synonym");
      }
      own.insert(lower(s));
    }
    for (const auto& s : own) {
      const auto key = lower(s);
      auto [it, inserted] = owner.emplace(key, id);
      if (!inserted && it->second != id) {
        throw ValidationError("lexicon: synonym '" + s + "' shared by organs " +
                              std::to_string(it->second) + " and " + std::to_string(id));
      }
    }
  }
}

const std::string& OrganLexicon::name(int id) const {
  const auto it = entries_.find(id);
  if (it == entries_.end()) throw ValidationError("organ id " + std::to_string(id) + " not in lexicon");
  return it->second.name;
}

std::optional<int> OrganLexicon::find(std::string_view name_or_synonym) const {
  const auto key = words(name_or_synonym);
  for (const auto& [id, e] : entries_) {
    if (words(e.name) == key) return id;
    for (const auto& s : e.synonyms) {
      if (words(s) == key) return id;
    }
  }
  return std::nullopt;
}

OrganLexicon lexicon_from_json(const std::string& text) {
  std::map<int, LexiconEntry> entries;
  try {
    const auto doc = json::parse(text);
    if (!doc.is_object()) throw ValidationError("lexicon: expected an object keyed by organ id");
    for (const auto& [key, val] : doc.items()) {
      std::size_t used = 0;
      const int id = std::stoi(key, &used);
      if (used != key.size()) throw ValidationError("lexicon: key '" + key + "' is not an integer id");
      LexiconEntry e;
      e.name = val.at("name").get<std::string>();
      if (val.contains("synonyms")) e.synonyms = val.at("synonyms").get<std::vector<std::string>>();
      entries.emplace(id, std::move(e));
    }
  } catch (const json::exception& e) {
    throw ValidationError(std::string("lexicon: ") + e.what());
  } catch (const std::invalid_argument&) {
    throw ValidationError("lexicon: organ ids must be integers");
  }
  return OrganLexicon(std::move(entries));
}

OrganLexicon load_lexicon(const std::filesystem::path& path) {
  try {
    return lexicon_from_json(read_file(path));
  } catch (const ValidationError& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

std::string lexicon_to_json(const OrganLexicon& lexicon) {
  json doc = json::object();
  for (const auto& [id, e] : lexicon.entries()) {
    doc[std::to_string(id)] = {{"name", e.name}, {"synonyms", e.synonyms}};
  }
  return doc.dump(2) + "\n";
}

std::vector<std::string> split_sentences(std::string_view report) {
  std::vector<std::string> out;
  auto flush = [&](std::string_view piece) {
    auto t = trim(piece);
    if (!t.empty()) out.push_back(std::move(t));
  };
  std::size_t start = 0;
  for (std::size_t i = 0; i < report.size(); ++i) {
    if (report[i] == '\n') {
      flush(report.substr(start, i - start));
      start = i + 1;
    } else if (report[i] == '.' && i + 1 < report.size() && report[i + 1] == ' ') {
      flush(report.substr(start, i + 1 - start));
      start = i + 2;
      ++i;
    }
  }
  if (start < report.size()) flush(report.substr(start));
  return out;
}

ParseResult parse_report(std::string_view report, const OrganLexicon& lexicon,
                         const ParseOptions& options) {
  if (lexicon.empty()) throw ArgumentError("parse_report: lexicon is empty");

  std::vector<std::pair<std::vector<std::string>, int>> phrases;
  for (const auto& [id, e] : lexicon.entries()) {
    phrases.emplace_back(words(e.name), id);
    for (const auto& s : e.synonyms) phrases.emplace_back(words(s), id);
  }
  std::vector<std::vector<std::string>> negations;
  for (const auto& p : options.negation_patterns) negations.push_back(words(p));

  ParseResult result;
  for (auto& sentence : split_sentences(report)) {
    const auto tokens = words(sentence);
    const auto organs = mentioned_organs(tokens, phrases);
    if (organs.size() != 1) {
      result.unassigned.push_back(std::move(sentence));
      continue;
    }
    const bool negated = std::any_of(negations.begin(), negations.end(),
                                     [&](const auto& n) { return contains_phrase(tokens, n); });
    result.descriptions.push_back(OrganDescription{
        *organs.begin(), negated ? Polarity::normal : Polarity::abnormal, std::move(sentence),
        Source::parsed});
  }
  return result;
}

std::string organ_template(std::string_view name) {
  if (name.empty()) throw ArgumentError("organ_template: empty organ name");
  return "this is a " + std::string(name) + " in the CT scan";
}

std::string normal_template(std::string_view name) {
  if (name.empty()) throw ArgumentError("normal_template: empty organ name");
  return "no evident abnormality in " + std::string(name);
}

std::string to_string(Polarity p) { return p == Polarity::normal ? "normal" : "abnormal"; }

std::string to_string(Source s) {
  switch (s) {
    case Source::parsed:
      return "parsed";
    case Source::template_text:
      return "template";
    case Source::dictionary:
      return "dictionary";
  }
  return "parsed";
}

std::string parse_result_to_json(const ParseResult& r, const OrganLexicon& lexicon) {
  json doc;
  doc["descriptions"] = json::array();
  for (const auto& d : r.descriptions) {
    doc["descriptions"].push_back({{"organ_id", d.organ_id},
                                   {"organ", lexicon.name(d.organ_id)},
                                   {"polarity", to_string(d.polarity)},
                                   {"text", d.text}});
  }
  doc["unassigned"] = r.unassigned;
  return doc.dump();
}

}  // namespace ctglip::reportproc
