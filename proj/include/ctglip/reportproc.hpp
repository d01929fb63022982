#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace ctglip::reportproc {

struct LexiconEntry {
  std::string name;
  std::vector<std::string> synonyms;
};

/// Organ vocabulary: id -> canonical name and synonyms. The canonical name always
/// counts as a synonym when matching.
class OrganLexicon {
 public:
  OrganLexicon() = default;
  /// Validates: ids positive, canonical names unique, synonyms non-empty and
  /// not shared between organs.
  explicit OrganLexicon(std::map<int, LexiconEntry> entries);

  const std::map<int, LexiconEntry>& entries() const { return entries_; }
  bool empty() const { return entries_.empty(); }
  std::size_t size() const { return entries_.size(); }
  bool contains(int id) const { return entries_.count(id) != 0; }
  const std::string& name(int id) const;
  /// Resolves a canonical name or synonym (case-insensitive) to an organ id.
  std::optional<int> find(std::string_view name_or_synonym) const;
  int max_id() const { return entries_.empty() ? 0 : entries_.rbegin()->first; }

 private:
  std::map<int, LexiconEntry> entries_;
};

/// Reads {"<id>": {"name": ..., "synonyms": [...]}}.
OrganLexicon load_lexicon(const std::filesystem::path& path);
OrganLexicon lexicon_from_json(const std::string& text);
std::string lexicon_to_json(const OrganLexicon& lexicon);

enum class Polarity { normal, abnormal };
enum class Source { parsed, template_text, dictionary };

struct OrganDescription {
  int organ_id = 0;
  Polarity polarity = Polarity::normal;
  std::string text;
  Source source = Source::parsed;

  bool operator==(const OrganDescription&) const = default;
};

struct ParseResult {
  std::vector<OrganDescription> descriptions;
  /// Sentences that mention no organ or more than one organ.
  std::vector<std::string> unassigned;
};

struct ParseOptions {
  std::vector<std::string> negation_patterns{"no evident", "unremarkable", "normal"};
};

/// Splits on ". " and newlines, assigns each sentence to the single organ it
/// mentions and marks it normal iff it contains a negation pattern (whole words).
ParseResult parse_report(std::string_view report, const OrganLexicon& lexicon,
                         const ParseOptions& options = {});

std::vector<std::string> split_sentences(std::string_view report);

/// "this is a {name} in the CT scan"
std::string organ_template(std::string_view name);
/// "no evident abnormality in {name}"
std::string normal_template(std::string_view name);

std::string to_string(Polarity p);
std::string to_string(Source s);
std::string parse_result_to_json(const ParseResult& r, const OrganLexicon& lexicon);

}  // namespace ctglip::reportproc
