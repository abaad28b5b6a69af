#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace factprobe {

inline constexpr std::string_view kSubjectSlot = "[X]";
inline constexpr std::string_view kObjectSlot = "[Y]";
inline constexpr std::string_view kNeutralMask = "[MASK]";
inline constexpr std::string_view kAblatedSubject = "NA";

struct Triple {
  std::string subject;
  std::string relation_id;
  std::string object;

  friend bool operator==(const Triple&, const Triple&) = default;
  friend auto operator<=>(const Triple&, const Triple&) = default;
};

/// Cloze pattern with exactly one `[X]` and one `[Y]` slot.
class PromptTemplate {
 public:
  /// Throws ValidationError unless both slots occur exactly once.
  PromptTemplate(std::string relation_id, std::string pattern);

  const std::string& relation_id() const { return relation_id_; }
  const std::string& pattern() const { return pattern_; }

  /// Text before and after the object slot once the subject is substituted.
  /// fill(s, o) == prefix(s) + o + suffix(s).
  std::pair<std::string, std::string> object_context(std::string_view subject) const;

 private:
  std::string relation_id_;
  std::string pattern_;
};

using TemplateTable = std::map<std::string, PromptTemplate, std::less<>>;

/// Substitutes the subject into `[X]` and the object (or mask token when no
/// object is given) into `[Y]`.
std::string fill_prompt(const PromptTemplate& tmpl, std::string_view subject,
                        std::optional<std::string_view> object,
                        std::string_view mask_token = kNeutralMask);

struct Dataset {
  std::string name;
  std::vector<Triple> triples;
  TemplateTable templates;

  bool empty() const { return triples.empty(); }
  std::size_t size() const { return triples.size(); }
  const PromptTemplate& template_for(const Triple& t) const;
};

struct LoadOptions {
  /// Unknown predicate ids become a hard error instead of a skipped record.
  bool strict = false;
  /// Lower-cases objects on load. Off by default; comparisons are exact.
  bool lowercase_objects = false;
  /// When false, records are kept whatever their relation (frequency-only use).
  bool require_templates = true;
};

struct LoadStats {
  std::size_t lines_read = 0;
  std::size_t duplicates_removed = 0;
  std::size_t missing_template = 0;
};

/// Reads a template table: one JSON record per line with fields
/// `predicate_id` and `template`.
TemplateTable load_templates(const std::filesystem::path& path);

/// Reads a triples-jsonl file (fields sub_label, obj_label, predicate_id).
/// Duplicate tuples are dropped, first occurrence wins. Errors carry the
/// 1-based line number.
Dataset load_dataset(const std::filesystem::path& path, const TemplateTable& templates,
                     const LoadOptions& options = {}, LoadStats* stats = nullptr);

void write_dataset(const Dataset& dataset, const std::filesystem::path& triples_path);
void write_templates(const TemplateTable& templates, const std::filesystem::path& path);

/// Token counting oracle used by filter_single_token.
class TokenCounter {
 public:
  virtual ~TokenCounter() = default;
  virtual std::size_t token_count(std::string_view object) const = 0;
};

/// Keeps triples whose object is a single token. Order is preserved.
Dataset filter_single_token(const Dataset& dataset, const TokenCounter& counter);

struct FreqDist {
  std::map<std::string, std::size_t, std::less<>> counts;
  std::size_t total = 0;
};

FreqDist object_frequency(const Dataset& dataset);

/// Distinct objects per relation, sorted lexicographically.
std::map<std::string, std::vector<std::string>> objects_by_relation(const Dataset& dataset);

}  // namespace factprobe
