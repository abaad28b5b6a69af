#include "factprobe/dataset.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <set>
#include <tuple>

#include <json.hpp>

#include "factprobe/common.hpp"

namespace factprobe {

namespace {

std::size_t count_occurrences(std::string_view haystack, std::string_view needle) {
  std::size_t n = 0;
  for (auto pos = haystack.find(needle); pos != std::string_view::npos;
       pos = haystack.find(needle, pos + needle.size())) {
    ++n;
  }
  return n;
}

void replace_once(std::string& s, std::string_view slot, std::string_view value) {
  const auto pos = s.find(slot);
  s.replace(pos, slot.size(), value);
}

std::string require_string(const nlohmann::json& rec, const char* field, std::size_t line,
                           const std::filesystem::path& path) {
  auto it = rec.find(field);
  if (it == rec.end() || !it->is_string()) {
    throw ValidationError(path.string() + ":" + std::to_string(line) + ": missing string field '" +
                          field + "'");
  }
  return it->get<std::string>();
}

}  // namespace

std::string trim(std::string_view s) {
  auto is_space = [](unsigned char c) { return std::isspace(c) != 0; };
  while (!s.empty() && is_space(s.front())) s.remove_prefix(1);
  while (!s.empty() && is_space(s.back())) s.remove_suffix(1);
  return std::string(s);
}

PromptTemplate::PromptTemplate(std::string relation_id, std::string pattern)
    : relation_id_(std::move(relation_id)), pattern_(std::move(pattern)) {
  if (count_occurrences(pattern_, kSubjectSlot) != 1 ||
      count_occurrences(pattern_, kObjectSlot) != 1) {
    throw ValidationError("template for " + relation_id_ +
                          " must contain [X] and [Y] exactly once: \"" + pattern_ + "\"");
  }
}

std::pair<std::string, std::string> PromptTemplate::object_context(
    std::string_view subject) const {
  std::string filled = pattern_;
  replace_once(filled, kSubjectSlot, subject);
  // The subject itself may contain "[Y]"; locate the slot in the raw pattern.
  const auto x_pos = pattern_.find(kSubjectSlot);
  auto y_pos = pattern_.find(kObjectSlot);
  if (y_pos > x_pos) y_pos = y_pos - kSubjectSlot.size() + subject.size();
  return {filled.substr(0, y_pos), filled.substr(y_pos + kObjectSlot.size())};
}

std::string fill_prompt(const PromptTemplate& tmpl, std::string_view subject,
                        std::optional<std::string_view> object, std::string_view mask_token) {
  if (mask_token.empty()) throw ValidationError("mask token must be non-empty");
  auto [prefix, suffix] = tmpl.object_context(subject);
  std::string out = std::move(prefix);
  out += object ? *object : mask_token;
  out += suffix;
  return out;
}

const PromptTemplate& Dataset::template_for(const Triple& t) const {
  auto it = templates.find(t.relation_id);
  if (it == templates.end()) {
    throw ValidationError("no template for relation " + t.relation_id);
  }
  return it->second;
}

TemplateTable load_templates(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open template file " + path.string());
  TemplateTable table;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    nlohmann::json rec;
    try {
      rec = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw ValidationError(path.string() + ":" + std::to_string(lineno) +
                            ": malformed record: " + e.what());
    }
    auto id = trim(require_string(rec, "predicate_id", lineno, path));
    auto pattern = require_string(rec, "template", lineno, path);
    if (table.contains(id)) {
      throw ValidationError(path.string() + ":" + std::to_string(lineno) +
                            ": duplicate template for " + id);
    }
    table.emplace(id, PromptTemplate(id, std::move(pattern)));
  }
  return table;
}

Dataset load_dataset(const std::filesystem::path& path, const TemplateTable& templates,
                     const LoadOptions& options, LoadStats* stats) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open dataset file " + path.string());

  Dataset ds;
  ds.name = path.stem().string();
  LoadStats local;
  std::set<std::tuple<std::string, std::string, std::string>> seen;
  std::set<std::string> used_relations;

  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    ++local.lines_read;
    nlohmann::json rec;
    try {
      rec = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw ValidationError(path.string() + ":" + std::to_string(lineno) +
                            ": malformed record: " + e.what());
    }
    if (!rec.is_object()) {
      throw ValidationError(path.string() + ":" + std::to_string(lineno) + ": not an object");
    }
    Triple t{trim(require_string(rec, "sub_label", lineno, path)),
             trim(require_string(rec, "predicate_id", lineno, path)),
             trim(require_string(rec, "obj_label", lineno, path))};
    if (t.subject.empty() || t.object.empty()) {
      throw ValidationError(path.string() + ":" + std::to_string(lineno) +
                            ": empty subject or object");
    }
    if (options.lowercase_objects) {
      std::transform(t.object.begin(), t.object.end(), t.object.begin(),
                     [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    }
    if (options.require_templates && !templates.contains(t.relation_id)) {
      if (options.strict) {
        throw ValidationError(path.string() + ":" + std::to_string(lineno) +
                              ": no template for relation " + t.relation_id);
      }
      ++local.missing_template;
      continue;
    }
    if (!seen.emplace(t.subject, t.relation_id, t.object).second) {
      ++local.duplicates_removed;
      continue;
    }
    used_relations.insert(t.relation_id);
    ds.triples.push_back(std::move(t));
  }
  for (const auto& rel : used_relations) {
    if (auto it = templates.find(rel); it != templates.end()) ds.templates.emplace(rel, it->second);
  }
  if (stats) *stats = local;
  return ds;
}

void write_dataset(const Dataset& dataset, const std::filesystem::path& triples_path) {
  std::ofstream out(triples_path, std::ios::binary);
  if (!out) throw ValidationError("cannot write " + triples_path.string());
  for (const auto& t : dataset.triples) {
    nlohmann::ordered_json rec;
    rec["sub_label"] = t.subject;
    rec["obj_label"] = t.object;
    rec["predicate_id"] = t.relation_id;
    out << rec.dump() << '\n';
  }
}

void write_templates(const TemplateTable& templates, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot write " + path.string());
  for (const auto& [id, tmpl] : templates) {
    nlohmann::ordered_json rec;
    rec["predicate_id"] = id;
    rec["template"] = tmpl.pattern();
    out << rec.dump() << '\n';
  }
}

Dataset filter_single_token(const Dataset& dataset, const TokenCounter& counter) {
  Dataset out;
  out.name = dataset.name;
  out.templates = dataset.templates;
  std::copy_if(dataset.triples.begin(), dataset.triples.end(), std::back_inserter(out.triples),
               [&](const Triple& t) { return counter.token_count(t.object) == 1; });
  return out;
}

FreqDist object_frequency(const Dataset& dataset) {
  FreqDist fd;
  for (const auto& t : dataset.triples) {
    auto it = fd.counts.find(t.object);
    if (it == fd.counts.end()) {
      fd.counts.emplace(t.object, 1);
    } else {
      ++it->second;
    }
  }
  fd.total = dataset.triples.size();
  return fd;
}

std::map<std::string, std::vector<std::string>> objects_by_relation(const Dataset& dataset) {
  std::map<std::string, std::set<std::string>> sets;
  for (const auto& t : dataset.triples) sets[t.relation_id].insert(t.object);
  std::map<std::string, std::vector<std::string>> out;
  for (auto& [rel, objs] : sets) out[rel] = {objs.begin(), objs.end()};
  return out;
}

}  // namespace factprobe
