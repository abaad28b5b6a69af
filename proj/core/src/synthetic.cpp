#include "factprobe/synthetic.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numbers>
#include <random>
#include <set>

namespace factprobe {

namespace {

constexpr std::uint64_t kDirectionSalt = 0x6469726563743a75ULL;
constexpr std::uint64_t kNoiseSalt = 0x6e6f6973653a6570ULL;
constexpr std::uint64_t kLogitSalt = 0x6c6f6769743a7a7aULL;
constexpr std::uint64_t kRankSalt = 0x72616e6b3a676f6cULL;

double unit_open(std::uint64_t bits) {
  // (0, 1]: never zero so log() below stays finite.
  return static_cast<double>((bits >> 11) + 1) * 0x1.0p-53;
}

double box_muller(std::uint64_t a, std::uint64_t b) {
  const double u1 = unit_open(a);
  const double u2 = unit_open(b);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

/// Pseudo-normal stream. mt19937_64 output is fixed by the standard, so the
/// sequence is identical across standard libraries.
class NormalStream {
 public:
  explicit NormalStream(std::uint64_t seed) : engine_(seed) {}
  double next() { return box_muller(engine_(), engine_()); }

 private:
  std::mt19937_64 engine_;
};

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::uint64_t hash_combine(std::uint64_t h, std::string_view s) {
  h = fnv1a64(s, h);
  return fnv1a64(std::string_view("\x1f", 1), h);
}

std::uint64_t hash_combine(std::uint64_t h, std::uint64_t v) {
  return mix64(h ^ mix64(v));
}

}  // namespace

void SyntheticSpec::validate() const {
  if (hidden_dim == 0) throw ValidationError("synthetic hidden_dim must be positive");
  if (!std::isfinite(margin) || margin <= 0.0) {
    throw ValidationError("synthetic margin must be positive and finite");
  }
  if (!std::isfinite(noise_sigma) || noise_sigma < 0.0) {
    throw ValidationError("synthetic noise_sigma must be non-negative and finite");
  }
  if (vocab.empty()) throw ValidationError("synthetic vocab is empty");
  std::set<std::string_view> vocab_set(vocab.begin(), vocab.end());
  if (vocab_set.size() != vocab.size()) throw ValidationError("synthetic vocab has duplicates");
  for (const auto& [key, entry] : gold_rank_table) {
    if (entry.rank < 1 || entry.rank > vocab.size()) {
      throw ValidationError("gold rank " + std::to_string(entry.rank) + " for (" + key.first +
                            ", " + key.second + ") outside 1.." + std::to_string(vocab.size()));
    }
    if (!vocab_set.contains(entry.object)) {
      throw ValidationError("gold object '" + entry.object + "' is not in the vocabulary");
    }
  }
}

SyntheticBackend::SyntheticBackend(SyntheticSpec spec, TemplateTable templates)
    : spec_(std::move(spec)), templates_(std::move(templates)) {
  spec_.validate();

  std::uint64_t id = hash_combine(0x73796e7468657469ULL, spec_.seed);
  id = hash_combine(id, static_cast<std::uint64_t>(spec_.hidden_dim));
  id = hash_combine(id, std::bit_cast<std::uint64_t>(spec_.margin));
  id = hash_combine(id, std::bit_cast<std::uint64_t>(spec_.noise_sigma));
  for (const auto& [key, entry] : spec_.gold_rank_table) {
    id = hash_combine(id, key.first);
    id = hash_combine(id, key.second);
    id = hash_combine(id, entry.object);
    id = hash_combine(id, static_cast<std::uint64_t>(entry.rank));
  }
  for (const auto& v : spec_.vocab) id = hash_combine(id, v);
  for (const auto& [rel, tmpl] : templates_) {
    id = hash_combine(id, rel);
    id = hash_combine(id, tmpl.pattern());
  }
  meta_.backend_id = "synthetic-v1/" + hex64(id) + "/final-token=last-content";
  meta_.hidden_dim = spec_.hidden_dim;
  meta_.single_token_only = true;
  meta_.supports_candidate_scoring = true;

  NormalStream dir(mix64(spec_.seed ^ kDirectionSalt));
  direction_.resize(spec_.hidden_dim);
  double norm = 0.0;
  for (auto& x : direction_) {
    x = dir.next();
    norm += x * x;
  }
  norm = std::sqrt(norm);
  for (auto& x : direction_) x /= norm;

  planted_.reserve(spec_.gold_rank_table.size());
  for (const auto& [key, entry] : spec_.gold_rank_table) {
    auto it = templates_.find(key.second);
    if (it == templates_.end()) {
      throw ValidationError("synthetic backend has no template for relation " + key.second);
    }
    const auto query = fill_prompt(it->second, key.first, std::nullopt);
    auto [prefix, suffix] = it->second.object_context(key.first);
    const auto qh = text_hash(query);
    Planted p{entry.object, entry.rank, std::move(prefix), std::move(suffix), qh,
              place_gold(qh, entry.object, entry.rank)};
    const std::size_t idx = planted_.size();
    if (!query_index_.emplace(query, idx).second) {
      throw ValidationError("two planted facts share the query prompt \"" + query + "\"");
    }
    auto gold_statement = p.prefix + p.gold + p.suffix;
    gold_hashes_.insert(text_hash(gold_statement));
    gold_statement_index_.emplace(std::move(gold_statement), idx);
    if (p.prefix.empty()) {
      by_suffix_.emplace(p.suffix, idx);
    } else {
      by_prefix_.emplace(p.prefix, idx);
    }
    planted_.push_back(std::move(p));
  }
}

double SyntheticBackend::raw_logit(std::uint64_t prompt_hash, std::string_view object) const {
  const std::uint64_t h = hash_combine(mix64(spec_.seed ^ kLogitSalt) ^ prompt_hash, object);
  return box_muller(mix64(h), mix64(h ^ 0xa5a5a5a5a5a5a5a5ULL));
}

double SyntheticBackend::place_gold(std::uint64_t query_hash, const std::string& gold,
                                    std::size_t rank) const {
  std::vector<double> others;
  others.reserve(spec_.vocab.size());
  for (const auto& v : spec_.vocab) {
    if (v != gold) others.push_back(raw_logit(query_hash, v));
  }
  std::sort(others.begin(), others.end(), std::greater<>());
  if (others.empty()) return 0.0;
  if (rank == 1) return others.front() + 1.0;
  if (rank - 1 >= others.size()) return others.back() - 1.0;
  return 0.5 * (others[rank - 2] + others[rank - 1]);
}

const SyntheticBackend::Planted* SyntheticBackend::find_query(std::string_view prompt) const {
  auto it = query_index_.find(std::string(prompt));
  return it == query_index_.end() ? nullptr : &planted_[it->second];
}

double SyntheticBackend::planted_logit(std::string_view prompt, std::string_view object) const {
  if (const Planted* p = find_query(prompt); p != nullptr && p->gold == object) {
    return p->gold_logit;
  }
  return raw_logit(text_hash(prompt), object);
}

TopK SyntheticBackend::topk(std::string_view prompt, std::size_t k,
                            const CandidateSet* candidates) const {
  if (k == 0) throw ValidationError("topk requires k >= 1");
  const std::vector<std::string>& pool = candidates ? candidates->objects : spec_.vocab;
  if (candidates) candidates->validate();

  const Planted* planted = find_query(prompt);
  const std::uint64_t ph = text_hash(prompt);
  std::vector<Candidate> scored;
  scored.reserve(pool.size());
  double max_logit = -std::numeric_limits<double>::infinity();
  for (const auto& o : pool) {
    const double z = (planted && planted->gold == o) ? planted->gold_logit : raw_logit(ph, o);
    max_logit = std::max(max_logit, z);
    scored.push_back({o, 0, z});
  }
  double sum = 0.0;
  for (const auto& c : scored) sum += std::exp(c.log_score - max_logit);
  const double lse = max_logit + std::log(sum);
  for (auto& c : scored) c.log_score -= lse;

  rank_candidates(scored);
  TopK out;
  out.truncated = k > scored.size();
  scored.resize(std::min(k, scored.size()));
  out.candidates = std::move(scored);
  return out;
}

int SyntheticBackend::statement_polarity(std::string_view text) const {
  if (gold_statement_index_.contains(std::string(text))) return +1;
  auto matches = [&](const Planted& p) {
    if (text.size() <= p.prefix.size() + p.suffix.size()) return false;
    if (!text.starts_with(p.prefix) || !text.ends_with(p.suffix)) return false;
    const auto middle = text.substr(p.prefix.size(), text.size() - p.prefix.size() - p.suffix.size());
    return middle != kNeutralMask;
  };
  for (std::size_t i = 1; i <= text.size(); ++i) {
    auto [lo, hi] = by_prefix_.equal_range(std::string(text.substr(0, i)));
    for (auto it = lo; it != hi; ++it) {
      if (matches(planted_[it->second])) return -1;
    }
  }
  if (!by_suffix_.empty()) {
    for (std::size_t j = 0; j < text.size(); ++j) {
      auto [lo, hi] = by_suffix_.equal_range(std::string(text.substr(j)));
      for (auto it = lo; it != hi; ++it) {
        if (matches(planted_[it->second])) return -1;
      }
    }
  }
  return 0;
}

HVector SyntheticBackend::hidden(std::string_view text) const {
  if (text.empty()) throw ValidationError("hidden() requires non-empty text");
  const int polarity = statement_polarity(text);
  HVector h;
  h.source_text_hash = text_hash(text);
  h.values.resize(spec_.hidden_dim);
  NormalStream noise(mix64(spec_.seed ^ kNoiseSalt) ^ h.source_text_hash);
  for (std::size_t i = 0; i < spec_.hidden_dim; ++i) {
    const double signal = polarity * spec_.margin * direction_[i];
    const double eps = spec_.noise_sigma > 0.0 ? spec_.noise_sigma * noise.next() : 0.0;
    h.values[i] = static_cast<float>(signal + eps);
  }
  return h;
}

bool SyntheticBackend::is_gold_statement(std::uint64_t hash) const {
  return gold_hashes_.contains(hash);
}

std::size_t SyntheticBackend::WordCounter::token_count(std::string_view object) const {
  std::size_t n = 0;
  bool in_word = false;
  for (char c : object) {
    const bool space = c == ' ' || c == '\t' || c == '\n';
    if (!space && !in_word) ++n;
    in_word = !space;
  }
  return n;
}

GoldRankTable draw_gold_ranks(std::span<const Dataset* const> datasets, std::uint64_t seed,
                              double top1_rate, double tail_p, std::size_t max_rank) {
  if (!(top1_rate >= 0.0 && top1_rate <= 1.0) || !(tail_p > 0.0 && tail_p <= 1.0)) {
    throw ValidationError("gold rank distribution parameters out of range");
  }
  if (max_rank < 1) throw ValidationError("max_rank must be >= 1");
  GoldRankTable table;
  for (const Dataset* ds : datasets) {
    for (const auto& t : ds->triples) {
      auto key = std::make_pair(t.subject, t.relation_id);
      if (table.contains(key)) continue;
      const std::uint64_t h = hash_combine(hash_combine(mix64(seed ^ kRankSalt), t.subject),
                                           t.relation_id);
      std::size_t rank = 1;
      if (unit_open(mix64(h)) > top1_rate) {
        const double u = unit_open(mix64(h ^ 0x5bd1e995ULL));
        const double extra = tail_p >= 1.0 ? 0.0 : std::floor(std::log(u) / std::log1p(-tail_p));
        rank = 2 + static_cast<std::size_t>(std::min(extra, static_cast<double>(max_rank)));
      }
      table.emplace(std::move(key), GoldEntry{t.object, std::min(rank, max_rank)});
    }
  }
  return table;
}

std::vector<std::string> build_vocab(std::span<const Dataset* const> datasets,
                                     std::size_t vocab_size) {
  std::set<std::string> objects;
  for (const Dataset* ds : datasets) {
    for (const auto& t : ds->triples) objects.insert(t.object);
  }
  std::vector<std::string> vocab(objects.begin(), objects.end());
  for (std::size_t i = 0; vocab.size() < vocab_size; ++i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "filler-%04zu", i);
    if (!objects.contains(buf)) vocab.emplace_back(buf);
  }
  return vocab;
}

TemplateTable synthetic_templates() {
  TemplateTable t;
  auto add = [&](const char* id, const char* pattern) { t.emplace(id, PromptTemplate(id, pattern)); };
  add("P19", "[X] was born in [Y] .");
  add("P36", "The capital of [X] is [Y] .");
  add("P101", "[X] works in the field of [Y] .");
  add("P140", "[Y] is the religion of [X] .");
  return t;
}

Dataset make_synthetic_dataset(std::string name, std::size_t n_triples, std::size_t n_objects,
                               std::uint64_t seed, std::string_view subject_prefix) {
  if (n_objects == 0) throw ValidationError("n_objects must be positive");
  Dataset ds;
  ds.name = std::move(name);
  ds.templates = synthetic_templates();
  std::vector<std::string> relations;
  for (const auto& [rel, _] : ds.templates) relations.push_back(rel);
  for (std::size_t i = 0; i < n_triples; ++i) {
    char subject[64];
    std::snprintf(subject, sizeof subject, "%.*s-%05zu", static_cast<int>(subject_prefix.size()),
                  subject_prefix.data(), i);
    const std::uint64_t h = mix64(seed ^ mix64(i));
    char object[32];
    std::snprintf(object, sizeof object, "object-%03llu",
                  static_cast<unsigned long long>(h % n_objects));
    ds.triples.push_back({subject, relations[i % relations.size()], object});
  }
  return ds;
}

}  // namespace factprobe
