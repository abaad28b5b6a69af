#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "factprobe/backend.hpp"

namespace factprobe {

struct GoldEntry {
  std::string object;
  std::size_t rank = 1;
};

/// Planted facts: (subject, relation_id) -> gold object and the rank at
/// which the backend places it in full-vocabulary top-k.
using GoldRankTable = std::map<std::pair<std::string, std::string>, GoldEntry>;

struct SyntheticSpec {
  std::uint64_t seed = 0;
  std::size_t hidden_dim = 32;
  double margin = 3.0;
  double noise_sigma = 1.0;
  GoldRankTable gold_rank_table;
  std::vector<std::string> vocab;

  void validate() const;
};

/// Deterministic stand-in for a masked language model.
///
/// Prediction: every (prompt, object) pair gets a seeded pseudo-normal logit.
/// For a planted query prompt the non-gold vocabulary is ordered by those
/// logits and the gold object is inserted at its table rank; scores are
/// log-softmax over the vocabulary (or over the candidate set in typed mode).
///
/// Hidden states: a gold-filled statement maps to +margin*u + eps, a
/// non-gold-filled statement of a planted prompt to -margin*u + eps, any other
/// text to eps alone. u is a seeded unit vector and eps is isotropic
/// pseudo-normal noise with scale noise_sigma seeded by (seed, text). The Bayes
/// accuracy of a linear probe is Phi(margin / noise_sigma).
class SyntheticBackend final : public Backend {
 public:
  SyntheticBackend(SyntheticSpec spec, TemplateTable templates);

  const BackendMeta& meta() const override { return meta_; }
  TopK topk(std::string_view prompt, std::size_t k,
            const CandidateSet* candidates = nullptr) const override;
  HVector hidden(std::string_view text) const override;
  const TokenCounter* tokenizer() const override { return &counter_; }

  const SyntheticSpec& spec() const { return spec_; }
  const std::vector<double>& direction() const { return direction_; }

  /// Logit the backend assigns to `object` in `prompt`, including the gold
  /// placement for planted prompts.
  double planted_logit(std::string_view prompt, std::string_view object) const;

  /// True iff the hash belongs to a gold-filled statement of a planted fact.
  bool is_gold_statement(std::uint64_t text_hash) const;

 private:
  struct Planted {
    std::string gold;
    std::size_t rank;
    std::string prefix;  // statement text before the object slot
    std::string suffix;  // and after it
    std::uint64_t query_hash;
    double gold_logit;
  };

  class WordCounter final : public TokenCounter {
   public:
    std::size_t token_count(std::string_view object) const override;
  };

  double raw_logit(std::uint64_t prompt_hash, std::string_view object) const;
  double place_gold(std::uint64_t query_hash, const std::string& gold, std::size_t rank) const;
  const Planted* find_query(std::string_view prompt) const;
  /// +1 gold statement, -1 non-gold statement of a planted prompt, 0 otherwise.
  int statement_polarity(std::string_view text) const;

  SyntheticSpec spec_;
  TemplateTable templates_;
  BackendMeta meta_;
  WordCounter counter_;
  std::vector<double> direction_;
  std::vector<Planted> planted_;
  std::unordered_map<std::string, std::size_t> query_index_;
  std::unordered_map<std::string, std::size_t> gold_statement_index_;
  std::unordered_set<std::uint64_t> gold_hashes_;
  std::unordered_multimap<std::string, std::size_t> by_prefix_;
  std::unordered_multimap<std::string, std::size_t> by_suffix_;  // entries with empty prefix
};

/// Draws a gold rank per distinct (subject, relation) of the datasets: 1 with
/// probability top1_rate, otherwise geometric(tail_p) shifted to start at 2,
/// capped at max_rank. The first triple seen for a pair supplies its gold.
GoldRankTable draw_gold_ranks(std::span<const Dataset* const> datasets, std::uint64_t seed,
                              double top1_rate, double tail_p, std::size_t max_rank);

/// Dataset objects (sorted) followed by "filler-NNNN" entries up to vocab_size.
std::vector<std::string> build_vocab(std::span<const Dataset* const> datasets,
                                     std::size_t vocab_size);

/// Seeded dataset of distinct (subject, relation) facts over a small template
/// table, for examples and tests.
Dataset make_synthetic_dataset(std::string name, std::size_t n_triples, std::size_t n_objects,
                               std::uint64_t seed, std::string_view subject_prefix = "entity");

/// Templates used by make_synthetic_dataset.
TemplateTable synthetic_templates();

}  // namespace factprobe
