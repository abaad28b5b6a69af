#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "factprobe/common.hpp"
#include "factprobe/dataset.hpp"

namespace factprobe {

inline constexpr std::string_view kLayerLastEncoder = "last-encoder";
inline constexpr std::string_view kPositionFinalToken = "final-token";

struct BackendMeta {
  std::string backend_id;
  std::size_t hidden_dim = 0;
  bool single_token_only = false;
  bool supports_candidate_scoring = false;

  friend bool operator==(const BackendMeta&, const BackendMeta&) = default;
};

struct Candidate {
  std::string object;
  std::size_t rank = 0;  // 1 = best
  double log_score = 0.0;

  friend bool operator==(const Candidate&, const Candidate&) = default;
};

struct TopK {
  std::vector<Candidate> candidates;
  /// Set when fewer than k candidates were available (typed mode).
  bool truncated = false;
};

/// Last-layer, final-token hidden state of one input text.
struct HVector {
  std::vector<float> values;
  std::string layer_tag{kLayerLastEncoder};
  std::string position_tag{kPositionFinalToken};
  std::uint64_t source_text_hash = 0;
};

inline std::uint64_t text_hash(std::string_view text) { return fnv1a64(text); }

/// Per-relation object subset used for typed querying.
struct CandidateSet {
  std::string relation_id;
  std::vector<std::string> objects;

  /// Throws ValidationError when empty or containing duplicates.
  void validate() const;
  bool contains(std::string_view object) const;
};

using CandidateSets = std::map<std::string, CandidateSet, std::less<>>;

/// Model contract: top-k object prediction for a cloze prompt and hidden
/// state extraction for a statement. Implementations must be safe for
/// concurrent const calls.
class Backend {
 public:
  virtual ~Backend() = default;

  virtual const BackendMeta& meta() const = 0;

  /// Prompts carry the neutral "[MASK]" token in the object slot. With a
  /// candidate set, scoring is restricted to its objects.
  virtual TopK topk(std::string_view prompt, std::size_t k,
                    const CandidateSet* candidates = nullptr) const = 0;

  virtual HVector hidden(std::string_view text) const = 0;

  /// Elementwise hidden(); remote backends override to batch requests.
  virtual std::vector<HVector> hidden_batch(std::span<const std::string> texts) const;

  /// Token-count oracle, or nullptr when the backend cannot tokenize.
  virtual const TokenCounter* tokenizer() const { return nullptr; }
};

/// Applies the single-token filter when the backend declares
/// single_token_only. Throws ValidationError if a filter is required but the
/// backend has no tokenizer.
Dataset prepare_for_backend(const Dataset& dataset, const Backend& backend);

/// Union of the relation's dataset objects (sorted) and the top-augment_k
/// predictions for the subject-ablated prompt (in rank order).
CandidateSet build_candidate_set(const std::string& relation_id,
                                 std::span<const std::string> dataset_objects,
                                 const Backend& backend, const PromptTemplate& tmpl,
                                 std::size_t augment_k,
                                 std::string_view ablated_subject = kAblatedSubject);

/// One candidate set per relation present in any of the datasets.
CandidateSets build_candidate_sets(std::span<const Dataset* const> datasets,
                                   const Backend& backend, std::size_t augment_k);

inline const CandidateSet* find_candidates(const CandidateSets* sets, std::string_view relation) {
  if (sets == nullptr) return nullptr;
  auto it = sets->find(relation);
  return it == sets->end() ? nullptr : &it->second;
}

/// Sorts by descending score, then object string, and assigns ranks 1..n.
void rank_candidates(std::vector<Candidate>& candidates);

/// Throws BackendError unless v matches the backend's declared dimension,
/// is tagged last-encoder/final-token, and is finite.
void check_hidden(const HVector& v, const BackendMeta& meta);

}  // namespace factprobe
