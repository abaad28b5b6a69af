#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "factprobe/backend.hpp"
#include "factprobe/helper.hpp"

namespace factprobe {

/// Decides whether a statement's hidden state looks truthful.
class TruthScorer {
 public:
  virtual ~TruthScorer() = default;
  virtual double probability(const HVector& h) const = 0;
  virtual double threshold() const = 0;
  bool accepts(const HVector& h) const { return probability(h) >= threshold(); }
};

class HelperScorer final : public TruthScorer {
 public:
  explicit HelperScorer(const HelperModel& model) : model_(model) {}
  double probability(const HVector& h) const override { return predict_proba(model_, h); }
  double threshold() const override { return model_.threshold; }

 private:
  const HelperModel& model_;
};

enum class ScanMode {
  first_accept,     // first candidate in rank order that the scorer accepts
  max_probability,  // accepted candidate with the highest probability
};

struct RerankConfig {
  std::size_t k = 1;
  CandidateMode candidate_mode = CandidateMode::full_vocab;
  std::size_t neg_index_used_for_training = 2;
  ScanMode scan = ScanMode::first_accept;
  std::size_t workers = 1;
  /// run_split aborts once failures / triples exceeds this ratio.
  double max_failure_ratio = 0.0;

  void validate() const;
};

struct Prediction {
  std::size_t triple_index = 0;
  std::string gold;
  std::string baseline_object;
  std::string reranked_object;
  std::size_t chosen_rank = 1;
  std::size_t scanned = 0;
  bool fell_back = false;

  friend bool operator==(const Prediction&, const Prediction&) = default;
};

std::string baseline_predict(const Backend& backend, const Triple& triple,
                             const PromptTemplate& tmpl, const CandidateSet* candidates = nullptr);

/// Scans the top-k candidates of the cloze prompt in rank order, extracting
/// hidden states of the filled statements lazily, and returns the first one
/// the scorer accepts. Falls back to rank 1 when none is accepted.
Prediction rerank_predict(const Backend& backend, const TruthScorer& scorer, const Triple& triple,
                          const PromptTemplate& tmpl, const RerankConfig& config,
                          const CandidateSet* candidates = nullptr, std::size_t triple_index = 0);

struct SplitFailure {
  std::size_t triple_index;
  std::string message;
};

struct SplitResult {
  std::vector<Prediction> predictions;  // dataset order, failed triples omitted
  std::vector<SplitFailure> failures;
};

/// One prediction per triple, in dataset order. Throws BackendError when the
/// failure ratio exceeds config.max_failure_ratio.
SplitResult run_split(const Backend& backend, const TruthScorer& scorer, const Dataset& dataset,
                      const RerankConfig& config, const CandidateSets* candidates = nullptr);

/// Line-delimited JSON: triple_index, gold, baseline_object, reranked_object,
/// chosen_rank, scanned, fell_back.
void write_predictions(std::span<const Prediction> predictions, const std::filesystem::path& path);
std::vector<Prediction> read_predictions(const std::filesystem::path& path);

}  // namespace factprobe
