#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "factprobe/backend.hpp"

namespace factprobe {

enum class CandidateMode { full_vocab, typed };
enum class NegativeMode {
  single_rank,  // one negative at rank neg_index per triple
  all_ranks,    // every non-gold prediction in ranks 1..neg_index
};

struct RowProvenance {
  std::size_t triple_index = 0;
  std::string object;
  std::size_t rank = 0;  // 0 marks the gold fill
};

/// Truthfulness training rows: hidden states of statement prompts with
/// label 1 (gold fill) or 0 (non-gold fill).
struct LabeledFeatures {
  std::size_t dim = 0;
  std::vector<double> features;  // row-major, rows() x dim
  std::vector<int> labels;
  std::vector<RowProvenance> provenance;
  std::size_t skipped_triples = 0;

  std::size_t rows() const { return labels.size(); }
  std::span<const double> row(std::size_t i) const {
    return {features.data() + i * dim, dim};
  }
  void add_row(std::span<const float> values, int label, RowProvenance prov);
  void append(const LabeledFeatures& other);
  /// n >= 2, both labels present, finite entries, consistent shape.
  void validate() const;
};

struct TrainingSetOptions {
  NegativeMode negatives = NegativeMode::single_rank;
  const CandidateSets* candidates = nullptr;  // typed mode when set
  std::size_t workers = 1;
};

/// Per triple: a positive row from the gold-filled statement and a negative
/// row from the statement filled with the rank-neg_index prediction (the
/// next rank when that prediction is the gold object). Triples without a
/// usable negative are skipped and counted.
LabeledFeatures build_training_set(const Backend& backend, const Dataset& dataset,
                                   std::size_t neg_index, const TrainingSetOptions& options = {});

struct Standardized {
  std::vector<double> values;  // row-major
  std::vector<double> means;
  std::vector<double> scales;
};

/// Column z-scoring with population standard deviation. Zero-variance
/// columns keep scale 1 and are only centered.
Standardized standardize(std::span<const double> x, std::size_t rows, std::size_t cols);

struct LossGrad {
  double objective = 0.0;
  std::vector<double> gradient;  // d weight entries, then the intercept
};

/// Mean logistic loss plus lambda * |w|_1 (intercept unpenalized). The
/// gradient is that of the smooth part only. X is row-major n x d with
/// n = y.size().
LossGrad loss_and_grad(std::span<const double> weights, double intercept,
                       std::span<const double> x, std::span<const int> y, double lambda);

/// sign(v) * max(|v| - t, 0)
inline double soft_threshold(double v, double t) {
  if (v > t) return v - t;
  if (v < -t) return v + t;
  return 0.0;
}

struct TrainConfig {
  double lambda = 1e-3;
  double tol = 1e-7;
  std::size_t max_iter = 5000;
  std::uint64_t seed = 0;

  void validate() const;
};

struct TrainingMeta {
  std::string backend_id;
  std::string dataset;
  std::size_t neg_index = 0;
  std::size_t rows = 0;
  double heldout_accuracy = -1.0;  // negative when not measured
};

/// L1 logistic-regression truthfulness classifier over raw hidden states.
struct HelperModel {
  std::vector<double> weights;  // in standardized feature space
  double intercept = 0.0;
  double lambda = 0.0;
  std::vector<double> feature_means;
  std::vector<double> feature_scales;
  double threshold = 0.5;
  TrainingMeta meta;

  std::size_t dim() const { return weights.size(); }
  std::size_t nonzero_weights() const;
  void validate() const;
};

struct TrainResult {
  HelperModel model;
  std::size_t iterations = 0;
  bool converged = false;
  double final_objective = 0.0;
  /// Composite objective after each accepted iteration, starting at the
  /// zero initialization.
  std::vector<double> objective_trace;
};

/// Full-batch proximal gradient (ISTA) with backtracking from zero weights.
/// Rows are put in a canonical order first, so the result does not depend
/// on the row order of `features`.
TrainResult train(const LabeledFeatures& features, const TrainConfig& config);

double predict_proba(const HelperModel& model, std::span<const float> h);
double predict_proba(const HelperModel& model, std::span<const double> h);
inline double predict_proba(const HelperModel& model, const HVector& h) {
  return predict_proba(model, std::span<const float>(h.values));
}

/// Fraction of rows where (p >= threshold) agrees with the label.
double helper_accuracy(const HelperModel& model, const LabeledFeatures& labeled);

/// Self-describing text record; reals are written as hex floats so a round
/// trip is exact.
std::string serialize_model(const HelperModel& model);
HelperModel parse_model(std::string_view text);
void save_model(const HelperModel& model, const std::filesystem::path& path);
HelperModel load_model(const std::filesystem::path& path);

}  // namespace factprobe
