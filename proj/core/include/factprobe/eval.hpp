#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "factprobe/dataset.hpp"
#include "factprobe/helper.hpp"
#include "factprobe/rerank.hpp"

namespace factprobe {

/// Raised when a Pearson correlation has no defined value (a constant
/// vector on the aligned support).
class UndefinedCorrelation : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

enum class Which { baseline, reranked };

/// 100 * exact matches / n. Throws ValidationError on empty or misaligned input.
double accuracy(std::span<const std::string> predicted, std::span<const std::string> golds);
double accuracy(std::span<const Prediction> predictions, Which which);

/// Relative improvement in percent, full precision. Throws ValidationError
/// when baseline_acc is not positive.
double diff_percent(double baseline_acc, double reranked_acc);

/// Round half to even at `decimals` places (applied only when emitting).
double round_half_even(double value, int decimals = 2);
std::string format_fixed(double value, int decimals = 2);

/// Pearson r of two count vectors aligned over the union of their keys,
/// missing keys counting as zero.
double pearson(const FreqDist& a, const FreqDist& b);
double pearson(std::span<const double> x, std::span<const double> y);

struct EvalReport {
  std::string train_set;
  std::string test_set;
  std::string backend_id;
  double baseline_acc = 0.0;
  double reranked_acc = 0.0;
  double diff_percent = 0.0;
  double corr = 0.0;  // NaN when undefined
  std::size_t neg_index = 0;
  double helper_acc = 0.0;  // percent
  std::size_t n_examples = 0;

  /// Throws ValidationError unless diff_percent agrees with the accuracies.
  void validate() const;
};

struct SweepPoint {
  std::size_t neg_index = 0;
  double gain = 0.0;  // reranked - baseline, accuracy points
  double reranked_acc = 0.0;
  double helper_acc = 0.0;  // percent; negative when not measured
};

struct SweepCurve {
  std::string train_set;
  std::string test_set;
  std::string backend_id;
  double baseline_acc = 0.0;
  std::vector<SweepPoint> points;

  void validate() const;
};

struct SweepOptions {
  const CandidateSets* candidates = nullptr;
  NegativeMode negatives = NegativeMode::single_rank;
  ScanMode scan = ScanMode::first_accept;
  std::size_t workers = 1;
  /// Training rows held out per neg_index for measuring helper accuracy.
  const Dataset* heldout = nullptr;
};

/// Validates a neg_index list: strictly increasing, each >= 2.
void validate_neg_indices(std::span<const std::size_t> neg_indices);

/// For each neg_index: build the training set, train a helper, rerank the
/// test split with k = neg_index - 1. The baseline is computed once.
SweepCurve sweep_neg_index(const Backend& backend, const Dataset& train, const Dataset& test,
                           std::span<const std::size_t> neg_indices, const TrainConfig& config,
                           const SweepOptions& options = {});

/// Same sweep with a fixed scorer (no training), e.g. an oracle.
SweepCurve sweep_with_scorer(const Backend& backend, const TruthScorer& scorer,
                             const Dataset& test, std::span<const std::size_t> neg_indices,
                             const SweepOptions& options = {});

struct ReportFiles {
  std::filesystem::path table;
  std::vector<std::filesystem::path> curves;
};

/// Writes `table.tsv` (one row per report) and one `curve-<train>-<test>-<n>.tsv`
/// per sweep curve. Output bytes depend only on the inputs.
ReportFiles emit_report(std::span<const EvalReport> reports, std::span<const SweepCurve> curves,
                        const std::filesystem::path& out_dir);

std::string table_header();
std::string table_row(const EvalReport& report);

}  // namespace factprobe
