#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>

#include "cli/config.hpp"
#include "factprobe/eval.hpp"

namespace factprobe::cli {

struct TrainHelperResult {
  HelperModel model;
  std::size_t rows = 0;
  std::size_t heldout_rows = 0;
  std::size_t iterations = 0;
  bool converged = false;
  std::filesystem::path model_path;
};

/// Fits a helper on the training split minus a held-out slice and writes
/// `helper.model`, `train_summary.json` and `resolved_config.json`.
TrainHelperResult cmd_train_helper(const RunConfig& config, std::ostream& out);

/// Reranks the test split with a saved helper; writes `predictions.jsonl`
/// and `table.tsv`. `model_path` defaults to `<output>/helper.model`.
EvalReport cmd_evaluate(const RunConfig& config,
                        const std::optional<std::filesystem::path>& model_path, std::ostream& out);

/// Trains and evaluates one helper per neg_index; writes `table.tsv` and the
/// gain curve.
SweepCurve cmd_sweep(const RunConfig& config, std::ostream& out);

/// Pearson r between the object distributions of two triples files, printed
/// to 2 decimals. Throws UndefinedCorrelation when r is undefined.
double cmd_corr(const std::filesystem::path& train, const std::filesystem::path& test,
              std::ostream& out);

void cmd_cache_inspect(const std::filesystem::path& path, std::ostream& out);
void cmd_cache_clear(const std::filesystem::path& path, std::ostream& out);

struct SynthDataOptions {
  std::filesystem::path out_dir = "data";
  std::size_t n_train = 1000;
  std::size_t n_test = 1000;
  std::size_t n_objects = 40;
  std::uint64_t seed = 0;
};

/// Writes train.jsonl, test.jsonl and templates.jsonl for the synthetic backend.
void cmd_synth_data(const SynthDataOptions& options, std::ostream& out);

/// Full command-line entry point. Returns the process exit code:
/// 0 success, 2 validation, 3 backend, 4 invariant violation.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace factprobe::cli
