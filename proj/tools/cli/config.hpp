#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "factprobe/backend.hpp"
#include "factprobe/helper.hpp"
#include "factprobe/hidden_cache.hpp"
#include "factprobe/rerank.hpp"

namespace factprobe::cli {

/// Environment variable naming the default cache directory.
inline constexpr const char* kCacheDirEnv = "FACTPROBE_CACHE_DIR";

struct SyntheticBackendConfig {
  std::uint64_t seed = 0;
  std::size_t hidden_dim = 32;
  double margin = 3.0;
  double noise_sigma = 1.0;
  std::size_t vocab_size = 200;
  double top1_rate = 0.3;
  double tail_p = 0.15;
  std::size_t max_rank = 100;
  /// Optional TSV (subject, relation, rank) overriding the drawn ranks.
  std::optional<std::filesystem::path> gold_ranks;
};

struct RunConfig {
  enum class BackendKind { synthetic, remote };
  BackendKind backend = BackendKind::synthetic;
  SyntheticBackendConfig synthetic;
  std::string endpoint;

  std::filesystem::path train_path;
  std::filesystem::path test_path;
  std::filesystem::path templates_path;
  bool strict_templates = false;

  CandidateMode candidate_mode = CandidateMode::full_vocab;
  std::size_t augment_k = 10;
  std::size_t neg_index = 11;
  std::optional<std::size_t> k;  // defaults to neg_index - 1
  std::vector<std::size_t> sweep;
  NegativeMode negatives = NegativeMode::single_rank;
  ScanMode scan = ScanMode::first_accept;
  TrainConfig helper;
  double heldout_fraction = 0.1;

  std::optional<std::filesystem::path> cache;
  std::filesystem::path output = "out";
  std::size_t workers = 1;
  std::uint64_t seed = 0;
  double max_failure_ratio = 0.0;
  bool allow_backend_mismatch = false;
};

/// Builds a config from a JSON document; unknown keys are rejected.
RunConfig config_from_json(const nlohmann::json& doc);
nlohmann::json config_to_json(const RunConfig& config);

/// Reads a JSON config file (may be empty) and applies `key.path=value`
/// overrides. Values parse as JSON when possible, otherwise as strings.
nlohmann::json load_config_document(const std::optional<std::filesystem::path>& path,
                                    const std::vector<std::string>& overrides = {});
void apply_overrides(nlohmann::json& doc, const std::vector<std::string>& overrides);

/// Structural checks that need no backend: numeric ranges, neg_index rules,
/// readable input files. Throws ValidationError.
void validate_config(const RunConfig& config, bool need_test);

/// Cache path from the config, else $FACTPROBE_CACHE_DIR/hidden.hsc, else none.
std::optional<std::filesystem::path> resolve_cache_path(const RunConfig& config);

/// Loaded inputs and the backend stack built from a config.
class Workspace {
 public:
  /// Loads datasets and builds the backend. Validation must already have
  /// passed.
  Workspace(const RunConfig& config, bool need_test);

  const Backend& backend() const { return cached_ ? *cached_ : *base_; }
  const Backend& uncached_backend() const { return *base_; }
  const CachedBackend* cached() const { return cached_.get(); }

  /// Datasets after the backend's token filter.
  const Dataset& train() const { return train_; }
  const Dataset& test() const { return test_; }
  const Dataset& raw_train() const { return raw_train_; }
  const Dataset& raw_test() const { return raw_test_; }

  /// Candidate sets for typed mode, nullptr in full-vocab mode.
  const CandidateSets* candidates() const {
    return candidate_sets_ ? &*candidate_sets_ : nullptr;
  }

  /// Deterministic split of the training triples into fit and held-out parts.
  std::pair<Dataset, Dataset> split_train(double heldout_fraction, std::uint64_t seed) const;

 private:
  Dataset raw_train_;
  Dataset raw_test_;
  Dataset train_;
  Dataset test_;
  std::unique_ptr<Backend> base_;
  std::unique_ptr<CachedBackend> cached_;
  std::optional<CandidateSets> candidate_sets_;
};

}  // namespace factprobe::cli
