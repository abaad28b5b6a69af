#pragma once

#include <atomic>
#include <filesystem>
#include <memory>
#include <string>
#include <thread>
#include <vector>

#include "factprobe/backend.hpp"
#include "factprobe/dataset.hpp"
#include "factprobe/rerank.hpp"
#include "factprobe/synthetic.hpp"

namespace httplib {
class Server;
}

namespace fpt {

using namespace factprobe;

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  TempDir();
  ~TempDir();
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

struct WorldOptions {
  std::size_t n_triples = 200;
  std::size_t n_objects = 30;
  std::size_t vocab_size = 120;
  std::size_t hidden_dim = 32;
  double margin = 3.0;
  double noise_sigma = 1.0;
  std::uint64_t seed = 7;
  double top1_rate = 0.3;
  double tail_p = 0.15;
  std::size_t max_rank = 60;
  std::string name = "world";
  std::string subject_prefix = "entity";
};

/// A synthetic dataset together with the backend planted on it.
struct World {
  Dataset dataset;
  TemplateTable templates;
  SyntheticSpec spec;
  std::unique_ptr<SyntheticBackend> backend;

  std::size_t gold_rank(const Triple& t) const;
};

World make_world(const WorldOptions& options);

/// Two disjoint splits sharing one backend.
struct SplitWorld {
  Dataset train;
  Dataset test;
  TemplateTable templates;
  SyntheticSpec spec;
  std::unique_ptr<SyntheticBackend> backend;
};

SplitWorld make_split_world(std::size_t n_train, std::size_t n_test, const WorldOptions& options);

/// Fraction of triples (in percent) whose planted gold rank is <= k, read
/// straight from the gold table.
double table_hit_rate(const GoldRankTable& table, const Dataset& dataset, std::size_t k);

/// Full ranking by brute force over the planted logits: score descending,
/// object ascending on ties.
std::vector<std::string> brute_force_ranking(const SyntheticBackend& b, const std::string& prompt,
                                             const std::vector<std::string>& pool);

/// Ground-truth helper: 1 for gold-filled statements, 0 otherwise.
class OracleScorer final : public TruthScorer {
 public:
  explicit OracleScorer(const SyntheticBackend& backend) : backend_(backend) {}
  double probability(const HVector& h) const override {
    return backend_.is_gold_statement(h.source_text_hash) ? 1.0 : 0.0;
  }
  double threshold() const override { return 0.5; }

 private:
  const SyntheticBackend& backend_;
};

class ConstScorer final : public TruthScorer {
 public:
  ConstScorer(double p, double threshold) : p_(p), threshold_(threshold) {}
  double probability(const HVector&) const override { return p_; }
  double threshold() const override { return threshold_; }

 private:
  double p_;
  double threshold_;
};

/// Accepts exactly the statements whose filled object is in `accepted`.
class ObjectScorer final : public TruthScorer {
 public:
  ObjectScorer(std::vector<std::uint64_t> accepted_hashes) : accepted_(std::move(accepted_hashes)) {}
  double probability(const HVector& h) const override;
  double threshold() const override { return 0.5; }

 private:
  std::vector<std::uint64_t> accepted_;
};

/// Backend wrapper that counts calls and can be told to fail.
class CountingBackend final : public Backend {
 public:
  explicit CountingBackend(const Backend& inner) : inner_(inner) {}
  const BackendMeta& meta() const override { return inner_.meta(); }
  TopK topk(std::string_view prompt, std::size_t k, const CandidateSet* c) const override {
    ++topk_calls;
    return inner_.topk(prompt, k, c);
  }
  HVector hidden(std::string_view text) const override {
    const auto n = ++hidden_calls;
    if (fail_hidden_from != 0 && n >= fail_hidden_from) throw BackendError("injected failure");
    return inner_.hidden(text);
  }
  const TokenCounter* tokenizer() const override { return inner_.tokenizer(); }

  mutable std::atomic<std::size_t> topk_calls{0};
  mutable std::atomic<std::size_t> hidden_calls{0};
  std::size_t fail_hidden_from = 0;  // 0 = never

 private:
  const Backend& inner_;
};

/// In-process HTTP server exposing a backend through the v1 wire codec.
class FixtureServer {
 public:
  struct Options {
    bool tokenize = true;
    /// Override the advertised backend_id on data responses (not /v1/meta).
    std::string response_backend_id;
    int response_version = 0;  // 0 = protocol version
    bool meta_error = false;
  };

  explicit FixtureServer(const Backend& backend) : FixtureServer(backend, Options{}) {}
  FixtureServer(const Backend& backend, Options options);
  ~FixtureServer();

  std::string endpoint() const;
  std::size_t requests() const { return requests_.load(); }

 private:
  const Backend& backend_;
  Options options_;
  std::unique_ptr<httplib::Server> server_;
  std::thread thread_;
  int port_ = 0;
  std::atomic<std::size_t> requests_{0};
};

/// Published (baseline, reranked, relative gain %) rows, for the Diff%
/// arithmetic checks.
struct ReferenceRow {
  const char* train_set;
  const char* test_set;
  const char* model;
  double baseline;
  double reranked;
  double diff_percent;
};
extern const std::vector<ReferenceRow> kReferenceRows;

/// Pearson r over the union of keys (absent = 0) from integer sums:
/// (n Sxy - Sx Sy) / sqrt((n Sxx - Sx^2)(n Syy - Sy^2)). NaN when undefined.
double pearson_oracle(const FreqDist& a, const FreqDist& b);

/// Writes `lines` to `path`, one per line.
void write_lines(const std::filesystem::path& path, const std::vector<std::string>& lines);
std::string read_file(const std::filesystem::path& path);

/// Path of a checked-in fixture under tests/data.
std::filesystem::path fixture(const std::string& name);

}  // namespace fpt
