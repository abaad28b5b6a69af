#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <shared_mutex>
#include <span>
#include <unordered_map>
#include <vector>

#include "factprobe/backend.hpp"

namespace factprobe {

/// Persistent hidden-state store.
///
/// File layout (all integers little-endian):
///   "HSC1"
///   record*: [key u64][dim u32][dim x f32 IEEE-754][crc32 u32]
/// The checksum covers key, dim and payload. The log is append-only; a
/// truncated tail left by a crash is cut off on open. `<path>.idx` holds a
/// key -> offset index that is rebuilt from the log whenever it is stale.
class HiddenStateCache {
 public:
  struct Stats {
    std::size_t records = 0;
    std::size_t corrupt = 0;
    std::uint64_t truncated_bytes = 0;
    std::uint64_t file_bytes = 0;
    bool index_rebuilt = false;
  };

  /// Opens or creates the log. Throws ValidationError if the file exists but
  /// is not a cache.
  explicit HiddenStateCache(std::filesystem::path path);
  ~HiddenStateCache();

  HiddenStateCache(const HiddenStateCache&) = delete;
  HiddenStateCache& operator=(const HiddenStateCache&) = delete;

  /// Checksum failures are reported through warn() and treated as a miss.
  std::optional<std::vector<float>> lookup(std::uint64_t key) const;
  void insert(std::uint64_t key, std::span<const float> values);

  std::size_t size() const;
  Stats stats() const;
  const std::filesystem::path& path() const { return path_; }

  static std::uint64_t make_key(std::string_view backend_id, std::uint64_t source_text_hash);
  static void clear(const std::filesystem::path& path);

 private:
  void scan();
  bool load_index();
  void write_index() const;

  std::filesystem::path path_;
  int fd_ = -1;
  std::uint64_t end_ = 0;
  mutable std::shared_mutex mutex_;
  std::unordered_map<std::uint64_t, std::uint64_t> index_;  // key -> record offset
  mutable Stats stats_;
  mutable bool index_dirty_ = false;
};

/// Backend decorator that routes hidden() through a HiddenStateCache keyed by
/// (backend_id, source_text_hash). `inner` must outlive the wrapper.
class CachedBackend final : public Backend {
 public:
  CachedBackend(const Backend& inner, std::shared_ptr<HiddenStateCache> cache);
  CachedBackend(const Backend& inner, const std::filesystem::path& cache_path);

  const BackendMeta& meta() const override { return inner_.meta(); }
  TopK topk(std::string_view prompt, std::size_t k,
            const CandidateSet* candidates = nullptr) const override {
    return inner_.topk(prompt, k, candidates);
  }
  HVector hidden(std::string_view text) const override;
  const TokenCounter* tokenizer() const override { return inner_.tokenizer(); }

  std::size_t hits() const { return hits_.load(); }
  std::size_t misses() const { return misses_.load(); }
  HiddenStateCache& cache() const { return *cache_; }

 private:
  const Backend& inner_;
  std::shared_ptr<HiddenStateCache> cache_;
  mutable std::atomic<std::size_t> hits_{0};
  mutable std::atomic<std::size_t> misses_{0};
};

}  // namespace factprobe
