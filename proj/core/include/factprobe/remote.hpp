#pragma once

#include <chrono>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "factprobe/backend.hpp"

namespace factprobe {

inline constexpr int kProtocolVersion = 1;

/// JSON bodies of the sidecar protocol (v1). Decoders throw BackendError on
/// malformed bodies, version mismatch, or an error envelope.
namespace wire {

struct TopKRequest {
  std::string prompt;
  std::size_t k = 1;
  std::optional<std::vector<std::string>> candidates;
};

std::string encode_meta(const BackendMeta& meta, bool supports_tokenize = false);
BackendMeta decode_meta(std::string_view body, bool* supports_tokenize = nullptr);

std::string encode_topk_request(const TopKRequest& req);
TopKRequest decode_topk_request(std::string_view body);
std::string encode_topk_response(std::string_view backend_id, const std::vector<Candidate>& results);
std::vector<Candidate> decode_topk_response(std::string_view body, std::string_view backend_id);

std::string encode_hidden_request(const std::vector<std::string>& texts);
std::vector<std::string> decode_hidden_request(std::string_view body);
std::string encode_hidden_response(std::string_view backend_id, const std::vector<HVector>& vectors);
/// Source hashes are recomputed from `texts`, which must be the request.
std::vector<HVector> decode_hidden_response(std::string_view body, std::string_view backend_id,
                                            const std::vector<std::string>& texts);

std::string encode_tokenize_request(const std::vector<std::string>& texts);
std::vector<std::string> decode_tokenize_request(std::string_view body);
std::string encode_tokenize_response(std::string_view backend_id,
                                     const std::vector<std::size_t>& counts);
std::vector<std::size_t> decode_tokenize_response(std::string_view body,
                                                  std::string_view backend_id);

std::string encode_error(std::string_view code, std::string_view message);

}  // namespace wire

/// Client for an inference sidecar speaking protocol v1 over HTTP.
///
///   GET  /v1/meta
///   POST /v1/topk      {prompt, k, candidates?}
///   POST /v1/hidden    {texts}
///   POST /v1/tokenize  {texts}   (optional; advertised by meta.tokenize)
class RemoteBackend final : public Backend {
 public:
  /// Fetches /v1/meta; throws BackendError naming the endpoint when the
  /// sidecar is unreachable.
  explicit RemoteBackend(std::string endpoint,
                         std::chrono::milliseconds timeout = std::chrono::seconds(60));
  ~RemoteBackend() override;

  const BackendMeta& meta() const override { return meta_; }
  TopK topk(std::string_view prompt, std::size_t k,
            const CandidateSet* candidates = nullptr) const override;
  HVector hidden(std::string_view text) const override;
  std::vector<HVector> hidden_batch(std::span<const std::string> texts) const override;
  const TokenCounter* tokenizer() const override;

  const std::string& endpoint() const { return endpoint_; }

  /// Re-fetches /v1/meta and compares it with the cached copy.
  bool meta_stable() const;

 private:
  class RemoteTokenCounter;

  std::string get(const std::string& path) const;
  std::string post(const std::string& path, const std::string& body) const;

  std::string endpoint_;
  std::chrono::milliseconds timeout_;
  BackendMeta meta_;
  std::unique_ptr<RemoteTokenCounter> counter_;
};

}  // namespace factprobe
