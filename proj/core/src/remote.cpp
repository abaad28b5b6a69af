#include "factprobe/remote.hpp"

#include <httplib.h>

#include <json.hpp>

namespace factprobe {

using nlohmann::json;

namespace wire {

namespace {

json parse(std::string_view body) {
  json j = json::parse(body, nullptr, false);
  if (j.is_discarded() || !j.is_object()) {
    throw BackendError("malformed protocol body: " + std::string(body.substr(0, 200)));
  }
  if (auto it = j.find("error"); it != j.end()) {
    const auto code = it->value("code", std::string("unknown"));
    const auto message = it->value("message", std::string());
    throw BackendError("sidecar error " + code + ": " + message);
  }
  return j;
}

template <typename T>
T field(const json& j, const char* name) {
  auto it = j.find(name);
  if (it == j.end()) throw BackendError(std::string("protocol body lacks field '") + name + "'");
  try {
    return it->get<T>();
  } catch (const json::exception& e) {
    throw BackendError(std::string("protocol field '") + name + "' has the wrong type: " + e.what());
  }
}

void check_envelope(const json& j, std::string_view backend_id) {
  if (field<int>(j, "version") != kProtocolVersion) {
    throw BackendError("sidecar speaks protocol v" + std::to_string(field<int>(j, "version")) +
                       ", expected v" + std::to_string(kProtocolVersion));
  }
  if (field<std::string>(j, "backend_id") != backend_id) {
    throw BackendError("sidecar backend_id changed from " + std::string(backend_id) + " to " +
                       field<std::string>(j, "backend_id"));
  }
}

json envelope(std::string_view backend_id) {
  json j;
  j["version"] = kProtocolVersion;
  j["backend_id"] = backend_id;
  return j;
}

}  // namespace

std::string encode_meta(const BackendMeta& meta, bool supports_tokenize) {
  json j = envelope(meta.backend_id);
  j["hidden_dim"] = meta.hidden_dim;
  j["single_token_only"] = meta.single_token_only;
  j["supports_candidate_scoring"] = meta.supports_candidate_scoring;
  if (supports_tokenize) j["tokenize"] = true;
  return j.dump();
}

BackendMeta decode_meta(std::string_view body, bool* supports_tokenize) {
  json j = parse(body);
  BackendMeta m;
  m.backend_id = field<std::string>(j, "backend_id");
  check_envelope(j, m.backend_id);
  m.hidden_dim = field<std::size_t>(j, "hidden_dim");
  m.single_token_only = field<bool>(j, "single_token_only");
  m.supports_candidate_scoring = field<bool>(j, "supports_candidate_scoring");
  if (m.hidden_dim == 0) throw BackendError("sidecar reports hidden_dim 0");
  if (supports_tokenize) *supports_tokenize = j.value("tokenize", false);
  return m;
}

std::string encode_topk_request(const TopKRequest& req) {
  json j;
  j["prompt"] = req.prompt;
  j["k"] = req.k;
  if (req.candidates) j["candidates"] = *req.candidates;
  return j.dump();
}

TopKRequest decode_topk_request(std::string_view body) {
  json j = parse(body);
  TopKRequest req;
  req.prompt = field<std::string>(j, "prompt");
  req.k = field<std::size_t>(j, "k");
  if (j.contains("candidates") && !j["candidates"].is_null()) {
    req.candidates = field<std::vector<std::string>>(j, "candidates");
  }
  return req;
}

std::string encode_topk_response(std::string_view backend_id, const std::vector<Candidate>& results) {
  json j = envelope(backend_id);
  j["results"] = json::array();
  for (const auto& c : results) {
    j["results"].push_back({{"object", c.object}, {"rank", c.rank}, {"log_score", c.log_score}});
  }
  return j.dump();
}

std::vector<Candidate> decode_topk_response(std::string_view body, std::string_view backend_id) {
  json j = parse(body);
  check_envelope(j, backend_id);
  std::vector<Candidate> out;
  for (const auto& r : field<json>(j, "results")) {
    out.push_back({field<std::string>(r, "object"), field<std::size_t>(r, "rank"),
                   field<double>(r, "log_score")});
  }
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (out[i].rank != i + 1 || (i > 0 && out[i].log_score > out[i - 1].log_score)) {
      throw BackendError("sidecar returned an inconsistent ranking");
    }
  }
  return out;
}

std::string encode_hidden_request(const std::vector<std::string>& texts) {
  return json{{"texts", texts}}.dump();
}

std::vector<std::string> decode_hidden_request(std::string_view body) {
  return field<std::vector<std::string>>(parse(body), "texts");
}

std::string encode_hidden_response(std::string_view backend_id, const std::vector<HVector>& vectors) {
  json j = envelope(backend_id);
  j["layer"] = kLayerLastEncoder;
  j["position"] = kPositionFinalToken;
  j["vectors"] = json::array();
  for (const auto& v : vectors) j["vectors"].push_back(v.values);
  return j.dump();
}

std::vector<HVector> decode_hidden_response(std::string_view body, std::string_view backend_id,
                                            const std::vector<std::string>& texts) {
  json j = parse(body);
  check_envelope(j, backend_id);
  const auto layer = field<std::string>(j, "layer");
  const auto position = field<std::string>(j, "position");
  auto vectors = field<std::vector<std::vector<float>>>(j, "vectors");
  if (vectors.size() != texts.size()) {
    throw BackendError("sidecar returned " + std::to_string(vectors.size()) + " vectors for " +
                       std::to_string(texts.size()) + " texts");
  }
  std::vector<HVector> out(vectors.size());
  for (std::size_t i = 0; i < vectors.size(); ++i) {
    out[i].values = std::move(vectors[i]);
    out[i].layer_tag = layer;
    out[i].position_tag = position;
    out[i].source_text_hash = text_hash(texts[i]);
  }
  return out;
}

std::string encode_tokenize_request(const std::vector<std::string>& texts) {
  return json{{"texts", texts}}.dump();
}

std::vector<std::string> decode_tokenize_request(std::string_view body) {
  return field<std::vector<std::string>>(parse(body), "texts");
}

std::string encode_tokenize_response(std::string_view backend_id,
                                     const std::vector<std::size_t>& counts) {
  json j = envelope(backend_id);
  j["counts"] = counts;
  return j.dump();
}

std::vector<std::size_t> decode_tokenize_response(std::string_view body,
                                                  std::string_view backend_id) {
  json j = parse(body);
  check_envelope(j, backend_id);
  return field<std::vector<std::size_t>>(j, "counts");
}

std::string encode_error(std::string_view code, std::string_view message) {
  return json{{"error", {{"code", code}, {"message", message}}}}.dump();
}

}  // namespace wire

class RemoteBackend::RemoteTokenCounter final : public TokenCounter {
 public:
  explicit RemoteTokenCounter(const RemoteBackend& owner) : owner_(owner) {}

  std::size_t token_count(std::string_view object) const override {
    const std::vector<std::string> texts{std::string(object)};
    auto counts = wire::decode_tokenize_response(
        owner_.post("/v1/tokenize", wire::encode_tokenize_request(texts)), owner_.meta_.backend_id);
    if (counts.size() != 1) throw BackendError("sidecar tokenize returned wrong count");
    return counts.front();
  }

 private:
  const RemoteBackend& owner_;
};

RemoteBackend::RemoteBackend(std::string endpoint, std::chrono::milliseconds timeout)
    : endpoint_(std::move(endpoint)), timeout_(timeout) {
  while (!endpoint_.empty() && endpoint_.back() == '/') endpoint_.pop_back();
  bool tokenize = false;
  meta_ = wire::decode_meta(get("/v1/meta"), &tokenize);
  if (tokenize) counter_ = std::make_unique<RemoteTokenCounter>(*this);
}

RemoteBackend::~RemoteBackend() = default;

std::string RemoteBackend::get(const std::string& path) const {
  httplib::Client client(endpoint_);
  client.set_connection_timeout(timeout_);
  client.set_read_timeout(timeout_);
  auto res = client.Get(path);
  if (!res) {
    throw BackendError("sidecar " + endpoint_ + " unreachable (" + httplib::to_string(res.error()) +
                       ")");
  }
  if (res->status >= 400) {
    // Error envelope decoding throws with the server's message.
    wire::decode_meta(res->body);
    throw BackendError("sidecar " + endpoint_ + path + " returned HTTP " +
                       std::to_string(res->status));
  }
  return res->body;
}

std::string RemoteBackend::post(const std::string& path, const std::string& body) const {
  httplib::Client client(endpoint_);
  client.set_connection_timeout(timeout_);
  client.set_read_timeout(timeout_);
  auto res = client.Post(path, body, "application/json");
  if (!res) {
    throw BackendError("sidecar " + endpoint_ + " unreachable (" + httplib::to_string(res.error()) +
                       ")");
  }
  if (res->status >= 400) {
    std::string message = "sidecar " + endpoint_ + path + " returned HTTP " +
                          std::to_string(res->status);
    try {
      wire::decode_topk_response(res->body, meta_.backend_id);
    } catch (const BackendError& e) {
      message += ": ";
      message += e.what();
    }
    throw BackendError(message);
  }
  return res->body;
}

TopK RemoteBackend::topk(std::string_view prompt, std::size_t k,
                         const CandidateSet* candidates) const {
  if (k == 0) throw ValidationError("topk requires k >= 1");
  wire::TopKRequest req{std::string(prompt), k, std::nullopt};
  if (candidates) {
    if (!meta_.supports_candidate_scoring) {
      throw ValidationError("backend " + meta_.backend_id + " cannot score candidate sets");
    }
    candidates->validate();
    req.candidates = candidates->objects;
  }
  TopK out;
  out.candidates =
      wire::decode_topk_response(post("/v1/topk", wire::encode_topk_request(req)), meta_.backend_id);
  if (out.candidates.size() > k) out.candidates.resize(k);
  if (candidates) {
    for (const auto& c : out.candidates) {
      if (!candidates->contains(c.object)) {
        throw BackendError("sidecar returned '" + c.object + "' outside the candidate set");
      }
    }
  }
  out.truncated = out.candidates.size() < k;
  return out;
}

HVector RemoteBackend::hidden(std::string_view text) const {
  const std::string t(text);
  return hidden_batch(std::span<const std::string>(&t, 1)).front();
}

std::vector<HVector> RemoteBackend::hidden_batch(std::span<const std::string> texts) const {
  std::vector<std::string> req(texts.begin(), texts.end());
  for (const auto& t : req) {
    if (t.empty()) throw ValidationError("hidden() requires non-empty text");
  }
  auto out = wire::decode_hidden_response(post("/v1/hidden", wire::encode_hidden_request(req)),
                                          meta_.backend_id, req);
  for (const auto& v : out) check_hidden(v, meta_);
  return out;
}

const TokenCounter* RemoteBackend::tokenizer() const { return counter_.get(); }

bool RemoteBackend::meta_stable() const { return wire::decode_meta(get("/v1/meta")) == meta_; }

}  // namespace factprobe
