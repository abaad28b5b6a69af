#include "support.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <cstdlib>
#include <fstream>
#include <random>
#include <sstream>
#include <stdexcept>

#include <httplib.h>
#include <json.hpp>

#include "factprobe/remote.hpp"

#ifndef FACTPROBE_TEST_DATA_DIR
#error "FACTPROBE_TEST_DATA_DIR must be defined"
#endif

namespace fpt {

TempDir::TempDir() {
  std::string tmpl = (std::filesystem::temp_directory_path() / "factprobe-test-XXXXXX").string();
  if (::mkdtemp(tmpl.data()) == nullptr) throw std::runtime_error("mkdtemp failed");
  path_ = tmpl;
}

TempDir::~TempDir() {
  std::error_code ec;
  std::filesystem::remove_all(path_, ec);
}

std::size_t World::gold_rank(const Triple& t) const {
  return spec.gold_rank_table.at({t.subject, t.relation_id}).rank;
}

World make_world(const WorldOptions& o) {
  World w;
  w.dataset = make_synthetic_dataset(o.name, o.n_triples, o.n_objects, o.seed, o.subject_prefix);
  w.templates = synthetic_templates();
  const Dataset* all[] = {&w.dataset};
  w.spec.seed = o.seed;
  w.spec.hidden_dim = o.hidden_dim;
  w.spec.margin = o.margin;
  w.spec.noise_sigma = o.noise_sigma;
  w.spec.vocab = build_vocab(all, o.vocab_size);
  w.spec.gold_rank_table = draw_gold_ranks(all, o.seed, o.top1_rate, o.tail_p, o.max_rank);
  w.backend = std::make_unique<SyntheticBackend>(w.spec, w.templates);
  return w;
}

SplitWorld make_split_world(std::size_t n_train, std::size_t n_test, const WorldOptions& o) {
  SplitWorld w;
  w.train = make_synthetic_dataset("train", n_train, o.n_objects, o.seed, "train-entity");
  w.test = make_synthetic_dataset("test", n_test, o.n_objects, mix64(o.seed + 1), "test-entity");
  w.templates = synthetic_templates();
  const Dataset* all[] = {&w.train, &w.test};
  w.spec.seed = o.seed;
  w.spec.hidden_dim = o.hidden_dim;
  w.spec.margin = o.margin;
  w.spec.noise_sigma = o.noise_sigma;
  w.spec.vocab = build_vocab(all, o.vocab_size);
  w.spec.gold_rank_table = draw_gold_ranks(all, o.seed, o.top1_rate, o.tail_p, o.max_rank);
  w.backend = std::make_unique<SyntheticBackend>(w.spec, w.templates);
  return w;
}

double table_hit_rate(const GoldRankTable& table, const Dataset& dataset, std::size_t k) {
  std::size_t hits = 0;
  for (const auto& t : dataset.triples) hits += table.at({t.subject, t.relation_id}).rank <= k;
  return 100.0 * static_cast<double>(hits) / static_cast<double>(dataset.size());
}

std::vector<std::string> brute_force_ranking(const SyntheticBackend& b, const std::string& prompt,
                                             const std::vector<std::string>& pool) {
  std::vector<std::pair<double, std::string>> scored;
  for (const auto& o : pool) scored.emplace_back(b.planted_logit(prompt, o), o);
  std::sort(scored.begin(), scored.end(), [](const auto& x, const auto& y) {
    return x.first != y.first ? x.first > y.first : x.second < y.second;
  });
  std::vector<std::string> out;
  for (auto& [_, o] : scored) out.push_back(o);
  return out;
}

double ObjectScorer::probability(const HVector& h) const {
  return std::find(accepted_.begin(), accepted_.end(), h.source_text_hash) != accepted_.end() ? 1.0
                                                                                              : 0.0;
}

FixtureServer::FixtureServer(const Backend& backend, Options options)
    : backend_(backend), options_(std::move(options)), server_(std::make_unique<httplib::Server>()) {
  auto data_id = [this] {
    return options_.response_backend_id.empty() ? backend_.meta().backend_id
                                                : options_.response_backend_id;
  };
  auto patch_version = [this](std::string body) {
    if (options_.response_version == 0) return body;
    auto j = nlohmann::json::parse(body);
    j["version"] = options_.response_version;
    return j.dump();
  };
  auto fail = [](httplib::Response& res, int status, const std::string& code, const char* msg) {
    res.status = status;
    res.set_content(wire::encode_error(code, msg), "application/json");
  };

  server_->Get("/v1/meta", [=, this](const httplib::Request&, httplib::Response& res) {
    ++requests_;
    if (options_.meta_error) return fail(res, 503, "not_ready", "model not loaded");
    res.set_content(wire::encode_meta(backend_.meta(), options_.tokenize), "application/json");
  });
  server_->Post("/v1/topk", [=, this](const httplib::Request& req, httplib::Response& res) {
    ++requests_;
    try {
      const auto r = wire::decode_topk_request(req.body);
      std::optional<CandidateSet> cs;
      if (r.candidates) cs = CandidateSet{"", *r.candidates};
      const auto top = backend_.topk(r.prompt, r.k, cs ? &*cs : nullptr);
      res.set_content(patch_version(wire::encode_topk_response(data_id(), top.candidates)),
                      "application/json");
    } catch (const std::exception& e) {
      fail(res, 400, "bad_request", e.what());
    }
  });
  server_->Post("/v1/hidden", [=, this](const httplib::Request& req, httplib::Response& res) {
    ++requests_;
    try {
      const auto texts = wire::decode_hidden_request(req.body);
      const auto vectors = backend_.hidden_batch(texts);
      res.set_content(patch_version(wire::encode_hidden_response(data_id(), vectors)),
                      "application/json");
    } catch (const std::exception& e) {
      fail(res, 400, "bad_request", e.what());
    }
  });
  if (options_.tokenize) {
    server_->Post("/v1/tokenize", [=, this](const httplib::Request& req, httplib::Response& res) {
      ++requests_;
      try {
        const auto texts = wire::decode_tokenize_request(req.body);
        const TokenCounter* tc = backend_.tokenizer();
        if (tc == nullptr) return fail(res, 404, "unsupported", "no tokenizer");
        std::vector<std::size_t> counts;
        for (const auto& t : texts) counts.push_back(tc->token_count(t));
        res.set_content(wire::encode_tokenize_response(data_id(), counts), "application/json");
      } catch (const std::exception& e) {
        fail(res, 400, "bad_request", e.what());
      }
    });
  }
  port_ = server_->bind_to_any_port("127.0.0.1");
  if (port_ <= 0) throw std::runtime_error("fixture server could not bind");
  thread_ = std::thread([this] { server_->listen_after_bind(); });
  server_->wait_until_ready();
}

FixtureServer::~FixtureServer() {
  server_->stop();
  if (thread_.joinable()) thread_.join();
}

std::string FixtureServer::endpoint() const { return "http://127.0.0.1:" + std::to_string(port_); }

const std::vector<ReferenceRow> kReferenceRows = {
    {"AUTOPROMPT", "LAMA", "BERT-base", 29.29, 38.99, 33.12},
    {"AUTOPROMPT", "LAMA", "BERT-large", 31.37, 40.04, 27.64},
    {"AUTOPROMPT", "LAMA", "T5-base", 14.52, 16.59, 14.26},
    {"AUTOPROMPT", "LAMA", "T5-large", 17.63, 19.50, 10.61},
    {"AUTOPROMPT", "WIKIUNI", "BERT-base", 14.94, 16.93, 13.32},
    {"AUTOPROMPT", "WIKIUNI", "BERT-large", 16.79, 19.14, 14.00},
    {"AUTOPROMPT", "WIKIUNI", "T5-base", 5.90, 6.15, 4.24},
    {"AUTOPROMPT", "WIKIUNI", "T5-large", 7.44, 7.43, -0.13},
    {"WIKIUNI", "LAMA", "BERT-base", 29.29, 34.23, 16.87},
    {"WIKIUNI", "LAMA", "BERT-large", 31.37, 36.26, 15.59},
    {"WIKIUNI", "LAMA", "T5-base", 14.53, 16.21, 11.56},
    {"WIKIUNI", "LAMA", "T5-large", 17.63, 18.94, 7.43},
};

double pearson_oracle(const FreqDist& a, const FreqDist& b) {
  std::map<std::string, std::pair<long long, long long>> joint;
  for (const auto& [k, c] : a.counts) joint[k].first = static_cast<long long>(c);
  for (const auto& [k, c] : b.counts) joint[k].second = static_cast<long long>(c);
  long long n = 0, sx = 0, sy = 0, sxx = 0, syy = 0, sxy = 0;
  for (const auto& [_, xy] : joint) {
    const auto [x, y] = xy;
    ++n;
    sx += x;
    sy += y;
    sxx += x * x;
    syy += y * y;
    sxy += x * y;
  }
  const long long vx = n * sxx - sx * sx;
  const long long vy = n * syy - sy * sy;
  if (n < 2 || vx == 0 || vy == 0) return std::nan("");
  return static_cast<double>(static_cast<long double>(n * sxy - sx * sy) /
                             std::sqrt(static_cast<long double>(vx) * static_cast<long double>(vy)));
}

void write_lines(const std::filesystem::path& path, const std::vector<std::string>& lines) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  for (const auto& l : lines) out << l << '\n';
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::filesystem::path fixture(const std::string& name) {
  return std::filesystem::path(FACTPROBE_TEST_DATA_DIR) / name;
}

}  // namespace fpt
