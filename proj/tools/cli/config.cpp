#include "cli/config.hpp"

#include <cstdlib>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

#include "factprobe/eval.hpp"
#include "factprobe/remote.hpp"
#include "factprobe/synthetic.hpp"

namespace factprobe::cli {

using nlohmann::json;

namespace {

const std::set<std::string, std::less<>> kTopLevelKeys = {
    "backend",       "train",         "test",       "templates",  "strict_templates",
    "candidate_mode", "augment_k",    "neg_index",  "k",          "sweep",
    "negative_mode", "scan_mode",     "helper",     "heldout_fraction", "cache",
    "output",        "workers",       "seed",       "max_failure_ratio", "allow_backend_mismatch"};

template <typename T>
T get_or(const json& j, const char* key, T fallback) {
  auto it = j.find(key);
  if (it == j.end() || it->is_null()) return fallback;
  try {
    return it->get<T>();
  } catch (const json::exception& e) {
    throw ValidationError(std::string("config key '") + key + "' has the wrong type: " + e.what());
  }
}

CandidateMode parse_candidate_mode(const std::string& s) {
  if (s == "full-vocab") return CandidateMode::full_vocab;
  if (s == "typed") return CandidateMode::typed;
  throw ValidationError("candidate_mode must be full-vocab or typed, got '" + s + "'");
}

NegativeMode parse_negative_mode(const std::string& s) {
  if (s == "single-rank") return NegativeMode::single_rank;
  if (s == "all-ranks") return NegativeMode::all_ranks;
  throw ValidationError("negative_mode must be single-rank or all-ranks, got '" + s + "'");
}

ScanMode parse_scan_mode(const std::string& s) {
  if (s == "first-accept") return ScanMode::first_accept;
  if (s == "max-probability") return ScanMode::max_probability;
  throw ValidationError("scan_mode must be first-accept or max-probability, got '" + s + "'");
}

void set_path(json& doc, std::string_view dotted, json value) {
  json* node = &doc;
  std::size_t start = 0;
  for (;;) {
    const auto dot = dotted.find('.', start);
    const std::string key(dotted.substr(start, dot == std::string_view::npos ? dotted.npos : dot - start));
    if (key.empty()) throw ValidationError("bad override key '" + std::string(dotted) + "'");
    if (dot == std::string_view::npos) {
      (*node)[key] = std::move(value);
      return;
    }
    if (!node->contains(key) || !(*node)[key].is_object()) (*node)[key] = json::object();
    node = &(*node)[key];
    start = dot + 1;
  }
}

GoldRankTable load_gold_ranks(const std::filesystem::path& path,
                              std::span<const Dataset* const> datasets) {
  std::map<std::pair<std::string, std::string>, std::string> golds;
  for (const Dataset* ds : datasets) {
    for (const auto& t : ds->triples) golds.emplace(std::make_pair(t.subject, t.relation_id), t.object);
  }
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open gold rank table " + path.string());
  GoldRankTable table;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line.front() == '#') continue;
    std::istringstream fields(line);
    std::string subject, relation, rank;
    if (!std::getline(fields, subject, '\t') || !std::getline(fields, relation, '\t') ||
        !std::getline(fields, rank)) {
      throw ValidationError(path.string() + ":" + std::to_string(lineno) +
                            ": expected subject<TAB>relation<TAB>rank");
    }
    auto key = std::make_pair(subject, relation);
    auto g = golds.find(key);
    if (g == golds.end()) continue;
    std::size_t r = 0;
    try {
      r = std::stoul(rank);
    } catch (const std::exception&) {
      throw ValidationError(path.string() + ":" + std::to_string(lineno) + ": bad rank '" + rank + "'");
    }
    table[key] = GoldEntry{g->second, r};
  }
  return table;
}

}  // namespace

RunConfig config_from_json(const json& doc) {
  if (!doc.is_object()) throw ValidationError("config must be a JSON object");
  for (const auto& [key, _] : doc.items()) {
    if (!kTopLevelKeys.contains(key)) throw ValidationError("unknown config key '" + key + "'");
  }
  RunConfig c;
  const json backend = doc.value("backend", json::object());
  const bool has_synth = backend.contains("synthetic");
  const bool has_remote = backend.contains("remote");
  if (has_synth == has_remote) {
    if (has_synth || !backend.empty()) {
      throw ValidationError("config must name exactly one backend: synthetic or remote");
    }
  }
  if (has_remote) {
    c.backend = RunConfig::BackendKind::remote;
    c.endpoint = get_or<std::string>(backend["remote"], "endpoint", "");
  } else {
    c.backend = RunConfig::BackendKind::synthetic;
    const json s = has_synth ? backend["synthetic"] : json::object();
    auto& sc = c.synthetic;
    sc.seed = get_or<std::uint64_t>(s, "seed", sc.seed);
    sc.hidden_dim = get_or<std::size_t>(s, "hidden_dim", sc.hidden_dim);
    sc.margin = get_or<double>(s, "margin", sc.margin);
    sc.noise_sigma = get_or<double>(s, "noise_sigma", sc.noise_sigma);
    sc.vocab_size = get_or<std::size_t>(s, "vocab_size", sc.vocab_size);
    sc.top1_rate = get_or<double>(s, "top1_rate", sc.top1_rate);
    sc.tail_p = get_or<double>(s, "tail_p", sc.tail_p);
    sc.max_rank = get_or<std::size_t>(s, "max_rank", sc.max_rank);
    if (s.contains("gold_ranks") && !s["gold_ranks"].is_null()) {
      sc.gold_ranks = get_or<std::string>(s, "gold_ranks", "");
    }
  }
  c.train_path = get_or<std::string>(doc, "train", "");
  c.test_path = get_or<std::string>(doc, "test", "");
  c.templates_path = get_or<std::string>(doc, "templates", "");
  c.strict_templates = get_or<bool>(doc, "strict_templates", c.strict_templates);
  c.candidate_mode = parse_candidate_mode(get_or<std::string>(doc, "candidate_mode", "full-vocab"));
  c.augment_k = get_or<std::size_t>(doc, "augment_k", c.augment_k);
  c.neg_index = get_or<std::size_t>(doc, "neg_index", c.neg_index);
  if (doc.contains("k") && !doc["k"].is_null()) c.k = get_or<std::size_t>(doc, "k", 1);
  c.sweep = get_or<std::vector<std::size_t>>(doc, "sweep", {});
  c.negatives = parse_negative_mode(get_or<std::string>(doc, "negative_mode", "single-rank"));
  c.scan = parse_scan_mode(get_or<std::string>(doc, "scan_mode", "first-accept"));
  const json h = doc.value("helper", json::object());
  c.helper.lambda = get_or<double>(h, "lambda", c.helper.lambda);
  c.helper.tol = get_or<double>(h, "tol", c.helper.tol);
  c.helper.max_iter = get_or<std::size_t>(h, "max_iter", c.helper.max_iter);
  c.helper.seed = get_or<std::uint64_t>(h, "seed", c.helper.seed);
  c.heldout_fraction = get_or<double>(doc, "heldout_fraction", c.heldout_fraction);
  if (doc.contains("cache") && !doc["cache"].is_null()) c.cache = get_or<std::string>(doc, "cache", "");
  c.output = get_or<std::string>(doc, "output", c.output.string());
  c.workers = get_or<std::size_t>(doc, "workers", c.workers);
  c.seed = get_or<std::uint64_t>(doc, "seed", c.seed);
  c.max_failure_ratio = get_or<double>(doc, "max_failure_ratio", c.max_failure_ratio);
  c.allow_backend_mismatch = get_or<bool>(doc, "allow_backend_mismatch", c.allow_backend_mismatch);
  return c;
}

json config_to_json(const RunConfig& c) {
  json doc = json::object();
  if (c.backend == RunConfig::BackendKind::remote) {
    doc["backend"]["remote"]["endpoint"] = c.endpoint;
  } else {
    auto& s = doc["backend"]["synthetic"];
    s["seed"] = c.synthetic.seed;
    s["hidden_dim"] = c.synthetic.hidden_dim;
    s["margin"] = c.synthetic.margin;
    s["noise_sigma"] = c.synthetic.noise_sigma;
    s["vocab_size"] = c.synthetic.vocab_size;
    s["top1_rate"] = c.synthetic.top1_rate;
    s["tail_p"] = c.synthetic.tail_p;
    s["max_rank"] = c.synthetic.max_rank;
    s["gold_ranks"] = c.synthetic.gold_ranks ? json(c.synthetic.gold_ranks->string()) : json(nullptr);
  }
  doc["train"] = c.train_path.string();
  doc["test"] = c.test_path.string();
  doc["templates"] = c.templates_path.string();
  doc["strict_templates"] = c.strict_templates;
  doc["candidate_mode"] = c.candidate_mode == CandidateMode::typed ? "typed" : "full-vocab";
  doc["augment_k"] = c.augment_k;
  doc["neg_index"] = c.neg_index;
  doc["k"] = c.k ? json(*c.k) : json(nullptr);
  doc["sweep"] = c.sweep;
  doc["negative_mode"] = c.negatives == NegativeMode::all_ranks ? "all-ranks" : "single-rank";
  doc["scan_mode"] = c.scan == ScanMode::max_probability ? "max-probability" : "first-accept";
  doc["helper"] = {{"lambda", c.helper.lambda},
                   {"tol", c.helper.tol},
                   {"max_iter", c.helper.max_iter},
                   {"seed", c.helper.seed}};
  doc["heldout_fraction"] = c.heldout_fraction;
  doc["cache"] = c.cache ? json(c.cache->string()) : json(nullptr);
  doc["output"] = c.output.string();
  doc["workers"] = c.workers;
  doc["seed"] = c.seed;
  doc["max_failure_ratio"] = c.max_failure_ratio;
  doc["allow_backend_mismatch"] = c.allow_backend_mismatch;
  return doc;
}

json load_config_document(const std::optional<std::filesystem::path>& path,
                          const std::vector<std::string>& overrides) {
  json doc = json::object();
  if (path) {
    std::ifstream in(*path);
    if (!in) throw ValidationError("cannot open config " + path->string());
    try {
      doc = json::parse(in, nullptr, true, true);
    } catch (const json::parse_error& e) {
      throw ValidationError("config " + path->string() + ": " + e.what());
    }
  }
  apply_overrides(doc, overrides);
  return doc;
}

void apply_overrides(json& doc, const std::vector<std::string>& overrides) {
  for (const auto& ov : overrides) {
    const auto eq = ov.find('=');
    if (eq == std::string::npos) throw ValidationError("override '" + ov + "' lacks '='");
    const std::string key = ov.substr(0, eq);
    const std::string raw = ov.substr(eq + 1);
    json value = json::parse(raw, nullptr, false);
    if (value.is_discarded()) value = raw;
    set_path(doc, key, std::move(value));
  }
}

void validate_config(const RunConfig& c, bool need_test) {
  auto readable = [](const std::filesystem::path& p, const char* what) {
    if (p.empty()) throw ValidationError(std::string(what) + " path is not set");
    if (!std::filesystem::is_regular_file(p)) {
      throw ValidationError(std::string(what) + " file " + p.string() + " does not exist");
    }
  };
  readable(c.train_path, "train");
  if (need_test || c.backend == RunConfig::BackendKind::synthetic) readable(c.test_path, "test");
  readable(c.templates_path, "templates");
  if (c.backend == RunConfig::BackendKind::remote) {
    if (c.endpoint.empty()) throw ValidationError("remote backend needs an endpoint");
  } else {
    const auto& s = c.synthetic;
    if (s.hidden_dim == 0) throw ValidationError("synthetic.hidden_dim must be positive");
    if (!(s.margin > 0.0)) throw ValidationError("synthetic.margin must be positive");
    if (!(s.noise_sigma >= 0.0)) throw ValidationError("synthetic.noise_sigma must be >= 0");
    if (s.max_rank < 1 || s.max_rank > s.vocab_size) {
      throw ValidationError("synthetic.max_rank must lie in 1..vocab_size");
    }
    if (!(s.top1_rate >= 0.0 && s.top1_rate <= 1.0)) {
      throw ValidationError("synthetic.top1_rate must lie in [0, 1]");
    }
    if (!(s.tail_p > 0.0 && s.tail_p <= 1.0)) throw ValidationError("synthetic.tail_p must lie in (0, 1]");
    if (s.gold_ranks) readable(*s.gold_ranks, "gold rank table");
  }
  if (c.neg_index < 2) {
    throw ValidationError("neg_index must be >= 2, got " + std::to_string(c.neg_index));
  }
  if (c.k && *c.k < 1) throw ValidationError("k must be >= 1");
  validate_neg_indices(c.sweep);
  c.helper.validate();
  if (!(c.heldout_fraction >= 0.0 && c.heldout_fraction < 1.0)) {
    throw ValidationError("heldout_fraction must lie in [0, 1)");
  }
  if (c.workers < 1) throw ValidationError("workers must be >= 1");
  if (!(c.max_failure_ratio >= 0.0 && c.max_failure_ratio <= 1.0)) {
    throw ValidationError("max_failure_ratio must lie in [0, 1]");
  }
}

std::optional<std::filesystem::path> resolve_cache_path(const RunConfig& config) {
  if (config.cache) return config.cache;
  if (const char* dir = std::getenv(kCacheDirEnv); dir != nullptr && *dir != '\0') {
    return std::filesystem::path(dir) / "hidden.hsc";
  }
  return std::nullopt;
}

Workspace::Workspace(const RunConfig& config, bool need_test) {
  const auto templates = load_templates(config.templates_path);
  LoadOptions lo;
  lo.strict = config.strict_templates;
  LoadStats stats;
  raw_train_ = load_dataset(config.train_path, templates, lo, &stats);
  if (stats.duplicates_removed || stats.missing_template) {
    warn(config.train_path.string() + ": removed " + std::to_string(stats.duplicates_removed) +
         " duplicates, skipped " + std::to_string(stats.missing_template) +
         " records without a template");
  }
  if (!config.test_path.empty()) {
    raw_test_ = load_dataset(config.test_path, templates, lo, &stats);
    if (stats.duplicates_removed || stats.missing_template) {
      warn(config.test_path.string() + ": removed " + std::to_string(stats.duplicates_removed) +
           " duplicates, skipped " + std::to_string(stats.missing_template) +
           " records without a template");
    }
  }
  if (need_test && raw_test_.empty()) throw ValidationError("test dataset is empty");

  if (config.backend == RunConfig::BackendKind::remote) {
    base_ = std::make_unique<RemoteBackend>(config.endpoint);
  } else {
    const auto& sc = config.synthetic;
    const Dataset* all[] = {&raw_train_, &raw_test_};
    SyntheticSpec spec;
    spec.seed = sc.seed;
    spec.hidden_dim = sc.hidden_dim;
    spec.margin = sc.margin;
    spec.noise_sigma = sc.noise_sigma;
    spec.vocab = build_vocab(all, sc.vocab_size);
    spec.gold_rank_table = sc.gold_ranks
                               ? load_gold_ranks(*sc.gold_ranks, all)
                               : draw_gold_ranks(all, sc.seed, sc.top1_rate, sc.tail_p, sc.max_rank);
    base_ = std::make_unique<SyntheticBackend>(std::move(spec), templates);
  }
  if (auto cache_path = resolve_cache_path(config)) {
    cached_ = std::make_unique<CachedBackend>(*base_, *cache_path);
  }

  train_ = prepare_for_backend(raw_train_, backend());
  test_ = prepare_for_backend(raw_test_, backend());
  if (train_.empty()) throw ValidationError("training dataset is empty after filtering");
  if (need_test && test_.empty()) throw ValidationError("test dataset is empty after filtering");

  if (config.candidate_mode == CandidateMode::typed) {
    const Dataset* all[] = {&train_, &test_};
    candidate_sets_ = build_candidate_sets(all, backend(), config.augment_k);
  }
}

std::pair<Dataset, Dataset> Workspace::split_train(double heldout_fraction,
                                                   std::uint64_t seed) const {
  const std::size_t n = train_.size();
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  // Fisher-Yates on raw mt19937_64 output: identical on every standard library.
  std::mt19937_64 engine(mix64(seed ^ 0x686f6c646f7574ULL));
  for (std::size_t i = n; i > 1; --i) std::swap(idx[i - 1], idx[engine() % i]);
  const auto n_held = static_cast<std::size_t>(heldout_fraction * static_cast<double>(n));
  std::vector<bool> held(n, false);
  for (std::size_t i = 0; i < n_held; ++i) held[idx[i]] = true;

  Dataset fit;
  Dataset out;
  fit.name = train_.name;
  out.name = train_.name + "-heldout";
  fit.templates = out.templates = train_.templates;
  for (std::size_t i = 0; i < n; ++i) (held[i] ? out : fit).triples.push_back(train_.triples[i]);
  return {std::move(fit), std::move(out)};
}

}  // namespace factprobe::cli
