#include "factprobe/rerank.hpp"

#include <algorithm>
#include <fstream>
#include <mutex>
#include <optional>

#include <json.hpp>

#include "factprobe/parallel.hpp"

namespace factprobe {

void RerankConfig::validate() const {
  if (k < 1) throw ValidationError("rerank k must be >= 1");
  if (!(max_failure_ratio >= 0.0 && max_failure_ratio <= 1.0)) {
    throw ValidationError("max_failure_ratio must lie in [0, 1]");
  }
}

std::string baseline_predict(const Backend& backend, const Triple& triple,
                             const PromptTemplate& tmpl, const CandidateSet* candidates) {
  auto top = backend.topk(fill_prompt(tmpl, triple.subject, std::nullopt), 1, candidates);
  if (top.candidates.empty()) throw BackendError("backend returned no prediction");
  return top.candidates.front().object;
}

Prediction rerank_predict(const Backend& backend, const TruthScorer& scorer, const Triple& triple,
                          const PromptTemplate& tmpl, const RerankConfig& config,
                          const CandidateSet* candidates, std::size_t triple_index) {
  config.validate();
  const auto ranked =
      backend.topk(fill_prompt(tmpl, triple.subject, std::nullopt), config.k, candidates).candidates;
  if (ranked.empty()) throw BackendError("backend returned no prediction");

  Prediction p;
  p.triple_index = triple_index;
  p.gold = triple.object;
  p.baseline_object = ranked.front().object;

  const auto& meta = backend.meta();
  std::size_t best = 0;
  double best_prob = -1.0;
  for (std::size_t i = 0; i < ranked.size(); ++i) {
    HVector h = backend.hidden(fill_prompt(tmpl, triple.subject, ranked[i].object));
    check_hidden(h, meta);
    ++p.scanned;
    const double prob = scorer.probability(h);
    if (prob < scorer.threshold()) continue;
    if (config.scan == ScanMode::first_accept) {
      best = i + 1;
      break;
    }
    if (prob > best_prob) {
      best_prob = prob;
      best = i + 1;
    }
  }
  if (best == 0) {
    p.fell_back = true;
    p.chosen_rank = 1;
  } else {
    p.chosen_rank = best;
  }
  p.reranked_object = ranked[p.chosen_rank - 1].object;
  return p;
}

SplitResult run_split(const Backend& backend, const TruthScorer& scorer, const Dataset& dataset,
                      const RerankConfig& config, const CandidateSets* candidates) {
  config.validate();
  std::vector<std::optional<Prediction>> slots(dataset.size());
  std::vector<SplitFailure> failures;
  std::mutex failure_mutex;
  const auto budget = static_cast<std::size_t>(config.max_failure_ratio *
                                               static_cast<double>(dataset.size()));

  parallel_for(dataset.size(), config.workers, [&](std::size_t i) {
    const Triple& t = dataset.triples[i];
    try {
      slots[i] = rerank_predict(backend, scorer, t, dataset.template_for(t), config,
                                find_candidates(candidates, t.relation_id), i);
    } catch (const BackendError& e) {
      std::lock_guard lock(failure_mutex);
      failures.push_back({i, e.what()});
      if (failures.size() > budget) {
        throw BackendError("aborting split " + dataset.name + ": " +
                           std::to_string(failures.size()) + " failed triples (last: " + e.what() +
                           ")");
      }
    }
  });

  SplitResult out;
  for (auto& s : slots) {
    if (s) out.predictions.push_back(std::move(*s));
  }
  std::sort(failures.begin(), failures.end(),
            [](const SplitFailure& a, const SplitFailure& b) { return a.triple_index < b.triple_index; });
  out.failures = std::move(failures);
  return out;
}

void write_predictions(std::span<const Prediction> predictions, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ValidationError("cannot write predictions " + path.string());
  for (const auto& p : predictions) {
    nlohmann::ordered_json j;
    j["triple_index"] = p.triple_index;
    j["gold"] = p.gold;
    j["baseline_object"] = p.baseline_object;
    j["reranked_object"] = p.reranked_object;
    j["chosen_rank"] = p.chosen_rank;
    j["scanned"] = p.scanned;
    j["fell_back"] = p.fell_back;
    out << j.dump() << '\n';
  }
}

std::vector<Prediction> read_predictions(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open predictions " + path.string());
  std::vector<Prediction> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      Prediction p;
      p.triple_index = j.at("triple_index").get<std::size_t>();
      p.gold = j.at("gold").get<std::string>();
      p.baseline_object = j.at("baseline_object").get<std::string>();
      p.reranked_object = j.at("reranked_object").get<std::string>();
      p.chosen_rank = j.at("chosen_rank").get<std::size_t>();
      p.scanned = j.value("scanned", std::size_t{0});
      p.fell_back = j.at("fell_back").get<bool>();
      out.push_back(std::move(p));
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace factprobe
