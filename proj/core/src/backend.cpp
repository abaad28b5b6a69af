#include "factprobe/backend.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace factprobe {

void CandidateSet::validate() const {
  if (objects.empty()) {
    throw ValidationError("candidate set for " + relation_id + " is empty");
  }
  std::set<std::string_view> seen;
  for (const auto& o : objects) {
    if (!seen.insert(o).second) {
      throw ValidationError("candidate set for " + relation_id + " repeats '" + o + "'");
    }
  }
}

bool CandidateSet::contains(std::string_view object) const {
  return std::find(objects.begin(), objects.end(), object) != objects.end();
}

std::vector<HVector> Backend::hidden_batch(std::span<const std::string> texts) const {
  std::vector<HVector> out;
  out.reserve(texts.size());
  for (const auto& t : texts) out.push_back(hidden(t));
  return out;
}

Dataset prepare_for_backend(const Dataset& dataset, const Backend& backend) {
  if (!backend.meta().single_token_only) return dataset;
  const TokenCounter* counter = backend.tokenizer();
  if (counter == nullptr) {
    throw ValidationError("backend " + backend.meta().backend_id +
                          " is single-token-only but exposes no tokenizer");
  }
  return filter_single_token(dataset, *counter);
}

CandidateSet build_candidate_set(const std::string& relation_id,
                                 std::span<const std::string> dataset_objects,
                                 const Backend& backend, const PromptTemplate& tmpl,
                                 std::size_t augment_k, std::string_view ablated_subject) {
  if (tmpl.relation_id() != relation_id) {
    throw ValidationError("template " + tmpl.relation_id() + " does not belong to " +
                          relation_id);
  }
  CandidateSet set{relation_id, {}};
  std::set<std::string, std::less<>> seen(dataset_objects.begin(), dataset_objects.end());
  set.objects.assign(seen.begin(), seen.end());
  if (augment_k > 0) {
    const auto prompt = fill_prompt(tmpl, ablated_subject, std::nullopt);
    for (auto& c : backend.topk(prompt, augment_k).candidates) {
      if (seen.insert(c.object).second) set.objects.push_back(std::move(c.object));
    }
  }
  return set;
}

CandidateSets build_candidate_sets(std::span<const Dataset* const> datasets,
                                   const Backend& backend, std::size_t augment_k) {
  std::map<std::string, std::set<std::string>> objects;
  std::map<std::string, const PromptTemplate*> templates;
  for (const Dataset* ds : datasets) {
    for (const auto& t : ds->triples) {
      objects[t.relation_id].insert(t.object);
      templates.emplace(t.relation_id, &ds->template_for(t));
    }
  }
  CandidateSets sets;
  for (const auto& [rel, objs] : objects) {
    std::vector<std::string> sorted(objs.begin(), objs.end());
    sets.emplace(rel, build_candidate_set(rel, sorted, backend, *templates.at(rel), augment_k));
  }
  return sets;
}

void rank_candidates(std::vector<Candidate>& candidates) {
  std::stable_sort(candidates.begin(), candidates.end(), [](const Candidate& a, const Candidate& b) {
    if (a.log_score != b.log_score) return a.log_score > b.log_score;
    return a.object < b.object;
  });
  for (std::size_t i = 0; i < candidates.size(); ++i) candidates[i].rank = i + 1;
}

void check_hidden(const HVector& v, const BackendMeta& meta) {
  if (v.values.size() != meta.hidden_dim) {
    throw BackendError("hidden state has dimension " + std::to_string(v.values.size()) +
                       ", backend " + meta.backend_id + " declares " +
                       std::to_string(meta.hidden_dim));
  }
  if (v.layer_tag != kLayerLastEncoder || v.position_tag != kPositionFinalToken) {
    throw BackendError("hidden state tagged " + v.layer_tag + "/" + v.position_tag +
                       ", expected last-encoder/final-token");
  }
  for (float x : v.values) {
    if (!std::isfinite(x)) throw BackendError("hidden state contains a non-finite entry");
  }
}

}  // namespace factprobe
