#include <doctest.h>

#include <algorithm>

#include "factprobe/eval.hpp"
#include "factprobe/rerank.hpp"
#include "support.hpp"

using namespace factprobe;

namespace {

const PromptTemplate kBorn("P19", "[X] was born in [Y].");

struct Dante {
  SyntheticSpec spec;
  std::unique_ptr<SyntheticBackend> backend;
  std::vector<std::string> ranking;  // brute force, rank order
  Triple triple{"Dante", "P19", "Florence"};

  explicit Dante(std::size_t gold_rank) {
    spec.seed = 2024;
    spec.hidden_dim = 16;
    spec.vocab = {"Florence", "Rome", "Paris", "Lyon", "Vienna", "Berlin", "Madrid", "Lisbon"};
    spec.gold_rank_table[{"Dante", "P19"}] = GoldEntry{"Florence", gold_rank};
    TemplateTable t;
    t.emplace("P19", kBorn);
    backend = std::make_unique<SyntheticBackend>(spec, t);
    ranking = fpt::brute_force_ranking(*backend, "Dante was born in [MASK].", spec.vocab);
  }

  std::uint64_t statement(std::size_t rank) const {
    return text_hash(fill_prompt(kBorn, "Dante", ranking[rank - 1]));
  }
};

RerankConfig with_k(std::size_t k) {
  RerankConfig c;
  c.k = k;
  return c;
}

}  // namespace

TEST_SUITE("rerank") {

TEST_CASE("baseline is the rank-1 prediction") {
  Dante d(3);
  CHECK(baseline_predict(*d.backend, d.triple, kBorn) == d.ranking[0]);
}

TEST_CASE("first-accept picks the first accepted candidate in rank order") {
  Dante d(3);
  REQUIRE(d.ranking[2] == "Florence");
  fpt::ObjectScorer accept_gold({d.statement(3)});
  const auto p = rerank_predict(*d.backend, accept_gold, d.triple, kBorn, with_k(5));
  CHECK(p.reranked_object == "Florence");
  CHECK(p.chosen_rank == 3);
  CHECK(p.scanned == 3);
  CHECK_FALSE(p.fell_back);
  CHECK(p.baseline_object == d.ranking[0]);
  CHECK(p.gold == "Florence");

  fpt::ObjectScorer two_and_three({d.statement(3), d.statement(2)});
  const auto q = rerank_predict(*d.backend, two_and_three, d.triple, kBorn, with_k(5));
  CHECK(q.chosen_rank == 2);
  CHECK(q.reranked_object == d.ranking[1]);
}

TEST_CASE("nothing accepted falls back to rank 1 after scanning all k") {
  Dante d(3);
  fpt::ObjectScorer none({});
  const auto p = rerank_predict(*d.backend, none, d.triple, kBorn, with_k(4));
  CHECK(p.fell_back);
  CHECK(p.chosen_rank == 1);
  CHECK(p.reranked_object == d.ranking[0]);
  CHECK(p.scanned == 4);

  fpt::ObjectScorer beyond_k({d.statement(6)});
  CHECK(rerank_predict(*d.backend, beyond_k, d.triple, kBorn, with_k(5)).fell_back);
}

TEST_CASE("max-probability scan takes the most probable accepted candidate") {
  Dante d(3);
  RerankConfig c = with_k(5);
  c.scan = ScanMode::max_probability;
  fpt::ObjectScorer two_and_three({d.statement(3), d.statement(2)});
  const auto p = rerank_predict(*d.backend, two_and_three, d.triple, kBorn, c);
  // Equal probabilities: the earlier rank wins.
  CHECK(p.chosen_rank == 2);
  CHECK(p.scanned == 5);
}

TEST_CASE("k = 1 reproduces the baseline for any scorer") {
  auto w = fpt::make_world({.n_triples = 60});
  fpt::OracleScorer oracle(*w.backend);
  fpt::ConstScorer yes(1.0, 0.5);
  fpt::ConstScorer no(0.0, 0.5);
  for (const TruthScorer* s : std::initializer_list<const TruthScorer*>{&oracle, &yes, &no}) {
    const auto r = run_split(*w.backend, *s, w.dataset, with_k(1));
    for (const auto& p : r.predictions) CHECK(p.reranked_object == p.baseline_object);
    CHECK(accuracy(r.predictions, Which::reranked) == accuracy(r.predictions, Which::baseline));
  }
}

TEST_CASE("degenerate helpers") {
  auto w = fpt::make_world({.n_triples = 60});
  fpt::ConstScorer always(0.9, 0.5);
  fpt::ConstScorer never(0.1, 0.5);
  for (std::size_t k : {2, 5, 10}) {
    for (const auto& p : run_split(*w.backend, always, w.dataset, with_k(k)).predictions) {
      CHECK(p.chosen_rank == 1);
      CHECK(p.scanned == 1);
      CHECK_FALSE(p.fell_back);
    }
    for (const auto& p : run_split(*w.backend, never, w.dataset, with_k(k)).predictions) {
      CHECK(p.reranked_object == p.baseline_object);
      CHECK(p.fell_back);
      CHECK(p.scanned == k);
    }
  }
}

TEST_CASE("hidden-state extractions per triple stay within k") {
  auto w = fpt::make_world({.n_triples = 50});
  fpt::CountingBackend counting(*w.backend);
  fpt::OracleScorer oracle(*w.backend);
  const auto r = run_split(counting, oracle, w.dataset, with_k(7));
  CHECK(counting.hidden_calls.load() <= 7 * w.dataset.size());
  CHECK(counting.topk_calls.load() == w.dataset.size());
  std::size_t scanned = 0;
  for (const auto& p : r.predictions) {
    CHECK(p.scanned <= 7);
    scanned += p.scanned;
  }
  CHECK(scanned == counting.hidden_calls.load());
}

TEST_CASE("oracle reranking equals the top-k hit rate") {
  auto w = fpt::make_world({.n_triples = 300});
  fpt::OracleScorer oracle(*w.backend);
  for (std::size_t k : {1, 3, 10}) {
    const auto r = run_split(*w.backend, oracle, w.dataset, with_k(k));
    REQUIRE(r.predictions.size() == w.dataset.size());
    CHECK(accuracy(r.predictions, Which::reranked) ==
          doctest::Approx(fpt::table_hit_rate(w.spec.gold_rank_table, w.dataset, k)));
    CHECK(accuracy(r.predictions, Which::baseline) ==
          doctest::Approx(fpt::table_hit_rate(w.spec.gold_rank_table, w.dataset, 1)));
  }
}

TEST_CASE("empty dataset gives no predictions") {
  auto w = fpt::make_world({.n_triples = 5});
  Dataset empty = w.dataset;
  empty.triples.clear();
  fpt::OracleScorer oracle(*w.backend);
  const auto r = run_split(*w.backend, oracle, empty, with_k(3));
  CHECK(r.predictions.empty());
  CHECK(r.failures.empty());
}

TEST_CASE("failures are recorded up to the ratio and abort beyond it") {
  auto w = fpt::make_world({.n_triples = 20});
  fpt::OracleScorer oracle(*w.backend);
  {
    fpt::CountingBackend failing(*w.backend);
    failing.fail_hidden_from = 1;
    CHECK_THROWS_AS(run_split(failing, oracle, w.dataset, with_k(3)), BackendError);
  }
  {
    fpt::CountingBackend failing(*w.backend);
    failing.fail_hidden_from = 1;
    RerankConfig c = with_k(3);
    c.max_failure_ratio = 1.0;
    const auto r = run_split(failing, oracle, w.dataset, c);
    CHECK(r.predictions.empty());
    REQUIRE(r.failures.size() == 20);
    CHECK(std::is_sorted(r.failures.begin(), r.failures.end(),
                         [](const auto& a, const auto& b) { return a.triple_index < b.triple_index; }));
    CHECK(r.failures[0].message.find("injected failure") != std::string::npos);
  }
  RerankConfig bad = with_k(0);
  CHECK_THROWS_AS(run_split(*w.backend, oracle, w.dataset, bad), ValidationError);
}

TEST_CASE("workers preserve dataset order and results") {
  auto w = fpt::make_world({.n_triples = 120});
  fpt::OracleScorer oracle(*w.backend);
  RerankConfig c = with_k(6);
  const auto serial = run_split(*w.backend, oracle, w.dataset, c);
  c.workers = 4;
  const auto parallel = run_split(*w.backend, oracle, w.dataset, c);
  CHECK(serial.predictions == parallel.predictions);
  for (std::size_t i = 0; i < parallel.predictions.size(); ++i) {
    CHECK(parallel.predictions[i].triple_index == i);
  }
}

TEST_CASE("predictions file round trip") {
  auto w = fpt::make_world({.n_triples = 30});
  fpt::OracleScorer oracle(*w.backend);
  const auto r = run_split(*w.backend, oracle, w.dataset, with_k(4));
  fpt::TempDir dir;
  write_predictions(r.predictions, dir / "p.jsonl");
  CHECK(read_predictions(dir / "p.jsonl") == r.predictions);
  CHECK_THROWS_AS(read_predictions(dir / "missing.jsonl"), ValidationError);
}

}  // TEST_SUITE
