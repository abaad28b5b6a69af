#include <doctest.h>

#include <cstdlib>
#include <sstream>

#include <json.hpp>

#include "cli/commands.hpp"
#include "cli/config.hpp"
#include "support.hpp"

using namespace factprobe;
using namespace factprobe::cli;
using nlohmann::json;

namespace {

struct Outcome {
  int code;
  std::string out;
  std::string err;
};

Outcome invoke(std::vector<std::string> args) {
  args.insert(args.begin(), "factprobe");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out;
  std::ostringstream err;
  const int code = run(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

/// Synthetic inputs written once per test into a temp dir.
struct Inputs {
  fpt::TempDir dir;
  std::string data;

  explicit Inputs(std::size_t n_train = 150, std::size_t n_test = 100) {
    data = (dir / "data").string();
    const auto r = invoke({"synth-data", "-o", data, "--n-train", std::to_string(n_train),
                           "--n-test", std::to_string(n_test), "--seed", "3"});
    REQUIRE(r.code == 0);
  }

  std::vector<std::string> common(const std::string& out_name) const {
    return {"--train", data + "/train.jsonl", "--test", data + "/test.jsonl", "--templates",
            data + "/templates.jsonl", "-o", (dir / out_name).string()};
  }

  std::vector<std::string> with(std::vector<std::string> head, const std::string& out_name,
                                std::vector<std::string> tail = {}) const {
    for (auto& a : common(out_name)) head.push_back(a);
    for (auto& a : tail) head.push_back(a);
    return head;
  }
};

/// Scoped environment variable.
class EnvVar {
 public:
  EnvVar(const char* name, const std::string& value) : name_(name) {
    if (const char* old = std::getenv(name)) old_ = old;
    ::setenv(name, value.c_str(), 1);
  }
  ~EnvVar() {
    if (old_) {
      ::setenv(name_, old_->c_str(), 1);
    } else {
      ::unsetenv(name_);
    }
  }

 private:
  const char* name_;
  std::optional<std::string> old_;
};

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("config: defaults, enums and unknown keys") {
  const auto c = config_from_json(json::object());
  CHECK(c.backend == RunConfig::BackendKind::synthetic);
  CHECK(c.neg_index == 11);
  CHECK_FALSE(c.k);
  CHECK(c.negatives == NegativeMode::single_rank);

  const auto t = config_from_json(json::parse(R"({
      "backend": {"remote": {"endpoint": "http://localhost:8000"}},
      "candidate_mode": "typed", "negative_mode": "all-ranks", "scan_mode": "max-probability",
      "k": 4, "sweep": [2, 6], "helper": {"lambda": 0.05}})"));
  CHECK(t.backend == RunConfig::BackendKind::remote);
  CHECK(t.endpoint == "http://localhost:8000");
  CHECK(t.candidate_mode == CandidateMode::typed);
  CHECK(t.negatives == NegativeMode::all_ranks);
  CHECK(t.scan == ScanMode::max_probability);
  CHECK(t.k == std::optional<std::size_t>(4));
  CHECK(t.sweep == std::vector<std::size_t>{2, 6});
  CHECK(t.helper.lambda == 0.05);

  CHECK_THROWS_AS(config_from_json(json::parse(R"({"negindex": 3})")), ValidationError);
  CHECK_THROWS_AS(config_from_json(json::parse(R"({"candidate_mode": "loose"})")), ValidationError);
  CHECK_THROWS_AS(
      config_from_json(json::parse(R"({"backend": {"synthetic": {}, "remote": {"endpoint": "x"}}})")),
      ValidationError);

  const auto round = config_from_json(config_to_json(t));
  CHECK(config_to_json(round) == config_to_json(t));
}

TEST_CASE("config: dotted overrides") {
  json doc = json::object();
  apply_overrides(doc, {"helper.lambda=0.25", "neg_index=6", "output=runs/a", "sweep=[2,3]"});
  CHECK(doc["helper"]["lambda"] == 0.25);
  CHECK(doc["neg_index"] == 6);
  CHECK(doc["output"] == "runs/a");
  const auto c = config_from_json(doc);
  CHECK(c.sweep == std::vector<std::size_t>{2, 3});
  CHECK_THROWS_AS(apply_overrides(doc, {"no-equals-sign"}), ValidationError);
}

TEST_CASE("config: validation ranges") {
  Inputs in(20, 20);
  RunConfig c;
  c.train_path = in.data + "/train.jsonl";
  c.test_path = in.data + "/test.jsonl";
  c.templates_path = in.data + "/templates.jsonl";
  CHECK_NOTHROW(validate_config(c, true));
  auto bad = c;
  bad.neg_index = 1;
  CHECK_THROWS_AS(validate_config(bad, true), ValidationError);
  bad = c;
  bad.k = 0;
  CHECK_THROWS_AS(validate_config(bad, true), ValidationError);
  bad = c;
  bad.heldout_fraction = 1.0;
  CHECK_THROWS_AS(validate_config(bad, true), ValidationError);
  bad = c;
  bad.test_path = in.data + "/absent.jsonl";
  CHECK_THROWS_AS(validate_config(bad, true), ValidationError);
  // The synthetic backend plants facts of both splits, so it needs the test file too.
  CHECK_THROWS_AS(validate_config(bad, false), ValidationError);
  bad.backend = RunConfig::BackendKind::remote;
  bad.endpoint = "http://127.0.0.1:8000";
  CHECK_NOTHROW(validate_config(bad, false));
  CHECK_THROWS_AS(validate_config(bad, true), ValidationError);
}

TEST_CASE("run: train-helper then evaluate") {
  Inputs in;
  auto t = invoke(in.with({"train-helper"}, "run", {"--neg-index", "6"}));
  REQUIRE(t.code == 0);
  CHECK(std::filesystem::exists(in.dir / "run" / "helper.model"));
  CHECK(std::filesystem::exists(in.dir / "run" / "resolved_config.json"));
  const auto summary = json::parse(fpt::read_file(in.dir / "run" / "train_summary.json"));
  CHECK(summary.at("neg_index") == 6);
  CHECK(summary.at("heldout_accuracy").get<double>() > 0.9);

  auto e = invoke(in.with({"evaluate"}, "run", {"--neg-index", "6"}));
  REQUIRE(e.code == 0);
  const auto table = fpt::read_file(in.dir / "run" / "table.tsv");
  CHECK(table.rfind(table_header() + "\n", 0) == 0);
  const auto preds = read_predictions(in.dir / "run" / "predictions.jsonl");
  CHECK(preds.size() == 100);
  for (const auto& p : preds) CHECK(p.scanned <= 5);
}

TEST_CASE("run: identical configs give byte-identical outputs") {
  Inputs in;
  for (const char* name : {"a", "b"}) {
    REQUIRE(invoke(in.with({"train-helper"}, name, {"--neg-index", "4"})).code == 0);
    REQUIRE(invoke(in.with({"evaluate"}, name, {"--neg-index", "4"})).code == 0);
  }
  for (const char* file : {"helper.model", "predictions.jsonl", "table.tsv", "train_summary.json"}) {
    CAPTURE(file);
    CHECK(fpt::read_file(in.dir / "a" / file) == fpt::read_file(in.dir / "b" / file));
  }
}

TEST_CASE("run: k = 1 gives a zero relative gain") {
  Inputs in;
  REQUIRE(invoke(in.with({"train-helper"}, "run", {"--neg-index", "4"})).code == 0);
  const auto e = invoke(in.with({"evaluate"}, "run", {"--neg-index", "4", "-k", "1"}));
  REQUIRE(e.code == 0);
  const auto table = fpt::read_file(in.dir / "run" / "table.tsv");
  const auto row = table.substr(table.find('\n') + 1);
  std::vector<std::string> cols;
  std::stringstream ss(row.substr(0, row.find('\n')));
  for (std::string c; std::getline(ss, c, '\t');) cols.push_back(c);
  REQUIRE(cols.size() == 10);
  CHECK(cols[3] == cols[4]);
  CHECK(cols[5] == "0.00");
}

TEST_CASE("run: helper from another backend is refused") {
  Inputs in;
  REQUIRE(invoke(in.with({"train-helper"}, "run", {"--neg-index", "4"})).code == 0);
  const auto other = invoke(in.with({"evaluate"}, "run",
                                    {"--neg-index", "4", "--set", "backend.synthetic.seed=9"}));
  CHECK(other.code == 2);
  CHECK(other.err.find("backend") != std::string::npos);
  const auto forced =
      invoke(in.with({"evaluate"}, "run",
                     {"--neg-index", "4", "--set", "backend.synthetic.seed=9", "--allow-backend-mismatch"}));
  CHECK(forced.code == 0);
}

TEST_CASE("run: sweep writes one curve point per neg_index") {
  Inputs in;
  const auto s = invoke(in.with({"sweep"}, "sweep", {"--sweep", "2,11,21"}));
  REQUIRE(s.code == 0);
  bool found = false;
  for (const auto& entry : std::filesystem::directory_iterator(in.dir / "sweep")) {
    const auto name = entry.path().filename().string();
    if (name.rfind("curve-", 0) != 0) continue;
    found = true;
    const auto text = fpt::read_file(entry.path());
    CHECK(text.rfind("neg_index\tgain\n2\t0.00\n11\t", 0) == 0);
    CHECK(std::count(text.begin(), text.end(), '\n') == 4);
  }
  CHECK(found);
  CHECK(invoke(in.with({"sweep"}, "dup", {"--sweep", "2,11,11"})).code == 2);
  CHECK(invoke(in.with({"sweep"}, "empty")).code == 2);
}

TEST_CASE("run: exit codes for validation and backend errors") {
  Inputs in(20, 20);
  CHECK(invoke(in.with({"train-helper"}, "x", {"--neg-index", "1"})).code == 2);
  CHECK(invoke({"train-helper", "--train", "/nonexistent.jsonl"}).code == 2);
  CHECK(invoke({"no-such-command"}).code == 2);
  CHECK(invoke(in.with({"train-helper"}, "x", {"--set", "bogus_key=1"})).code == 2);
  const auto remote = invoke(in.with({"train-helper"}, "x", {"--endpoint", "http://127.0.0.1:9"}));
  CHECK(remote.code == 3);
  CHECK(remote.err.find("unreachable") != std::string::npos);
}

TEST_CASE("run: remote backend through the wire") {
  Inputs in(60, 40);
  // Same synthetic backend the default config would build.
  RunConfig c;
  c.train_path = in.data + "/train.jsonl";
  c.test_path = in.data + "/test.jsonl";
  c.templates_path = in.data + "/templates.jsonl";
  Workspace ws(c, true);
  fpt::FixtureServer server(ws.backend());
  REQUIRE(invoke(in.with({"train-helper"}, "local", {"--neg-index", "3"})).code == 0);
  REQUIRE(invoke(in.with({"train-helper"}, "wired", {"--neg-index", "3", "--endpoint", server.endpoint()}))
              .code == 0);
  CHECK(fpt::read_file(in.dir / "local" / "helper.model") ==
        fpt::read_file(in.dir / "wired" / "helper.model"));
}

TEST_CASE("corr command") {
  const auto a = fpt::fixture("corr_a.jsonl").string();
  const auto b = fpt::fixture("corr_b.jsonl").string();
  auto r = invoke({"corr", a, a});
  CHECK(r.code == 0);
  CHECK(r.out == "1.00\n");
  r = invoke({"corr", a, b});
  CHECK(r.code == 0);
  CHECK(r.out == "0.98\n");
  r = invoke({"corr", fpt::fixture("corr_uniform.jsonl").string(), a});
  CHECK(r.code == 2);
  CHECK(invoke({"corr", a, "/nonexistent.jsonl"}).code == 2);
}

TEST_CASE("cache inspect and clear") {
  Inputs in(40, 20);
  const auto cache = (in.dir / "h.hsc").string();
  REQUIRE(invoke(in.with({"train-helper"}, "run", {"--neg-index", "3", "--cache", cache})).code == 0);
  auto r = invoke({"cache", "inspect", cache});
  REQUIRE(r.code == 0);
  CHECK(r.out.find("records\t") != std::string::npos);
  CHECK(r.out.find("records\t0\n") == std::string::npos);
  // A second run is served from the cache and produces the same model.
  const auto first = fpt::read_file(in.dir / "run" / "helper.model");
  REQUIRE(invoke(in.with({"train-helper"}, "run", {"--neg-index", "3", "--cache", cache})).code == 0);
  CHECK(fpt::read_file(in.dir / "run" / "helper.model") == first);
  CHECK(invoke({"cache", "clear", cache}).code == 0);
  CHECK_FALSE(std::filesystem::exists(cache));
  CHECK(invoke({"cache", "inspect", (in.dir / "absent.hsc").string()}).code == 2);
}

TEST_CASE("cache location from the environment") {
  Inputs in(30, 10);
  const auto cache_dir = in.dir / "cache-home";
  std::filesystem::create_directories(cache_dir);
  EnvVar env(kCacheDirEnv, cache_dir.string());
  RunConfig c;
  CHECK(resolve_cache_path(c) == cache_dir / "hidden.hsc");
  c.cache = in.dir / "explicit.hsc";
  CHECK(resolve_cache_path(c) == in.dir / "explicit.hsc");
  REQUIRE(invoke(in.with({"train-helper"}, "run", {"--neg-index", "3"})).code == 0);
  CHECK(std::filesystem::exists(cache_dir / "hidden.hsc"));
}

}  // TEST_SUITE
