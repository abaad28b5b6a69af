#include "cli/commands.hpp"

#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "factprobe/remote.hpp"
#include "factprobe/synthetic.hpp"

namespace factprobe::cli {

using nlohmann::json;
using nlohmann::ordered_json;

namespace {

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ValidationError("cannot write " + path.string());
  out << text;
  if (!out) throw ValidationError("write failed for " + path.string());
}

void prepare_output(const RunConfig& config) {
  std::filesystem::create_directories(config.output);
  write_text(config.output / "resolved_config.json", config_to_json(config).dump(2) + "\n");
}

double held_out_accuracy(const Backend& backend, const HelperModel& model, const Dataset& held,
                         std::size_t neg_index, const TrainingSetOptions& tso,
                         std::size_t* rows_out) {
  if (held.empty()) return -1.0;
  try {
    const auto rows = build_training_set(backend, held, neg_index, tso);
    if (rows_out) *rows_out = rows.rows();
    return helper_accuracy(model, rows);
  } catch (const ValidationError& e) {
    warn(std::string("helper accuracy not measured: ") + e.what());
    return -1.0;
  }
}

std::optional<double> correlation_or_nan(const Dataset& train, const Dataset& test) {
  try {
    return pearson(object_frequency(train), object_frequency(test));
  } catch (const UndefinedCorrelation& e) {
    warn(e.what());
    return std::nullopt;
  }
}

void report_failures(const SplitResult& split, const std::filesystem::path& path) {
  if (split.failures.empty()) return;
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  for (const auto& f : split.failures) {
    ordered_json j;
    j["triple_index"] = f.triple_index;
    j["error"] = f.message;
    out << j.dump() << '\n';
  }
  warn(std::to_string(split.failures.size()) + " triples failed; see " + path.string());
}

}  // namespace

TrainHelperResult cmd_train_helper(const RunConfig& config, std::ostream& out) {
  validate_config(config, false);
  Workspace ws(config, false);
  prepare_output(config);

  auto [fit, held] = ws.split_train(config.heldout_fraction, config.seed);
  if (fit.empty()) throw ValidationError("no training triples remain after the held-out split");
  const TrainingSetOptions tso{config.negatives, ws.candidates(), config.workers};
  const auto rows = build_training_set(ws.backend(), fit, config.neg_index, tso);
  auto trained = train(rows, config.helper);

  TrainHelperResult r;
  r.model = std::move(trained.model);
  r.model.meta.backend_id = ws.backend().meta().backend_id;
  r.model.meta.dataset = ws.train().name;
  r.model.meta.neg_index = config.neg_index;
  r.model.meta.heldout_accuracy =
      held_out_accuracy(ws.backend(), r.model, held, config.neg_index, tso, &r.heldout_rows);
  r.rows = rows.rows();
  r.iterations = trained.iterations;
  r.converged = trained.converged;
  r.model_path = config.output / "helper.model";
  save_model(r.model, r.model_path);

  std::size_t positives = 0;
  for (int y : rows.labels) positives += y == 1;
  ordered_json summary;
  summary["backend_id"] = r.model.meta.backend_id;
  summary["dataset"] = r.model.meta.dataset;
  summary["neg_index"] = config.neg_index;
  summary["rows"] = r.rows;
  summary["positives"] = positives;
  summary["negatives"] = r.rows - positives;
  summary["skipped_triples"] = rows.skipped_triples;
  summary["heldout_triples"] = held.size();
  summary["heldout_rows"] = r.heldout_rows;
  summary["heldout_accuracy"] = r.model.meta.heldout_accuracy < 0
                                    ? ordered_json(nullptr)
                                    : ordered_json(r.model.meta.heldout_accuracy);
  summary["iterations"] = r.iterations;
  summary["converged"] = r.converged;
  summary["final_objective"] = trained.final_objective;
  summary["nonzero_weights"] = r.model.nonzero_weights();
  write_text(config.output / "train_summary.json", summary.dump(2) + "\n");

  if (!r.converged) warn("helper training hit max_iter before converging");
  out << "helper: " << r.rows << " rows, " << r.model.nonzero_weights() << "/" << r.model.dim()
      << " nonzero weights, held-out accuracy "
      << (r.model.meta.heldout_accuracy < 0 ? std::string("NA")
                                            : format_fixed(100.0 * r.model.meta.heldout_accuracy))
      << "\nwrote " << r.model_path.string() << '\n';
  return r;
}

EvalReport cmd_evaluate(const RunConfig& config,
                        const std::optional<std::filesystem::path>& model_path, std::ostream& out) {
  validate_config(config, true);
  const auto path = model_path.value_or(config.output / "helper.model");
  if (!std::filesystem::is_regular_file(path)) {
    throw ValidationError("helper model " + path.string() + " does not exist");
  }
  const HelperModel model = load_model(path);
  model.validate();
  Workspace ws(config, true);
  const auto& meta = ws.backend().meta();
  if (model.meta.backend_id != meta.backend_id) {
    if (!config.allow_backend_mismatch) {
      throw ValidationError("helper was trained against backend '" + model.meta.backend_id +
                            "' but the configured backend is '" + meta.backend_id +
                            "' (set allow_backend_mismatch to override)");
    }
    warn("helper backend_id differs from the configured backend");
  }
  if (model.dim() != meta.hidden_dim) {
    throw ValidationError("helper dimension " + std::to_string(model.dim()) +
                          " does not match backend hidden_dim " + std::to_string(meta.hidden_dim));
  }
  prepare_output(config);

  const std::size_t neg_index = model.meta.neg_index >= 2 ? model.meta.neg_index : config.neg_index;
  RerankConfig rc;
  rc.k = config.k.value_or(neg_index - 1);
  rc.neg_index_used_for_training = neg_index;
  rc.candidate_mode = config.candidate_mode;
  rc.scan = config.scan;
  rc.workers = config.workers;
  rc.max_failure_ratio = config.max_failure_ratio;
  HelperScorer scorer(model);
  const auto split = run_split(ws.backend(), scorer, ws.test(), rc, ws.candidates());
  report_failures(split, config.output / "failures.jsonl");
  if (split.predictions.empty()) throw BackendError("every test triple failed");
  write_predictions(split.predictions, config.output / "predictions.jsonl");

  EvalReport r;
  r.train_set = ws.train().name;
  r.test_set = ws.test().name;
  r.backend_id = meta.backend_id;
  r.baseline_acc = accuracy(split.predictions, Which::baseline);
  r.reranked_acc = accuracy(split.predictions, Which::reranked);
  r.diff_percent = diff_percent(r.baseline_acc, r.reranked_acc);
  r.corr = correlation_or_nan(ws.raw_train(), ws.raw_test()).value_or(std::nan(""));
  r.neg_index = neg_index;
  r.helper_acc = model.meta.heldout_accuracy < 0 ? -1.0 : 100.0 * model.meta.heldout_accuracy;
  r.n_examples = split.predictions.size();
  const EvalReport reports[] = {r};
  emit_report(reports, {}, config.output);
  out << table_header() << '\n' << table_row(r) << '\n';
  return r;
}

SweepCurve cmd_sweep(const RunConfig& config, std::ostream& out) {
  validate_config(config, true);
  if (config.sweep.empty()) throw ValidationError("sweep needs a non-empty neg_index list");
  Workspace ws(config, true);
  prepare_output(config);

  auto [fit, held] = ws.split_train(config.heldout_fraction, config.seed);
  if (fit.empty()) throw ValidationError("no training triples remain after the held-out split");
  SweepOptions so;
  so.candidates = ws.candidates();
  so.negatives = config.negatives;
  so.scan = config.scan;
  so.workers = config.workers;
  so.heldout = held.empty() ? nullptr : &held;
  auto curve = sweep_neg_index(ws.backend(), fit, ws.test(), config.sweep, config.helper, so);
  curve.train_set = ws.train().name;

  const double corr = correlation_or_nan(ws.raw_train(), ws.raw_test()).value_or(std::nan(""));
  std::vector<EvalReport> reports;
  for (const auto& p : curve.points) {
    EvalReport r;
    r.train_set = curve.train_set;
    r.test_set = curve.test_set;
    r.backend_id = curve.backend_id;
    r.baseline_acc = curve.baseline_acc;
    r.reranked_acc = p.reranked_acc;
    r.diff_percent = diff_percent(r.baseline_acc, r.reranked_acc);
    r.corr = corr;
    r.neg_index = p.neg_index;
    r.helper_acc = p.helper_acc;
    r.n_examples = ws.test().size();
    reports.push_back(std::move(r));
  }
  const SweepCurve curves[] = {curve};
  const auto files = emit_report(reports, curves, config.output);
  out << "neg_index\tgain\n";
  for (const auto& p : curve.points) out << p.neg_index << '\t' << format_fixed(p.gain) << '\n';
  out << "wrote " << files.table.string() << " and " << files.curves.front().string() << '\n';
  return curve;
}

double cmd_corr(const std::filesystem::path& train, const std::filesystem::path& test,
                std::ostream& out) {
  for (const auto& p : {train, test}) {
    if (!std::filesystem::is_regular_file(p)) {
      throw ValidationError("triples file " + p.string() + " does not exist");
    }
  }
  LoadOptions lo;
  lo.require_templates = false;
  const TemplateTable none;
  const auto a = load_dataset(train, none, lo);
  const auto b = load_dataset(test, none, lo);
  const double r = pearson(object_frequency(a), object_frequency(b));
  out << format_fixed(r) << '\n';
  return r;
}

void cmd_cache_inspect(const std::filesystem::path& path, std::ostream& out) {
  if (!std::filesystem::is_regular_file(path)) {
    throw ValidationError("cache " + path.string() + " does not exist");
  }
  HiddenStateCache cache(path);
  const auto s = cache.stats();
  out << "path\t" << path.string() << '\n'
      << "records\t" << s.records << '\n'
      << "file_bytes\t" << s.file_bytes << '\n'
      << "corrupt\t" << s.corrupt << '\n'
      << "truncated_bytes\t" << s.truncated_bytes << '\n'
      << "index_rebuilt\t" << (s.index_rebuilt ? "yes" : "no") << '\n';
}

void cmd_cache_clear(const std::filesystem::path& path, std::ostream& out) {
  HiddenStateCache::clear(path);
  out << "cleared " << path.string() << '\n';
}

void cmd_synth_data(const SynthDataOptions& o, std::ostream& out) {
  if (o.n_train == 0 || o.n_test == 0) throw ValidationError("synth-data needs n_train, n_test >= 1");
  if (o.n_objects < 2) throw ValidationError("synth-data needs at least 2 objects");
  std::filesystem::create_directories(o.out_dir);
  const auto train = make_synthetic_dataset("train", o.n_train, o.n_objects, o.seed, "train-entity");
  const auto test = make_synthetic_dataset("test", o.n_test, o.n_objects, mix64(o.seed + 1), "test-entity");
  write_dataset(train, o.out_dir / "train.jsonl");
  write_dataset(test, o.out_dir / "test.jsonl");
  write_templates(synthetic_templates(), o.out_dir / "templates.jsonl");
  out << "wrote " << (o.out_dir / "train.jsonl").string() << ", "
      << (o.out_dir / "test.jsonl").string() << ", " << (o.out_dir / "templates.jsonl").string()
      << '\n';
}

namespace {

struct CommonFlags {
  std::optional<std::string> config;
  std::vector<std::string> sets;
  std::optional<std::string> train, test, templates, output, cache, endpoint;
  std::optional<std::string> candidate_mode, negative_mode, scan_mode;
  std::optional<std::size_t> neg_index, k, workers, max_iter;
  std::optional<std::uint64_t> seed;
  std::optional<double> lambda;
  std::vector<std::size_t> sweep;
  bool allow_mismatch = false;
};

void add_common(CLI::App* sub, CommonFlags& f) {
  sub->add_option("-c,--config", f.config, "JSON config file");
  sub->add_option("--set", f.sets, "override a config key, e.g. --set helper.lambda=0.01");
  sub->add_option("--train", f.train, "training triples (jsonl)");
  sub->add_option("--test", f.test, "test triples (jsonl)");
  sub->add_option("--templates", f.templates, "template table (jsonl)");
  sub->add_option("-o,--output", f.output, "output directory");
  sub->add_option("--cache", f.cache, "hidden-state cache file");
  sub->add_option("--endpoint", f.endpoint, "use the remote backend at this URL");
  sub->add_option("--candidate-mode", f.candidate_mode, "full-vocab | typed");
  sub->add_option("--negative-mode", f.negative_mode, "single-rank | all-ranks");
  sub->add_option("--scan-mode", f.scan_mode, "first-accept | max-probability");
  sub->add_option("--neg-index", f.neg_index, "rank used for negative rows");
  sub->add_option("-k", f.k, "candidates scanned per query (default neg_index - 1)");
  sub->add_option("--workers", f.workers, "parallel workers");
  sub->add_option("--seed", f.seed, "split seed");
  sub->add_option("--lambda", f.lambda, "L1 strength");
  sub->add_option("--max-iter", f.max_iter, "optimizer iteration cap");
  sub->add_option("--sweep", f.sweep, "neg_index values for the sweep")->delimiter(',');
  sub->add_flag("--allow-backend-mismatch", f.allow_mismatch,
                "evaluate even if the helper came from another backend");
}

RunConfig resolve(const CommonFlags& f) {
  json doc = load_config_document(f.config ? std::optional<std::filesystem::path>(*f.config)
                                           : std::nullopt);
  auto put = [&](const char* key, const auto& v) {
    if (v) doc[key] = *v;
  };
  put("train", f.train);
  put("test", f.test);
  put("templates", f.templates);
  put("output", f.output);
  put("cache", f.cache);
  put("candidate_mode", f.candidate_mode);
  put("negative_mode", f.negative_mode);
  put("scan_mode", f.scan_mode);
  put("neg_index", f.neg_index);
  put("k", f.k);
  put("workers", f.workers);
  put("seed", f.seed);
  if (f.lambda) doc["helper"]["lambda"] = *f.lambda;
  if (f.max_iter) doc["helper"]["max_iter"] = *f.max_iter;
  if (!f.sweep.empty()) doc["sweep"] = f.sweep;
  if (f.endpoint) doc["backend"] = {{"remote", {{"endpoint", *f.endpoint}}}};
  if (f.allow_mismatch) doc["allow_backend_mismatch"] = true;
  apply_overrides(doc, f.sets);
  return config_from_json(doc);
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Rerank masked-LM answers with a hidden-state truthfulness helper", "factprobe"};
  app.require_subcommand(1);

  CommonFlags train_flags, eval_flags, sweep_flags;
  auto* train_cmd = app.add_subcommand("train-helper", "fit a helper classifier");
  add_common(train_cmd, train_flags);
  auto* eval_cmd = app.add_subcommand("evaluate", "rerank the test split with a saved helper");
  add_common(eval_cmd, eval_flags);
  std::optional<std::string> model_path;
  eval_cmd->add_option("--model", model_path, "helper model (default <output>/helper.model)");
  auto* sweep_cmd = app.add_subcommand("sweep", "train and evaluate over several neg_index values");
  add_common(sweep_cmd, sweep_flags);

  std::string corr_train, corr_test;
  auto* corr_cmd = app.add_subcommand("corr", "Pearson r of two object distributions");
  corr_cmd->add_option("train", corr_train, "first triples file")->required();
  corr_cmd->add_option("test", corr_test, "second triples file")->required();

  std::string cache_path;
  auto* cache_cmd = app.add_subcommand("cache", "inspect or clear a hidden-state cache");
  cache_cmd->require_subcommand(1);
  auto* inspect_cmd = cache_cmd->add_subcommand("inspect", "print cache statistics");
  inspect_cmd->add_option("path", cache_path, "cache file")->required();
  auto* clear_cmd = cache_cmd->add_subcommand("clear", "delete a cache and its index");
  clear_cmd->add_option("path", cache_path, "cache file")->required();

  SynthDataOptions synth;
  std::string synth_dir = synth.out_dir.string();
  auto* synth_cmd = app.add_subcommand("synth-data", "write a seeded synthetic dataset");
  synth_cmd->add_option("-o,--output", synth_dir, "output directory");
  synth_cmd->add_option("--n-train", synth.n_train, "training triples");
  synth_cmd->add_option("--n-test", synth.n_test, "test triples");
  synth_cmd->add_option("--n-objects", synth.n_objects, "distinct objects");
  synth_cmd->add_option("--seed", synth.seed, "seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 2;
  }

  auto sink = [&err](std::string_view msg) { err << "warning: " << msg << '\n'; };
  set_warning_sink(sink);
  struct ResetSink {
    ~ResetSink() { set_warning_sink(nullptr); }
  } reset;

  try {
    if (*train_cmd) {
      cmd_train_helper(resolve(train_flags), out);
    } else if (*eval_cmd) {
      std::optional<std::filesystem::path> mp;
      if (model_path) mp = *model_path;
      cmd_evaluate(resolve(eval_flags), mp, out);
    } else if (*sweep_cmd) {
      cmd_sweep(resolve(sweep_flags), out);
    } else if (*corr_cmd) {
      cmd_corr(corr_train, corr_test, out);
    } else if (*inspect_cmd) {
      cmd_cache_inspect(cache_path, out);
    } else if (*clear_cmd) {
      cmd_cache_clear(cache_path, out);
    } else if (*synth_cmd) {
      synth.out_dir = synth_dir;
      cmd_synth_data(synth, out);
    }
  } catch (const ValidationError& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  } catch (const BackendError& e) {
    err << "backend error: " << e.what() << '\n';
    return 3;
  } catch (const InvariantError& e) {
    err << "invariant violated: " << e.what() << '\n';
    return 4;
  } catch (const std::filesystem::filesystem_error& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    err << "internal error: " << e.what() << '\n';
    return 4;
  }
  return 0;
}

}  // namespace factprobe::cli
