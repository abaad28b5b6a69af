#include "factprobe/eval.hpp"

#include <algorithm>
#include <cfenv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>

#include "factprobe/parallel.hpp"

namespace factprobe {

double accuracy(std::span<const std::string> predicted, std::span<const std::string> golds) {
  if (predicted.size() != golds.size()) {
    throw ValidationError("accuracy: " + std::to_string(predicted.size()) + " predictions vs " +
                          std::to_string(golds.size()) + " golds");
  }
  if (predicted.empty()) throw ValidationError("accuracy of an empty split is undefined");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < predicted.size(); ++i) hits += predicted[i] == golds[i];
  return 100.0 * static_cast<double>(hits) / static_cast<double>(predicted.size());
}

double accuracy(std::span<const Prediction> predictions, Which which) {
  if (predictions.empty()) throw ValidationError("accuracy of an empty split is undefined");
  std::size_t hits = 0;
  for (const auto& p : predictions) {
    const auto& guess = which == Which::baseline ? p.baseline_object : p.reranked_object;
    hits += guess == p.gold;
  }
  return 100.0 * static_cast<double>(hits) / static_cast<double>(predictions.size());
}

double diff_percent(double baseline_acc, double reranked_acc) {
  if (!(baseline_acc > 0.0)) {
    throw ValidationError("Diff% is undefined for a baseline accuracy of " +
                          std::to_string(baseline_acc));
  }
  return 100.0 * (reranked_acc - baseline_acc) / baseline_acc;
}

double round_half_even(double value, int decimals) {
  const double scale = std::pow(10.0, decimals);
  const int saved = std::fegetround();
  std::fesetround(FE_TONEAREST);
  const double r = std::nearbyint(value * scale) / scale;
  std::fesetround(saved);
  return r == 0.0 ? 0.0 : r;
}

std::string format_fixed(double value, int decimals) {
  if (std::isnan(value)) return "NA";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", decimals, round_half_even(value, decimals));
  return buf;
}

double pearson(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) {
    throw UndefinedCorrelation("Pearson correlation needs two aligned vectors of length >= 2");
  }
  const auto n = static_cast<double>(x.size());
  double mx = 0.0;
  double my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0.0;
  double sxx = 0.0;
  double syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - mx;
    const double dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0 || syy == 0.0) {
    throw UndefinedCorrelation("Pearson correlation is undefined: a distribution is constant");
  }
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

double pearson(const FreqDist& a, const FreqDist& b) {
  std::set<std::string_view> keys;
  for (const auto& [k, _] : a.counts) keys.insert(k);
  for (const auto& [k, _] : b.counts) keys.insert(k);
  std::vector<double> x;
  std::vector<double> y;
  x.reserve(keys.size());
  y.reserve(keys.size());
  for (auto k : keys) {
    auto ia = a.counts.find(k);
    auto ib = b.counts.find(k);
    x.push_back(ia == a.counts.end() ? 0.0 : static_cast<double>(ia->second));
    y.push_back(ib == b.counts.end() ? 0.0 : static_cast<double>(ib->second));
  }
  return pearson(x, y);
}

void EvalReport::validate() const {
  const double expected = factprobe::diff_percent(baseline_acc, reranked_acc);
  if (std::abs(expected - diff_percent) > 1e-9 * std::max(1.0, std::abs(expected))) {
    throw ValidationError("report " + train_set + "/" + test_set + ": diff_percent " +
                          std::to_string(diff_percent) + " disagrees with accuracies (" +
                          std::to_string(expected) + ")");
  }
  if (!std::isnan(corr) && (corr < -1.0 || corr > 1.0)) {
    throw ValidationError("report correlation outside [-1, 1]");
  }
  if (n_examples == 0) throw ValidationError("report has no examples");
}

void SweepCurve::validate() const {
  for (std::size_t i = 1; i < points.size(); ++i) {
    if (points[i].neg_index <= points[i - 1].neg_index) {
      throw ValidationError("sweep curve neg_index values must be strictly increasing");
    }
  }
}

void validate_neg_indices(std::span<const std::size_t> neg_indices) {
  for (std::size_t i = 0; i < neg_indices.size(); ++i) {
    if (neg_indices[i] < 2) {
      throw ValidationError("neg_index " + std::to_string(neg_indices[i]) + " is below 2");
    }
    if (i > 0 && neg_indices[i] <= neg_indices[i - 1]) {
      throw ValidationError("neg_index list must be strictly increasing without duplicates");
    }
  }
}

namespace {

double baseline_accuracy(const Backend& backend, const Dataset& test, const SweepOptions& options) {
  std::vector<std::string> predicted(test.size());
  std::vector<std::string> golds(test.size());
  parallel_for(test.size(), options.workers, [&](std::size_t i) {
    const Triple& t = test.triples[i];
    predicted[i] = baseline_predict(backend, t, test.template_for(t),
                                    find_candidates(options.candidates, t.relation_id));
    golds[i] = t.object;
  });
  return accuracy(predicted, golds);
}

RerankConfig rerank_config(std::size_t neg_index, const SweepOptions& options) {
  RerankConfig rc;
  rc.k = neg_index - 1;
  rc.neg_index_used_for_training = neg_index;
  rc.candidate_mode = options.candidates ? CandidateMode::typed : CandidateMode::full_vocab;
  rc.scan = options.scan;
  rc.workers = 1;
  return rc;
}

}  // namespace

SweepCurve sweep_neg_index(const Backend& backend, const Dataset& train, const Dataset& test,
                           std::span<const std::size_t> neg_indices, const TrainConfig& config,
                           const SweepOptions& options) {
  validate_neg_indices(neg_indices);
  config.validate();
  SweepCurve curve;
  curve.train_set = train.name;
  curve.test_set = test.name;
  curve.backend_id = backend.meta().backend_id;
  if (neg_indices.empty()) return curve;
  curve.baseline_acc = baseline_accuracy(backend, test, options);
  curve.points.resize(neg_indices.size());

  parallel_for(neg_indices.size(), options.workers, [&](std::size_t i) {
    const std::size_t neg_index = neg_indices[i];
    TrainingSetOptions tso{options.negatives, options.candidates, 1};
    const auto rows = build_training_set(backend, train, neg_index, tso);
    const auto trained = factprobe::train(rows, config);
    SweepPoint& pt = curve.points[i];
    pt.neg_index = neg_index;
    pt.helper_acc = -1.0;
    if (options.heldout != nullptr && !options.heldout->empty()) {
      const auto held = build_training_set(backend, *options.heldout, neg_index, tso);
      pt.helper_acc = 100.0 * helper_accuracy(trained.model, held);
    }
    HelperScorer scorer(trained.model);
    const auto split = run_split(backend, scorer, test, rerank_config(neg_index, options),
                                 options.candidates);
    pt.reranked_acc = accuracy(split.predictions, Which::reranked);
    pt.gain = pt.reranked_acc - curve.baseline_acc;
  });
  return curve;
}

SweepCurve sweep_with_scorer(const Backend& backend, const TruthScorer& scorer,
                             const Dataset& test, std::span<const std::size_t> neg_indices,
                             const SweepOptions& options) {
  validate_neg_indices(neg_indices);
  SweepCurve curve;
  curve.test_set = test.name;
  curve.backend_id = backend.meta().backend_id;
  if (neg_indices.empty()) return curve;
  curve.baseline_acc = baseline_accuracy(backend, test, options);
  curve.points.resize(neg_indices.size());
  parallel_for(neg_indices.size(), options.workers, [&](std::size_t i) {
    const auto split = run_split(backend, scorer, test, rerank_config(neg_indices[i], options),
                                 options.candidates);
    SweepPoint& pt = curve.points[i];
    pt.neg_index = neg_indices[i];
    pt.helper_acc = -1.0;
    pt.reranked_acc = accuracy(split.predictions, Which::reranked);
    pt.gain = pt.reranked_acc - curve.baseline_acc;
  });
  return curve;
}

std::string table_header() {
  return "train_set\ttest_set\tmodel\tbaseline\tours\tdiff_pct\tcorr\tneg_index\thelper_acc\tn";
}

std::string table_row(const EvalReport& r) {
  std::string row;
  row += r.train_set + '\t' + r.test_set + '\t' + r.backend_id + '\t';
  row += format_fixed(r.baseline_acc) + '\t' + format_fixed(r.reranked_acc) + '\t';
  row += format_fixed(r.diff_percent) + '\t' + format_fixed(r.corr) + '\t';
  row += std::to_string(r.neg_index) + '\t';
  row += (r.helper_acc < 0 ? std::string("NA") : format_fixed(r.helper_acc)) + '\t';
  row += std::to_string(r.n_examples);
  return row;
}

namespace {

std::string file_safe(std::string_view s) {
  std::string out;
  for (char c : s) {
    const bool ok = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') ||
                    c == '_' || c == '.';
    out += ok ? c : '_';
  }
  return out.empty() ? "unnamed" : out;
}

}  // namespace

ReportFiles emit_report(std::span<const EvalReport> reports, std::span<const SweepCurve> curves,
                        const std::filesystem::path& out_dir) {
  for (const auto& r : reports) r.validate();
  for (const auto& c : curves) c.validate();
  std::filesystem::create_directories(out_dir);

  ReportFiles files;
  files.table = out_dir / "table.tsv";
  {
    std::ofstream out(files.table, std::ios::binary | std::ios::trunc);
    if (!out) throw ValidationError("cannot write " + files.table.string());
    out << table_header() << '\n';
    for (const auto& r : reports) out << table_row(r) << '\n';
    if (!out) throw ValidationError("write failed for " + files.table.string());
  }
  for (std::size_t i = 0; i < curves.size(); ++i) {
    const auto& c = curves[i];
    auto path = out_dir / ("curve-" + file_safe(c.train_set) + "-" + file_safe(c.test_set) + "-" +
                           std::to_string(i) + ".tsv");
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw ValidationError("cannot write " + path.string());
    out << "neg_index\tgain\n";
    for (const auto& p : c.points) out << p.neg_index << '\t' << format_fixed(p.gain) << '\n';
    if (!out) throw ValidationError("write failed for " + path.string());
    files.curves.push_back(std::move(path));
  }
  return files;
}

}  // namespace factprobe
