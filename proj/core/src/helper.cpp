#include "factprobe/helper.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <sstream>

#include <Eigen/Dense>

#include "factprobe/parallel.hpp"

namespace factprobe {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

double softplus(double z) { return std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z))); }

double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

struct Smooth {
  double value;
  Eigen::VectorXd grad_w;
  double grad_b;
};

/// Mean logistic loss and its gradient on standardized data.
Smooth smooth_part(const RowMatrix& z, const Eigen::VectorXd& y, const Eigen::VectorXd& w,
                   double b) {
  const auto n = static_cast<double>(z.rows());
  Eigen::VectorXd margin = (z * w).array() + b;
  double value = 0.0;
  Eigen::VectorXd resid(z.rows());
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    value += softplus(margin[i]) - y[i] * margin[i];
    resid[i] = sigmoid(margin[i]) - y[i];
  }
  return {value / n, z.transpose() * resid / n, resid.sum() / n};
}

double smooth_value(const RowMatrix& z, const Eigen::VectorXd& y, const Eigen::VectorXd& w,
                    double b) {
  Eigen::VectorXd margin = (z * w).array() + b;
  double value = 0.0;
  for (Eigen::Index i = 0; i < z.rows(); ++i) value += softplus(margin[i]) - y[i] * margin[i];
  return value / static_cast<double>(z.rows());
}

std::string hexfloat(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::hex);
  return std::string(buf, end);
}

double parse_hexfloat(std::string_view s) {
  double v = 0.0;
  bool neg = false;
  if (!s.empty() && s.front() == '-') {
    neg = true;
    s.remove_prefix(1);
  }
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v, std::chars_format::hex);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw ValidationError("bad real in model file: '" + std::string(s) + "'");
  }
  return neg ? -v : v;
}

}  // namespace

void LabeledFeatures::add_row(std::span<const float> values, int label, RowProvenance prov) {
  if (rows() == 0 && dim == 0) dim = values.size();
  if (values.size() != dim) {
    throw InvariantError("feature row of dimension " + std::to_string(values.size()) +
                         " added to a " + std::to_string(dim) + "-d set");
  }
  features.insert(features.end(), values.begin(), values.end());
  labels.push_back(label);
  provenance.push_back(std::move(prov));
}

void LabeledFeatures::append(const LabeledFeatures& other) {
  if (other.rows() == 0) {
    skipped_triples += other.skipped_triples;
    return;
  }
  if (rows() == 0 && dim == 0) dim = other.dim;
  if (other.dim != dim) throw InvariantError("cannot append feature sets of different dimension");
  features.insert(features.end(), other.features.begin(), other.features.end());
  labels.insert(labels.end(), other.labels.begin(), other.labels.end());
  provenance.insert(provenance.end(), other.provenance.begin(), other.provenance.end());
  skipped_triples += other.skipped_triples;
}

void LabeledFeatures::validate() const {
  if (rows() < 2) throw ValidationError("need at least 2 labeled rows, have " + std::to_string(rows()));
  if (features.size() != rows() * dim || provenance.size() != rows() || dim == 0) {
    throw InvariantError("labeled feature set has inconsistent shape");
  }
  const auto positives = std::count(labels.begin(), labels.end(), 1);
  const auto negatives = std::count(labels.begin(), labels.end(), 0);
  if (positives + negatives != static_cast<std::ptrdiff_t>(rows())) {
    throw ValidationError("labels must be 0 or 1");
  }
  if (positives == 0 || negatives == 0) {
    throw ValidationError("labeled rows must include both truthful and untruthful examples");
  }
  for (double v : features) {
    if (!std::isfinite(v)) throw ValidationError("non-finite feature value");
  }
}

LabeledFeatures build_training_set(const Backend& backend, const Dataset& dataset,
                                   std::size_t neg_index, const TrainingSetOptions& options) {
  if (neg_index < 2) {
    throw ValidationError("neg_index must be >= 2 (rank 1 is the baseline prediction), got " +
                          std::to_string(neg_index));
  }
  if (dataset.empty()) throw ValidationError("training dataset " + dataset.name + " is empty");

  const auto& meta = backend.meta();
  std::vector<LabeledFeatures> per_triple(dataset.size());
  parallel_for(dataset.size(), options.workers, [&](std::size_t i) {
    const Triple& t = dataset.triples[i];
    const PromptTemplate& tmpl = dataset.template_for(t);
    const CandidateSet* cands = find_candidates(options.candidates, t.relation_id);
    const auto ranked =
        backend.topk(fill_prompt(tmpl, t.subject, std::nullopt), neg_index + 1, cands).candidates;

    std::vector<const Candidate*> negatives;
    if (options.negatives == NegativeMode::single_rank) {
      for (std::size_t r = neg_index; r <= ranked.size() && r <= neg_index + 1; ++r) {
        if (ranked[r - 1].object != t.object) {
          negatives.push_back(&ranked[r - 1]);
          break;
        }
      }
    } else {
      for (std::size_t r = 1; r <= std::min(neg_index, ranked.size()); ++r) {
        if (ranked[r - 1].object != t.object) negatives.push_back(&ranked[r - 1]);
      }
    }
    LabeledFeatures& out = per_triple[i];
    out.dim = meta.hidden_dim;
    if (negatives.empty()) {
      out.skipped_triples = 1;
      return;
    }
    HVector pos = backend.hidden(fill_prompt(tmpl, t.subject, t.object));
    check_hidden(pos, meta);
    out.add_row(pos.values, 1, {i, t.object, 0});
    for (const Candidate* c : negatives) {
      HVector neg = backend.hidden(fill_prompt(tmpl, t.subject, c->object));
      check_hidden(neg, meta);
      out.add_row(neg.values, 0, {i, c->object, c->rank});
    }
  });

  LabeledFeatures all;
  all.dim = meta.hidden_dim;
  for (const auto& part : per_triple) all.append(part);
  if (all.rows() == 0) {
    throw ValidationError("no usable training rows: every triple of " + dataset.name +
                          " was skipped");
  }
  return all;
}

Standardized standardize(std::span<const double> x, std::size_t rows, std::size_t cols) {
  if (x.size() != rows * cols) throw InvariantError("standardize: shape mismatch");
  Standardized out;
  out.means.assign(cols, 0.0);
  out.scales.assign(cols, 1.0);
  out.values.assign(x.begin(), x.end());
  if (rows == 0) return out;
  for (std::size_t j = 0; j < cols; ++j) {
    double sum = 0.0;
    for (std::size_t i = 0; i < rows; ++i) sum += x[i * cols + j];
    const double mean = sum / static_cast<double>(rows);
    double ss = 0.0;
    for (std::size_t i = 0; i < rows; ++i) {
      const double d = x[i * cols + j] - mean;
      ss += d * d;
    }
    const double sd = std::sqrt(ss / static_cast<double>(rows));
    out.means[j] = mean;
    out.scales[j] = sd > 1e-12 * std::max(1.0, std::abs(mean)) ? sd : 1.0;
    for (std::size_t i = 0; i < rows; ++i) {
      out.values[i * cols + j] = (x[i * cols + j] - mean) / out.scales[j];
    }
  }
  return out;
}

LossGrad loss_and_grad(std::span<const double> weights, double intercept,
                       std::span<const double> x, std::span<const int> y, double lambda) {
  const std::size_t n = y.size();
  const std::size_t d = weights.size();
  if (n == 0 || x.size() != n * d) throw InvariantError("loss_and_grad: shape mismatch");
  auto finite = [](double v) { return std::isfinite(v); };
  if (!std::all_of(weights.begin(), weights.end(), finite) || !std::isfinite(intercept) ||
      !std::all_of(x.begin(), x.end(), finite) || !std::isfinite(lambda)) {
    throw ValidationError("loss_and_grad: non-finite input");
  }
  LossGrad out;
  out.gradient.assign(d + 1, 0.0);
  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double z = intercept;
    for (std::size_t j = 0; j < d; ++j) z += weights[j] * x[i * d + j];
    loss += softplus(z) - y[i] * z;
    const double r = sigmoid(z) - y[i];
    for (std::size_t j = 0; j < d; ++j) out.gradient[j] += r * x[i * d + j];
    out.gradient[d] += r;
  }
  for (auto& g : out.gradient) g /= static_cast<double>(n);
  double l1 = 0.0;
  for (double w : weights) l1 += std::abs(w);
  out.objective = loss / static_cast<double>(n) + lambda * l1;
  return out;
}

void TrainConfig::validate() const {
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw ValidationError("lambda must be >= 0");
  if (!(tol > 0.0 && tol < 1.0)) throw ValidationError("tol must lie in (0, 1)");
  if (max_iter < 1) throw ValidationError("max_iter must be >= 1");
}

std::size_t HelperModel::nonzero_weights() const {
  return static_cast<std::size_t>(
      std::count_if(weights.begin(), weights.end(), [](double w) { return w != 0.0; }));
}

void HelperModel::validate() const {
  const std::size_t d = weights.size();
  if (d == 0 || feature_means.size() != d || feature_scales.size() != d) {
    throw ValidationError("helper model has inconsistent dimensions");
  }
  for (double s : feature_scales) {
    if (!(s > 0.0) || !std::isfinite(s)) throw ValidationError("helper feature scales must be positive");
  }
  if (!(threshold > 0.0 && threshold < 1.0)) {
    throw ValidationError("helper threshold must lie in (0, 1)");
  }
}

TrainResult train(const LabeledFeatures& features, const TrainConfig& config) {
  features.validate();
  config.validate();
  const std::size_t n = features.rows();
  const std::size_t d = features.dim;

  // Canonical row order: training is then a function of the row multiset.
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (features.labels[a] != features.labels[b]) return features.labels[a] < features.labels[b];
    const auto ra = features.row(a);
    const auto rb = features.row(b);
    return std::lexicographical_compare(ra.begin(), ra.end(), rb.begin(), rb.end());
  });
  std::vector<double> raw(n * d);
  Eigen::VectorXd y(static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) {
    const auto r = features.row(order[i]);
    std::copy(r.begin(), r.end(), raw.begin() + static_cast<std::ptrdiff_t>(i * d));
    y[static_cast<Eigen::Index>(i)] = features.labels[order[i]];
  }
  Standardized st = standardize(raw, n, d);
  const RowMatrix z = Eigen::Map<const RowMatrix>(st.values.data(), static_cast<Eigen::Index>(n),
                                                  static_cast<Eigen::Index>(d));

  const double lambda = config.lambda;
  Eigen::VectorXd w = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(d));
  double b = 0.0;
  Smooth cur = smooth_part(z, y, w, b);
  double objective = cur.value;

  TrainResult result;
  result.objective_trace.push_back(objective);
  double step = 1.0;
  Eigen::VectorXd w_next(static_cast<Eigen::Index>(d));

  for (std::size_t iter = 0; iter < config.max_iter; ++iter) {
    double b_next = 0.0;
    double f_next = 0.0;
    for (;;) {
      for (Eigen::Index j = 0; j < w.size(); ++j) {
        w_next[j] = soft_threshold(w[j] - step * cur.grad_w[j], step * lambda);
      }
      b_next = b - step * cur.grad_b;
      const Eigen::VectorXd dw = w_next - w;
      const double db = b_next - b;
      f_next = smooth_value(z, y, w_next, b_next);
      const double model = cur.value + cur.grad_w.dot(dw) + cur.grad_b * db +
                           (dw.squaredNorm() + db * db) / (2.0 * step);
      if (f_next <= model || step < 1e-12) break;
      step *= 0.5;
    }
    const double next_objective = f_next + lambda * w_next.lpNorm<1>();
    result.iterations = iter + 1;
    if (!(next_objective <= objective)) {
      // No further decrease representable at this precision.
      result.converged = true;
      break;
    }
    const double change = objective - next_objective;
    w = w_next;
    b = b_next;
    objective = next_objective;
    result.objective_trace.push_back(objective);
    if (change <= config.tol * std::max(std::abs(objective), 1e-300)) {
      result.converged = true;
      break;
    }
    cur = smooth_part(z, y, w, b);
  }

  HelperModel& m = result.model;
  m.weights.assign(w.data(), w.data() + w.size());
  m.intercept = b;
  m.lambda = lambda;
  m.feature_means = std::move(st.means);
  m.feature_scales = std::move(st.scales);
  m.threshold = 0.5;
  m.meta.rows = n;
  result.final_objective = objective;
  return result;
}

double predict_proba(const HelperModel& model, std::span<const float> h) {
  if (h.size() != model.dim()) {
    throw ValidationError("hidden state of dimension " + std::to_string(h.size()) +
                          " does not match the " + std::to_string(model.dim()) + "-d helper");
  }
  double z = model.intercept;
  for (std::size_t j = 0; j < h.size(); ++j) {
    z += model.weights[j] * ((h[j] - model.feature_means[j]) / model.feature_scales[j]);
  }
  return sigmoid(z);
}

double predict_proba(const HelperModel& model, std::span<const double> h) {
  if (h.size() != model.dim()) {
    throw ValidationError("feature row of dimension " + std::to_string(h.size()) +
                          " does not match the " + std::to_string(model.dim()) + "-d helper");
  }
  double z = model.intercept;
  for (std::size_t j = 0; j < h.size(); ++j) {
    z += model.weights[j] * ((h[j] - model.feature_means[j]) / model.feature_scales[j]);
  }
  return sigmoid(z);
}

double helper_accuracy(const HelperModel& model, const LabeledFeatures& labeled) {
  if (labeled.rows() == 0) throw ValidationError("helper_accuracy needs at least one row");
  std::size_t correct = 0;
  for (std::size_t i = 0; i < labeled.rows(); ++i) {
    const bool truthful = predict_proba(model, labeled.row(i)) >= model.threshold;
    if (truthful == (labeled.labels[i] == 1)) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(labeled.rows());
}

std::string serialize_model(const HelperModel& model) {
  model.validate();
  std::ostringstream out;
  auto vec = [&](const char* key, const std::vector<double>& v) {
    out << key;
    for (double x : v) out << ' ' << hexfloat(x);
    out << '\n';
  };
  out << "factprobe-helper\n";
  out << "version 1\n";
  out << "backend_id " << model.meta.backend_id << '\n';
  out << "dataset " << model.meta.dataset << '\n';
  out << "neg_index " << model.meta.neg_index << '\n';
  out << "rows " << model.meta.rows << '\n';
  out << "heldout_accuracy " << hexfloat(model.meta.heldout_accuracy) << '\n';
  out << "lambda " << hexfloat(model.lambda) << '\n';
  out << "threshold " << hexfloat(model.threshold) << '\n';
  out << "intercept " << hexfloat(model.intercept) << '\n';
  out << "dim " << model.dim() << '\n';
  vec("means", model.feature_means);
  vec("scales", model.feature_scales);
  vec("weights", model.weights);
  return out.str();
}

HelperModel parse_model(std::string_view text) {
  std::istringstream in{std::string(text)};
  std::string line;
  if (!std::getline(in, line) || line != "factprobe-helper") {
    throw ValidationError("not a helper model file");
  }
  std::map<std::string, std::string, std::less<>> fields;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto sp = line.find(' ');
    fields[line.substr(0, sp)] = sp == std::string::npos ? "" : line.substr(sp + 1);
  }
  auto need = [&](const char* key) -> const std::string& {
    auto it = fields.find(key);
    if (it == fields.end()) throw ValidationError(std::string("model file lacks '") + key + "'");
    return it->second;
  };
  auto to_size = [](const std::string& s) {
    std::size_t v = 0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size()) {
      throw ValidationError("bad integer in model file: '" + s + "'");
    }
    return v;
  };
  auto to_vec = [&](const std::string& s) {
    std::vector<double> v;
    std::istringstream words(s);
    std::string w;
    while (words >> w) v.push_back(parse_hexfloat(w));
    return v;
  };
  if (need("version") != "1") throw ValidationError("unsupported model version " + need("version"));
  HelperModel m;
  m.meta.backend_id = need("backend_id");
  m.meta.dataset = need("dataset");
  m.meta.neg_index = to_size(need("neg_index"));
  m.meta.rows = to_size(need("rows"));
  m.meta.heldout_accuracy = parse_hexfloat(need("heldout_accuracy"));
  m.lambda = parse_hexfloat(need("lambda"));
  m.threshold = parse_hexfloat(need("threshold"));
  m.intercept = parse_hexfloat(need("intercept"));
  const std::size_t d = to_size(need("dim"));
  m.feature_means = to_vec(need("means"));
  m.feature_scales = to_vec(need("scales"));
  m.weights = to_vec(need("weights"));
  if (m.weights.size() != d) throw ValidationError("model weight count does not match dim");
  m.validate();
  return m;
}

void save_model(const HelperModel& model, const std::filesystem::path& path) {
  const auto text = serialize_model(model);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ValidationError("cannot write model " + path.string());
  out << text;
}

HelperModel load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open model " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_model(buf.str());
}

}  // namespace factprobe
