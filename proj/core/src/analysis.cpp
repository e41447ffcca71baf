#include "scs/analysis.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "scs/error.hpp"
#include "scs/rng.hpp"
#include "scs/tokenizer.hpp"
#include "scs/vec.hpp"

namespace scs {

namespace {

constexpr double kRankTolerance = 1e-10;

void check_rows(std::span<const std::vector<double>> data, std::size_t d) {
  for (const auto& row : data) {
    if (row.size() != d) throw Error(ErrorKind::kInput, "rows have different dimensions");
    for (double v : row) {
      if (!std::isfinite(v)) throw Error(ErrorKind::kNumeric, "non-finite input value");
    }
  }
}

std::string display(Token token, std::size_t vocab_size) {
  if (vocab_size < 4) return "[" + std::to_string(token) + "]";
  ModelConfig c;
  c.vocab_size = vocab_size;
  return token_display(token, c);
}

}  // namespace

PcaBasis pca_fit(std::span<const std::vector<double>> data, std::size_t n_components,
                 const PcaOptions& options) {
  if (n_components < 1) throw Error(ErrorKind::kInput, "n_components must be >= 1");
  if (data.size() < n_components + 1) {
    throw Error(ErrorKind::kInput, "PCA with " + std::to_string(n_components) +
                                       " components needs at least " +
                                       std::to_string(n_components + 1) + " samples, got " +
                                       std::to_string(data.size()));
  }
  const std::size_t d = data.front().size();
  if (n_components > d) {
    throw Error(ErrorKind::kInput, "n_components " + std::to_string(n_components) +
                                       " exceeds dimension " + std::to_string(d));
  }
  check_rows(data, d);
  const std::size_t n = data.size();

  PcaBasis basis;
  basis.mean.assign(d, 0.0);
  for (const auto& row : data) {
    for (std::size_t j = 0; j < d; ++j) basis.mean[j] += row[j];
  }
  for (double& m : basis.mean) m /= static_cast<double>(n);

  Eigen::MatrixXd centered(n, d);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) centered(i, j) = data[i][j] - basis.mean[j];
  }
  const Eigen::MatrixXd cov = (centered.transpose() * centered) / static_cast<double>(n - 1);
  basis.total_variance = cov.trace();

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
  if (solver.info() != Eigen::Success) {
    throw Error(ErrorKind::kNumeric, "eigendecomposition did not converge");
  }
  // Eigenvalues come back ascending.
  const auto& values = solver.eigenvalues();
  const auto& vectors = solver.eigenvectors();
  const double largest = std::max(values(static_cast<Eigen::Index>(d) - 1), 0.0);
  const double floor = largest * kRankTolerance;
  std::size_t rank = 0;
  for (Eigen::Index i = 0; i < values.size(); ++i) {
    if (values(i) > floor && largest > 0.0) ++rank;
  }
  if (rank < n_components && !options.allow_rank_deficient) {
    throw Error(ErrorKind::kDegenerate, "data has rank " + std::to_string(rank) +
                                            "; cannot fit " + std::to_string(n_components) +
                                            " components");
  }

  for (std::size_t k = 0; k < n_components; ++k) {
    const auto col = static_cast<Eigen::Index>(d - 1 - k);
    std::vector<double> v(d);
    std::size_t arg = 0;
    for (std::size_t j = 0; j < d; ++j) {
      v[j] = vectors(static_cast<Eigen::Index>(j), col);
      if (std::abs(v[j]) > std::abs(v[arg])) arg = j;
    }
    if (v[arg] < 0.0) {
      for (double& x : v) x = -x;
    }
    basis.components.push_back(std::move(v));
    const double lambda = values(col);
    basis.explained_variance.push_back(k < rank ? lambda : 0.0);
  }
  return basis;
}

std::vector<double> project(std::span<const std::vector<double>> data, const PcaBasis& basis,
                            std::size_t component) {
  if (component >= basis.components.size()) {
    throw Error(ErrorKind::kInput, "component index " + std::to_string(component) +
                                       " outside basis of size " +
                                       std::to_string(basis.components.size()));
  }
  check_rows(data, basis.dim());
  const auto& axis = basis.components[component];
  std::vector<double> out;
  out.reserve(data.size());
  for (const auto& row : data) {
    double acc = 0.0;
    for (std::size_t j = 0; j < row.size(); ++j) acc += (row[j] - basis.mean[j]) * axis[j];
    out.push_back(acc);
  }
  return out;
}

std::vector<std::array<double, 2>> project_plane(std::span<const std::vector<double>> data,
                                                 const PcaBasis& basis, PlaneMode mode) {
  const std::size_t first = mode == PlaneMode::kRaw ? 0 : 1;
  const auto x = project(data, basis, first);
  const auto y = project(data, basis, first + 1);
  std::vector<std::array<double, 2>> out(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) out[i] = {x[i], y[i]};
  return out;
}

TokenAlignmentReport token_alignment(const ForwardTrace& trace, const ConceptVector& cv,
                                     std::size_t layer) {
  if (layer > trace.num_layers) {
    throw Error(ErrorKind::kInput, "layer " + std::to_string(layer) + " outside [0, " +
                                       std::to_string(trace.num_layers) + "]");
  }
  if (cv.values.size() != trace.hidden_dim) {
    throw Error(ErrorKind::kInput, "concept has dimension " + std::to_string(cv.values.size()) +
                                       ", trace has " + std::to_string(trace.hidden_dim));
  }
  TokenAlignmentReport report;
  report.layer = layer;
  for (std::size_t t = 0; t < trace.size(); ++t) {
    const auto c = cosine<float>(trace.residual(layer, t), cv.values);
    report.rows.push_back(
        {t, trace.tokens[t], display(trace.tokens[t], trace.vocab_size), c.value, c.degenerate});
  }
  std::vector<std::size_t> order(report.rows.size());
  std::iota(order.begin(), order.end(), 0);
  auto cos_at = [&](std::size_t i) { return report.rows[i].cosine; };
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return cos_at(a) > cos_at(b); });
  report.top3.assign(order.begin(), order.begin() + std::min<std::size_t>(3, order.size()));
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return cos_at(a) < cos_at(b) || (cos_at(a) == cos_at(b) && a < b);
  });
  report.bottom3.assign(order.begin(), order.begin() + std::min<std::size_t>(3, order.size()));
  return report;
}

std::vector<std::size_t> stratified_folds(std::span<const int> labels, std::size_t folds,
                                          std::uint64_t seed) {
  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < labels.size(); ++i) by_class[labels[i]].push_back(i);
  std::vector<std::size_t> fold_of(labels.size());
  Rng rng(derive_seed(seed, "folds", folds));
  std::size_t offset = 0;
  for (auto& [label, members] : by_class) {
    for (std::size_t i = members.size(); i > 1; --i) {
      std::swap(members[i - 1], members[rng.below(i)]);
    }
    for (std::size_t i = 0; i < members.size(); ++i) fold_of[members[i]] = (offset + i) % folds;
    offset += members.size();
  }
  return fold_of;
}

double macro_f1(std::span<const int> truth, std::span<const int> predicted) {
  if (truth.size() != predicted.size()) throw Error(ErrorKind::kInput, "label lengths differ");
  std::map<int, std::array<std::size_t, 3>> counts;  // tp, fp, fn
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] == predicted[i]) {
      ++counts[truth[i]][0];
    } else {
      ++counts[predicted[i]][1];
      ++counts[truth[i]][2];
    }
  }
  if (counts.empty()) return 0.0;
  double sum = 0.0;
  for (const auto& [label, c] : counts) {
    sum += 2.0 * static_cast<double>(c[0]) / static_cast<double>(2 * c[0] + c[1] + c[2]);
  }
  return sum / static_cast<double>(counts.size());
}

namespace {

struct Softmax {
  std::size_t classes;
  std::size_t dim;
  std::vector<double> w;  // [classes x dim]
  std::vector<double> b;

  std::size_t predict(std::span<const double> x) const {
    std::size_t best = 0;
    double best_score = -INFINITY;
    for (std::size_t c = 0; c < classes; ++c) {
      double s = b[c];
      for (std::size_t j = 0; j < dim; ++j) s += w[c * dim + j] * x[j];
      if (s > best_score) {
        best_score = s;
        best = c;
      }
    }
    return best;
  }
};

Softmax train_softmax(const std::vector<std::vector<double>>& x, const std::vector<std::size_t>& y,
                      std::size_t classes, const ProbeOptions& options) {
  const std::size_t n = x.size();
  const std::size_t dim = x.front().size();
  Softmax m{classes, dim, std::vector<double>(classes * dim, 0.0), std::vector<double>(classes, 0.0)};
  std::vector<double> gw(classes * dim);
  std::vector<double> gb(classes);
  std::vector<double> p(classes);
  for (std::size_t step = 0; step < options.steps; ++step) {
    std::fill(gw.begin(), gw.end(), 0.0);
    std::fill(gb.begin(), gb.end(), 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      double max_s = -INFINITY;
      for (std::size_t c = 0; c < classes; ++c) {
        double s = m.b[c];
        for (std::size_t j = 0; j < dim; ++j) s += m.w[c * dim + j] * x[i][j];
        p[c] = s;
        max_s = std::max(max_s, s);
      }
      double z = 0.0;
      for (double& v : p) {
        v = std::exp(v - max_s);
        z += v;
      }
      for (std::size_t c = 0; c < classes; ++c) {
        const double g = p[c] / z - (c == y[i] ? 1.0 : 0.0);
        gb[c] += g;
        for (std::size_t j = 0; j < dim; ++j) gw[c * dim + j] += g * x[i][j];
      }
    }
    const double scale = options.learning_rate / static_cast<double>(n);
    for (std::size_t k = 0; k < gw.size(); ++k) m.w[k] -= scale * gw[k];
    for (std::size_t c = 0; c < classes; ++c) m.b[c] -= scale * gb[c];
  }
  return m;
}

}  // namespace

ProbeResult linear_probe(std::span<const std::vector<double>> points, std::span<const int> labels,
                         const ProbeOptions& options) {
  if (points.size() != labels.size()) {
    throw Error(ErrorKind::kInput, "points and labels have different lengths");
  }
  if (options.folds < 2) throw Error(ErrorKind::kInput, "probe needs at least 2 folds");
  if (points.empty()) throw Error(ErrorKind::kInput, "probe needs data");
  const std::size_t dim = points.front().size();
  check_rows(points, dim);

  ProbeResult result;
  std::map<int, std::size_t> class_counts;
  for (int l : labels) ++class_counts[l];
  if (class_counts.size() < 2) throw Error(ErrorKind::kInput, "probe needs at least 2 classes");
  for (const auto& [label, count] : class_counts) {
    if (count < options.folds) {
      throw Error(ErrorKind::kInput, "class " + std::to_string(label) + " has " +
                                         std::to_string(count) + " samples, fewer than " +
                                         std::to_string(options.folds) + " folds");
    }
    result.classes.push_back(label);
  }
  std::map<int, std::size_t> class_index;
  for (std::size_t c = 0; c < result.classes.size(); ++c) class_index[result.classes[c]] = c;
  const std::size_t k = result.classes.size();

  result.fold_of = stratified_folds(labels, options.folds, options.seed);
  result.predictions.assign(points.size(), 0);
  result.confusion.assign(k, std::vector<std::size_t>(k, 0));

  for (std::size_t fold = 0; fold < options.folds; ++fold) {
    std::vector<std::size_t> train;
    std::vector<std::size_t> test;
    for (std::size_t i = 0; i < points.size(); ++i) {
      (result.fold_of[i] == fold ? test : train).push_back(i);
    }
    std::vector<double> mu(dim, 0.0);
    std::vector<double> sigma(dim, 0.0);
    for (auto i : train) {
      for (std::size_t j = 0; j < dim; ++j) mu[j] += points[i][j];
    }
    for (double& m : mu) m /= static_cast<double>(train.size());
    for (auto i : train) {
      for (std::size_t j = 0; j < dim; ++j) {
        const double e = points[i][j] - mu[j];
        sigma[j] += e * e;
      }
    }
    for (double& s : sigma) {
      s = std::sqrt(s / static_cast<double>(train.size()));
      if (s == 0.0) s = 1.0;
    }
    auto standardize = [&](std::size_t i) {
      std::vector<double> z(dim);
      for (std::size_t j = 0; j < dim; ++j) z[j] = (points[i][j] - mu[j]) / sigma[j];
      return z;
    };

    std::vector<std::vector<double>> x;
    std::vector<std::size_t> y;
    for (auto i : train) {
      x.push_back(standardize(i));
      y.push_back(class_index[labels[i]]);
    }
    const Softmax model = train_softmax(x, y, k, options);

    std::vector<int> truth;
    std::vector<int> predicted;
    for (auto i : test) {
      const std::size_t c = model.predict(standardize(i));
      result.predictions[i] = result.classes[c];
      ++result.confusion[class_index[labels[i]]][c];
      truth.push_back(labels[i]);
      predicted.push_back(result.classes[c]);
    }
    result.fold_f1.push_back(macro_f1(truth, predicted));
  }

  const double folds = static_cast<double>(options.folds);
  result.mean_f1 = std::accumulate(result.fold_f1.begin(), result.fold_f1.end(), 0.0) / folds;
  double sq = 0.0;
  for (double f : result.fold_f1) sq += (f - result.mean_f1) * (f - result.mean_f1);
  result.std_f1 = std::sqrt(sq / (folds - 1.0));
  return result;
}

Trajectory concept_trajectory(std::span<const TrajectoryInput> vectors) {
  if (vectors.size() < 3) throw Error(ErrorKind::kInput, "trajectory needs at least 3 vectors");
  std::vector<std::vector<double>> data;
  data.reserve(vectors.size());
  for (const auto& v : vectors) data.push_back(v.values);
  Trajectory out;
  out.basis = pca_fit(data, std::min<std::size_t>(2, data.front().size()), {true});
  const auto x = project(data, out.basis, 0);
  const auto y = out.basis.components.size() > 1 ? project(data, out.basis, 1)
                                                 : std::vector<double>(data.size(), 0.0);
  for (std::size_t i = 0; i < vectors.size(); ++i) {
    out.points.push_back({vectors[i].name, vectors[i].layer, x[i], y[i]});
  }
  return out;
}

}  // namespace scs
