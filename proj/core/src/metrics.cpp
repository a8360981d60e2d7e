#include "hypersed/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace hypersed::metrics {

namespace {

std::vector<int> dense_index(std::span<const int> labels, int* count) {
  std::vector<int> uniq(labels.begin(), labels.end());
  std::sort(uniq.begin(), uniq.end());
  uniq.erase(std::unique(uniq.begin(), uniq.end()), uniq.end());
  std::vector<int> idx(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    idx[i] = static_cast<int>(std::lower_bound(uniq.begin(), uniq.end(), labels[i]) - uniq.begin());
  }
  *count = static_cast<int>(uniq.size());
  return idx;
}

double entropy(const Eigen::VectorXd& counts, double n) {
  double h = 0.0;
  for (Eigen::Index i = 0; i < counts.size(); ++i) {
    if (counts[i] > 0.0) {
      const double p = counts[i] / n;
      h -= p * std::log(p);
    }
  }
  return h;
}

double comb2(double x) { return x * (x - 1.0) / 2.0; }

}  // namespace

bool ContingencyTable::identical_partitions() const {
  if (counts.rows() != counts.cols()) return false;
  for (Eigen::Index u = 0; u < counts.rows(); ++u) {
    int nonzero = 0;
    for (Eigen::Index v = 0; v < counts.cols(); ++v) nonzero += counts(u, v) > 0.0;
    if (nonzero != 1) return false;
  }
  for (Eigen::Index v = 0; v < counts.cols(); ++v) {
    int nonzero = 0;
    for (Eigen::Index u = 0; u < counts.rows(); ++u) nonzero += counts(u, v) > 0.0;
    if (nonzero != 1) return false;
  }
  return true;
}

ContingencyTable contingency(std::span<const int> pred, std::span<const int> truth) {
  if (pred.size() != truth.size()) {
    throw std::invalid_argument("contingency: labelings differ in length (" + std::to_string(pred.size()) + " vs " +
                                std::to_string(truth.size()) + ")");
  }
  if (pred.empty()) throw std::invalid_argument("contingency: empty labelings");
  int rows = 0;
  int cols = 0;
  const auto pi = dense_index(pred, &rows);
  const auto ti = dense_index(truth, &cols);
  ContingencyTable t;
  t.counts = Eigen::MatrixXd::Zero(rows, cols);
  for (std::size_t i = 0; i < pred.size(); ++i) t.counts(pi[i], ti[i]) += 1.0;
  t.row_sums = t.counts.rowwise().sum();
  t.col_sums = t.counts.colwise().sum().transpose();
  t.n = static_cast<double>(pred.size());
  return t;
}

double row_entropy(const ContingencyTable& t) { return entropy(t.row_sums, t.n); }
double col_entropy(const ContingencyTable& t) { return entropy(t.col_sums, t.n); }

double mutual_information(const ContingencyTable& t) {
  double mi = 0.0;
  for (Eigen::Index u = 0; u < t.counts.rows(); ++u) {
    for (Eigen::Index v = 0; v < t.counts.cols(); ++v) {
      const double nuv = t.counts(u, v);
      if (nuv > 0.0) mi += nuv / t.n * std::log(t.n * nuv / (t.row_sums[u] * t.col_sums[v]));
    }
  }
  return std::max(mi, 0.0);
}

double expected_mutual_information(const ContingencyTable& t) {
  const double n = t.n;
  const double lg_n = std::lgamma(n + 1.0);
  double emi = 0.0;
  for (Eigen::Index u = 0; u < t.row_sums.size(); ++u) {
    const double a = t.row_sums[u];
    for (Eigen::Index v = 0; v < t.col_sums.size(); ++v) {
      const double b = t.col_sums[v];
      const double lo = std::max(1.0, a + b - n);
      const double hi = std::min(a, b);
      const double fixed = std::lgamma(a + 1.0) + std::lgamma(b + 1.0) + std::lgamma(n - a + 1.0) +
                           std::lgamma(n - b + 1.0) - lg_n;
      for (double nij = lo; nij <= hi; nij += 1.0) {
        const double log_p = fixed - std::lgamma(nij + 1.0) - std::lgamma(a - nij + 1.0) -
                             std::lgamma(b - nij + 1.0) - std::lgamma(n - a - b + nij + 1.0);
        emi += nij / n * std::log(n * nij / (a * b)) * std::exp(log_p);
      }
    }
  }
  return emi;
}

double nmi(const ContingencyTable& t) {
  if (t.identical_partitions()) return 1.0;
  const double hu = row_entropy(t);
  const double hv = col_entropy(t);
  if (hu == 0.0 || hv == 0.0) return 0.0;
  return mutual_information(t) / (0.5 * (hu + hv));
}

double ami(const ContingencyTable& t) {
  if (t.identical_partitions()) return 1.0;
  const double mi = mutual_information(t);
  const double emi = expected_mutual_information(t);
  const double denom = 0.5 * (row_entropy(t) + col_entropy(t)) - emi;
  if (std::abs(denom) < 1e-12) return 0.0;
  return (mi - emi) / denom;
}

double ari(const ContingencyTable& t) {
  if (t.identical_partitions()) return 1.0;
  double sum_cells = 0.0;
  for (Eigen::Index i = 0; i < t.counts.size(); ++i) sum_cells += comb2(t.counts(i));
  double sum_a = 0.0;
  for (Eigen::Index i = 0; i < t.row_sums.size(); ++i) sum_a += comb2(t.row_sums[i]);
  double sum_b = 0.0;
  for (Eigen::Index i = 0; i < t.col_sums.size(); ++i) sum_b += comb2(t.col_sums[i]);
  const double pairs = comb2(t.n);
  if (pairs == 0.0) return 0.0;
  const double expected = sum_a * sum_b / pairs;
  const double denom = 0.5 * (sum_a + sum_b) - expected;
  if (std::abs(denom) < 1e-12) return 0.0;
  return (sum_cells - expected) / denom;
}

Scores score(std::span<const int> pred, std::span<const int> truth) {
  const auto t = contingency(pred, truth);
  return {nmi(t), ami(t), ari(t)};
}

}  // namespace hypersed::metrics
