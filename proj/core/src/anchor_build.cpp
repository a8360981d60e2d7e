#include "hypersed/anchor_build.hpp"

#include <algorithm>
#include <limits>
#include <random>
#include <stdexcept>
#include <string>

namespace hypersed {

AnchorMembership::AnchorMembership(std::vector<int> anchor_of, int anchor_count)
    : anchor_of_(std::move(anchor_of)), anchor_count_(anchor_count) {
  std::vector<char> seen(anchor_count, 0);
  for (int a : anchor_of_) {
    if (a < 0 || a >= anchor_count) {
      throw std::invalid_argument("AnchorMembership: anchor index out of range");
    }
    seen[a] = 1;
  }
  for (int u = 0; u < anchor_count; ++u) {
    if (!seen[u]) throw std::invalid_argument("AnchorMembership: anchor " + std::to_string(u) + " is empty");
  }
}

AnchorMembership AnchorMembership::identity(int n) {
  std::vector<int> a(n);
  for (int i = 0; i < n; ++i) a[i] = i;
  return AnchorMembership(std::move(a), n);
}

std::vector<int> AnchorMembership::sizes() const {
  std::vector<int> s(anchor_count_, 0);
  for (int a : anchor_of_) ++s[a];
  return s;
}

Eigen::MatrixXd AnchorMembership::dense() const {
  Eigen::MatrixXd c = Eigen::MatrixXd::Zero(message_count(), anchor_count_);
  for (int i = 0; i < message_count(); ++i) c(i, anchor_of_[i]) = 1.0;
  return c;
}

int choose_anchor_count(int n, int epsilon) {
  if (epsilon < 1) throw std::invalid_argument("choose_anchor_count: epsilon must be >= 1");
  if (n <= 0) return 1;
  return std::max(1, (n + epsilon - 1) / epsilon);
}

namespace {

int nearest(const Eigen::MatrixXd& x, Eigen::Index i, const Eigen::MatrixXd& centroids, double* dist2 = nullptr) {
  int best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (Eigen::Index k = 0; k < centroids.rows(); ++k) {
    const double d = (x.row(i) - centroids.row(k)).squaredNorm();
    if (d < best_d) {
      best_d = d;
      best = static_cast<int>(k);
    }
  }
  if (dist2) *dist2 = best_d;
  return best;
}

}  // namespace

ClusterResult cluster_messages_detailed(const Eigen::MatrixXd& x, int anchor_count, std::uint64_t seed,
                                        const ClusterOptions& options) {
  const auto n = static_cast<int>(x.rows());
  if (anchor_count < 1) throw std::invalid_argument("cluster_messages: anchor count must be >= 1");
  if (anchor_count > n) {
    throw std::invalid_argument("cluster_messages: anchor count " + std::to_string(anchor_count) +
                                " exceeds message count " + std::to_string(n));
  }
  ClusterResult out;
  if (anchor_count == n) {
    out.membership = AnchorMembership::identity(n);
    out.centroids = x;
    return out;
  }

  std::mt19937_64 rng(seed);
  Eigen::MatrixXd centroids(anchor_count, x.cols());
  std::vector<char> chosen(n, 0);
  const int first = static_cast<int>(std::uniform_int_distribution<int>(0, n - 1)(rng));
  centroids.row(0) = x.row(first);
  chosen[first] = 1;
  Eigen::VectorXd d2(n);
  for (int i = 0; i < n; ++i) d2[i] = (x.row(i) - centroids.row(0)).squaredNorm();
  for (int k = 1; k < anchor_count; ++k) {
    const double total = d2.sum();
    int pick = -1;
    if (total > 0.0) {
      const double r = std::uniform_real_distribution<double>(0.0, total)(rng);
      double acc = 0.0;
      for (int i = 0; i < n; ++i) {
        acc += d2[i];
        if (d2[i] > 0.0 && acc >= r) {
          pick = i;
          break;
        }
      }
      if (pick < 0) {
        for (int i = n - 1; i >= 0; --i) {
          if (d2[i] > 0.0) {
            pick = i;
            break;
          }
        }
      }
    }
    if (pick < 0) {
      // every remaining point coincides with a centroid
      for (int i = 0; i < n; ++i) {
        if (!chosen[i]) {
          pick = i;
          break;
        }
      }
    }
    chosen[pick] = 1;
    centroids.row(k) = x.row(pick);
    for (int i = 0; i < n; ++i) d2[i] = std::min(d2[i], (x.row(i) - centroids.row(k)).squaredNorm());
  }

  std::vector<int> assign(n, 0);
  int it = 0;
  for (; it < options.max_iter; ++it) {
    for (int i = 0; i < n; ++i) assign[i] = nearest(x, i, centroids);
    Eigen::MatrixXd next = Eigen::MatrixXd::Zero(anchor_count, x.cols());
    std::vector<int> counts(anchor_count, 0);
    for (int i = 0; i < n; ++i) {
      next.row(assign[i]) += x.row(i);
      ++counts[assign[i]];
    }
    double shift = 0.0;
    for (int k = 0; k < anchor_count; ++k) {
      if (counts[k] == 0) {
        next.row(k) = centroids.row(k);
        continue;
      }
      next.row(k) /= counts[k];
      shift = std::max(shift, (next.row(k) - centroids.row(k)).norm());
    }
    centroids = std::move(next);
    if (shift < options.tol) {
      ++it;
      break;
    }
  }
  for (int i = 0; i < n; ++i) assign[i] = nearest(x, i, centroids);

  std::vector<int> remap(anchor_count, -1);
  int used = 0;
  for (int k = 0; k < anchor_count; ++k) {
    if (std::find(assign.begin(), assign.end(), k) != assign.end()) remap[k] = used++;
  }
  Eigen::MatrixXd kept(used, x.cols());
  for (int k = 0; k < anchor_count; ++k) {
    if (remap[k] >= 0) kept.row(remap[k]) = centroids.row(k);
  }
  for (int& a : assign) a = remap[a];
  out.membership = AnchorMembership(std::move(assign), used);
  out.centroids = std::move(kept);
  out.iterations = it;
  out.pruned = anchor_count - used;
  return out;
}

AnchorMembership cluster_messages(const Eigen::MatrixXd& x, int anchor_count, std::uint64_t seed,
                                  const ClusterOptions& options) {
  return cluster_messages_detailed(x, anchor_count, seed, options).membership;
}

Eigen::MatrixXd anchor_features(const Eigen::MatrixXd& x, const AnchorMembership& c) {
  if (x.rows() != c.message_count()) {
    throw std::invalid_argument("anchor_features: embedding rows differ from membership size");
  }
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(c.anchor_count(), x.cols());
  const auto sizes = c.sizes();
  for (int i = 0; i < c.message_count(); ++i) out.row(c.anchor_of(i)) += x.row(i);
  for (int u = 0; u < c.anchor_count(); ++u) {
    if (sizes[u] == 0) throw std::invalid_argument("anchor_features: empty anchor " + std::to_string(u));
    out.row(u) /= sizes[u];
  }
  return out;
}

AnchorAdjacency anchor_adjacency(const WeightedGraph& a, const AnchorMembership& c) {
  if (a.node_count() != c.message_count()) {
    throw std::invalid_argument("anchor_adjacency: graph size differs from membership size");
  }
  const int m = c.anchor_count();
  AnchorAdjacency out{Eigen::MatrixXd::Zero(m, m), Eigen::VectorXd::Zero(m)};
  for (const auto& e : a.edges()) {
    const int u = c.anchor_of(e.i);
    const int v = c.anchor_of(e.j);
    if (u == v) {
      out.intra_mass[u] += 2.0 * e.weight;
    } else {
      out.off_diagonal(u, v) += e.weight;
      out.off_diagonal(v, u) += e.weight;
    }
  }
  return out;
}

AnchorAdjacency anchor_adjacency(const Eigen::MatrixXd& a, const AnchorMembership& c) {
  if (a.rows() != a.cols() || a.rows() != c.message_count()) {
    throw std::invalid_argument("anchor_adjacency: shape mismatch");
  }
  const Eigen::MatrixXd dense_c = c.dense();
  Eigen::MatrixXd full = dense_c.transpose() * a * dense_c;
  AnchorAdjacency out{full, full.diagonal()};
  out.off_diagonal.diagonal().setZero();
  return out;
}

std::vector<int> map_back(std::span<const int> anchor_labels, const AnchorMembership& c) {
  if (static_cast<int>(anchor_labels.size()) != c.anchor_count()) {
    throw std::invalid_argument("map_back: need one label per anchor");
  }
  std::vector<int> out(c.message_count());
  for (int i = 0; i < c.message_count(); ++i) out[i] = anchor_labels[c.anchor_of(i)];
  return out;
}

AnchorGraph build_anchor_graph(const Eigen::MatrixXd& embeddings, const WeightedGraph& message_graph, int epsilon,
                               std::uint64_t seed) {
  const int n = static_cast<int>(embeddings.rows());
  const int m = std::min(n, choose_anchor_count(n, epsilon));
  auto clustered = cluster_messages_detailed(embeddings, m, seed);
  AnchorGraph g;
  g.membership = std::move(clustered.membership);
  g.pruned = clustered.pruned;
  g.features = anchor_features(embeddings, g.membership);
  g.adjacency = anchor_adjacency(message_graph, g.membership);
  g.graph = WeightedGraph::from_dense(g.adjacency.off_diagonal);
  return g;
}

}  // namespace hypersed
