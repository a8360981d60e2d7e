#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "hypersed/se_core.hpp"

namespace hypersed {

/// Hard message -> anchor assignment (the one-hot matrix C, stored by row).
class AnchorMembership {
 public:
  AnchorMembership() = default;
  /// Throws if any anchor in [0, anchor_count) has no member.
  AnchorMembership(std::vector<int> anchor_of, int anchor_count);

  static AnchorMembership identity(int n);

  int message_count() const { return static_cast<int>(anchor_of_.size()); }
  int anchor_count() const { return anchor_count_; }
  int anchor_of(int message) const { return anchor_of_.at(message); }
  const std::vector<int>& assignments() const { return anchor_of_; }
  std::vector<int> sizes() const;

  /// N x M one-hot matrix.
  Eigen::MatrixXd dense() const;

 private:
  std::vector<int> anchor_of_;
  int anchor_count_ = 0;
};

/// M = max(1, ceil(n / epsilon)).
int choose_anchor_count(int n, int epsilon);

struct ClusterOptions {
  int max_iter = 50;
  double tol = 1e-6;
};

struct ClusterResult {
  AnchorMembership membership;
  Eigen::MatrixXd centroids;  // rows, after pruning
  int iterations = 0;
  int pruned = 0;
};

/// Seeded Lloyd iterations with D^2-weighted seeding in Euclidean space.
/// Empty clusters are pruned, so the result may contain fewer than M anchors.
ClusterResult cluster_messages_detailed(const Eigen::MatrixXd& x, int anchor_count, std::uint64_t seed,
                                        const ClusterOptions& options = {});

AnchorMembership cluster_messages(const Eigen::MatrixXd& x, int anchor_count, std::uint64_t seed,
                                  const ClusterOptions& options = {});

/// Row u is the mean of the embeddings of anchor u's members.
Eigen::MatrixXd anchor_features(const Eigen::MatrixXd& x, const AnchorMembership& c);

struct AnchorAdjacency {
  // C^T A C with the diagonal zeroed.
  Eigen::MatrixXd off_diagonal;
  // The zeroed diagonal of C^T A C (within-anchor mass, both directions).
  Eigen::VectorXd intra_mass;
};

AnchorAdjacency anchor_adjacency(const WeightedGraph& a, const AnchorMembership& c);
AnchorAdjacency anchor_adjacency(const Eigen::MatrixXd& a, const AnchorMembership& c);

/// Message labels from anchor labels.
std::vector<int> map_back(std::span<const int> anchor_labels, const AnchorMembership& c);

struct AnchorGraph {
  Eigen::MatrixXd features;
  AnchorAdjacency adjacency;
  WeightedGraph graph;
  AnchorMembership membership;
  int pruned = 0;

  int anchor_count() const { return membership.anchor_count(); }
};

AnchorGraph build_anchor_graph(const Eigen::MatrixXd& embeddings, const WeightedGraph& message_graph, int epsilon,
                               std::uint64_t seed);

}  // namespace hypersed
