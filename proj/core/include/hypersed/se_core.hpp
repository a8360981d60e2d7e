#pragma once

#include <functional>
#include <iosfwd>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace hypersed {

struct Edge {
  int i;
  int j;
  double weight;
};

/// Undirected graph with positive finite edge weights and no self-loops.
/// Edges are stored once with i < j; parallel edges are merged by summing.
class WeightedGraph {
 public:
  WeightedGraph() = default;
  WeightedGraph(int node_count, std::vector<Edge> edges);

  /// Builds from a symmetric nonnegative matrix; the diagonal and zeros are
  /// ignored, only the upper triangle is read.
  static WeightedGraph from_dense(const Eigen::MatrixXd& adjacency);

  int node_count() const { return node_count_; }
  const std::vector<Edge>& edges() const { return edges_; }
  std::size_t edge_count() const { return edges_.size(); }
  const Eigen::VectorXd& degrees() const { return degrees_; }
  double volume() const { return volume_; }

  Eigen::MatrixXd dense_adjacency() const;

 private:
  int node_count_ = 0;
  std::vector<Edge> edges_;
  Eigen::VectorXd degrees_;
  double volume_ = 0.0;
};

/// Text format: header "n m", then m lines "i j w" (0-based, i < j).
WeightedGraph read_graph(std::istream& in);
void write_graph(std::ostream& out, const WeightedGraph& g);

/// Partitioning tree stored layer by layer. Layer 0 is the root, layer H
/// holds the graph nodes as singleton leaves. parents(h)[k] is the index in
/// layer h-1 of node k of layer h, for h = 1..H.
class HardPartitioningTree {
 public:
  HardPartitioningTree(int leaf_count, std::vector<std::vector<int>> parents);

  /// Height-2 tree: leaves -> clusters given by `labels` -> root.
  static HardPartitioningTree two_level(const std::vector<int>& labels);

  int height() const { return static_cast<int>(parents_.size()); }
  int leaf_count() const { return leaf_count_; }
  int layer_size(int h) const { return layer_sizes_.at(h); }
  const std::vector<int>& parents(int h) const { return parents_.at(h - 1); }

  /// Layer-h ancestor of every leaf.
  std::vector<int> leaf_to_layer(int h) const;
  std::vector<std::vector<int>> modules(int h) const;

 private:
  int leaf_count_;
  std::vector<std::vector<int>> parents_;
  std::vector<int> layer_sizes_;
};

/// One-dimensional structural entropy in bits. Throws std::domain_error when
/// the graph has no edges.
double one_dim_se(const WeightedGraph& g);

/// Structural information of g under a hard tree, in bits.
double structural_info_hard(const WeightedGraph& g, const HardPartitioningTree& t);

struct OptimalTree {
  HardPartitioningTree tree;
  double bits;
};

using TreeVisitor = std::function<void(const HardPartitioningTree&, double)>;

/// Exhaustive search over all trees of the given height (2 or 3).
OptimalTree brute_force_optimal_tree(const WeightedGraph& g, int height, int max_nodes = 8,
                                     const TreeVisitor& visit = {});

/// Every set partition of {0..n-1} as restricted growth strings.
std::vector<std::vector<int>> enumerate_set_partitions(int n);

}  // namespace hypersed
