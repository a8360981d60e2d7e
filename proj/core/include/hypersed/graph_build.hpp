#pragma once

#include <chrono>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "hypersed/se_core.hpp"

namespace hypersed {

using Timestamp = std::chrono::sys_time<std::chrono::milliseconds>;

struct MessageRecord {
  std::string id;
  Timestamp timestamp{};
  Eigen::VectorXd embedding;
  // Namespaced strings such as "user:alice" or "hashtag:quake".
  std::vector<std::string> attributes;
  std::optional<int> label;
};

/// Stacks record embeddings as rows. Throws on inconsistent dimensions.
Eigen::MatrixXd embedding_matrix(std::span<const MessageRecord> messages);

/// Dense cosine similarity of the rows of X with a unit diagonal. Rows are
/// processed in blocks of `block_rows`. A zero-norm row raises an error naming
/// ids[row] when ids are given.
Eigen::MatrixXd cosine_similarity(const Eigen::MatrixXd& x, std::span<const std::string> ids = {},
                                  Eigen::Index block_rows = 2048);

/// Pairs (i < j) sharing at least one attribute, sorted.
std::vector<std::pair<int, int>> attribute_edges(std::span<const MessageRecord> messages);

struct ThresholdGrid {
  double lo = 0.4;
  double hi = 0.6;
  double step = 0.05;

  /// lo, lo + step, ... up to hi, each rounded to 12 decimal places.
  std::vector<double> points() const;
};

struct ThresholdSearch {
  double tau = 0.0;
  std::vector<double> grid;
  std::vector<double> entropies;
  double mean_entropy = 0.0;
  std::vector<std::string> warnings;
};

/// 1DSE of the graph keeping off-diagonal pairs with S_ij >= pi, weighted by
/// S_ij. Returns 0 for an empty graph.
double thresholded_one_dim_se(const Eigen::MatrixXd& similarity, double pi);

/// Threshold whose 1DSE is closest to the grid-mean 1DSE. Ties go to the
/// smaller threshold.
ThresholdSearch select_threshold(const Eigen::MatrixXd& similarity, const ThresholdGrid& grid = {});

enum class EdgeKind { kAttribute, kSemantic, kBoth };

const char* to_string(EdgeKind kind);

struct EdgeProvenance {
  int i;
  int j;
  EdgeKind kind;
  double weight;
  // Attribute-linked pair with nonpositive similarity; absent from the graph.
  bool dropped;
};

struct MessageGraph {
  Eigen::MatrixXd embeddings;
  WeightedGraph graph;
  std::vector<EdgeProvenance> provenance;
  double tau = 0.0;
};

MessageGraph assemble_message_graph(std::span<const MessageRecord> messages, const Eigen::MatrixXd& similarity,
                                    double tau);

}  // namespace hypersed
