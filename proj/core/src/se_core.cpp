#include "hypersed/se_core.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <istream>
#include <limits>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>

namespace hypersed {

WeightedGraph::WeightedGraph(int node_count, std::vector<Edge> edges) : node_count_(node_count) {
  if (node_count < 0) {
    throw std::invalid_argument("WeightedGraph: negative node count");
  }
  std::map<std::pair<int, int>, double> merged;
  for (const auto& e : edges) {
    if (e.i < 0 || e.j < 0 || e.i >= node_count || e.j >= node_count) {
      throw std::invalid_argument("WeightedGraph: edge endpoint out of range");
    }
    if (e.i == e.j) {
      throw std::invalid_argument("WeightedGraph: self-loop at node " + std::to_string(e.i));
    }
    if (!std::isfinite(e.weight) || !(e.weight > 0.0)) {
      throw std::invalid_argument("WeightedGraph: edge weights must be finite and positive");
    }
    merged[{std::min(e.i, e.j), std::max(e.i, e.j)}] += e.weight;
  }
  edges_.reserve(merged.size());
  degrees_ = Eigen::VectorXd::Zero(node_count);
  for (const auto& [key, w] : merged) {
    edges_.push_back({key.first, key.second, w});
    degrees_[key.first] += w;
    degrees_[key.second] += w;
  }
  volume_ = degrees_.sum();
}

WeightedGraph WeightedGraph::from_dense(const Eigen::MatrixXd& adjacency) {
  if (adjacency.rows() != adjacency.cols()) {
    throw std::invalid_argument("WeightedGraph::from_dense: matrix is not square");
  }
  const int n = static_cast<int>(adjacency.rows());
  std::vector<Edge> edges;
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) {
      if (adjacency(i, j) > 0.0) edges.push_back({i, j, adjacency(i, j)});
    }
  }
  return WeightedGraph(n, std::move(edges));
}

Eigen::MatrixXd WeightedGraph::dense_adjacency() const {
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(node_count_, node_count_);
  for (const auto& e : edges_) {
    a(e.i, e.j) = e.weight;
    a(e.j, e.i) = e.weight;
  }
  return a;
}

WeightedGraph read_graph(std::istream& in) {
  std::string line;
  long long n = -1;
  long long m = -1;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream ls(line);
    if (!(ls >> n >> m) || n < 0 || m < 0) {
      throw std::runtime_error("graph header must be \"n m\" (line " + std::to_string(line_no) + ")");
    }
    break;
  }
  if (n < 0) {
    throw std::runtime_error("graph file is empty");
  }
  std::vector<Edge> edges;
  edges.reserve(static_cast<std::size_t>(m));
  while (static_cast<long long>(edges.size()) < m && std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream ls(line);
    Edge e{};
    if (!(ls >> e.i >> e.j >> e.weight)) {
      throw std::runtime_error("malformed edge line " + std::to_string(line_no));
    }
    if (e.i >= e.j) {
      throw std::runtime_error("edge on line " + std::to_string(line_no) + " must satisfy i < j");
    }
    edges.push_back(e);
  }
  if (static_cast<long long>(edges.size()) != m) {
    throw std::runtime_error("graph file declares " + std::to_string(m) + " edges but has " +
                             std::to_string(edges.size()));
  }
  return WeightedGraph(static_cast<int>(n), std::move(edges));
}

void write_graph(std::ostream& out, const WeightedGraph& g) {
  out << g.node_count() << ' ' << g.edge_count() << '\n';
  out << std::setprecision(std::numeric_limits<double>::max_digits10);
  for (const auto& e : g.edges()) {
    out << e.i << ' ' << e.j << ' ' << e.weight << '\n';
  }
}

HardPartitioningTree::HardPartitioningTree(int leaf_count, std::vector<std::vector<int>> parents)
    : leaf_count_(leaf_count), parents_(std::move(parents)) {
  if (parents_.empty()) {
    throw std::invalid_argument("HardPartitioningTree: height must be at least 1");
  }
  const int height = static_cast<int>(parents_.size());
  layer_sizes_.assign(height + 1, 0);
  layer_sizes_[0] = 1;
  layer_sizes_[height] = leaf_count;
  for (int h = height - 1; h >= 1; --h) {
    const auto& p = parents_[h];  // maps layer h+1 -> layer h
    layer_sizes_[h] = p.empty() ? 0 : *std::max_element(p.begin(), p.end()) + 1;
  }
  for (int h = 1; h <= height; ++h) {
    const auto& p = parents_[h - 1];
    if (static_cast<int>(p.size()) != layer_sizes_[h]) {
      throw std::invalid_argument("HardPartitioningTree: layer " + std::to_string(h) + " has " +
                                  std::to_string(p.size()) + " parent links, expected " +
                                  std::to_string(layer_sizes_[h]));
    }
    std::vector<char> used(layer_sizes_[h - 1], 0);
    for (int q : p) {
      if (q < 0 || q >= layer_sizes_[h - 1]) {
        throw std::invalid_argument("HardPartitioningTree: parent index out of range");
      }
      used[q] = 1;
    }
    if (std::find(used.begin(), used.end(), 0) != used.end()) {
      throw std::invalid_argument("HardPartitioningTree: internal node without children at layer " +
                                  std::to_string(h - 1));
    }
  }
}

HardPartitioningTree HardPartitioningTree::two_level(const std::vector<int>& labels) {
  // densify labels so every cluster node has a child
  std::map<int, int> dense;
  std::vector<int> leaf_parent(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    auto [it, _] = dense.emplace(labels[i], static_cast<int>(dense.size()));
    leaf_parent[i] = it->second;
  }
  std::vector<int> cluster_parent(dense.size(), 0);
  return HardPartitioningTree(static_cast<int>(labels.size()), {cluster_parent, leaf_parent});
}

std::vector<int> HardPartitioningTree::leaf_to_layer(int h) const {
  const int height = this->height();
  if (h < 0 || h > height) {
    throw std::out_of_range("HardPartitioningTree: layer out of range");
  }
  std::vector<int> idx(leaf_count_);
  for (int i = 0; i < leaf_count_; ++i) idx[i] = i;
  for (int layer = height; layer > h; --layer) {
    const auto& p = parents_[layer - 1];
    for (int& v : idx) v = p[v];
  }
  return idx;
}

std::vector<std::vector<int>> HardPartitioningTree::modules(int h) const {
  std::vector<std::vector<int>> out(layer_sizes_.at(h));
  const auto idx = leaf_to_layer(h);
  for (int i = 0; i < leaf_count_; ++i) out[idx[i]].push_back(i);
  return out;
}

double one_dim_se(const WeightedGraph& g) {
  if (g.edge_count() == 0) {
    throw std::domain_error("one_dim_se: graph has no edges");
  }
  const double vol = g.volume();
  double h = 0.0;
  for (Eigen::Index i = 0; i < g.degrees().size(); ++i) {
    const double d = g.degrees()[i];
    if (d <= 0.0) continue;
    const double p = d / vol;
    h -= p * std::log2(p);
  }
  return h;
}

double structural_info_hard(const WeightedGraph& g, const HardPartitioningTree& t) {
  if (t.leaf_count() != g.node_count()) {
    throw std::invalid_argument("structural_info_hard: tree has " + std::to_string(t.leaf_count()) +
                                " leaves but graph has " + std::to_string(g.node_count()) + " nodes");
  }
  if (g.edge_count() == 0) {
    throw std::domain_error("structural_info_hard: graph has no edges");
  }
  const double vol = g.volume();
  const int height = t.height();

  std::vector<std::vector<double>> volumes(height + 1);
  std::vector<std::vector<int>> assign(height + 1);
  for (int h = 0; h <= height; ++h) {
    assign[h] = t.leaf_to_layer(h);
    volumes[h].assign(t.layer_size(h), 0.0);
    for (int i = 0; i < g.node_count(); ++i) volumes[h][assign[h][i]] += g.degrees()[i];
  }

  double total = 0.0;
  for (int h = 1; h <= height; ++h) {
    std::vector<double> cut(t.layer_size(h), 0.0);
    for (const auto& e : g.edges()) {
      const int a = assign[h][e.i];
      const int b = assign[h][e.j];
      if (a != b) {
        cut[a] += e.weight;
        cut[b] += e.weight;
      }
    }
    const auto& parent = t.parents(h);
    for (int k = 0; k < t.layer_size(h); ++k) {
      const double v = volumes[h][k];
      if (v <= 0.0 || cut[k] == 0.0) continue;
      total -= cut[k] / vol * std::log2(v / volumes[h - 1][parent[k]]);
    }
  }
  return total;
}

std::vector<std::vector<int>> enumerate_set_partitions(int n) {
  std::vector<std::vector<int>> out;
  if (n <= 0) {
    out.push_back({});
    return out;
  }
  std::vector<int> a(n, 0);
  std::vector<int> maxv(n, 0);  // maxv[i] = max(a[0..i-1])
  // restricted growth strings: a[0] = 0, a[i] <= 1 + max(a[0..i-1])
  std::function<void(int, int)> rec = [&](int i, int m) {
    if (i == n) {
      out.push_back(a);
      return;
    }
    for (int v = 0; v <= m + 1; ++v) {
      a[i] = v;
      rec(i + 1, std::max(m, v));
    }
  };
  a[0] = 0;
  rec(1, 0);
  return out;
}

OptimalTree brute_force_optimal_tree(const WeightedGraph& g, int height, int max_nodes, const TreeVisitor& visit) {
  if (height != 2 && height != 3) {
    throw std::invalid_argument("brute_force_optimal_tree: height must be 2 or 3");
  }
  if (g.node_count() > max_nodes) {
    throw std::invalid_argument("brute_force_optimal_tree: instance too large (" + std::to_string(g.node_count()) +
                                " nodes, limit " + std::to_string(max_nodes) + ")");
  }
  if (g.node_count() == 0) {
    throw std::invalid_argument("brute_force_optimal_tree: empty graph");
  }
  const int n = g.node_count();
  std::optional<OptimalTree> best;
  auto consider = [&](HardPartitioningTree tree) {
    const double bits = structural_info_hard(g, tree);
    if (visit) visit(tree, bits);
    if (!best || bits < best->bits) best = OptimalTree{std::move(tree), bits};
  };

  const auto leaf_partitions = enumerate_set_partitions(n);
  std::vector<std::vector<std::vector<int>>> cache(n + 1);
  for (const auto& leaf_part : leaf_partitions) {
    const int blocks = *std::max_element(leaf_part.begin(), leaf_part.end()) + 1;
    if (height == 2) {
      consider(HardPartitioningTree(n, {std::vector<int>(blocks, 0), leaf_part}));
      continue;
    }
    if (cache[blocks].empty()) cache[blocks] = enumerate_set_partitions(blocks);
    for (const auto& mid_part : cache[blocks]) {
      const int top = *std::max_element(mid_part.begin(), mid_part.end()) + 1;
      consider(HardPartitioningTree(n, {std::vector<int>(top, 0), mid_part, leaf_part}));
    }
  }
  return std::move(*best);
}

}  // namespace hypersed
