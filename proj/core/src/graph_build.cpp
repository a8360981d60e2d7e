#include "hypersed/graph_build.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>
#include <unordered_map>

namespace hypersed {

Eigen::MatrixXd embedding_matrix(std::span<const MessageRecord> messages) {
  if (messages.empty()) return {};
  const Eigen::Index dim = messages.front().embedding.size();
  Eigen::MatrixXd x(static_cast<Eigen::Index>(messages.size()), dim);
  for (std::size_t i = 0; i < messages.size(); ++i) {
    if (messages[i].embedding.size() != dim) {
      throw std::invalid_argument("message " + messages[i].id + " has embedding dimension " +
                                  std::to_string(messages[i].embedding.size()) + ", expected " +
                                  std::to_string(dim));
    }
    x.row(static_cast<Eigen::Index>(i)) = messages[i].embedding.transpose();
  }
  return x;
}

Eigen::MatrixXd cosine_similarity(const Eigen::MatrixXd& x, std::span<const std::string> ids,
                                  Eigen::Index block_rows) {
  const Eigen::Index n = x.rows();
  Eigen::MatrixXd unit(n, x.cols());
  for (Eigen::Index i = 0; i < n; ++i) {
    const double norm = x.row(i).norm();
    if (!(norm > 0.0) || !std::isfinite(norm)) {
      const std::string who = static_cast<std::size_t>(i) < ids.size() ? ids[i] : "#" + std::to_string(i);
      throw std::invalid_argument("zero-norm or non-finite embedding for message " + who);
    }
    unit.row(i) = x.row(i) / norm;
  }
  Eigen::MatrixXd s(n, n);
  block_rows = std::max<Eigen::Index>(1, block_rows);
  for (Eigen::Index r = 0; r < n; r += block_rows) {
    const Eigen::Index rows = std::min(block_rows, n - r);
    s.middleRows(r, rows).noalias() = unit.middleRows(r, rows) * unit.transpose();
  }
  s = s.cwiseMax(-1.0).cwiseMin(1.0);
  // symmetrize exactly; the two triangles can differ in the last bit
  for (Eigen::Index i = 0; i < n; ++i) {
    s(i, i) = 1.0;
    for (Eigen::Index j = i + 1; j < n; ++j) s(j, i) = s(i, j);
  }
  return s;
}

std::vector<std::pair<int, int>> attribute_edges(std::span<const MessageRecord> messages) {
  std::unordered_map<std::string, std::vector<int>> index;
  for (std::size_t i = 0; i < messages.size(); ++i) {
    for (const auto& a : messages[i].attributes) {
      auto& bucket = index[a];
      if (bucket.empty() || bucket.back() != static_cast<int>(i)) bucket.push_back(static_cast<int>(i));
    }
  }
  std::vector<std::pair<int, int>> pairs;
  for (const auto& [_, ids] : index) {
    for (std::size_t a = 0; a < ids.size(); ++a) {
      for (std::size_t b = a + 1; b < ids.size(); ++b) pairs.emplace_back(ids[a], ids[b]);
    }
  }
  std::sort(pairs.begin(), pairs.end());
  pairs.erase(std::unique(pairs.begin(), pairs.end()), pairs.end());
  return pairs;
}

std::vector<double> ThresholdGrid::points() const {
  if (!(step > 0.0)) throw std::invalid_argument("threshold grid step must be positive");
  if (hi < lo) throw std::invalid_argument("threshold grid requires lo <= hi");
  std::vector<double> out;
  const auto count = static_cast<long>(std::floor((hi - lo) / step + 1e-9));
  // Rounded to 12 decimals so that 0.4 + 4 * 0.05 reads back as 0.6.
  for (long k = 0; k <= count; ++k) out.push_back(std::round((lo + static_cast<double>(k) * step) * 1e12) / 1e12);
  return out;
}

double thresholded_one_dim_se(const Eigen::MatrixXd& similarity, double pi) {
  const Eigen::Index n = similarity.rows();
  Eigen::VectorXd degree = Eigen::VectorXd::Zero(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = i + 1; j < n; ++j) {
      const double s = similarity(i, j);
      if (s >= pi && s > 0.0) {
        degree[i] += s;
        degree[j] += s;
      }
    }
  }
  const double vol = degree.sum();
  if (!(vol > 0.0)) return 0.0;
  double h = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (degree[i] <= 0.0) continue;
    const double p = degree[i] / vol;
    h -= p * std::log2(p);
  }
  return h;
}

ThresholdSearch select_threshold(const Eigen::MatrixXd& similarity, const ThresholdGrid& grid) {
  ThresholdSearch out;
  out.grid = grid.points();
  out.entropies.reserve(out.grid.size());
  for (double pi : out.grid) {
    const double h = thresholded_one_dim_se(similarity, pi);
    if (h == 0.0) {
      std::ostringstream msg;
      msg << "threshold " << pi << " yields an empty graph; 1DSE taken as 0";
      out.warnings.push_back(msg.str());
    }
    out.entropies.push_back(h);
  }
  double sum = 0.0;
  for (double h : out.entropies) sum += h;
  out.mean_entropy = sum / static_cast<double>(out.entropies.size());

  std::size_t best = 0;
  double best_dev = std::abs(out.entropies[0] - out.mean_entropy);
  for (std::size_t k = 1; k < out.entropies.size(); ++k) {
    const double dev = std::abs(out.entropies[k] - out.mean_entropy);
    if (dev < best_dev - 1e-12) {
      best = k;
      best_dev = dev;
    }
  }
  out.tau = out.grid[best];
  return out;
}

const char* to_string(EdgeKind kind) {
  switch (kind) {
    case EdgeKind::kAttribute:
      return "attribute";
    case EdgeKind::kSemantic:
      return "semantic";
    case EdgeKind::kBoth:
      return "both";
  }
  return "unknown";
}

MessageGraph assemble_message_graph(std::span<const MessageRecord> messages, const Eigen::MatrixXd& similarity,
                                    double tau) {
  const auto n = static_cast<Eigen::Index>(messages.size());
  if (similarity.rows() != n || similarity.cols() != n) {
    throw std::invalid_argument("assemble_message_graph: similarity shape does not match message count");
  }
  MessageGraph mg;
  mg.embeddings = embedding_matrix(messages);
  mg.tau = tau;

  const auto attr = attribute_edges(messages);
  std::size_t next_attr = 0;
  std::vector<Edge> edges;
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) {
      bool is_attr = false;
      while (next_attr < attr.size() && attr[next_attr] < std::make_pair(i, j)) ++next_attr;
      if (next_attr < attr.size() && attr[next_attr] == std::make_pair(i, j)) is_attr = true;
      const double s = similarity(i, j);
      const bool is_sem = s >= tau;
      if (!is_attr && !is_sem) continue;
      const EdgeKind kind = is_attr && is_sem ? EdgeKind::kBoth : (is_attr ? EdgeKind::kAttribute : EdgeKind::kSemantic);
      const double w = std::max(s, 0.0);
      const bool dropped = !(w > 0.0);
      mg.provenance.push_back({i, j, kind, w, dropped});
      if (!dropped) edges.push_back({i, j, w});
    }
  }
  mg.graph = WeightedGraph(static_cast<int>(n), std::move(edges));
  return mg;
}

}  // namespace hypersed
