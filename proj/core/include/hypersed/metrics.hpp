#pragma once

#include <span>
#include <vector>

#include <Eigen/Dense>

namespace hypersed::metrics {

/// Counts n_uv of predicted cluster u against true class v. Labels are mapped
/// to dense indices in increasing label order.
struct ContingencyTable {
  Eigen::MatrixXd counts;
  Eigen::VectorXd row_sums;  // a_u
  Eigen::VectorXd col_sums;  // b_v
  double n = 0.0;

  /// True when the two labelings induce the same partition.
  bool identical_partitions() const;
};

ContingencyTable contingency(std::span<const int> pred, std::span<const int> truth);

/// Natural-log entropy of the row and column marginals.
double row_entropy(const ContingencyTable& t);
double col_entropy(const ContingencyTable& t);
double mutual_information(const ContingencyTable& t);
/// E[MI] under the hypergeometric model of random labelings with fixed marginals.
double expected_mutual_information(const ContingencyTable& t);

/// Arithmetic-mean normalisation.
double nmi(const ContingencyTable& t);
double ami(const ContingencyTable& t);
double ari(const ContingencyTable& t);

struct Scores {
  double nmi = 0.0;
  double ami = 0.0;
  double ari = 0.0;
};

Scores score(std::span<const int> pred, std::span<const int> truth);

}  // namespace hypersed::metrics
