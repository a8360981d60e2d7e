#include <numeric>
#include <random>

#include <gtest/gtest.h>

#include "hypersed/metrics.hpp"
#include "oracles.hpp"

using namespace hypersed::metrics;

namespace {

std::vector<int> permute_labels(const std::vector<int>& v, std::mt19937_64& rng) {
  std::vector<int> names(64);
  std::iota(names.begin(), names.end(), 100);
  std::shuffle(names.begin(), names.end(), rng);
  std::vector<int> out;
  for (int x : v) out.push_back(names[static_cast<std::size_t>(x)]);
  return out;
}

}  // namespace

TEST(Contingency, Counts) {
  const std::vector<int> a{0, 0, 1, 1}, b{0, 1, 0, 1};
  const auto t = contingency(a, b);
  EXPECT_EQ(t.counts, Eigen::MatrixXd::Ones(2, 2));
  EXPECT_EQ(t.n, 4.0);
  const auto same = contingency(a, a);
  EXPECT_EQ(same.counts, 2.0 * Eigen::MatrixXd::Identity(2, 2));
  const std::vector<int> one{5};
  EXPECT_EQ(contingency(one, one).counts, Eigen::MatrixXd::Ones(1, 1));
  const std::vector<int> shorter{1};
  EXPECT_THROW(contingency(a, shorter), std::invalid_argument);
  const std::vector<int> none;
  EXPECT_THROW(contingency(none, none), std::invalid_argument);
}

TEST(Scores, IdenticalLabelingsAreExactlyOne) {
  std::mt19937_64 rng(81);
  for (int t = 0; t < 20; ++t) {
    const auto a = oracle::random_labels(30, 1 + t % 6, rng);
    const auto b = permute_labels(a, rng);
    const auto s = score(a, b);
    EXPECT_EQ(s.nmi, 1.0);
    EXPECT_EQ(s.ami, 1.0);
    EXPECT_EQ(s.ari, 1.0);
  }
}

TEST(Scores, IndependentFourItems) {
  const std::vector<int> a{0, 0, 1, 1}, b{0, 1, 0, 1};
  EXPECT_NEAR(nmi(contingency(a, b)), 0.0, 1e-15);
  EXPECT_NEAR(ari(contingency(a, b)), oracle::ari_pairs(a, b), 1e-15);
  EXPECT_NEAR(ari(contingency(a, b)), -0.5, 1e-15);
}

TEST(Scores, TrivialPartitions) {
  const std::vector<int> one_cluster(6, 0), many{0, 1, 2, 3, 4, 5};
  EXPECT_EQ(nmi(contingency(one_cluster, many)), 0.0);
  EXPECT_EQ(ami(contingency(one_cluster, many)), 0.0);
  EXPECT_EQ(ari(contingency(one_cluster, many)), 0.0);
}

TEST(ExpectedMutualInformation, SmallEnumerations) {
  std::mt19937_64 rng(82);
  for (int n = 2; n <= 7; ++n) {
    for (int t = 0; t < 5; ++t) {
      const auto a = oracle::random_labels(n, 3, rng);
      const auto b = oracle::random_labels(n, 3, rng);
      const double by_perm = oracle::emi_permutations(a, b);
      EXPECT_NEAR(expected_mutual_information(contingency(a, b)), by_perm, 1e-12);
      EXPECT_NEAR(oracle::emi_hypergeometric(a, b), by_perm, 1e-12);
    }
  }
}

TEST(Scores, MatchBruteForceOnRandomLabelings) {
  std::mt19937_64 rng(83);
  std::uniform_int_distribution<int> size(2, 100), clusters(1, 12);
  for (int t = 0; t < 100; ++t) {
    const int n = size(rng);
    const auto a = oracle::random_labels(n, clusters(rng), rng);
    const auto b = oracle::random_labels(n, clusters(rng), rng);
    const auto tab = contingency(a, b);
    const auto p = oracle::plug_in(a, b);
    EXPECT_NEAR(mutual_information(tab), p.mi, 1e-12);
    EXPECT_NEAR(row_entropy(tab), p.hu, 1e-12);
    EXPECT_NEAR(col_entropy(tab), p.hv, 1e-12);
    EXPECT_NEAR(nmi(tab), oracle::nmi(a, b), 1e-12);
    EXPECT_NEAR(ari(tab), oracle::ari_pairs(a, b), 1e-12);
    EXPECT_NEAR(expected_mutual_information(tab), oracle::emi_hypergeometric(a, b), 1e-12);
    EXPECT_NEAR(ami(tab), oracle::ami(a, b), 1e-12);
  }
}

TEST(Scores, SymmetricAndPermutationInvariant) {
  std::mt19937_64 rng(84);
  for (int t = 0; t < 30; ++t) {
    const auto a = oracle::random_labels(40, 5, rng);
    const auto b = oracle::random_labels(40, 4, rng);
    const auto ab = score(a, b);
    const auto ba = score(b, a);
    EXPECT_NEAR(ab.nmi, ba.nmi, 1e-14);
    EXPECT_NEAR(ab.ami, ba.ami, 1e-14);
    EXPECT_NEAR(ab.ari, ba.ari, 1e-14);
    const auto pp = score(permute_labels(a, rng), permute_labels(b, rng));
    EXPECT_NEAR(ab.nmi, pp.nmi, 1e-14);
    EXPECT_NEAR(ab.ami, pp.ami, 1e-14);
    EXPECT_NEAR(ab.ari, pp.ari, 1e-14);
    EXPECT_LE(ab.nmi, 1.0);
    EXPECT_LE(ab.ami, 1.0);
    EXPECT_LE(ab.ari, 1.0);
  }
}
