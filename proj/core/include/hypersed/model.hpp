#pragma once

#include <optional>
#include <random>
#include <vector>

#include <Eigen/Dense>

#include "hypersed/autodiff.hpp"
#include "hypersed/geometry.hpp"

namespace hypersed::model {

using ad::Matrix;
using ad::Var;
using geometry::Curvature;

// ---------------------------------------------------------------------------
// Batched hyperbolic maps on the tape. Every matrix row is one point or one
// tangent vector; the base point of the maps is the origin unless stated.
namespace hyp {

Var expmap0(const Var& v, const Curvature& k);
Var logmap0(const Var& y, const Curvature& k);
/// Row-wise x_i (+) y_i.
Var mobius_add_rows(const Var& x, const Var& y, const Curvature& k);
/// Row-wise exp_{x_i}(v_i).
Var expmap_rows(const Var& x, const Var& v, const Curvature& k);
/// n x m matrix of squared geodesic distances between rows of a and b.
Var squared_distances(const Var& a, const Var& b, const Curvature& k);
/// n x 1 geodesic distances of the rows from the origin.
Var origin_distances(const Var& z, const Curvature& k);
Var project(const Var& z, const Curvature& k, double margin = geometry::kDefaultMargin);
/// Tangent-space counterpart of project: log_o(project(exp_o(v))) without
/// the round trip.
Var clip_tangent(const Var& v, const Curvature& k, double margin = geometry::kDefaultMargin);

struct FrechetSettings {
  // Upper bound on Karcher steps.
  int iterations = 10;
  bool one_shot = false;
  // Stop once every step taken has tangent norm <= tolerance; 0 runs all steps.
  double tolerance = 1e-12;
};

/// Column j of `weights` (n x p, nonnegative, columns with positive mass)
/// weights the n rows of `points`; returns the p weighted Frechet means,
/// unrolled for a fixed number of tangent-averaging steps.
Var frechet_means(const Var& points, const Var& weights, const Curvature& k, const FrechetSettings& settings = {});

}  // namespace hyp

// ---------------------------------------------------------------------------
// Parameters

struct PConvParams {
  Matrix weight;  // d_in x d_out
  Matrix bias;    // 1 x d_out
  double dropout = 0.0;
};

struct DecoderParams {
  double q = 2.0;
  double t = 1.0;
};

/// Tape handles for one PConv layer.
struct PConvVars {
  Var weight;
  Var bias;
  double dropout = 0.0;
};

PConvVars attach(ad::Tape& tape, const PConvParams& p, bool trainable = true);

/// Dropout source. Disabled when rng is null or rate is 0.
struct DropoutContext {
  std::mt19937_64* rng = nullptr;
};

// ---------------------------------------------------------------------------
// Encoder / decoder

struct AttentionSettings {
  // Attend over mask neighbours plus self; false attends over all nodes.
  bool masked = true;
  // Multiply each neighbour's score by its edge weight and self by the row's
  // largest weight. No effect on unit-weight graphs.
  bool edge_weighted = true;
};

/// Row-stochastic attention weights proportional to exp(-d^2 / sqrt(N)),
/// optionally times the edge weight, over the attended set.
Var attention_weights(const Var& z, const Matrix& mask, const Curvature& k, const AttentionSettings& attention = {});
Matrix attention_weights(const Matrix& z, const Matrix& mask, const Curvature& k,
                         const AttentionSettings& attention = {});

/// sum_j w_ij (W log_o(h_j) + b), the tangent vector pconv maps into the ball.
Var pconv_tangent(const Var& z, const PConvVars& params, const Var& omega, const Curvature& k,
                  const DropoutContext& dropout = {});

/// exp_o( sum_j w_ij (W log_o(h_j) + b) ), projected into the ball.
Var pconv(const Var& z, const PConvVars& params, const Var& omega, const Curvature& k,
          const DropoutContext& dropout = {});
Matrix pconv(const Matrix& z, const PConvParams& params, const Matrix& omega, const Curvature& k);

/// Lift Euclidean rows into the ball through exp_o. Rows longer than the
/// tangent clip radius are shortened first so the image stays invertible.
Var lift_features(const Var& x, const Curvature& k);

Var hgae_encode(const Var& features, const Matrix& adjacency, const PConvVars& layer1, const PConvVars& layer2,
                const Curvature& k, const DropoutContext& dropout = {}, const AttentionSettings& attention = {});
/// Throws std::invalid_argument when the adjacency has no edges.
Matrix hgae_encode(const Matrix& features, const Matrix& adjacency, const PConvParams& layer1,
                   const PConvParams& layer2, const Curvature& k);

/// Fermi-Dirac logits (q - d^2)/t so that A_hat = sigmoid(logits).
Var fermi_dirac_logits(const Var& z, const DecoderParams& params, const Curvature& k);
Matrix fermi_dirac(const Matrix& z, const DecoderParams& params, const Curvature& k);

/// Class-weighted binary cross-entropy over off-diagonal pairs against the
/// targets 1[adjacency > 0]; the positive class is weighted by #neg/#pos.
Var hgae_loss_from_logits(const Var& logits, const Matrix& adjacency);
double hgae_loss(const Matrix& a_hat, const Matrix& adjacency);

// ---------------------------------------------------------------------------
// Differentiable partitioning tree

/// Adjacency used to mix the assignment logits.
enum class AssignmentAdjacency {
  kMeanEdge,  // A divided by its mean positive entry; unit weights unchanged
  kRaw,
};

/// Softmax( A * relu(log_o(PConv2(PConv1(Z)))) ), N_h x N_{h-1}.
Var level_assignment(const Var& z, const Matrix& adjacency, const PConvVars& layer1, const PConvVars& layer2,
                     const Curvature& k, const DropoutContext& dropout = {}, const AttentionSettings& attention = {},
                     AssignmentAdjacency mixing = AssignmentAdjacency::kMeanEdge);
Matrix level_assignment(const Matrix& z, const Matrix& adjacency, const PConvParams& layer1,
                        const PConvParams& layer2, const Curvature& k);

// Columns of an assignment with less total mass than this get uniform
// Frechet weights.
inline constexpr double kEmptyColumnMass = 1e-6;

struct LiftedLayer {
  Var embeddings;  // N_{h-1} x d
  Var adjacency;   // N_{h-1} x N_{h-1}, zero diagonal
  std::vector<int> empty_columns;
};

LiftedLayer lift_layer(const Var& z, const Var& adjacency, const Var& assignment, const Curvature& k,
                       const hyp::FrechetSettings& frechet = {});

struct LiftedLayerValue {
  Matrix embeddings;
  Matrix adjacency;
  std::vector<int> empty_columns;
};

LiftedLayerValue lift_layer(const Matrix& z, const Matrix& adjacency, const Matrix& assignment, const Curvature& k,
                            const hyp::FrechetSettings& frechet = {});

/// S^l = C^H C^{H-1} ... C^{l+1}; `chain` lists C^H first. An empty chain
/// returns the identity of size `leaf_count`.
Matrix leaf_membership(const std::vector<Matrix>& chain, Eigen::Index leaf_count);

/// Leaf graph data shared by the entropy terms.
struct LeafGraph {
  Matrix adjacency;         // symmetric, zero diagonal
  Eigen::VectorXd degrees;  // row sums of adjacency
  double volume = 0.0;

  static LeafGraph from_adjacency(const Matrix& adjacency);
};

struct LayerEntropy {
  Var bits;
  Var volumes;  // v^h, N_h x 1
};

/// Structural information of the leaf graph at layer h of a soft tree, given
/// the leaf membership S^h, the assignment C^h (N_h x N_{h-1}) and the
/// layer h-1 volumes (N_{h-1} x 1).
LayerEntropy dsi_layer_entropy(const LeafGraph& g, const Var& membership, const Var& assignment,
                               const Var& parent_volumes);
double dsi_layer_entropy(const LeafGraph& g, const Matrix& membership, const Matrix& assignment,
                         const Eigen::VectorXd& parent_volumes);

/// Per-layer view of a built tree. Layer 0 is the root, layer H the leaves.
struct SoftTree {
  int height = 0;
  std::vector<Matrix> embeddings;          // Z^l
  std::vector<Matrix> adjacency;           // A^l
  std::vector<Matrix> assignment;          // C^l for l >= 1; entry 0 empty
  std::vector<Matrix> membership;          // S^l
  std::vector<Eigen::VectorXd> volumes;    // v^l
  std::vector<double> layer_bits;          // H^T(G; l) for l >= 1; entry 0 unused
  double root_distance = 0.0;
  std::vector<int> empty_columns;          // flagged during lifting, any layer

  int layer_size(int l) const { return static_cast<int>(embeddings.at(l).rows()); }
};

/// d_B(o, z^0) + sum over layers of the layer entropies.
double se_loss(const SoftTree& tree);

/// Fails with std::runtime_error on non-finite inputs.
double total_loss(double l_hgae, double l_se);

// ---------------------------------------------------------------------------
// Whole model

struct ModelDims {
  int input = 0;
  int hidden = 128;
  int latent = 64;
  int assign_hidden = 64;
  // N_1 .. N_{H-1}; widths.size() + 1 = tree height.
  std::vector<int> widths;

  int height() const { return static_cast<int>(widths.size()) + 1; }
};

struct ModelParams {
  Curvature curvature;
  DecoderParams decoder;
  PConvParams encoder1;
  PConvParams encoder2;
  // assign[i] serves tree layer H - i; layers whose parent layer has a single
  // node need no network and have no entry.
  std::vector<std::pair<PConvParams, PConvParams>> assign;

  std::vector<Matrix*> tensors();
  std::vector<const Matrix*> tensors() const;
  Eigen::Index parameter_count() const;
  Eigen::VectorXd flatten() const;
  void unflatten(const Eigen::VectorXd& flat);
};

struct ForwardOptions {
  bool training = false;
  std::mt19937_64* rng = nullptr;
  hyp::FrechetSettings frechet;
  AttentionSettings attention;
  AssignmentAdjacency assignment_adjacency = AssignmentAdjacency::kMeanEdge;
  // Parameters enter as tape variables; false records a value-only pass.
  bool gradients = true;
};

struct ForwardResult {
  Var total;
  Var hgae;
  Var se;
  SoftTree tree;
  std::vector<Var> params;  // same order as ModelParams::tensors()
};

/// Anchor-level training inputs.
struct GraphInputs {
  Matrix features;
  LeafGraph graph;

  static GraphInputs make(Matrix features, const Matrix& adjacency);
};

/// Records the full forward pass on `tape`. Parameters become tape variables.
ForwardResult forward(ad::Tape& tape, const ModelParams& params, const ModelDims& dims, const GraphInputs& inputs,
                      const ForwardOptions& options = {});

}  // namespace hypersed::model
