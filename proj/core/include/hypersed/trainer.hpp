#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "hypersed/anchor_build.hpp"
#include "hypersed/model.hpp"

namespace hypersed {

struct TrainConfig {
  int epochs = 200;
  int patience = 50;
  double learning_rate = 1e-3;
  double dropout = 0.4;
  std::uint64_t seed = 0;
  double kappa = -1.0;
  int hidden = 128;
  int latent = 64;
  int assign_hidden = 64;
  int height = 2;
  int max_clusters = 500;
  // N_1 .. N_{H-1}; empty means every internal layer gets max_clusters
  // nodes. Widths are upper bounds on the cluster count, not targets.
  std::vector<int> layer_widths;
  double decoder_q = 2.0;
  double decoder_t = 1.0;
  int frechet_iterations = 10;
  bool frechet_one_shot = false;
  double frechet_tolerance = 1e-12;
  bool masked_attention = true;
  bool attention_edge_weights = true;
  model::AssignmentAdjacency assignment_adjacency = model::AssignmentAdjacency::kMeanEdge;
  int epsilon = 20;

  /// Throws std::invalid_argument when a field is out of range.
  void validate() const;
};

/// Raised when the loss stops being finite during training.
class TrainingDivergence : public std::runtime_error {
 public:
  TrainingDivergence(int epoch, double hgae, double se);

  int epoch() const { return epoch_; }
  double hgae() const { return hgae_; }
  double se() const { return se_; }

 private:
  int epoch_;
  double hgae_;
  double se_;
};

model::ModelDims make_dims(const TrainConfig& config, int input_dim);

/// Uniform [-s, s] weights with s = sqrt(6 / (d_in + d_out)), zero biases.
model::ModelParams init_params(const TrainConfig& config, const model::ModelDims& dims);

/// Adaptive moment estimation over a flat parameter vector.
class Adam {
 public:
  explicit Adam(Eigen::Index size, double learning_rate, double beta1 = 0.9, double beta2 = 0.999,
                double eps = 1e-8);
  void step(Eigen::VectorXd& params, const Eigen::VectorXd& grad);
  int steps() const { return t_; }

 private:
  double lr_;
  double beta1_;
  double beta2_;
  double eps_;
  int t_ = 0;
  Eigen::VectorXd m_;
  Eigen::VectorXd v_;
};

struct LossComponents {
  double total = 0.0;
  double hgae = 0.0;
  double se = 0.0;
};

struct EpochRecord {
  int epoch = 0;
  LossComponents train;
  LossComponents eval;
};

struct DetectionResult {
  std::vector<int> message_labels;
  std::vector<int> anchor_labels;
  int k = 0;
  LossComponents final_loss;
  std::map<std::string, double> timings;  // seconds per stage
  bool degenerate = false;                // no anchor edges, training skipped
};

struct TrainOutcome {
  model::SoftTree tree;  // at the best epoch
  model::ModelParams params;
  DetectionResult result;
  std::vector<EpochRecord> history;
  int best_epoch = 0;
  bool stopped_early = false;
};

struct TrainCallbacks {
  // Called after every optimisation step with the tree of the training pass.
  std::function<void(const EpochRecord&, const model::SoftTree&)> on_step;
};

/// Loss and flat gradient of the full model at `flat` (eval mode).
LossComponents model_gradient(const model::ModelParams& params, const model::ModelDims& dims,
                              const model::GraphInputs& inputs, const model::ForwardOptions& options,
                              Eigen::VectorXd* grad);

TrainOutcome train_detect(const AnchorGraph& anchors, const TrainConfig& config, const TrainCallbacks& callbacks = {});
TrainOutcome train_detect(const model::GraphInputs& inputs, const AnchorMembership& membership,
                          const TrainConfig& config, const TrainCallbacks& callbacks = {});

/// Anchor label = argmax of the layer-1 membership row (ties to the lowest
/// column); used columns are renumbered 0..K-1 in increasing order.
DetectionResult readout(const Eigen::MatrixXd& layer1_membership, const AnchorMembership& membership);
DetectionResult readout(const model::SoftTree& tree, const AnchorMembership& membership);

/// max_i |g_a - g_fd| / max(1e-8, |g_a| + |g_fd|) with central differences.
double gradient_check(const std::function<double(const Eigen::VectorXd&)>& loss, const Eigen::VectorXd& analytic,
                      const Eigen::VectorXd& at, double step = 1e-4);

}  // namespace hypersed
