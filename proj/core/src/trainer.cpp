#include "hypersed/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <sstream>

namespace hypersed {

void TrainConfig::validate() const {
  auto fail = [](const std::string& what) { throw std::invalid_argument("invalid training config: " + what); };
  if (epochs < 1) fail("epochs must be >= 1");
  if (patience < 1) fail("patience must be >= 1");
  if (!(learning_rate > 0.0)) fail("learning_rate must be positive");
  if (!(dropout >= 0.0 && dropout < 1.0)) fail("dropout must lie in [0, 1)");
  if (!(kappa < 0.0) || !std::isfinite(kappa)) fail("kappa must be finite and negative");
  if (hidden < 1 || latent < 1 || assign_hidden < 1) fail("layer sizes must be positive");
  if (height < 2 || height > 4) fail("tree height must be 2, 3 or 4");
  if (max_clusters < 1) fail("max_clusters must be >= 1");
  if (!layer_widths.empty() && static_cast<int>(layer_widths.size()) != height - 1) {
    fail("layer_widths needs height - 1 entries");
  }
  for (int w : layer_widths) {
    if (w < 1) fail("layer widths must be positive");
  }
  if (!(decoder_t > 0.0)) fail("decoder_t must be positive");
  if (frechet_iterations < 0) fail("frechet_iterations must be >= 0");
  if (!(frechet_tolerance >= 0.0)) fail("frechet_tolerance must be >= 0");
  if (epsilon < 1) fail("epsilon must be >= 1");
}

TrainingDivergence::TrainingDivergence(int epoch, double hgae, double se)
    : std::runtime_error([&] {
        std::ostringstream s;
        s << "training diverged at epoch " << epoch << " (hgae loss " << hgae << ", se loss " << se << ")";
        return s.str();
      }()),
      epoch_(epoch),
      hgae_(hgae),
      se_(se) {}

model::ModelDims make_dims(const TrainConfig& config, int input_dim) {
  model::ModelDims dims;
  dims.input = input_dim;
  dims.hidden = config.hidden;
  dims.latent = config.latent;
  dims.assign_hidden = config.assign_hidden;
  if (config.layer_widths.empty()) {
    dims.widths.assign(config.height - 1, config.max_clusters);
  } else {
    dims.widths = config.layer_widths;
  }
  return dims;
}

namespace {

model::PConvParams draw_layer(std::mt19937_64& rng, int d_in, int d_out, double dropout) {
  const double s = std::sqrt(6.0 / static_cast<double>(d_in + d_out));
  std::uniform_real_distribution<double> u(-s, s);
  model::PConvParams p;
  p.weight.resize(d_in, d_out);
  // column-major fill order fixes the stream layout
  for (Eigen::Index i = 0; i < p.weight.size(); ++i) p.weight(i) = u(rng);
  p.bias = model::Matrix::Zero(1, d_out);
  p.dropout = dropout;
  return p;
}

}  // namespace

model::ModelParams init_params(const TrainConfig& config, const model::ModelDims& dims) {
  std::mt19937_64 rng(config.seed);
  model::ModelParams p{geometry::Curvature(config.kappa), {config.decoder_q, config.decoder_t}, {}, {}, {}};
  p.encoder1 = draw_layer(rng, dims.input, dims.hidden, config.dropout);
  p.encoder2 = draw_layer(rng, dims.hidden, dims.latent, config.dropout);
  // layers H..1; a layer whose parent layer is the root needs no network
  const int height = dims.height();
  for (int h = height; h >= 2; --h) {
    const int parents = dims.widths[h - 2];
    if (parents == 1) continue;
    auto l1 = draw_layer(rng, dims.latent, dims.assign_hidden, config.dropout);
    auto l2 = draw_layer(rng, dims.assign_hidden, parents, config.dropout);
    p.assign.emplace_back(std::move(l1), std::move(l2));
  }
  return p;
}

Adam::Adam(Eigen::Index size, double learning_rate, double beta1, double beta2, double eps)
    : lr_(learning_rate),
      beta1_(beta1),
      beta2_(beta2),
      eps_(eps),
      m_(Eigen::VectorXd::Zero(size)),
      v_(Eigen::VectorXd::Zero(size)) {}

void Adam::step(Eigen::VectorXd& params, const Eigen::VectorXd& grad) {
  ++t_;
  m_ = beta1_ * m_ + (1.0 - beta1_) * grad;
  v_ = beta2_ * v_ + (1.0 - beta2_) * grad.cwiseProduct(grad);
  const double bc1 = 1.0 - std::pow(beta1_, t_);
  const double bc2 = 1.0 - std::pow(beta2_, t_);
  params.array() -= lr_ * (m_.array() / bc1) / ((v_.array() / bc2).sqrt() + eps_);
}

namespace {

Eigen::VectorXd collect_grad(const ad::Tape& tape, const std::vector<ad::Var>& vars, Eigen::Index size) {
  Eigen::VectorXd g(size);
  Eigen::Index off = 0;
  for (const auto& v : vars) {
    const ad::Matrix gm = tape.grad(v);
    g.segment(off, gm.size()) = gm.reshaped();
    off += gm.size();
  }
  return g;
}

LossComponents components(const model::ForwardResult& r) {
  return {r.total.scalar(), r.hgae.scalar(), r.se.scalar()};
}

}  // namespace

LossComponents model_gradient(const model::ModelParams& params, const model::ModelDims& dims,
                              const model::GraphInputs& inputs, const model::ForwardOptions& options,
                              Eigen::VectorXd* grad) {
  ad::Tape tape;
  auto r = model::forward(tape, params, dims, inputs, options);
  if (grad) {
    tape.backward(r.total);
    *grad = collect_grad(tape, r.params, params.parameter_count());
  }
  return components(r);
}

TrainOutcome train_detect(const AnchorGraph& anchors, const TrainConfig& config, const TrainCallbacks& callbacks) {
  return train_detect(model::GraphInputs::make(anchors.features, anchors.adjacency.off_diagonal), anchors.membership,
                      config, callbacks);
}

TrainOutcome train_detect(const model::GraphInputs& inputs, const AnchorMembership& membership,
                          const TrainConfig& config, const TrainCallbacks& callbacks) {
  config.validate();
  if (!(inputs.graph.volume > 0.0)) {
    throw std::invalid_argument("train_detect: anchor graph has no edges");
  }
  const auto dims = make_dims(config, static_cast<int>(inputs.features.cols()));
  TrainOutcome out;
  model::ModelParams params = init_params(config, dims);
  Eigen::VectorXd flat = params.flatten();
  Adam adam(flat.size(), config.learning_rate);
  std::mt19937_64 dropout_rng(config.seed ^ 0x9E3779B97F4A7C15ULL);

  model::ForwardOptions eval_opts;
  eval_opts.frechet = {config.frechet_iterations, config.frechet_one_shot, config.frechet_tolerance};
  eval_opts.attention = {config.masked_attention, config.attention_edge_weights};
  eval_opts.assignment_adjacency = config.assignment_adjacency;
  model::ForwardOptions train_opts = eval_opts;
  train_opts.training = config.dropout > 0.0;
  train_opts.rng = &dropout_rng;
  // With dropout the eval pass only scores the parameters.
  eval_opts.gradients = !train_opts.training;

  double best = std::numeric_limits<double>::infinity();
  int since_best = 0;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    EpochRecord rec;
    rec.epoch = epoch;
    params.unflatten(flat);

    // Eval-mode pass at the current parameters; doubles as the training pass
    // when dropout is off.
    ad::Tape eval_tape;
    auto eval = model::forward(eval_tape, params, dims, inputs, eval_opts);
    rec.eval = components(eval);
    if (!std::isfinite(rec.eval.total)) throw TrainingDivergence(epoch, rec.eval.hgae, rec.eval.se);

    Eigen::VectorXd grad;
    model::SoftTree step_tree;
    if (train_opts.training) {
      ad::Tape tape;
      auto train = model::forward(tape, params, dims, inputs, train_opts);
      rec.train = components(train);
      if (!std::isfinite(rec.train.total)) throw TrainingDivergence(epoch, rec.train.hgae, rec.train.se);
      tape.backward(train.total);
      grad = collect_grad(tape, train.params, flat.size());
      step_tree = std::move(train.tree);
    } else {
      rec.train = rec.eval;
      eval_tape.backward(eval.total);
      grad = collect_grad(eval_tape, eval.params, flat.size());
      step_tree = eval.tree;
    }
    if (!grad.allFinite()) throw TrainingDivergence(epoch, rec.train.hgae, rec.train.se);

    if (rec.eval.total < best) {
      best = rec.eval.total;
      since_best = 0;
      out.best_epoch = epoch;
      out.tree = std::move(eval.tree);
      out.params = params;
      out.result.final_loss = rec.eval;
    } else {
      ++since_best;
    }
    out.history.push_back(rec);
    if (callbacks.on_step) callbacks.on_step(rec, step_tree);
    if (since_best >= config.patience) {
      out.stopped_early = true;
      break;
    }
    adam.step(flat, grad);
  }

  DetectionResult labels = readout(out.tree, membership);
  labels.final_loss = out.result.final_loss;
  out.result = std::move(labels);
  return out;
}

DetectionResult readout(const Eigen::MatrixXd& layer1_membership, const AnchorMembership& membership) {
  const auto rows = static_cast<int>(layer1_membership.rows());
  if (rows != membership.anchor_count()) {
    throw std::invalid_argument("readout: membership rows differ from anchor count");
  }
  std::vector<int> arg(rows, 0);
  for (int i = 0; i < rows; ++i) {
    int best = 0;
    for (Eigen::Index j = 1; j < layer1_membership.cols(); ++j) {
      if (layer1_membership(i, j) > layer1_membership(i, best)) best = static_cast<int>(j);
    }
    arg[i] = best;
  }
  std::vector<int> used(arg);
  std::sort(used.begin(), used.end());
  used.erase(std::unique(used.begin(), used.end()), used.end());
  DetectionResult r;
  r.anchor_labels.resize(rows);
  for (int i = 0; i < rows; ++i) {
    r.anchor_labels[i] = static_cast<int>(std::lower_bound(used.begin(), used.end(), arg[i]) - used.begin());
  }
  r.k = static_cast<int>(used.size());
  r.message_labels = map_back(r.anchor_labels, membership);
  return r;
}

DetectionResult readout(const model::SoftTree& tree, const AnchorMembership& membership) {
  if (tree.height < 1) throw std::invalid_argument("readout: empty tree");
  return readout(tree.membership.at(1), membership);
}

double gradient_check(const std::function<double(const Eigen::VectorXd&)>& loss, const Eigen::VectorXd& analytic,
                      const Eigen::VectorXd& at, double step) {
  if (analytic.size() != at.size()) throw std::invalid_argument("gradient_check: gradient size mismatch");
  if (!(step > 0.0)) throw std::invalid_argument("gradient_check: step must be positive");
  Eigen::VectorXd x = at;
  double worst = 0.0;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double orig = x[i];
    x[i] = orig + step;
    const double up = loss(x);
    x[i] = orig - step;
    const double down = loss(x);
    x[i] = orig;
    const double fd = (up - down) / (2.0 * step);
    const double err = std::abs(analytic[i] - fd) / std::max(1e-8, std::abs(analytic[i]) + std::abs(fd));
    worst = std::max(worst, err);
  }
  return worst;
}

}  // namespace hypersed
