#include "hypersed/model.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <string>

namespace hypersed::model {

using ad::Tape;

namespace hyp {

namespace {
constexpr double kArtanhClampSq = geometry::kArtanhClamp * geometry::kArtanhClamp;
constexpr double kInf = std::numeric_limits<double>::infinity();

Var row_sq_norm(const Var& x) { return ad::row_sum(ad::square(x)); }
}  // namespace

Var project(const Var& z, const Curvature& k, double margin) { return ad::project_rows(z, (1.0 - margin) / k.sqrt_c()); }

Var clip_tangent(const Var& v, const Curvature& k, double margin) {
  const double s = std::min(1.0 - margin, geometry::kArtanhClamp);
  return ad::project_rows(v, std::atanh(s) / k.sqrt_c());
}

Var expmap0(const Var& v, const Curvature& k) {
  const Var q = row_sq_norm(v) * k.c();
  return project(v * ad::tanh_sqrt_over_sqrt(q), k);
}

Var logmap0(const Var& y, const Curvature& k) {
  const Var q = ad::clamp(row_sq_norm(y) * k.c(), 0.0, kArtanhClampSq);
  return y * ad::artanh_sqrt_over_sqrt(q);
}

Var mobius_add_rows(const Var& x, const Var& y, const Curvature& k) {
  const double c = k.c();
  const Var xy = ad::row_sum(x * y);
  const Var x2 = row_sq_norm(x);
  const Var y2 = row_sq_norm(y);
  const Var num = x * (1.0 + xy * (2.0 * c) + y2 * c) + y * (1.0 - x2 * c);
  const Var den = 1.0 + xy * (2.0 * c) + (x2 * y2) * (c * c);
  return num / den;
}

Var expmap_rows(const Var& x, const Var& v, const Curvature& k) {
  const double c = k.c();
  // tanh(sqrt(c) lambda_x |v| / 2) v / (sqrt(c) |v|) with lambda_x = 2/(1 - c|x|^2)
  const Var shrink = 1.0 - row_sq_norm(x) * c;
  const Var q = row_sq_norm(v) * c / ad::square(shrink);
  const Var step = v * ad::tanh_sqrt_over_sqrt(q) / shrink;
  return project(mobius_add_rows(x, step, k), k);
}

Var squared_distances(const Var& a, const Var& b, const Curvature& k) {
  const double c = k.c();
  const Var g = ad::matmul(a, ad::transpose(b));
  const Var na = row_sq_norm(a);
  const Var nb = ad::transpose(row_sq_norm(b));
  const Var diff = ad::clamp(na + nb - g * 2.0, 0.0, kInf);
  const Var den = 1.0 - g * (2.0 * c) + (na * nb) * (c * c);
  const Var q = ad::clamp(diff * c / den, 0.0, kArtanhClampSq);
  return ad::artanh_sqrt_squared(q) * (4.0 / c);
}

Var origin_distances(const Var& z, const Curvature& k) {
  const double c = k.c();
  const Var n = ad::sqrt(ad::clamp(row_sq_norm(z), 1e-30, kInf));
  const Var q = ad::clamp(ad::square(n) * c, 0.0, kArtanhClampSq);
  return n * ad::artanh_sqrt_over_sqrt(q) * 2.0;
}

namespace {

// One entry of a Karcher step. With g = <z, p>, x = |z|^2, y = |p|^2 and
// weight w, (-z) (+) p = -a z + b p and the log-map factor m multiplies it:
// returns (m b, m a). `grad`, when set, receives their partials in
// (g, x, y, w) order.
struct KarcherEntry {
  double mb, ma;
  Eigen::Vector4d dmb, dma;
};

template <bool kGrad>
KarcherEntry karcher_entry(double g, double x, double y, double w, double c) {
  using V = Eigen::Vector4d;
  const double den = 1.0 - 2.0 * c * g + c * c * x * y;
  const double na = 1.0 - 2.0 * c * g + c * y;
  const double nb = 1.0 - c * x;
  const double a = na / den;
  const double b = nb / den;
  const double r_raw = a * a * x - 2.0 * a * b * g + b * b * y;
  const double r2 = r_raw < 0.0 ? 0.0 : r_raw;
  const double q_raw = r2 * c;
  const double q = q_raw > kArtanhClampSq ? kArtanhClampSq : q_raw;
  const double phi = ad::artanh_sqrt_over_sqrt(q);
  const double m = w * nb * phi;
  KarcherEntry e{m * b, m * a, V::Zero(), V::Zero()};
  if constexpr (kGrad) {
    const V dden(-2.0 * c, c * c * y, c * c * x, 0.0);
    const V dna(-2.0 * c, 0.0, c, 0.0);
    const V dnb(0.0, -c, 0.0, 0.0);
    const V da = (dna - a * dden) / den;
    const V db = (dnb - b * dden) / den;
    V dr = 2.0 * a * x * da - 2.0 * (b * g * da + a * g * db) + 2.0 * b * y * db;
    dr += V(-2.0 * a * b, a * a, b * b, 0.0);
    const bool pass = r_raw >= 0.0 && q_raw <= kArtanhClampSq;
    const V dphi = pass ? V(ad::artanh_sqrt_over_sqrt_deriv(q) * c * dr) : V(V::Zero());
    const V dm = nb * phi * V(0.0, 0.0, 0.0, 1.0) + w * phi * dnb + w * nb * dphi;
    e.dmb = b * dm + m * db;
    e.dma = a * dm + m * da;
  }
  return e;
}

// [m b | m a] for every (centroid, point) pair, p x 2n.
Var karcher_coefficients(const Var& g, const Var& nz, const Var& np, const Var& wt, double c) {
  Tape& t = *g.tape();
  const Eigen::Index p = g.rows(), n = g.cols();
  Matrix out(p, 2 * n);
  const Matrix &gv = g.value(), &xv = nz.value(), &yv = np.value(), &wv = wt.value();
  for (Eigen::Index j = 0; j < n; ++j) {
    for (Eigen::Index i = 0; i < p; ++i) {
      const KarcherEntry e = karcher_entry<false>(gv(i, j), xv(i, 0), yv(0, j), wv(i, j), c);
      out(i, j) = e.mb;
      out(i, n + j) = e.ma;
    }
  }
  const int ig = g.id(), ix = nz.id(), iy = np.id(), iw = wt.id();
  return t.record(std::move(out), {g, nz, np, wt}, [=](Tape& tp, const Matrix& grad) {
    const Matrix &gv2 = tp.value(ig), &xv2 = tp.value(ix), &yv2 = tp.value(iy), &wv2 = tp.value(iw);
    Matrix dg(p, n), dw(p, n);
    Matrix dx = Matrix::Zero(p, 1), dy = Matrix::Zero(1, n);
    for (Eigen::Index j = 0; j < n; ++j) {
      for (Eigen::Index i = 0; i < p; ++i) {
        const KarcherEntry e = karcher_entry<true>(gv2(i, j), xv2(i, 0), yv2(0, j), wv2(i, j), c);
        const Eigen::Vector4d d = grad(i, j) * e.dmb + grad(i, n + j) * e.dma;
        dg(i, j) = d[0];
        dx(i, 0) += d[1];
        dy(0, j) += d[2];
        dw(i, j) = d[3];
      }
    }
    if (tp.requires_grad(ig)) tp.accumulate(ig, std::move(dg));
    if (tp.requires_grad(ix)) tp.accumulate(ix, std::move(dx));
    if (tp.requires_grad(iy)) tp.accumulate(iy, std::move(dy));
    if (tp.requires_grad(iw)) tp.accumulate(iw, std::move(dw));
  });
}

}  // namespace

Var frechet_means(const Var& points, const Var& weights, const Curvature& k, const FrechetSettings& settings) {
  const double c = k.c();
  // p x n, rows sum to one
  const Var wt = ad::transpose(weights / ad::col_sum(weights));
  Var z = expmap0(ad::matmul(wt, logmap0(points, k)), k);
  if (settings.one_shot) return z;

  const Eigen::Index n = points.rows();
  const Var np = ad::transpose(row_sq_norm(points));  // 1 x n
  const Var pt = ad::transpose(points);
  for (int it = 0; it < settings.iterations; ++it) {
    const Var g = ad::matmul(z, pt);  // p x n
    const Var coeff = karcher_coefficients(g, row_sq_norm(z), np, wt, c);
    const Var tangent =
        ad::matmul(ad::col_block(coeff, 0, n), points) - z * ad::row_sum(ad::col_block(coeff, n, n));
    z = expmap_rows(z, tangent, k);
    if (tangent.value().rowwise().norm().maxCoeff() <= settings.tolerance) break;
  }
  return z;
}

}  // namespace hyp

PConvVars attach(Tape& tape, const PConvParams& p, bool trainable) {
  if (trainable) return {tape.variable(p.weight), tape.variable(p.bias), p.dropout};
  return {tape.constant(p.weight), tape.constant(p.bias), p.dropout};
}

namespace {

Matrix attention_mask(const Matrix& mask, bool masked) {
  const Eigen::Index n = mask.rows();
  if (!masked) return Matrix::Ones(n, n);
  Matrix m = (mask.array() != 0.0).cast<double>();
  m.diagonal().setOnes();
  return m;
}

bool has_edges(const Matrix& adjacency) {
  for (Eigen::Index i = 0; i < adjacency.rows(); ++i) {
    for (Eigen::Index j = 0; j < adjacency.cols(); ++j) {
      if (i != j && adjacency(i, j) > 0.0) return true;
    }
  }
  return false;
}

Matrix off_diagonal_mask(Eigen::Index n) {
  Matrix m = Matrix::Ones(n, n);
  m.diagonal().setZero();
  return m;
}

}  // namespace

namespace {

// Scores read the edge weights off `adjacency` so that lifted layers, whose
// adjacency depends on the parameters, get their gradient.
Var attention_impl(const Var& z, const Var& adjacency, const Curvature& k, const AttentionSettings& attention) {
  const Eigen::Index n = z.rows();
  const Matrix& mask = adjacency.value();
  if (mask.rows() != n || mask.cols() != n) {
    throw std::invalid_argument("attention_weights: mask shape does not match node count");
  }
  Var logits = hyp::squared_distances(z, z, k) * (-1.0 / std::sqrt(static_cast<double>(n)));
  if (attention.masked && attention.edge_weighted) {
    Tape& t = *z.tape();
    const Matrix eye = Matrix::Identity(n, n);
    // Self weight is the row's largest edge weight, 1 for isolated nodes.
    const Var w = ad::mul_const(adjacency, off_diagonal_mask(n)) + ad::mul_const(ad::row_max(adjacency), eye);
    const Matrix pad = (w.value().array() > 0.0).select(Matrix::Zero(n, n), Matrix::Ones(n, n));
    logits = logits + ad::log(w + t.constant(pad));
  }
  return ad::softmax_rows(logits, attention_mask(mask, attention.masked));
}

}  // namespace

Var attention_weights(const Var& z, const Matrix& mask, const Curvature& k, const AttentionSettings& attention) {
  return attention_impl(z, z.tape()->constant(mask), k, attention);
}

Matrix attention_weights(const Matrix& z, const Matrix& mask, const Curvature& k, const AttentionSettings& attention) {
  Tape t;
  return attention_weights(t.constant(z), mask, k, attention).value();
}

Var pconv_tangent(const Var& z, const PConvVars& params, const Var& omega, const Curvature& k,
                  const DropoutContext& dropout) {
  if (z.cols() != params.weight.rows()) {
    throw std::invalid_argument("pconv: input dimension " + std::to_string(z.cols()) + " does not match weight rows " +
                                std::to_string(params.weight.rows()));
  }
  if (omega.rows() != z.rows() || omega.cols() != z.rows()) {
    throw std::invalid_argument("pconv: attention matrix shape does not match node count");
  }
  Var y = ad::matmul(hyp::logmap0(z, k), params.weight) + params.bias;
  if (dropout.rng && params.dropout > 0.0) {
    std::bernoulli_distribution keep(1.0 - params.dropout);
    Matrix mask(y.rows(), y.cols());
    for (Eigen::Index i = 0; i < mask.size(); ++i) mask(i) = keep(*dropout.rng) ? 1.0 / (1.0 - params.dropout) : 0.0;
    y = ad::mul_const(y, mask);
  }
  return ad::matmul(omega, y);
}

Var pconv(const Var& z, const PConvVars& params, const Var& omega, const Curvature& k, const DropoutContext& dropout) {
  return hyp::expmap0(pconv_tangent(z, params, omega, k, dropout), k);
}

Matrix pconv(const Matrix& z, const PConvParams& params, const Matrix& omega, const Curvature& k) {
  Tape t;
  return pconv(t.constant(z), attach(t, params, false), t.constant(omega), k).value();
}

Var lift_features(const Var& x, const Curvature& k) { return hyp::expmap0(hyp::clip_tangent(x, k), k); }

Var hgae_encode(const Var& features, const Matrix& adjacency, const PConvVars& layer1, const PConvVars& layer2,
                const Curvature& k, const DropoutContext& dropout, const AttentionSettings& attention) {
  if (!has_edges(adjacency)) {
    throw std::invalid_argument("hgae_encode: anchor graph has no edges (no structure to encode)");
  }
  const Var h = lift_features(features, k);
  const Var z1 = pconv(h, layer1, attention_weights(h, adjacency, k, attention), k, dropout);
  return pconv(z1, layer2, attention_weights(z1, adjacency, k, attention), k, dropout);
}

Matrix hgae_encode(const Matrix& features, const Matrix& adjacency, const PConvParams& layer1,
                   const PConvParams& layer2, const Curvature& k) {
  Tape t;
  return hgae_encode(t.constant(features), adjacency, attach(t, layer1, false), attach(t, layer2, false), k).value();
}

Var fermi_dirac_logits(const Var& z, const DecoderParams& params, const Curvature& k) {
  if (!(params.t > 0.0)) throw std::invalid_argument("fermi_dirac: temperature t must be positive");
  return (params.q - hyp::squared_distances(z, z, k)) / params.t;
}

Matrix fermi_dirac(const Matrix& z, const DecoderParams& params, const Curvature& k) {
  Tape t;
  return ad::sigmoid(fermi_dirac_logits(t.constant(z), params, k)).value();
}

namespace {

struct BceWeights {
  Matrix positive;  // pos_weight * T on off-diagonal entries
  Matrix negative;  // (1 - T) on off-diagonal entries
  double pairs = 0.0;
};

BceWeights bce_weights(const Matrix& adjacency) {
  const Eigen::Index n = adjacency.rows();
  BceWeights w{Matrix::Zero(n, n), Matrix::Zero(n, n), static_cast<double>(n * (n - 1))};
  double pos = 0.0;
  double neg = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      if (i == j) continue;
      if (adjacency(i, j) > 0.0) {
        w.positive(i, j) = 1.0;
        pos += 1.0;
      } else {
        w.negative(i, j) = 1.0;
        neg += 1.0;
      }
    }
  }
  const double pos_weight = (pos > 0.0 && neg > 0.0) ? neg / pos : 1.0;
  w.positive *= pos_weight;
  return w;
}

}  // namespace

Var hgae_loss_from_logits(const Var& logits, const Matrix& adjacency) {
  if (logits.rows() != adjacency.rows() || logits.cols() != adjacency.cols()) {
    throw std::invalid_argument("hgae_loss: shape mismatch");
  }
  const BceWeights w = bce_weights(adjacency);
  if (w.pairs == 0.0) return logits.tape()->constant(0.0);
  // -log sigmoid(x) = softplus(-x), -log(1 - sigmoid(x)) = softplus(x)
  const Var loss = ad::mul_const(ad::softplus(-logits), w.positive) + ad::mul_const(ad::softplus(logits), w.negative);
  return ad::sum(loss) / w.pairs;
}

double hgae_loss(const Matrix& a_hat, const Matrix& adjacency) {
  if (a_hat.rows() != adjacency.rows() || a_hat.cols() != adjacency.cols()) {
    throw std::invalid_argument("hgae_loss: shape mismatch");
  }
  const BceWeights w = bce_weights(adjacency);
  if (w.pairs == 0.0) return 0.0;
  double total = 0.0;
  for (Eigen::Index i = 0; i < a_hat.size(); ++i) {
    if (w.positive(i) != 0.0) total -= w.positive(i) * std::log(a_hat(i));
    if (w.negative(i) != 0.0) total -= w.negative(i) * std::log1p(-a_hat(i));
  }
  return total / w.pairs;
}

namespace {

Var level_assignment_impl(const Var& z, const Var& adjacency, const PConvVars& layer1, const PConvVars& layer2,
                          const Curvature& k, const DropoutContext& dropout, const AttentionSettings& attention,
                          AssignmentAdjacency mixing) {
  const Matrix& a = adjacency.value();
  const Var x1 = pconv(z, layer1, attention_impl(z, adjacency, k, attention), k, dropout);
  // log_o of the second layer's output, taken before the exp map.
  const Var t2 = hyp::clip_tangent(pconv_tangent(x1, layer2, attention_impl(x1, adjacency, k, attention), k, dropout), k);
  Var mix = adjacency;
  if (mixing == AssignmentAdjacency::kMeanEdge) {
    // Keeps the logit scale independent of the graph's weight units.
    const double edges = (a.array() > 0.0).cast<double>().sum();
    if (edges > 0.0) mix = adjacency / (ad::sum(adjacency) / edges);
  }
  return ad::softmax_rows(ad::matmul(mix, ad::relu(t2)));
}

}  // namespace

Var level_assignment(const Var& z, const Matrix& adjacency, const PConvVars& layer1, const PConvVars& layer2,
                     const Curvature& k, const DropoutContext& dropout, const AttentionSettings& attention,
                     AssignmentAdjacency mixing) {
  return level_assignment_impl(z, z.tape()->constant(adjacency), layer1, layer2, k, dropout, attention, mixing);
}

Matrix level_assignment(const Matrix& z, const Matrix& adjacency, const PConvParams& layer1,
                        const PConvParams& layer2, const Curvature& k) {
  Tape t;
  return level_assignment(t.constant(z), adjacency, attach(t, layer1, false), attach(t, layer2, false), k).value();
}

LiftedLayer lift_layer(const Var& z, const Var& adjacency, const Var& assignment, const Curvature& k,
                       const hyp::FrechetSettings& frechet) {
  const Eigen::Index n = assignment.rows();
  const Eigen::Index p = assignment.cols();
  if (z.rows() != n || adjacency.rows() != n || adjacency.cols() != n) {
    throw std::invalid_argument("lift_layer: shape mismatch between embeddings, adjacency and assignment");
  }
  LiftedLayer out;
  const Eigen::RowVectorXd mass = assignment.value().colwise().sum();
  Matrix keep = Matrix::Ones(n, p);
  Matrix fill = Matrix::Zero(n, p);
  for (Eigen::Index j = 0; j < p; ++j) {
    if (mass[j] < kEmptyColumnMass) {
      out.empty_columns.push_back(static_cast<int>(j));
      keep.col(j).setZero();
      fill.col(j).setOnes();
    }
  }
  Var weights = assignment;
  if (!out.empty_columns.empty()) {
    weights = ad::mul_const(assignment, keep) + z.tape()->constant(fill);
  }
  out.embeddings = hyp::frechet_means(z, weights, k, frechet);
  const Var pooled = ad::matmul(ad::transpose(assignment), ad::matmul(adjacency, assignment));
  out.adjacency = ad::mul_const(pooled, off_diagonal_mask(p));
  return out;
}

LiftedLayerValue lift_layer(const Matrix& z, const Matrix& adjacency, const Matrix& assignment, const Curvature& k,
                            const hyp::FrechetSettings& frechet) {
  Tape t;
  auto l = lift_layer(t.constant(z), t.constant(adjacency), t.constant(assignment), k, frechet);
  return {l.embeddings.value(), l.adjacency.value(), l.empty_columns};
}

Matrix leaf_membership(const std::vector<Matrix>& chain, Eigen::Index leaf_count) {
  Matrix s = Matrix::Identity(leaf_count, leaf_count);
  for (const Matrix& c : chain) {
    if (c.rows() != s.cols()) {
      throw std::invalid_argument("leaf_membership: assignment chain is not conformable");
    }
    s = s * c;
  }
  return s;
}

LeafGraph LeafGraph::from_adjacency(const Matrix& adjacency) {
  if (adjacency.rows() != adjacency.cols()) throw std::invalid_argument("LeafGraph: adjacency is not square");
  LeafGraph g;
  g.adjacency = adjacency;
  g.adjacency.diagonal().setZero();
  g.degrees = g.adjacency.rowwise().sum();
  g.volume = g.degrees.sum();
  return g;
}

namespace {
constexpr double kTinyVolume = 1e-12;
}

LayerEntropy dsi_layer_entropy(const LeafGraph& g, const Var& membership, const Var& assignment,
                               const Var& parent_volumes) {
  if (!(g.volume > 0.0)) throw std::domain_error("dsi_layer_entropy: leaf graph has zero volume");
  Tape& t = *membership.tape();
  if (membership.rows() != g.adjacency.rows() || assignment.rows() != membership.cols() ||
      parent_volumes.rows() != assignment.cols()) {
    throw std::invalid_argument("dsi_layer_entropy: shape mismatch");
  }
  const Var d = t.constant(Matrix(g.degrees));
  const Var v = ad::matmul(ad::transpose(membership), d);
  const Var within =
      ad::transpose(ad::col_sum(membership * ad::matmul(t.constant(g.adjacency), membership)));
  const Var vp = ad::matmul(assignment, parent_volumes);

  const Matrix keep = (v.value().array() > kTinyVolume).cast<double>();
  const Var keep_var = t.constant(keep);
  const Var pad = t.constant(Matrix(1.0 - keep.array()));
  const Var ratio = (v * keep_var + pad) / (vp * keep_var + pad);
  const Var terms = (v - within) * keep_var * ad::log(ratio);
  return {ad::sum(terms) * (-1.0 / (g.volume * std::numbers::ln2)), v};
}

double dsi_layer_entropy(const LeafGraph& g, const Matrix& membership, const Matrix& assignment,
                         const Eigen::VectorXd& parent_volumes) {
  Tape t;
  return dsi_layer_entropy(g, t.constant(membership), t.constant(assignment), t.constant(Matrix(parent_volumes)))
      .bits.scalar();
}

double se_loss(const SoftTree& tree) {
  double total = tree.root_distance;
  for (int h = 1; h <= tree.height; ++h) total += tree.layer_bits.at(h);
  return total;
}

double total_loss(double l_hgae, double l_se) {
  if (!std::isfinite(l_hgae) || !std::isfinite(l_se)) {
    throw std::runtime_error("total_loss: non-finite loss component (hgae=" + std::to_string(l_hgae) +
                             ", se=" + std::to_string(l_se) + ")");
  }
  return l_hgae + l_se;
}

std::vector<Matrix*> ModelParams::tensors() {
  std::vector<Matrix*> out{&encoder1.weight, &encoder1.bias, &encoder2.weight, &encoder2.bias};
  for (auto& [l1, l2] : assign) {
    out.insert(out.end(), {&l1.weight, &l1.bias, &l2.weight, &l2.bias});
  }
  return out;
}

std::vector<const Matrix*> ModelParams::tensors() const {
  auto mut = const_cast<ModelParams*>(this)->tensors();
  return {mut.begin(), mut.end()};
}

Eigen::Index ModelParams::parameter_count() const {
  Eigen::Index n = 0;
  for (const Matrix* m : tensors()) n += m->size();
  return n;
}

Eigen::VectorXd ModelParams::flatten() const {
  Eigen::VectorXd flat(parameter_count());
  Eigen::Index off = 0;
  for (const Matrix* m : tensors()) {
    flat.segment(off, m->size()) = m->reshaped();
    off += m->size();
  }
  return flat;
}

void ModelParams::unflatten(const Eigen::VectorXd& flat) {
  if (flat.size() != parameter_count()) throw std::invalid_argument("ModelParams::unflatten: size mismatch");
  Eigen::Index off = 0;
  for (Matrix* m : tensors()) {
    m->reshaped() = flat.segment(off, m->size());
    off += m->size();
  }
}

GraphInputs GraphInputs::make(Matrix features, const Matrix& adjacency) {
  if (features.rows() != adjacency.rows()) {
    throw std::invalid_argument("GraphInputs: feature rows differ from adjacency size");
  }
  return {std::move(features), LeafGraph::from_adjacency(adjacency)};
}

ForwardResult forward(Tape& tape, const ModelParams& params, const ModelDims& dims, const GraphInputs& inputs,
                      const ForwardOptions& options) {
  const Curvature& k = params.curvature;
  const int height = dims.height();
  const auto leaves = static_cast<int>(inputs.features.rows());
  std::vector<int> sizes(height + 1);
  sizes[0] = 1;
  sizes[height] = leaves;
  for (int h = 1; h < height; ++h) sizes[h] = dims.widths[h - 1];

  ForwardResult r;
  const DropoutContext drop{options.training ? options.rng : nullptr};
  const PConvVars enc1 = attach(tape, params.encoder1, options.gradients);
  const PConvVars enc2 = attach(tape, params.encoder2, options.gradients);
  r.params = {enc1.weight, enc1.bias, enc2.weight, enc2.bias};
  std::vector<std::pair<PConvVars, PConvVars>> assign;
  for (const auto& [l1, l2] : params.assign) {
    assign.emplace_back(attach(tape, l1, options.gradients), attach(tape, l2, options.gradients));
    r.params.insert(r.params.end(),
                    {assign.back().first.weight, assign.back().first.bias, assign.back().second.weight,
                     assign.back().second.bias});
  }

  const Matrix& a_leaf = inputs.graph.adjacency;
  const Var latent =
      hgae_encode(tape.constant(inputs.features), a_leaf, enc1, enc2, k, drop, options.attention);
  r.hgae = hgae_loss_from_logits(fermi_dirac_logits(latent, params.decoder, k), a_leaf);

  std::vector<Var> z(height + 1), adj(height + 1), c(height + 1), s(height + 1);
  z[height] = latent;
  adj[height] = tape.constant(a_leaf);
  s[height] = tape.constant(Matrix(Matrix::Identity(leaves, leaves)));
  SoftTree& tree = r.tree;
  tree.height = height;

  std::size_t next_net = 0;
  for (int h = height; h >= 1; --h) {
    if (sizes[h - 1] == 1) {
      c[h] = tape.constant(Matrix(Matrix::Ones(sizes[h], 1)));
    } else {
      if (next_net >= assign.size()) {
        throw std::invalid_argument("forward: missing assignment network for layer " + std::to_string(h));
      }
      const auto& [n1, n2] = assign[next_net++];
      if (n2.weight.cols() != sizes[h - 1]) {
        throw std::invalid_argument("forward: assignment network for layer " + std::to_string(h) + " emits " +
                                    std::to_string(n2.weight.cols()) + " logits, expected " +
                                    std::to_string(sizes[h - 1]));
      }
      c[h] = level_assignment_impl(z[h], adj[h], n1, n2, k, drop, options.attention, options.assignment_adjacency);
    }
    LiftedLayer lifted = lift_layer(z[h], adj[h], c[h], k, options.frechet);
    z[h - 1] = lifted.embeddings;
    adj[h - 1] = lifted.adjacency;
    tree.empty_columns.insert(tree.empty_columns.end(), lifted.empty_columns.begin(), lifted.empty_columns.end());
    s[h - 1] = ad::matmul(s[h], c[h]);
  }

  const Var root_distance = ad::sum(hyp::origin_distances(z[0], k));
  const Var vol = tape.constant(inputs.graph.volume);
  std::vector<Var> volumes(height + 1);
  volumes[0] = vol;
  Var se = root_distance;
  tree.layer_bits.assign(height + 1, 0.0);
  for (int h = 1; h <= height; ++h) {
    LayerEntropy e = dsi_layer_entropy(inputs.graph, s[h], c[h], volumes[h - 1]);
    volumes[h] = e.volumes;
    tree.layer_bits[h] = e.bits.scalar();
    se = se + e.bits;
  }
  r.se = se;
  r.total = r.hgae + r.se;

  tree.root_distance = root_distance.scalar();
  tree.embeddings.resize(height + 1);
  tree.adjacency.resize(height + 1);
  tree.assignment.resize(height + 1);
  tree.membership.resize(height + 1);
  tree.volumes.resize(height + 1);
  for (int h = 0; h <= height; ++h) {
    tree.embeddings[h] = z[h].value();
    tree.adjacency[h] = adj[h].value();
    if (h >= 1) tree.assignment[h] = c[h].value();
    tree.membership[h] = s[h].value();
    tree.volumes[h] = volumes[h].value().col(0);
  }
  return r;
}

}  // namespace hypersed::model
