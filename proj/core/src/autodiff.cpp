#include "hypersed/autodiff.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

namespace hypersed::ad {

namespace {

using Index = Eigen::Index;

Tape& tape_of(const Var& a) {
  if (!a.tape()) throw std::logic_error("autodiff: Var is not attached to a tape");
  return *a.tape();
}

Tape& tape_of(const Var& a, const Var& b) {
  Tape& t = tape_of(a);
  if (b.tape() != &t) throw std::logic_error("autodiff: Vars belong to different tapes");
  return t;
}

Index broadcast_dim(Index a, Index b, const char* op) {
  if (a == b || b == 1) return a;
  if (a == 1) return b;
  throw std::invalid_argument(std::string("autodiff ") + op + ": incompatible shapes (" + std::to_string(a) +
                              " vs " + std::to_string(b) + ")");
}

// Calls f with m broadcast to r x c as a lazy array expression.
template <typename F>
Matrix with_broadcast(const Matrix& m, Index r, Index c, F f) {
  if (m.rows() == r && m.cols() == c) return f(m.array());
  if (m.rows() == 1 && m.cols() == 1) return f(Matrix::Constant(r, c, m(0, 0)).array());
  if (m.rows() == 1 && m.cols() == c) return f(m.replicate(r, 1).array());
  if (m.cols() == 1 && m.rows() == r) return f(m.replicate(1, c).array());
  throw std::invalid_argument("autodiff: cannot broadcast");
}

// Elementwise f(a, b) with broadcasting and no materialized operands.
template <typename F>
Matrix broadcast_apply(const Matrix& a, const Matrix& b, Index r, Index c, F f) {
  return with_broadcast(a, r, c, [&](const auto& x) {
    return with_broadcast(b, r, c, [&](const auto& y) { return Matrix(f(x, y).matrix()); });
  });
}

Matrix reduce_to(Matrix g, Index r, Index c) {
  if (g.rows() == r && g.cols() == c) return g;
  if (r == 1 && c == 1) return Matrix::Constant(1, 1, g.sum());
  if (r == 1) return g.colwise().sum();
  return g.rowwise().sum();
}

template <typename Fwd, typename Deriv>
Var unary(const Var& a, Fwd fwd, Deriv deriv) {
  Tape& t = tape_of(a);
  Matrix out = a.value().unaryExpr(fwd);
  const int ia = a.id();
  return t.record(std::move(out), {a}, [ia, deriv](Tape& tp, const Matrix& g) {
    const Matrix& x = tp.value(ia);
    tp.accumulate(ia, g.cwiseProduct(x.unaryExpr(deriv)));
  });
}

}  // namespace

const Matrix& Var::value() const { return tape_of(*this).value(id_); }

double Var::scalar() const {
  const Matrix& v = value();
  if (v.size() != 1) throw std::logic_error("autodiff: scalar() on a non-1x1 Var");
  return v(0, 0);
}

bool Var::requires_grad() const { return tape_of(*this).requires_grad(id_); }

Var Tape::variable(Matrix value) {
  nodes_.push_back(Node{std::move(value), {}, true, {}});
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::constant(Matrix value) {
  nodes_.push_back(Node{std::move(value), {}, false, {}});
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::constant(double value) { return constant(Matrix::Constant(1, 1, value)); }

Var Tape::record(Matrix value, std::initializer_list<Var> inputs, Backward backward) {
  bool needs = false;
  for (const Var& v : inputs) {
    if (v.tape() != this) throw std::logic_error("autodiff: input from a different tape");
    needs = needs || nodes_[v.id()].requires_grad;
  }
  nodes_.push_back(Node{std::move(value), {}, needs, needs ? std::move(backward) : Backward{}});
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

void Tape::accumulate(int id, Matrix g) {
  Node& n = nodes_[id];
  if (!n.requires_grad) return;
  if (n.grad.size() == 0) {
    n.grad = std::move(g);
  } else {
    n.grad += g;
  }
}

void Tape::backward(const Var& output) {
  if (output.tape() != this) throw std::logic_error("autodiff: output from a different tape");
  if (output.value().size() != 1) throw std::logic_error("autodiff: backward() needs a 1x1 output");
  for (auto& n : nodes_) n.grad.resize(0, 0);
  nodes_[output.id()].grad = Matrix::Ones(1, 1);
  for (int i = output.id(); i >= 0; --i) {
    Node& n = nodes_[i];
    if (n.backward && n.grad.size() != 0) n.backward(*this, n.grad);
  }
}

Matrix Tape::grad(const Var& v) const {
  const Node& n = nodes_[v.id()];
  if (n.grad.size() == 0) return Matrix::Zero(n.value.rows(), n.value.cols());
  return n.grad;
}

Var operator+(const Var& a, const Var& b) {
  Tape& t = tape_of(a, b);
  const Index r = broadcast_dim(a.rows(), b.rows(), "+");
  const Index c = broadcast_dim(a.cols(), b.cols(), "+");
  Matrix out = broadcast_apply(a.value(), b.value(), r, c, [](const auto& x, const auto& y) { return x + y; });
  const int ia = a.id(), ib = b.id();
  const Index ar = a.rows(), ac = a.cols(), br = b.rows(), bc = b.cols();
  return t.record(std::move(out), {a, b}, [=](Tape& tp, const Matrix& g) {
    if (tp.requires_grad(ia)) tp.accumulate(ia, reduce_to(g, ar, ac));
    if (tp.requires_grad(ib)) tp.accumulate(ib, reduce_to(g, br, bc));
  });
}

Var operator-(const Var& a, const Var& b) {
  Tape& t = tape_of(a, b);
  const Index r = broadcast_dim(a.rows(), b.rows(), "-");
  const Index c = broadcast_dim(a.cols(), b.cols(), "-");
  Matrix out = broadcast_apply(a.value(), b.value(), r, c, [](const auto& x, const auto& y) { return x - y; });
  const int ia = a.id(), ib = b.id();
  const Index ar = a.rows(), ac = a.cols(), br = b.rows(), bc = b.cols();
  return t.record(std::move(out), {a, b}, [=](Tape& tp, const Matrix& g) {
    if (tp.requires_grad(ia)) tp.accumulate(ia, reduce_to(g, ar, ac));
    if (tp.requires_grad(ib)) tp.accumulate(ib, reduce_to(-g, br, bc));
  });
}

Var operator*(const Var& a, const Var& b) {
  Tape& t = tape_of(a, b);
  const Index r = broadcast_dim(a.rows(), b.rows(), "*");
  const Index c = broadcast_dim(a.cols(), b.cols(), "*");
  Matrix out = broadcast_apply(a.value(), b.value(), r, c, [](const auto& x, const auto& y) { return x * y; });
  const int ia = a.id(), ib = b.id();
  const Index ar = a.rows(), ac = a.cols(), br = b.rows(), bc = b.cols();
  return t.record(std::move(out), {a, b}, [=](Tape& tp, const Matrix& g) {
    auto prod = [](const auto& x, const auto& y) { return x * y; };
    if (tp.requires_grad(ia)) tp.accumulate(ia, reduce_to(broadcast_apply(g, tp.value(ib), r, c, prod), ar, ac));
    if (tp.requires_grad(ib)) tp.accumulate(ib, reduce_to(broadcast_apply(g, tp.value(ia), r, c, prod), br, bc));
  });
}

Var operator/(const Var& a, const Var& b) {
  Tape& t = tape_of(a, b);
  const Index r = broadcast_dim(a.rows(), b.rows(), "/");
  const Index c = broadcast_dim(a.cols(), b.cols(), "/");
  Matrix out = broadcast_apply(a.value(), b.value(), r, c, [](const auto& x, const auto& y) { return x / y; });
  const int ia = a.id(), ib = b.id();
  const int io = static_cast<int>(t.size());
  const Index ar = a.rows(), ac = a.cols(), br = b.rows(), bc = b.cols();
  return t.record(std::move(out), {a, b}, [=](Tape& tp, const Matrix& g) {
    // d(a/b)/db = -(a/b)/b, and a/b is this node's value.
    const Matrix& bv = tp.value(ib);
    if (tp.requires_grad(ia)) {
      tp.accumulate(ia, reduce_to(broadcast_apply(g, bv, r, c, [](const auto& x, const auto& y) { return x / y; }),
                                  ar, ac));
    }
    if (tp.requires_grad(ib)) {
      Matrix q = g.cwiseProduct(tp.value(io));
      tp.accumulate(ib, reduce_to(broadcast_apply(q, bv, r, c, [](const auto& x, const auto& y) { return -x / y; }),
                                  br, bc));
    }
  });
}

Var operator-(const Var& a) { return a * -1.0; }

Var operator+(const Var& a, double s) {
  Tape& t = tape_of(a);
  Matrix out = a.value().array() + s;
  const int ia = a.id();
  return t.record(std::move(out), {a}, [ia](Tape& tp, const Matrix& g) { tp.accumulate(ia, g); });
}
Var operator+(double s, const Var& a) { return a + s; }
Var operator-(const Var& a, double s) { return a + (-s); }
Var operator-(double s, const Var& a) { return (a * -1.0) + s; }

Var operator*(const Var& a, double s) {
  Tape& t = tape_of(a);
  Matrix out = a.value() * s;
  const int ia = a.id();
  return t.record(std::move(out), {a}, [ia, s](Tape& tp, const Matrix& g) { tp.accumulate(ia, g * s); });
}
Var operator*(double s, const Var& a) { return a * s; }
Var operator/(const Var& a, double s) { return a * (1.0 / s); }

Var operator/(double s, const Var& a) {
  Tape& t = tape_of(a);
  Matrix out = s / a.value().array();
  const int ia = a.id();
  return t.record(std::move(out), {a}, [ia, s](Tape& tp, const Matrix& g) {
    const Matrix& x = tp.value(ia);
    tp.accumulate(ia, (-s * g.array() / x.array().square()).matrix());
  });
}

Var mul_const(const Var& a, const Matrix& m) { return a * tape_of(a).constant(m); }

Var matmul(const Var& a, const Var& b) {
  Tape& t = tape_of(a, b);
  if (a.cols() != b.rows()) {
    throw std::invalid_argument("autodiff matmul: inner dimensions " + std::to_string(a.cols()) + " and " +
                                std::to_string(b.rows()) + " differ");
  }
  Matrix out = a.value() * b.value();
  const int ia = a.id(), ib = b.id();
  return t.record(std::move(out), {a, b}, [ia, ib](Tape& tp, const Matrix& g) {
    if (tp.requires_grad(ia)) tp.accumulate(ia, g * tp.value(ib).transpose());
    if (tp.requires_grad(ib)) tp.accumulate(ib, tp.value(ia).transpose() * g);
  });
}

Var transpose(const Var& a) {
  Tape& t = tape_of(a);
  Matrix out = a.value().transpose();
  const int ia = a.id();
  return t.record(std::move(out), {a}, [ia](Tape& tp, const Matrix& g) { tp.accumulate(ia, g.transpose()); });
}

Var col_block(const Var& a, Index start, Index count) {
  Tape& t = tape_of(a);
  if (start < 0 || count < 0 || start + count > a.cols()) {
    throw std::invalid_argument("autodiff col_block: columns out of range");
  }
  Matrix out = a.value().middleCols(start, count);
  const int ia = a.id();
  const Index r = a.rows(), c = a.cols();
  return t.record(std::move(out), {a}, [=](Tape& tp, const Matrix& g) {
    Matrix full = Matrix::Zero(r, c);
    full.middleCols(start, count) = g;
    tp.accumulate(ia, std::move(full));
  });
}

Var row_sum(const Var& a) {
  Tape& t = tape_of(a);
  Matrix out = a.value().rowwise().sum();
  const int ia = a.id();
  const Index c = a.cols();
  return t.record(std::move(out), {a}, [ia, c](Tape& tp, const Matrix& g) { tp.accumulate(ia, g.replicate(1, c)); });
}

Var row_max(const Var& a) {
  Tape& t = tape_of(a);
  if (a.cols() == 0) throw std::invalid_argument("autodiff row_max: no columns");
  const Matrix& v = a.value();
  Matrix out(v.rows(), 1);
  std::vector<Index> arg(v.rows());
  for (Index i = 0; i < v.rows(); ++i) out(i, 0) = v.row(i).maxCoeff(&arg[i]);
  const int ia = a.id();
  const Index c = a.cols();
  return t.record(std::move(out), {a}, [ia, c, arg](Tape& tp, const Matrix& g) {
    Matrix full = Matrix::Zero(static_cast<Index>(arg.size()), c);
    for (std::size_t i = 0; i < arg.size(); ++i) full(static_cast<Index>(i), arg[i]) = g(static_cast<Index>(i), 0);
    tp.accumulate(ia, std::move(full));
  });
}

Var col_sum(const Var& a) {
  Tape& t = tape_of(a);
  Matrix out = a.value().colwise().sum();
  const int ia = a.id();
  const Index r = a.rows();
  return t.record(std::move(out), {a}, [ia, r](Tape& tp, const Matrix& g) { tp.accumulate(ia, g.replicate(r, 1)); });
}

Var sum(const Var& a) {
  Tape& t = tape_of(a);
  Matrix out = Matrix::Constant(1, 1, a.value().sum());
  const int ia = a.id();
  const Index r = a.rows(), c = a.cols();
  return t.record(std::move(out), {a},
                  [ia, r, c](Tape& tp, const Matrix& g) { tp.accumulate(ia, Matrix::Constant(r, c, g(0, 0))); });
}

Var mean(const Var& a) { return sum(a) / static_cast<double>(a.value().size()); }

Var exp(const Var& a) {
  Tape& t = tape_of(a);
  Matrix out = a.value().array().exp();
  const int ia = a.id();
  const int io = static_cast<int>(t.size());
  return t.record(std::move(out), {a}, [ia, io](Tape& tp, const Matrix& g) {
    tp.accumulate(ia, g.cwiseProduct(tp.value(io)));
  });
}

Var log(const Var& a) {
  return unary(a, [](double x) { return std::log(x); }, [](double x) { return 1.0 / x; });
}

Var sqrt(const Var& a) {
  return unary(a, [](double x) { return std::sqrt(x); }, [](double x) { return 0.5 / std::sqrt(x); });
}

Var square(const Var& a) {
  return unary(a, [](double x) { return x * x; }, [](double x) { return 2.0 * x; });
}

Var tanh(const Var& a) {
  return unary(
      a, [](double x) { return std::tanh(x); },
      [](double x) {
        const double th = std::tanh(x);
        return 1.0 - th * th;
      });
}

namespace {
double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}
}  // namespace

Var sigmoid(const Var& a) {
  return unary(a, stable_sigmoid, [](double x) {
    const double s = stable_sigmoid(x);
    return s * (1.0 - s);
  });
}

Var softplus(const Var& a) {
  return unary(
      a, [](double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }, stable_sigmoid);
}

Var relu(const Var& a) {
  return unary(a, [](double x) { return x > 0.0 ? x : 0.0; }, [](double x) { return x > 0.0 ? 1.0 : 0.0; });
}

Var clamp(const Var& a, double lo, double hi) {
  return unary(
      a, [lo, hi](double x) { return x < lo ? lo : (x > hi ? hi : x); },
      [lo, hi](double x) { return (x >= lo && x <= hi) ? 1.0 : 0.0; });
}

// Series below this threshold; the closed forms lose digits to cancellation.
constexpr double kSeriesCut = 1e-4;

double tanh_sqrt_over_sqrt(double q) {
  if (q < kSeriesCut) return 1.0 - q / 3.0 + 2.0 * q * q / 15.0 - 17.0 * q * q * q / 315.0;
  const double s = std::sqrt(q);
  return std::tanh(s) / s;
}

namespace {
double tanh_sqrt_over_sqrt_deriv(double q) {
  if (q < kSeriesCut) return -1.0 / 3.0 + 4.0 * q / 15.0 - 51.0 * q * q / 315.0;
  const double s = std::sqrt(q);
  const double th = std::tanh(s);
  const double sech2 = 1.0 - th * th;
  return (sech2 * s - th) / (s * s) / (2.0 * s);
}
}  // namespace

double artanh_sqrt_over_sqrt(double q) {
  if (q < kSeriesCut) return 1.0 + q / 3.0 + q * q / 5.0 + q * q * q / 7.0;
  const double s = std::sqrt(q);
  return std::atanh(s) / s;
}

double artanh_sqrt_over_sqrt_deriv(double q) {
  if (q < kSeriesCut) return 1.0 / 3.0 + 2.0 * q / 5.0 + 3.0 * q * q / 7.0 + 4.0 * q * q * q / 9.0;
  const double s = std::sqrt(q);
  return (s / (1.0 - q) - std::atanh(s)) / (s * s) / (2.0 * s);
}

Var tanh_sqrt_over_sqrt(const Var& q) {
  return unary(q, [](double x) { return tanh_sqrt_over_sqrt(x); }, tanh_sqrt_over_sqrt_deriv);
}

Var artanh_sqrt_over_sqrt(const Var& q) {
  return unary(q, [](double x) { return artanh_sqrt_over_sqrt(x); }, artanh_sqrt_over_sqrt_deriv);
}

Var artanh_sqrt_squared(const Var& q) {
  return unary(
      q,
      [](double x) {
        const double a = x * artanh_sqrt_over_sqrt(x) * artanh_sqrt_over_sqrt(x);
        return a;
      },
      [](double x) { return artanh_sqrt_over_sqrt(x) / (1.0 - x); });
}

Var softmax_rows(const Var& logits, const Matrix& mask) {
  Tape& t = tape_of(logits);
  const Matrix& l = logits.value();
  if (mask.rows() != l.rows() || mask.cols() != l.cols()) {
    throw std::invalid_argument("softmax_rows: mask shape differs from logits");
  }
  Matrix out = Matrix::Zero(l.rows(), l.cols());
  for (Index i = 0; i < l.rows(); ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (Index j = 0; j < l.cols(); ++j) {
      if (mask(i, j) != 0.0) mx = std::max(mx, l(i, j));
    }
    if (!std::isfinite(mx)) {
      throw std::invalid_argument("softmax_rows: row " + std::to_string(i) + " is fully masked");
    }
    double total = 0.0;
    for (Index j = 0; j < l.cols(); ++j) {
      if (mask(i, j) != 0.0) {
        out(i, j) = std::exp(l(i, j) - mx);
        total += out(i, j);
      }
    }
    out.row(i) /= total;
  }
  const int il = logits.id();
  const int io = static_cast<int>(t.size());
  return t.record(std::move(out), {logits}, [il, io](Tape& tp, const Matrix& g) {
    const Matrix& s = tp.value(io);
    const Eigen::VectorXd dot = g.cwiseProduct(s).rowwise().sum();
    tp.accumulate(il, s.cwiseProduct(g - dot.replicate(1, g.cols())));
  });
}

Var softmax_rows(const Var& logits) { return softmax_rows(logits, Matrix::Ones(logits.rows(), logits.cols())); }

Var project_rows(const Var& z, double max_norm) {
  Tape& t = tape_of(z);
  Matrix out = z.value();
  Eigen::VectorXd norms = out.rowwise().norm();
  for (Index i = 0; i < out.rows(); ++i) {
    if (norms[i] >= max_norm) out.row(i) *= max_norm / norms[i];
  }
  const int iz = z.id();
  return t.record(std::move(out), {z}, [iz, max_norm, norms](Tape& tp, const Matrix& g) {
    const Matrix& x = tp.value(iz);
    Matrix gin = g;
    for (Index i = 0; i < x.rows(); ++i) {
      const double n = norms[i];
      if (n >= max_norm) {
        const double xg = x.row(i).dot(g.row(i));
        gin.row(i) = (max_norm / n) * (g.row(i) - x.row(i) * (xg / (n * n)));
      }
    }
    tp.accumulate(iz, gin);
  });
}

}  // namespace hypersed::ad
