#pragma once

// Minimal reverse-mode automatic differentiation over dense matrices.
//
// A Tape records every operation applied to Vars created from it. Binary
// elementwise operations broadcast along dimensions of size 1 (column vectors
// against matrices, row vectors against matrices, 1x1 against anything).
// Gradients are only propagated through nodes that depend on a variable.

#include <deque>
#include <functional>

#include <Eigen/Dense>

namespace hypersed::ad {

using Matrix = Eigen::MatrixXd;

class Tape;

class Var {
 public:
  Var() = default;

  const Matrix& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  double scalar() const;
  bool requires_grad() const;

  Tape* tape() const { return tape_; }
  int id() const { return id_; }

 private:
  friend class Tape;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  int id_ = -1;
};

class Tape {
 public:
  using Backward = std::function<void(Tape&, const Matrix& grad_out)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Leaf that receives a gradient.
  Var variable(Matrix value);
  /// Leaf without gradient.
  Var constant(Matrix value);
  Var constant(double value);

  /// Records an op. `backward` is dropped when no input requires a gradient.
  Var record(Matrix value, std::initializer_list<Var> inputs, Backward backward);

  /// Seeds d(output)/d(output) = 1 for a 1x1 output and runs the sweep.
  void backward(const Var& output);

  /// Gradient accumulated at v, zeros when nothing flowed there.
  Matrix grad(const Var& v) const;

  const Matrix& value(int id) const { return nodes_[id].value; }
  bool requires_grad(int id) const { return nodes_[id].requires_grad; }
  void accumulate(int id, Matrix g);

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    bool requires_grad = false;
    Backward backward;
  };
  std::deque<Node> nodes_;
};

// Elementwise arithmetic with broadcasting.
Var operator+(const Var& a, const Var& b);
Var operator-(const Var& a, const Var& b);
Var operator*(const Var& a, const Var& b);
Var operator/(const Var& a, const Var& b);
Var operator-(const Var& a);

Var operator+(const Var& a, double s);
Var operator+(double s, const Var& a);
Var operator-(const Var& a, double s);
Var operator-(double s, const Var& a);
Var operator*(const Var& a, double s);
Var operator*(double s, const Var& a);
Var operator/(const Var& a, double s);
Var operator/(double s, const Var& a);

/// Elementwise product with a constant matrix or broadcastable constant.
Var mul_const(const Var& a, const Matrix& m);

Var matmul(const Var& a, const Var& b);
Var transpose(const Var& a);
/// Columns [start, start + count) of a.
Var col_block(const Var& a, Eigen::Index start, Eigen::Index count);

Var row_sum(const Var& a);  // n x 1
Var row_max(const Var& a);  // n x 1, gradient to the first maximal entry
Var col_sum(const Var& a);  // 1 x m
Var sum(const Var& a);      // 1 x 1
Var mean(const Var& a);

Var exp(const Var& a);
Var log(const Var& a);
Var sqrt(const Var& a);
Var square(const Var& a);
Var tanh(const Var& a);
Var sigmoid(const Var& a);
Var softplus(const Var& a);
Var relu(const Var& a);
/// Gradient passes where lo <= a <= hi, zero elsewhere.
Var clamp(const Var& a, double lo, double hi);

// Smooth compositions that stay finite at q = 0.
Var tanh_sqrt_over_sqrt(const Var& q);    // tanh(sqrt q)/sqrt q
Var artanh_sqrt_over_sqrt(const Var& q);  // artanh(sqrt q)/sqrt q, q in [0, 1)
Var artanh_sqrt_squared(const Var& q);    // artanh(sqrt q)^2, q in [0, 1)

/// Row-wise softmax over entries where mask != 0; masked entries are 0.
Var softmax_rows(const Var& logits, const Matrix& mask);
Var softmax_rows(const Var& logits);

/// Rows with norm >= max_norm are rescaled radially onto that sphere.
Var project_rows(const Var& z, double max_norm);

// Scalar kernels shared with tests.
double tanh_sqrt_over_sqrt(double q);
double artanh_sqrt_over_sqrt(double q);
double artanh_sqrt_over_sqrt_deriv(double q);

}  // namespace hypersed::ad
