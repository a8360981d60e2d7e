#pragma once

#include <span>
#include <vector>

#include <Eigen/Dense>

namespace hypersed::geometry {

using Vector = Eigen::VectorXd;

// Largest admissible argument of tanh^-1 before evaluation.
inline constexpr double kArtanhClamp = 1.0 - 1e-10;
inline constexpr double kDefaultMargin = 1e-5;

/// Sectional curvature of the Poincare ball. Always strictly negative.
class Curvature {
 public:
  explicit Curvature(double kappa = -1.0);

  double kappa() const { return kappa_; }
  /// c = -kappa > 0.
  double c() const { return -kappa_; }
  double sqrt_c() const { return sqrt_c_; }
  /// Radius 1/sqrt(c) of the open ball.
  double radius() const { return 1.0 / sqrt_c_; }

  friend bool operator==(const Curvature& a, const Curvature& b) { return a.kappa_ == b.kappa_; }

 private:
  double kappa_;
  double sqrt_c_;
};

/// A point strictly inside the open ball ||x||^2 < -1/kappa.
class PoincarePoint {
 public:
  PoincarePoint(Vector coords, Curvature curvature);

  static PoincarePoint origin(Eigen::Index dim, Curvature curvature = Curvature{});

  const Vector& coords() const { return coords_; }
  const Curvature& curvature() const { return curvature_; }
  Eigen::Index dim() const { return coords_.size(); }
  double squared_norm() const { return coords_.squaredNorm(); }

  PoincarePoint operator-() const { return PoincarePoint(-coords_, curvature_); }

 private:
  Vector coords_;
  Curvature curvature_;
};

/// Element of the tangent space at `base`.
class TangentVector {
 public:
  TangentVector(Vector coords, PoincarePoint base);

  const Vector& coords() const { return coords_; }
  const PoincarePoint& base() const { return base_; }

 private:
  Vector coords_;
  PoincarePoint base_;
};

/// lambda_x = 2 / (1 + kappa ||x||^2). Throws std::domain_error on the boundary.
double conformal_factor(const PoincarePoint& x);

/// Raw Mobius addition on coordinates, no validation or projection.
Vector mobius_add_raw(const Vector& x, const Vector& y, double c);

PoincarePoint mobius_add(const PoincarePoint& x, const PoincarePoint& y);

/// Geodesic distance (2/sqrt(c)) artanh(sqrt(c) ||(-x) (+) y||).
double distance(const PoincarePoint& x, const PoincarePoint& y);

PoincarePoint exp_map(const TangentVector& v);
PoincarePoint exp_map(const PoincarePoint& x, const Vector& v);
TangentVector log_map(const PoincarePoint& x, const PoincarePoint& y);

/// Radially rescales x onto the ball of radius (1 - margin)/sqrt(c) when it
/// lies on or outside that sphere.
PoincarePoint project_to_ball(const Vector& x, Curvature curvature, double margin = kDefaultMargin);

struct FrechetOptions {
  double tol = 1e-6;
  int max_iter = 100;
  // Log to origin, weighted Euclidean mean, exp back. No refinement.
  bool one_shot = false;
};

struct FrechetResult {
  PoincarePoint mean;
  int iterations;
  double last_step_norm;
};

/// Weighted Frechet (Karcher) mean by iterated tangent-space averaging, with
/// the step halved whenever a full step would not lower the Frechet function.
FrechetResult frechet_mean_detailed(std::span<const PoincarePoint> points, std::span<const double> weights,
                                    const FrechetOptions& options = {});

PoincarePoint frechet_mean(std::span<const PoincarePoint> points, std::span<const double> weights,
                           const FrechetOptions& options = {});

/// Weighted sum of log_z(p_i) divided by the total weight.
Vector mean_log(const PoincarePoint& z, std::span<const PoincarePoint> points, std::span<const double> weights);

}  // namespace hypersed::geometry
