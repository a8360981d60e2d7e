#include "hypersed/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace hypersed::geometry {

namespace {

void require_compatible(const PoincarePoint& x, const PoincarePoint& y, const char* op) {
  if (x.dim() != y.dim()) {
    throw std::invalid_argument(std::string(op) + ": dimension mismatch (" + std::to_string(x.dim()) + " vs " +
                                std::to_string(y.dim()) + ")");
  }
  if (!(x.curvature() == y.curvature())) {
    throw std::invalid_argument(std::string(op) + ": curvature mismatch");
  }
}

double clamped_artanh(double v) { return std::atanh(std::clamp(v, 0.0, kArtanhClamp)); }

}  // namespace

Curvature::Curvature(double kappa) : kappa_(kappa), sqrt_c_(0.0) {
  if (!std::isfinite(kappa) || !(kappa < 0.0)) {
    throw std::invalid_argument("curvature must be finite and strictly negative, got " + std::to_string(kappa));
  }
  sqrt_c_ = std::sqrt(-kappa);
}

PoincarePoint::PoincarePoint(Vector coords, Curvature curvature) : coords_(std::move(coords)), curvature_(curvature) {
  if (!coords_.allFinite()) {
    throw std::domain_error("PoincarePoint: non-finite coordinates");
  }
  if (!(coords_.squaredNorm() * curvature_.c() < 1.0)) {
    throw std::domain_error("PoincarePoint: point lies on or outside the ball boundary");
  }
}

PoincarePoint PoincarePoint::origin(Eigen::Index dim, Curvature curvature) {
  return PoincarePoint(Vector::Zero(dim), curvature);
}

TangentVector::TangentVector(Vector coords, PoincarePoint base) : coords_(std::move(coords)), base_(std::move(base)) {
  if (coords_.size() != base_.dim()) {
    throw std::invalid_argument("TangentVector: dimension differs from base point");
  }
  if (!coords_.allFinite()) {
    throw std::domain_error("TangentVector: non-finite coordinates");
  }
}

double conformal_factor(const PoincarePoint& x) {
  const double denom = 1.0 + x.curvature().kappa() * x.squared_norm();
  if (!(denom > 0.0)) {
    throw std::domain_error("conformal_factor: point on the ball boundary");
  }
  return 2.0 / denom;
}

Vector mobius_add_raw(const Vector& x, const Vector& y, double c) {
  const double xy = x.dot(y);
  const double x2 = x.squaredNorm();
  const double y2 = y.squaredNorm();
  const double num_x = 1.0 + 2.0 * c * xy + c * y2;
  const double num_y = 1.0 - c * x2;
  const double denom = 1.0 + 2.0 * c * xy + c * c * x2 * y2;
  return (num_x * x + num_y * y) / denom;
}

PoincarePoint mobius_add(const PoincarePoint& x, const PoincarePoint& y) {
  require_compatible(x, y, "mobius_add");
  return project_to_ball(mobius_add_raw(x.coords(), y.coords(), x.curvature().c()), x.curvature());
}

double distance(const PoincarePoint& x, const PoincarePoint& y) {
  require_compatible(x, y, "distance");
  const double s = x.curvature().sqrt_c();
  const Vector u = mobius_add_raw(-x.coords(), y.coords(), x.curvature().c());
  return 2.0 / s * clamped_artanh(s * u.norm());
}

PoincarePoint exp_map(const PoincarePoint& x, const Vector& v) {
  if (v.size() != x.dim()) {
    throw std::invalid_argument("exp_map: dimension mismatch");
  }
  const double vn = v.norm();
  if (vn == 0.0) {
    return x;
  }
  const double s = x.curvature().sqrt_c();
  const double lambda = conformal_factor(x);
  const Vector step = std::tanh(s * lambda * vn / 2.0) / (s * vn) * v;
  return project_to_ball(mobius_add_raw(x.coords(), step, x.curvature().c()), x.curvature());
}

PoincarePoint exp_map(const TangentVector& v) { return exp_map(v.base(), v.coords()); }

TangentVector log_map(const PoincarePoint& x, const PoincarePoint& y) {
  require_compatible(x, y, "log_map");
  const Vector u = mobius_add_raw(-x.coords(), y.coords(), x.curvature().c());
  const double un = u.norm();
  if (un == 0.0) {
    return TangentVector(Vector::Zero(x.dim()), x);
  }
  const double s = x.curvature().sqrt_c();
  const double lambda = conformal_factor(x);
  return TangentVector(2.0 / (s * lambda) * clamped_artanh(s * un) / un * u, x);
}

PoincarePoint project_to_ball(const Vector& x, Curvature curvature, double margin) {
  if (!x.allFinite()) {
    throw std::domain_error("project_to_ball: non-finite entries");
  }
  if (!(margin > 0.0 && margin < 1.0)) {
    throw std::invalid_argument("project_to_ball: margin must lie in (0, 1)");
  }
  const double max_norm = (1.0 - margin) / curvature.sqrt_c();
  const double n = x.norm();
  if (n >= max_norm) {
    return PoincarePoint(x * (max_norm / n), curvature);
  }
  return PoincarePoint(x, curvature);
}

Vector mean_log(const PoincarePoint& z, std::span<const PoincarePoint> points, std::span<const double> weights) {
  Vector acc = Vector::Zero(z.dim());
  double total = 0.0;
  for (std::size_t i = 0; i < points.size(); ++i) {
    if (weights[i] == 0.0) continue;
    acc += weights[i] * log_map(z, points[i]).coords();
    total += weights[i];
  }
  return acc / total;
}

FrechetResult frechet_mean_detailed(std::span<const PoincarePoint> points, std::span<const double> weights,
                                    const FrechetOptions& options) {
  if (points.empty()) {
    throw std::invalid_argument("frechet_mean: empty input");
  }
  if (weights.size() != points.size()) {
    throw std::invalid_argument("frechet_mean: weight count differs from point count");
  }
  double total = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0) || !std::isfinite(w)) {
      throw std::invalid_argument("frechet_mean: weights must be finite and nonnegative");
    }
    total += w;
  }
  if (!(total > 0.0)) {
    throw std::invalid_argument("frechet_mean: all weights are zero");
  }
  const Curvature k = points.front().curvature();
  const Eigen::Index dim = points.front().dim();
  for (const auto& p : points) {
    if (p.dim() != dim || !(p.curvature() == k)) {
      throw std::invalid_argument("frechet_mean: points differ in dimension or curvature");
    }
  }

  const PoincarePoint o = PoincarePoint::origin(dim, k);
  Vector tangent = Vector::Zero(dim);
  for (std::size_t i = 0; i < points.size(); ++i) {
    tangent += weights[i] / total * log_map(o, points[i]).coords();
  }
  PoincarePoint z = exp_map(o, tangent);
  if (options.one_shot) {
    return {z, 0, 0.0};
  }

  // A full step overshoots when the points are spread far apart (the Hessian
  // of the Frechet function grows with curvature times spread), so the step
  // is halved until the decrease is at least a quarter of the first-order
  // prediction. Close to the mean the decrease drops below rounding in f;
  // from then on the last accepted scale is reused.
  auto frechet_value = [&](const PoincarePoint& m) {
    double f = 0.0;
    for (std::size_t i = 0; i < points.size(); ++i) {
      if (weights[i] == 0.0) continue;
      const double d = distance(m, points[i]);
      f += weights[i] * d * d;
    }
    return f;
  };
  double f = frechet_value(z);
  double scale = 1.0;
  double step_norm = 0.0;
  int it = 0;
  for (; it < options.max_iter; ++it) {
    const Vector step = mean_log(z, points, weights);
    step_norm = step.norm();
    if (step_norm < options.tol) break;
    const double lambda = conformal_factor(z);
    // Rate of decrease of f along the step, per unit step length.
    const double slope = 2.0 * total * lambda * lambda * step_norm * step_norm;
    if (slope > 1e-12 * f) {
      scale = std::min(1.0, 2.0 * scale);
      PoincarePoint next = exp_map(z, scale * step);
      double f_next = frechet_value(next);
      for (int halvings = 0; f_next > f - 0.25 * scale * slope && halvings < 30; ++halvings) {
        scale *= 0.5;
        next = exp_map(z, scale * step);
        f_next = frechet_value(next);
      }
      z = next;
      f = f_next;
    } else {
      z = exp_map(z, scale * step);
    }
  }
  return {z, it, step_norm};
}

PoincarePoint frechet_mean(std::span<const PoincarePoint> points, std::span<const double> weights,
                           const FrechetOptions& options) {
  return frechet_mean_detailed(points, weights, options).mean;
}

}  // namespace hypersed::geometry
