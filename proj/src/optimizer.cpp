#include "levi/optimizer.hpp"

#include <cmath>
#include <sstream>

namespace levi::optim {

namespace {

void check_finite(double value, const char* what, int iteration) {
  if (!std::isfinite(value)) {
    std::ostringstream msg;
    msg << what << " is not finite (" << value << ") at iteration " << iteration;
    throw NumericalError(msg.str());
  }
}

void check_finite(const Vector& v, const char* what, int iteration) {
  if (!v.allFinite()) {
    std::ostringstream msg;
    msg << what << " has non-finite entries at iteration " << iteration;
    throw NumericalError(msg.str());
  }
}

}  // namespace

LineSearchResult armijo_backtrack(const Objective& f, const Vector& x, double fx,
                                  const Vector& direction, const Vector& grad,
                                  const LineSearchOptions& options) {
  const double slope = grad.dot(direction);
  if (!(slope < 0.0)) {
    std::ostringstream msg;
    msg << "line search direction is not a descent direction (<g, d> = " << slope << ")";
    throw InvalidParameter(msg.str());
  }
  if (!(options.shrink > 0.0 && options.shrink < 1.0)) {
    throw InvalidParameter("line search shrink factor must lie in (0, 1)");
  }
  LineSearchResult result;
  for (int n = 0; n <= options.max_shrinks; ++n) {
    const double step = options.initial_step * std::pow(options.shrink, n);
    const double trial = f(x + step * direction);
    result.step = step;
    result.value = trial;
    result.shrinks = n;
    if (std::isfinite(trial) && trial <= fx + options.sufficient_decrease * step * slope) {
      result.satisfied = true;
      return result;
    }
  }
  return result;
}

std::string to_string(BfgsStatus status) {
  switch (status) {
    case BfgsStatus::converged:
      return "converged";
    case BfgsStatus::max_iterations:
      return "max_iterations";
    case BfgsStatus::line_search_failed:
      return "line_search_failed";
  }
  return "unknown";
}

BfgsResult bfgs_minimize(const Objective& f, const Gradient& grad, Vector x0,
                         const BfgsOptions& options) {
  const Eigen::Index n = x0.size();
  BfgsResult r;
  const Objective checked = [&](const Vector& x) {
    const double v = f(x);
    check_finite(v, "objective", r.iterations);
    return v;
  };
  r.x = std::move(x0);
  r.value = f(r.x);
  check_finite(r.value, "objective", 0);
  Vector g = grad(r.x);
  check_finite(g, "gradient", 0);
  r.grad_tol = options.grad_tol > 0.0 ? options.grad_tol : 1e-6 * (1.0 + std::abs(r.value));
  r.grad_norm = g.norm();
  if (options.record_history) r.history.push_back(r.value);

  Eigen::MatrixXd h_inv = Eigen::MatrixXd::Identity(n, n);
  bool identity = true;
  bool scaled = false;

  while (r.iterations < options.max_iter) {
    if (r.grad_norm <= r.grad_tol) {
      r.converged = true;
      r.status = BfgsStatus::converged;
      return r;
    }
    Vector d = -(h_inv * g);
    if (!(g.dot(d) < 0.0)) {
      // Lost positive definiteness to roundoff; restart from steepest descent.
      h_inv.setIdentity();
      identity = true;
      scaled = false;
      d = -g;
    }
    LineSearchResult ls = armijo_backtrack(checked, r.x, r.value, d, g, options.line_search);
    if (!ls.satisfied && !identity) {
      h_inv.setIdentity();
      identity = true;
      scaled = false;
      d = -g;
      ls = armijo_backtrack(checked, r.x, r.value, d, g, options.line_search);
    }
    if (!ls.satisfied) {
      r.status = BfgsStatus::line_search_failed;
      return r;
    }
    ++r.iterations;
    const Vector s = ls.step * d;
    Vector x_next = r.x + s;
    Vector g_next = grad(x_next);
    check_finite(g_next, "gradient", r.iterations);
    const Vector y = g_next - g;
    const double sy = s.dot(y);

    if (sy > options.curvature_eps * s.norm() * y.norm()) {
      if (!scaled) {
        // First curvature pair fixes the scale of the initial inverse Hessian.
        h_inv *= sy / y.squaredNorm();
        scaled = true;
      }
      const double rho = 1.0 / sy;
      const Vector hy = h_inv * y;
      const double yhy = y.dot(hy);
      // H+ = (I - rho s y^T) H (I - rho y s^T) + rho s s^T, expanded.
      h_inv.noalias() += (rho * rho * yhy + rho) * (s * s.transpose());
      h_inv.noalias() -= rho * (hy * s.transpose() + s * hy.transpose());
      identity = false;
    } else {
      ++r.skipped_updates;
    }

    r.x = std::move(x_next);
    r.value = ls.value;
    g = std::move(g_next);
    r.grad_norm = g.norm();
    if (options.record_history) r.history.push_back(r.value);
  }
  if (r.grad_norm <= r.grad_tol) {
    r.converged = true;
    r.status = BfgsStatus::converged;
  } else {
    r.status = BfgsStatus::max_iterations;
  }
  return r;
}

}  // namespace levi::optim
