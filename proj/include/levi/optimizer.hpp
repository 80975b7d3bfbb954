#pragma once

#include <functional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "levi/common.hpp"

namespace levi::optim {

using Vector = Eigen::VectorXd;
using Objective = std::function<double(const Vector&)>;
using Gradient = std::function<Vector(const Vector&)>;

/// NaN or Inf produced by the objective or its gradient.
class NumericalError : public Error {
 public:
  using Error::Error;
};

struct LineSearchOptions {
  double shrink = 0.8;                 // step multiplier after each rejection
  double sufficient_decrease = 1e-4;   // Armijo constant
  double initial_step = 1.0;
  int max_shrinks = 60;
};

struct LineSearchResult {
  double step = 0.0;
  double value = 0.0;  // f(x + step * d)
  int shrinks = 0;     // rejections before `step`
  bool satisfied = false;
};

/// Backtracking line search: returns the largest step in
/// {initial_step * shrink^n, n = 0..max_shrinks} meeting the sufficient
/// decrease condition. When none does, returns the smallest step tried with
/// `satisfied == false`.
LineSearchResult armijo_backtrack(const Objective& f, const Vector& x, double fx,
                                  const Vector& direction, const Vector& grad,
                                  const LineSearchOptions& options = {});

enum class BfgsStatus { converged, max_iterations, line_search_failed };

std::string to_string(BfgsStatus status);

struct BfgsOptions {
  int max_iter = 20000;
  /// Exit when the gradient 2-norm drops to this value. Non-positive means
  /// 1e-6 * (1 + |f(x0)|).
  double grad_tol = 0.0;
  LineSearchOptions line_search;
  /// Skip the inverse-Hessian update when <y, s> <= eps * |y| |s|.
  double curvature_eps = 1e-12;
  bool record_history = false;
};

struct BfgsResult {
  Vector x;
  double value = 0.0;
  int iterations = 0;
  double grad_norm = 0.0;
  double grad_tol = 0.0;
  bool converged = false;
  BfgsStatus status = BfgsStatus::max_iterations;
  int skipped_updates = 0;
  std::vector<double> history;  // accepted values, starting with f(x0)
};

/// Dense inverse-Hessian BFGS with Armijo backtracking.
BfgsResult bfgs_minimize(const Objective& f, const Gradient& grad, Vector x0,
                         const BfgsOptions& options = {});

}  // namespace levi::optim
