#pragma once

#include <Eigen/Dense>
#include <functional>

namespace rdl {

struct LbfgsOptions {
  int max_iters = 1000;
  int memory = 10;
  double grad_tol = 1e-8;  // on ||g||_inf relative to max(1, |f|)
  double c1 = 1e-4;        // strong Wolfe sufficient decrease
  double c2 = 0.9;         // strong Wolfe curvature
};

struct LbfgsResult {
  Eigen::VectorXd x;
  double value = 0;
  double grad_norm = 0;
  int iters = 0;
  bool converged = false;
};

/// Minimizes f(x, grad_out) with limited-memory BFGS and a strong-Wolfe
/// line search. The objective must be finite at x0.
LbfgsResult minimizeLbfgs(
    const std::function<double(const Eigen::VectorXd&, Eigen::VectorXd&)>& f,
    const Eigen::VectorXd& x0, const LbfgsOptions& opts = {});

}  // namespace rdl
