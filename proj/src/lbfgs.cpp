#include "rdl/lbfgs.hpp"

#include <cmath>
#include <deque>

namespace rdl {

namespace {

struct Probe {
  double a, f, d;  // step, value, directional derivative
};

// cubic minimizer of the interpolant through two (step, value, slope) probes
double cubicMin(const Probe& lo, const Probe& hi) {
  double d1 = lo.d + hi.d - 3 * (lo.f - hi.f) / (lo.a - hi.a);
  double disc = d1 * d1 - lo.d * hi.d;
  if (disc < 0) return 0.5 * (lo.a + hi.a);
  double d2 = std::sqrt(disc) * (hi.a > lo.a ? 1 : -1);
  double a = hi.a - (hi.a - lo.a) * (hi.d + d2 - d1) / (hi.d - lo.d + 2 * d2);
  double amin = std::min(lo.a, hi.a), amax = std::max(lo.a, hi.a);
  double margin = 0.1 * (amax - amin);
  if (!std::isfinite(a) || a < amin + margin || a > amax - margin)
    return 0.5 * (lo.a + hi.a);
  return a;
}

}  // namespace

LbfgsResult minimizeLbfgs(
    const std::function<double(const Eigen::VectorXd&, Eigen::VectorXd&)>& f,
    const Eigen::VectorXd& x0, const LbfgsOptions& opts) {
  const int n = static_cast<int>(x0.size());
  LbfgsResult res;
  res.x = x0;

  Eigen::VectorXd g(n), g_new(n), x_new(n);
  double fx = f(res.x, g);

  std::deque<Eigen::VectorXd> s_hist, y_hist;
  std::deque<double> rho_hist;

  auto wolfe = [&](const Eigen::VectorXd& x, const Eigen::VectorXd& dir, double f0,
                   double d0, double a_init, double& f_out, Eigen::VectorXd& x_out,
                   Eigen::VectorXd& g_out) -> bool {
    Probe lo{0.0, f0, d0};
    double a = a_init, a_prev = 0.0, f_prev = f0, d_prev = d0;
    bool bracketed = false;
    Probe hi{};
    for (int iter = 0; iter < 30; ++iter) {
      if (bracketed) a = cubicMin(lo, hi);
      x_out = x + a * dir;
      double fa = f(x_out, g_out);
      double da = g_out.dot(dir);
      bool armijo = std::isfinite(fa) && fa <= f0 + opts.c1 * a * d0;
      if (armijo && std::abs(da) <= -opts.c2 * d0) {
        f_out = fa;
        return true;
      }
      if (!bracketed) {
        if (!armijo || fa >= f_prev) {
          lo = {a_prev, f_prev, d_prev};
          hi = {a, fa, da};
          bracketed = true;
        } else if (da >= 0) {
          lo = {a, fa, da};
          hi = {a_prev, f_prev, d_prev};
          bracketed = true;
        } else {
          a_prev = a;
          f_prev = fa;
          d_prev = da;
          a *= 2.0;
        }
      } else {
        if (!armijo || fa >= lo.f) {
          hi = {a, fa, da};
        } else {
          if (da * (hi.a - lo.a) >= 0) hi = lo;
          lo = {a, fa, da};
        }
        if (std::abs(hi.a - lo.a) < 1e-16 * std::max(1.0, std::abs(lo.a))) break;
      }
    }
    // fall back to the best sufficient-decrease point seen, if any
    if (bracketed && lo.a > 0 && lo.f < f0) {
      x_out = x + lo.a * dir;
      f_out = f(x_out, g_out);
      return true;
    }
    return false;
  };

  for (res.iters = 0; res.iters < opts.max_iters; ++res.iters) {
    res.grad_norm = g.lpNorm<Eigen::Infinity>();
    if (res.grad_norm <= opts.grad_tol * std::max(1.0, std::abs(fx))) {
      res.converged = true;
      break;
    }

    // two-loop recursion
    Eigen::VectorXd q = g;
    const int m = static_cast<int>(s_hist.size());
    Eigen::VectorXd alpha(m);
    for (int i = m - 1; i >= 0; --i) {
      alpha[i] = rho_hist[i] * s_hist[i].dot(q);
      q -= alpha[i] * y_hist[i];
    }
    if (m > 0) q *= s_hist[m - 1].dot(y_hist[m - 1]) / y_hist[m - 1].squaredNorm();
    for (int i = 0; i < m; ++i) {
      double beta = rho_hist[i] * y_hist[i].dot(q);
      q += (alpha[i] - beta) * s_hist[i];
    }
    Eigen::VectorXd dir = -q;

    double d0 = g.dot(dir);
    if (d0 >= 0) {  // safeguard: reset to steepest descent
      dir = -g;
      d0 = g.dot(dir);
      s_hist.clear();
      y_hist.clear();
      rho_hist.clear();
    }

    double a_init = (m == 0) ? std::min(1.0, 1.0 / std::max(res.grad_norm, 1e-12)) : 1.0;
    double f_new;
    if (!wolfe(res.x, dir, fx, d0, a_init, f_new, x_new, g_new)) break;

    Eigen::VectorXd s = x_new - res.x;
    Eigen::VectorXd y = g_new - g;
    double sy = s.dot(y);
    if (sy > 1e-12 * s.norm() * y.norm()) {
      s_hist.push_back(s);
      y_hist.push_back(y);
      rho_hist.push_back(1.0 / sy);
      if (static_cast<int>(s_hist.size()) > opts.memory) {
        s_hist.pop_front();
        y_hist.pop_front();
        rho_hist.pop_front();
      }
    }
    res.x = x_new;
    fx = f_new;
    g = g_new;
  }
  res.value = fx;
  res.grad_norm = g.lpNorm<Eigen::Infinity>();
  return res;
}

}  // namespace rdl
