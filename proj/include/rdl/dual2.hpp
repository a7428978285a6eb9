#pragma once

#include <Eigen/Dense>
#include <cmath>

namespace rdl {

/// Forward-mode scalar carrying value, gradient and dense Hessian w.r.t. N
/// seed variables. Used for small energy patches where hand derivatives are
/// error-prone (drag, per-contact terms).
template <int N>
struct Dual2 {
  double v = 0;
  Eigen::Matrix<double, N, 1> g = Eigen::Matrix<double, N, 1>::Zero();
  Eigen::Matrix<double, N, N> h = Eigen::Matrix<double, N, N>::Zero();

  Dual2() = default;
  Dual2(double value) : v(value) {}

  static Dual2 variable(double value, int idx) {
    Dual2 d(value);
    d.g[idx] = 1.0;
    return d;
  }

  Dual2 operator-() const {
    Dual2 r;
    r.v = -v;
    r.g = -g;
    r.h = -h;
    return r;
  }
  Dual2 operator+(const Dual2& o) const {
    Dual2 r;
    r.v = v + o.v;
    r.g = g + o.g;
    r.h = h + o.h;
    return r;
  }
  Dual2 operator-(const Dual2& o) const {
    Dual2 r;
    r.v = v - o.v;
    r.g = g - o.g;
    r.h = h - o.h;
    return r;
  }
  Dual2 operator*(const Dual2& o) const {
    Dual2 r;
    r.v = v * o.v;
    r.g = g * o.v + o.g * v;
    r.h = h * o.v + o.h * v + g * o.g.transpose() + o.g * g.transpose();
    return r;
  }
  Dual2 operator/(const Dual2& o) const { return *this * o.inverse(); }

  Dual2& operator+=(const Dual2& o) { return *this = *this + o; }
  Dual2& operator-=(const Dual2& o) { return *this = *this - o; }
  Dual2& operator*=(const Dual2& o) { return *this = *this * o; }
  Dual2& operator/=(const Dual2& o) { return *this = *this / o; }

  /// Chain rule for a scalar map f with derivatives f', f'' at v.
  Dual2 compose(double fv, double fp, double fpp) const {
    Dual2 r;
    r.v = fv;
    r.g = fp * g;
    r.h = fp * h + fpp * (g * g.transpose());
    return r;
  }

  Dual2 inverse() const {
    double iv = 1.0 / v;
    return compose(iv, -iv * iv, 2.0 * iv * iv * iv);
  }
};

template <int N>
Dual2<N> operator+(double a, const Dual2<N>& b) { return Dual2<N>(a) + b; }
template <int N>
Dual2<N> operator-(double a, const Dual2<N>& b) { return Dual2<N>(a) - b; }
template <int N>
Dual2<N> operator*(double a, const Dual2<N>& b) { return Dual2<N>(a) * b; }
template <int N>
Dual2<N> operator/(double a, const Dual2<N>& b) { return Dual2<N>(a) / b; }

template <int N>
Dual2<N> exp(const Dual2<N>& x) {
  double e = std::exp(x.v);
  return x.compose(e, e, e);
}
template <int N>
Dual2<N> log(const Dual2<N>& x) {
  return x.compose(std::log(x.v), 1.0 / x.v, -1.0 / (x.v * x.v));
}
template <int N>
Dual2<N> sqrt(const Dual2<N>& x) {
  double s = std::sqrt(x.v);
  return x.compose(s, 0.5 / s, -0.25 / (s * s * s));
}
template <int N>
Dual2<N> sin(const Dual2<N>& x) {
  return x.compose(std::sin(x.v), std::cos(x.v), -std::sin(x.v));
}
template <int N>
Dual2<N> cos(const Dual2<N>& x) {
  return x.compose(std::cos(x.v), -std::sin(x.v), -std::cos(x.v));
}

/// max(x, 0) with one-sided derivatives; the kink maps to zero like the
/// analytic subgradient choice used throughout the energies.
template <int N>
Dual2<N> relu(const Dual2<N>& x) {
  return x.v > 0 ? x : Dual2<N>(0.0);
}

}  // namespace rdl
