#include "rdl/rotation.hpp"

#include <cmath>

namespace rdl {

Eigen::Matrix3d crossMatrix(const Eigen::Vector3d& v) {
  Eigen::Matrix3d m;
  m << 0, -v.z(), v.y(), v.z(), 0, -v.x(), -v.y(), v.x(), 0;
  return m;
}

namespace {

constexpr double kSeriesThreshold = 1e-4;

// sin(t)/t
double coefA(double t) {
  if (t < kSeriesThreshold) return 1.0 - t * t / 6.0 + t * t * t * t / 120.0;
  return std::sin(t) / t;
}
// (1-cos(t))/t^2
double coefB(double t) {
  if (t < kSeriesThreshold) return 0.5 - t * t / 24.0 + t * t * t * t / 720.0;
  return (1.0 - std::cos(t)) / (t * t);
}
// (t-sin(t))/t
double coefC1(double t) {
  if (t < kSeriesThreshold) return t * t / 6.0 - t * t * t * t / 120.0;
  return (t - std::sin(t)) / t;
}
// (1-cos(t))/t
double coefC2(double t) {
  if (t < kSeriesThreshold) return t / 2.0 - t * t * t / 24.0;
  return (1.0 - std::cos(t)) / t;
}
// (t-sin(t))/t^2
double coefD1(double t) {
  if (t < kSeriesThreshold) return t / 6.0 - t * t * t / 120.0;
  return (t - std::sin(t)) / (t * t);
}
// (sin(t)-t*cos(t))/t^2
double coefD2(double t) {
  if (t < kSeriesThreshold) return t / 3.0 - t * t * t / 30.0;
  return (std::sin(t) - t * std::cos(t)) / (t * t);
}
// (t*sin(t)+cos(t)-1)/t^2
double coefD4(double t) {
  if (t < kSeriesThreshold) return 0.5 - t * t / 8.0 + t * t * t * t / 144.0;
  return (t * std::sin(t) + std::cos(t) - 1.0) / (t * t);
}

RotationExp expRot2d(double angle, int order) {
  RotationExp out;
  double c = std::cos(angle), s = std::sin(angle);
  out.R.resize(2, 2);
  out.R << c, -s, s, c;
  if (order >= 1) {
    Eigen::MatrixXd d(2, 2);
    d << -s, -c, c, -s;
    out.dR = {d};
  }
  if (order >= 2) out.ddR = {{-out.R}};
  return out;
}

RotationExp expRot3d(const Eigen::Vector3d& w, int order) {
  RotationExp out;
  const double theta = w.norm();
  const Eigen::Matrix3d wx = crossMatrix(w);
  out.R = Eigen::Matrix3d::Identity() + coefA(theta) * wx +
          coefB(theta) * wx * wx;
  if (order < 1) return out;

  // unit axis; the exact theta=0 limit drops every axis-dependent term
  Eigen::Vector3d wb = theta > 0 ? Eigen::Vector3d(w / theta) : Eigen::Vector3d::Zero();
  const Eigen::Matrix3d wbx = crossMatrix(wb);
  const double c1 = coefC1(theta), c2 = coefC2(theta), a = coefA(theta);

  std::vector<Eigen::Vector3d> v(3);
  for (int i = 0; i < 3; ++i) {
    Eigen::Vector3d ei = Eigen::Vector3d::Unit(i);
    v[i] = c1 * wb[i] * wb + c2 * wbx * ei + a * ei;
  }
  out.dR.resize(3);
  for (int i = 0; i < 3; ++i) out.dR[i] = crossMatrix(v[i]) * out.R;
  if (order < 2) return out;

  const double d1 = coefD1(theta), d2 = coefD2(theta), d3 = coefB(theta),
               d4 = coefD4(theta);
  out.ddR.assign(3, std::vector<Eigen::MatrixXd>(3));
  for (int i = 0; i < 3; ++i) {
    Eigen::Vector3d ei = Eigen::Vector3d::Unit(i);
    for (int j = 0; j < 3; ++j) {
      Eigen::Vector3d ej = Eigen::Vector3d::Unit(j);
      double dij = (i == j) ? 1.0 : 0.0;
      Eigen::Vector3d dv = d1 * (ej * wb[i] + wb * dij - 2.0 * wb * wb[i] * wb[j]) +
                           d2 * wb * wb[i] * wb[j] +
                           d3 * crossMatrix(ej - wb[j] * wb) * ei +
                           d4 * wbx * ei * wb[j] - d2 * ei * wb[j];
      out.ddR[i][j] = crossMatrix(dv) * out.R + crossMatrix(v[i]) * out.dR[j];
    }
  }
  return out;
}

}  // namespace

RotationExp expRot(int dim, const Eigen::VectorXd& w, int order) {
  if (dim == 2) return expRot2d(w[0], order);
  return expRot3d(Eigen::Vector3d(w), order);
}

}  // namespace rdl
