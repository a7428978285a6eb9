#include "rdl/nnls.hpp"

#include <limits>
#include <vector>

namespace rdl {

Eigen::VectorXd solveNnlsGram(const Eigen::MatrixXd& G, const Eigen::VectorXd& c,
                              int max_iter, double tol) {
  const int n = static_cast<int>(G.cols());
  if (max_iter <= 0) max_iter = 3 * n + 30;
  const double scale = 1.0 + c.cwiseAbs().maxCoeff();

  Eigen::VectorXd x = Eigen::VectorXd::Zero(n);
  std::vector<bool> passive(n, false);
  Eigen::VectorXd w = c;  // gradient of 1/2||Ax-b||^2 is Gx - c; w = -grad

  auto solvePassive = [&](const std::vector<bool>& set) {
    std::vector<int> idx;
    for (int i = 0; i < n; ++i)
      if (set[i]) idx.push_back(i);
    const int k = static_cast<int>(idx.size());
    Eigen::MatrixXd Gp(k, k);
    Eigen::VectorXd cp(k);
    for (int a = 0; a < k; ++a) {
      cp[a] = c[idx[a]];
      for (int b = 0; b < k; ++b) Gp(a, b) = G(idx[a], idx[b]);
    }
    Eigen::VectorXd zp = Gp.ldlt().solve(cp);
    Eigen::VectorXd z = Eigen::VectorXd::Zero(n);
    for (int a = 0; a < k; ++a) z[idx[a]] = zp[a];
    return z;
  };

  for (int outer = 0; outer < max_iter; ++outer) {
    int best = -1;
    double best_w = tol * scale;
    for (int i = 0; i < n; ++i)
      if (!passive[i] && w[i] > best_w) {
        best_w = w[i];
        best = i;
      }
    if (best < 0) break;
    passive[best] = true;

    Eigen::VectorXd z = solvePassive(passive);
    // inner loop: back off along x -> z until the passive solve is feasible
    for (int inner = 0; inner < max_iter; ++inner) {
      double min_z = std::numeric_limits<double>::infinity();
      for (int i = 0; i < n; ++i)
        if (passive[i]) min_z = std::min(min_z, z[i]);
      if (min_z > 0) break;

      double alpha = std::numeric_limits<double>::infinity();
      for (int i = 0; i < n; ++i)
        if (passive[i] && z[i] <= 0)
          alpha = std::min(alpha, x[i] / (x[i] - z[i]));
      x += alpha * (z - x);
      for (int i = 0; i < n; ++i)
        if (passive[i] && x[i] <= tol) {
          x[i] = 0;
          passive[i] = false;
        }
      z = solvePassive(passive);
    }
    x = z;
    w = c - G * x;
  }
  return x.cwiseMax(0.0);
}

Eigen::VectorXd solveNnls(const Eigen::MatrixXd& A, const Eigen::VectorXd& b,
                          int max_iter, double tol) {
  return solveNnlsGram(A.transpose() * A, A.transpose() * b, max_iter, tol);
}

}  // namespace rdl
