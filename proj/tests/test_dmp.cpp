#include <doctest.h>

#include <random>

#include "rdl/dmp.hpp"
#include "rdl/dual2.hpp"
#include "rdl/lbfgs.hpp"

using namespace rdl;

namespace {

DmpWeights knownPeriodic() {
  DmpWeights w = initWeights(DmpKind::Periodic, 1, 5, 2.0 * M_PI, 0);
  w.alpha.row(0) << 0.4, -0.3, 0.25, 0.15, -0.2;
  w.beta.row(0) << 0.9, 0.5, -0.7, 0.3, 0.6;
  return w;
}

Eigen::VectorXd times(int T, double dt) {
  Eigen::VectorXd t(T);
  for (int k = 0; k < T; ++k) t[k] = k * dt;
  return t;
}

}  // namespace

TEST_CASE("single neuron with beta = 0 outputs a constant") {
  DmpWeights w = initWeights(DmpKind::Periodic, 1, 1, 3.0, 0);
  w.alpha(0, 0) = 1.0;
  w.beta(0, 0) = 0.0;
  for (double t : {0.0, 0.37, 2.9, 11.0})
    CHECK(dmpEval(w, 0, t) == doctest::Approx(1.0).epsilon(1e-14));
}

TEST_CASE("periodic output repeats with period 2 pi / tau") {
  DmpWeights w = knownPeriodic();
  double period = 2.0 * M_PI / w.tau;
  for (double t : {0.0, 0.21, 0.73, 1.6})
    CHECK(dmpEval(w, 0, t) == doctest::Approx(dmpEval(w, 0, t + period)).epsilon(1e-12));
}

TEST_CASE("non-periodic output vanishes at t = 0") {
  DmpWeights w = initWeights(DmpKind::NonPeriodic, 2, 5, 1.0, 3);
  w.alpha.setConstant(0.7);
  w.beta.setConstant(1.3);
  CHECK(dmpEval(w, 0, 0.0) == 0.0);
  CHECK(dmpEval(w, 1, 0.0) == 0.0);
}

TEST_CASE("weight initialization is seeded and uniformly phased") {
  DmpWeights a = initWeights(DmpKind::Periodic, 2, 5, 4.0, 17);
  DmpWeights b = initWeights(DmpKind::Periodic, 2, 5, 4.0, 17);
  CHECK(a.alpha == b.alpha);
  CHECK(a.beta == b.beta);
  CHECK(a.mu == b.mu);
  for (int n = 0; n < 5; ++n)
    CHECK(a.mu(0, n) == doctest::Approx(2.0 * M_PI * (n + 1) / 5.0));
  CHECK(a.alpha.cwiseAbs().maxCoeff() <= 1e-3);
  CHECK(a.beta.cwiseAbs().maxCoeff() <= 1e-3);
  CHECK(a.alpha.cwiseAbs().minCoeff() > 0);
}

TEST_CASE("parameter gradients match finite differences for both kinds") {
  for (DmpKind kind : {DmpKind::Periodic, DmpKind::NonPeriodic}) {
    DmpWeights w = initWeights(kind, 1, 4, 5.1, 9);
    std::mt19937 rng(21);
    std::uniform_real_distribution<double> un(-0.8, 0.8);
    for (int n = 0; n < 4; ++n) {
      w.alpha(0, n) = un(rng);
      w.beta(0, n) = un(rng);
      w.mu(0, n) = un(rng) + 1.0;
    }
    const double t = 0.63, eps = 1e-6;
    DmpChannelGrad g = dmpEvalGrad(w, 0, t);
    CHECK(g.value == doctest::Approx(dmpEval(w, 0, t)).epsilon(1e-14));

    auto fd = [&](double* p) {
      double saved = *p;
      *p = saved + eps;
      double hi = dmpEval(w, 0, t);
      *p = saved - eps;
      double lo = dmpEval(w, 0, t);
      *p = saved;
      return (hi - lo) / (2 * eps);
    };
    for (int n = 0; n < 4; ++n) {
      CHECK(g.d_alpha[n] == doctest::Approx(fd(&w.alpha(0, n))).epsilon(1e-5));
      CHECK(g.d_beta[n] == doctest::Approx(fd(&w.beta(0, n))).epsilon(1e-5).scale(1.0));
      CHECK(g.d_mu[n] == doctest::Approx(fd(&w.mu(0, n))).epsilon(1e-5).scale(1.0));
    }
    CHECK(g.d_tau == doctest::Approx(fd(&w.tau)).epsilon(1e-5).scale(1.0));
  }
}

TEST_CASE("fitting recovers a known controller and its period") {
  DmpWeights truth = knownPeriodic();
  const int T = 60;
  const double dt = 0.05;
  Eigen::MatrixXd targets = dmpEvalAll(truth, times(T, dt));

  CandidateSet set = initCandidates(DmpKind::Periodic, 1, 5, 1);
  int best = 0;
  double prev = std::numeric_limits<double>::infinity();
  for (int round = 0; round < 3; ++round) {
    best = fitCandidates(set, targets, dt);
    CHECK(set.candidates[best].residual <= prev + 1e-12);
    prev = set.candidates[best].residual;
    if (prev < 1e-8) break;
  }
  CHECK(set.candidates[best].residual < 1e-8);
  double period = 2.0 * M_PI / set.candidates[best].weights.tau;
  CHECK(period == doctest::Approx(1.0).epsilon(0.01));
}

TEST_CASE("fitting a pure sinusoid finds its period within 10 percent") {
  const int T = 80;
  const double dt = 0.05;
  Eigen::MatrixXd targets(T, 1);
  for (int k = 0; k < T; ++k) targets(k, 0) = std::sin(2.0 * M_PI * k * dt);

  CandidateSet set = initCandidates(DmpKind::Periodic, 1, 5, 2);
  int best = fitCandidates(set, targets, dt);
  double period = 2.0 * M_PI / set.candidates[best].weights.tau;
  CHECK(period == doctest::Approx(1.0).epsilon(0.1));
  CHECK(set.candidates[best].residual < 1e-5);
}

TEST_CASE("zero target fits to zero residual") {
  Eigen::MatrixXd targets = Eigen::MatrixXd::Zero(20, 2);
  CandidateSet set = initCandidates(DmpKind::Periodic, 2, 5, 5);
  int best = fitCandidates(set, targets, 0.05, 300);
  CHECK(set.candidates[best].residual < 1e-12);
}

TEST_CASE("merging keeps one candidate per period and preserves the best") {
  DmpWeights truth = knownPeriodic();
  Eigen::MatrixXd targets = dmpEvalAll(truth, times(60, 0.05));
  CandidateSet set = initCandidates(DmpKind::Periodic, 1, 5, 1);
  int before = static_cast<int>(set.candidates.size());
  int best = fitCandidates(set, targets, 0.05);
  CHECK(static_cast<int>(set.candidates.size()) <= before);
  CHECK(best == 0);
  for (size_t i = 0; i + 1 < set.candidates.size(); ++i)
    CHECK(set.candidates[i].residual <= set.candidates[i + 1].residual);
  for (size_t i = 1; i < set.candidates.size(); ++i) {
    double ta = set.candidates[0].weights.tau, tb = set.candidates[i].weights.tau;
    CHECK(std::abs(ta - tb) / ta >= set.merge_tol);
  }
}

TEST_CASE("rhythm sharing aligns tau and mu, leaving amplitudes alone") {
  DmpWeights a = initWeights(DmpKind::Periodic, 2, 5, 3.0, 1);
  DmpWeights b = initWeights(DmpKind::Periodic, 2, 5, 7.0, 2);
  b.mu.array() += 0.3;
  Eigen::MatrixXd alpha_b = b.alpha, beta_b = b.beta;
  std::vector<DmpWeights> tasks = {a, b};
  shareRhythm(tasks);
  CHECK(tasks[1].tau == a.tau);
  CHECK(tasks[1].mu == a.mu);
  CHECK(tasks[1].alpha == alpha_b);
  CHECK(tasks[1].beta == beta_b);
  CHECK(tasks[0].tau == a.tau);

  DmpWeights c = initWeights(DmpKind::NonPeriodic, 2, 5, 1.0, 3);
  std::vector<DmpWeights> bad = {a, c};
  CHECK_THROWS_AS(shareRhythm(bad), DmpError);
}

TEST_CASE("weights survive a json round trip") {
  DmpWeights w = knownPeriodic();
  DmpWeights back = dmpFromJson(dmpToJson(w));
  CHECK(back.kind == w.kind);
  CHECK(back.neurons == w.neurons);
  CHECK(back.tau == w.tau);
  CHECK(back.alpha == w.alpha);
  CHECK(back.beta == w.beta);
  CHECK(back.mu == w.mu);
}

TEST_CASE("lbfgs minimizes rosenbrock from a cold start") {
  auto rosen = [](const Eigen::VectorXd& x, Eigen::VectorXd& g) {
    double a = 1 - x[0], b = x[1] - x[0] * x[0];
    g.resize(2);
    g[0] = -2 * a - 400 * x[0] * b;
    g[1] = 200 * b;
    return a * a + 100 * b * b;
  };
  Eigen::VectorXd x0(2);
  x0 << -1.2, 1.0;
  LbfgsResult res = minimizeLbfgs(rosen, x0);
  CHECK(res.converged);
  CHECK(res.x[0] == doctest::Approx(1.0).epsilon(1e-5));
  CHECK(res.x[1] == doctest::Approx(1.0).epsilon(1e-5));
}

TEST_CASE("lbfgs solves an ill-conditioned quadratic to tight tolerance") {
  const int n = 20;
  Eigen::VectorXd d(n);
  for (int i = 0; i < n; ++i) d[i] = std::pow(10.0, 3.0 * i / (n - 1));
  auto quad = [&](const Eigen::VectorXd& x, Eigen::VectorXd& g) {
    g = d.asDiagonal() * x;
    return 0.5 * x.dot(g);
  };
  LbfgsResult res = minimizeLbfgs(quad, Eigen::VectorXd::Ones(n));
  CHECK(res.converged);
  CHECK(res.x.cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("second-order duals match finite differences on a composite") {
  auto expr = [](auto x, auto y) {
    return exp(x * y) + sin(x) / (1.0 + y * y) + sqrt(2.0 + x) * log(3.0 + y);
  };
  const double x0 = 0.4, y0 = -0.7, eps = 1e-5;
  Dual2<2> r = expr(Dual2<2>::variable(x0, 0), Dual2<2>::variable(y0, 1));
  auto f = [&](double x, double y) { return expr(Dual2<2>(x), Dual2<2>(y)).v; };

  CHECK(r.v == doctest::Approx(f(x0, y0)).epsilon(1e-14));
  CHECK(r.g[0] ==
        doctest::Approx((f(x0 + eps, y0) - f(x0 - eps, y0)) / (2 * eps)).epsilon(1e-7));
  CHECK(r.g[1] ==
        doctest::Approx((f(x0, y0 + eps) - f(x0, y0 - eps)) / (2 * eps)).epsilon(1e-7));
  double hxx = (f(x0 + eps, y0) - 2 * f(x0, y0) + f(x0 - eps, y0)) / (eps * eps);
  double hyy = (f(x0, y0 + eps) - 2 * f(x0, y0) + f(x0, y0 - eps)) / (eps * eps);
  double hxy = (f(x0 + eps, y0 + eps) - f(x0 + eps, y0 - eps) - f(x0 - eps, y0 + eps) +
                f(x0 - eps, y0 - eps)) /
               (4 * eps * eps);
  CHECK(r.h(0, 0) == doctest::Approx(hxx).epsilon(1e-4));
  CHECK(r.h(1, 1) == doctest::Approx(hyy).epsilon(1e-4));
  CHECK(r.h(0, 1) == doctest::Approx(hxy).epsilon(1e-4));
  CHECK(r.h(1, 0) == r.h(0, 1));
  CHECK(relu(Dual2<2>::variable(-0.5, 0)).v == 0.0);
  CHECK(relu(Dual2<2>::variable(0.5, 0)).g[0] == 1.0);
}
