#pragma once

#include <Eigen/Dense>
#include <json.hpp>
#include <stdexcept>
#include <vector>

namespace rdl {

enum class DmpKind { Periodic, NonPeriodic };

struct DmpError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Rhythmic (periodic) or discrete (non-periodic) movement-primitive
/// controller. Each output channel j sums N neurons:
///   periodic:      sum_n alpha_n exp(beta_n^2 cos(tau t - mu_n))
///   non-periodic:  sum_n alpha_n exp(-(beta_n t - mu_n)^2) t
/// tau (rad/s) is shared by all channels of one controller.
struct DmpWeights {
  DmpKind kind = DmpKind::Periodic;
  int neurons = 5;
  double tau = 1.0;
  Eigen::MatrixXd alpha;  // channels x neurons
  Eigen::MatrixXd beta;
  Eigen::MatrixXd mu;

  int channels() const { return static_cast<int>(alpha.rows()); }
  bool finite() const;
};

double dmpEval(const DmpWeights& w, int channel, double t);

/// All channels at all times, T x C.
Eigen::MatrixXd dmpEvalAll(const DmpWeights& w, const Eigen::VectorXd& times);

/// Channel value plus analytic parameter gradient. d_tau is zero for the
/// non-periodic kind (tau does not appear in its formula).
struct DmpChannelGrad {
  double value = 0;
  Eigen::VectorXd d_alpha, d_beta, d_mu;
  double d_tau = 0;
};
DmpChannelGrad dmpEvalGrad(const DmpWeights& w, int channel, double t);

/// mu_n = 2 pi n / N; alpha, beta uniform in (-1e-3, 1e-3) from the seed.
DmpWeights initWeights(DmpKind kind, int channels, int neurons, double tau_guess,
                       unsigned seed);

struct DmpCandidate {
  DmpWeights weights;
  double residual = std::numeric_limits<double>::infinity();  // mean squared misfit
  int since_best = 0;  // consecutive fit rounds without being the best
};

struct CandidateSet {
  std::vector<DmpCandidate> candidates;
  double merge_tol = 0.02;  // relative tau distance treated as duplicates
  int best = 0;
  int rounds = 0;
  bool reinitialized = false;  // set if divergence forced a fresh start
  DmpKind kind = DmpKind::Periodic;
  int channels = 0;
  int neurons = 5;
  unsigned seed = 0;
};

/// Periodic kind: 25 candidates with 2 pi / tau = 0.2, 0.4, ..., 5.0 s.
/// Non-periodic kind: seed-varied small random starts.
CandidateSet initCandidates(DmpKind kind, int channels, int neurons, unsigned seed);

/// One refinement round: LBFGS on the least-squares misfit per candidate,
/// then merge near-duplicate periods, drop long-stale candidates, pick the
/// best. targets is T x C sampled at k * dt. Returns the best index.
int fitCandidates(CandidateSet& set, const Eigen::MatrixXd& targets, double dt,
                  int iters = 1000);

/// Multi-task rhythm sharing: every set adopts the first task's tau and mu;
/// alpha and beta stay untouched.
void shareRhythm(std::vector<DmpWeights>& tasks);

nlohmann::json dmpToJson(const DmpWeights& w);
DmpWeights dmpFromJson(const nlohmann::json& j);

}  // namespace rdl
