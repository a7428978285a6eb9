#include "rdl/dmp.hpp"

#include <cmath>
#include <random>

#include "rdl/lbfgs.hpp"

namespace rdl {

bool DmpWeights::finite() const {
  return std::isfinite(tau) && alpha.allFinite() && beta.allFinite() && mu.allFinite();
}

double dmpEval(const DmpWeights& w, int channel, double t) {
  double out = 0;
  for (int n = 0; n < w.neurons; ++n) {
    double a = w.alpha(channel, n), b = w.beta(channel, n), m = w.mu(channel, n);
    if (w.kind == DmpKind::Periodic)
      out += a * std::exp(b * b * std::cos(w.tau * t - m));
    else {
      double z = b * t - m;
      out += a * std::exp(-z * z) * t;
    }
  }
  return out;
}

Eigen::MatrixXd dmpEvalAll(const DmpWeights& w, const Eigen::VectorXd& times) {
  Eigen::MatrixXd out(times.size(), w.channels());
  for (int k = 0; k < times.size(); ++k)
    for (int j = 0; j < w.channels(); ++j) out(k, j) = dmpEval(w, j, times[k]);
  return out;
}

DmpChannelGrad dmpEvalGrad(const DmpWeights& w, int channel, double t) {
  DmpChannelGrad g;
  g.d_alpha = Eigen::VectorXd::Zero(w.neurons);
  g.d_beta = Eigen::VectorXd::Zero(w.neurons);
  g.d_mu = Eigen::VectorXd::Zero(w.neurons);
  for (int n = 0; n < w.neurons; ++n) {
    double a = w.alpha(channel, n), b = w.beta(channel, n), m = w.mu(channel, n);
    if (w.kind == DmpKind::Periodic) {
      double th = w.tau * t - m;
      double e = std::exp(b * b * std::cos(th));
      g.value += a * e;
      g.d_alpha[n] = e;
      g.d_beta[n] = a * e * 2 * b * std::cos(th);
      g.d_mu[n] = a * e * b * b * std::sin(th);
      g.d_tau += -a * e * b * b * std::sin(th) * t;
    } else {
      double z = b * t - m;
      double e = std::exp(-z * z) * t;
      g.value += a * e;
      g.d_alpha[n] = e;
      g.d_beta[n] = a * e * (-2 * z * t);
      g.d_mu[n] = a * e * (2 * z);
    }
  }
  return g;
}

DmpWeights initWeights(DmpKind kind, int channels, int neurons, double tau_guess,
                       unsigned seed) {
  DmpWeights w;
  w.kind = kind;
  w.neurons = neurons;
  w.tau = tau_guess;
  w.alpha.resize(channels, neurons);
  w.beta.resize(channels, neurons);
  w.mu.resize(channels, neurons);
  std::mt19937 rng(seed);
  std::uniform_real_distribution<double> un(-1e-3, 1e-3);
  for (int j = 0; j < channels; ++j)
    for (int n = 0; n < neurons; ++n) {
      w.alpha(j, n) = un(rng);
      w.beta(j, n) = un(rng);
      w.mu(j, n) = 2.0 * M_PI * (n + 1) / neurons;
    }
  return w;
}

namespace {

Eigen::VectorXd pack(const DmpWeights& w) {
  const int C = w.channels(), N = w.neurons;
  Eigen::VectorXd x(1 + 3 * C * N);
  x[0] = w.tau;
  int k = 1;
  for (int j = 0; j < C; ++j) {
    x.segment(k, N) = w.alpha.row(j);
    x.segment(k + N, N) = w.beta.row(j);
    x.segment(k + 2 * N, N) = w.mu.row(j);
    k += 3 * N;
  }
  return x;
}

void unpack(const Eigen::VectorXd& x, DmpWeights& w) {
  const int C = w.channels(), N = w.neurons;
  w.tau = x[0];
  int k = 1;
  for (int j = 0; j < C; ++j) {
    w.alpha.row(j) = x.segment(k, N);
    w.beta.row(j) = x.segment(k + N, N);
    w.mu.row(j) = x.segment(k + 2 * N, N);
    k += 3 * N;
  }
}

double fitOne(DmpCandidate& cand, const Eigen::MatrixXd& targets, double dt, int iters) {
  DmpWeights& w = cand.weights;
  const int T = static_cast<int>(targets.rows()), C = w.channels(), N = w.neurons;

  auto objective = [&](const Eigen::VectorXd& x, Eigen::VectorXd& grad) {
    DmpWeights trial = w;
    unpack(x, trial);
    grad = Eigen::VectorXd::Zero(x.size());
    if (trial.kind == DmpKind::Periodic && trial.tau <= 1e-8) return 1e30;
    double val = 0;
    for (int k = 0; k < T; ++k) {
      double t = k * dt;
      for (int j = 0; j < C; ++j) {
        DmpChannelGrad g = dmpEvalGrad(trial, j, t);
        double r = g.value - targets(k, j);
        val += 0.5 * r * r;
        grad[0] += r * g.d_tau;
        int base = 1 + 3 * N * j;
        grad.segment(base, N) += r * g.d_alpha;
        grad.segment(base + N, N) += r * g.d_beta;
        grad.segment(base + 2 * N, N) += r * g.d_mu;
      }
    }
    return val;
  };

  LbfgsOptions opts;
  opts.max_iters = iters;
  opts.grad_tol = 1e-14;
  LbfgsResult res = minimizeLbfgs(objective, pack(w), opts);
  unpack(res.x, w);
  cand.residual = 2.0 * res.value / (T * C);
  return cand.residual;
}

}  // namespace

CandidateSet initCandidates(DmpKind kind, int channels, int neurons, unsigned seed) {
  CandidateSet set;
  set.kind = kind;
  set.channels = channels;
  set.neurons = neurons;
  set.seed = seed;
  for (int i = 0; i < 25; ++i) {
    double period = 0.2 * (i + 1);  // seconds
    double tau = 2.0 * M_PI / period;
    DmpCandidate c;
    c.weights = initWeights(kind, channels, neurons, tau, seed + 1000 * i);
    set.candidates.push_back(std::move(c));
  }
  return set;
}

int fitCandidates(CandidateSet& set, const Eigen::MatrixXd& targets, double dt,
                  int iters) {
  if (targets.rows() < 3) throw DmpError("dmp fit needs at least 3 samples");
  if (set.candidates.empty()) throw DmpError("empty candidate set");
  set.reinitialized = false;
  ++set.rounds;

  for (auto& c : set.candidates) fitOne(c, targets, dt, iters);

  bool any_finite = false;
  for (auto& c : set.candidates)
    if (c.weights.finite() && std::isfinite(c.residual)) any_finite = true;
  if (!any_finite) {
    CandidateSet fresh = initCandidates(set.kind, set.channels, set.neurons,
                                        set.seed + 7919 * set.rounds);
    set.candidates = std::move(fresh.candidates);
    set.reinitialized = true;
    for (auto& c : set.candidates) fitOne(c, targets, dt, iters);
  }

  std::stable_sort(set.candidates.begin(), set.candidates.end(),
                   [](const DmpCandidate& a, const DmpCandidate& b) {
                     return a.residual < b.residual;
                   });

  // near-duplicate periods collapse onto the better fit
  std::vector<DmpCandidate> kept;
  for (auto& c : set.candidates) {
    bool dup = false;
    if (set.kind == DmpKind::Periodic)
      for (const auto& k : kept)
        if (std::abs(k.weights.tau - c.weights.tau) / std::abs(k.weights.tau) <
            set.merge_tol) {
          dup = true;
          break;
        }
    if (!dup) kept.push_back(std::move(c));
  }
  set.candidates = std::move(kept);

  set.best = 0;  // sorted ascending by residual
  for (int i = 0; i < static_cast<int>(set.candidates.size()); ++i)
    set.candidates[i].since_best = (i == set.best) ? 0 : set.candidates[i].since_best + 1;
  std::erase_if(set.candidates,
                [&](const DmpCandidate& c) { return c.since_best >= 100; });
  return set.best;
}

void shareRhythm(std::vector<DmpWeights>& tasks) {
  if (tasks.size() < 2) return;
  const DmpWeights& ref = tasks.front();
  for (size_t i = 1; i < tasks.size(); ++i) {
    if (tasks[i].kind != ref.kind) throw DmpError("rhythm sharing: kind mismatch");
    if (tasks[i].neurons != ref.neurons)
      throw DmpError("rhythm sharing: neuron count mismatch");
    tasks[i].tau = ref.tau;
    for (int j = 0; j < tasks[i].channels(); ++j)
      tasks[i].mu.row(j) = ref.mu.row(std::min(j, ref.channels() - 1));
  }
}

nlohmann::json dmpToJson(const DmpWeights& w) {
  nlohmann::json j;
  j["kind"] = (w.kind == DmpKind::Periodic) ? "periodic" : "non_periodic";
  j["neurons"] = w.neurons;
  j["tau"] = w.tau;
  auto mat = [](const Eigen::MatrixXd& m) {
    std::vector<std::vector<double>> rows;
    for (int i = 0; i < m.rows(); ++i)
      rows.emplace_back(m.row(i).begin(), m.row(i).end());
    return rows;
  };
  j["alpha"] = mat(w.alpha);
  j["beta"] = mat(w.beta);
  j["mu"] = mat(w.mu);
  return j;
}

DmpWeights dmpFromJson(const nlohmann::json& j) {
  DmpWeights w;
  std::string kind = j.at("kind");
  if (kind == "periodic")
    w.kind = DmpKind::Periodic;
  else if (kind == "non_periodic")
    w.kind = DmpKind::NonPeriodic;
  else
    throw DmpError("unknown dmp kind: " + kind);
  w.neurons = j.at("neurons");
  w.tau = j.at("tau");
  auto mat = [&](const char* key) {
    auto rows = j.at(key).get<std::vector<std::vector<double>>>();
    Eigen::MatrixXd m(rows.size(), w.neurons);
    for (size_t i = 0; i < rows.size(); ++i)
      for (int n = 0; n < w.neurons; ++n) m(i, n) = rows[i][n];
    return m;
  };
  w.alpha = mat("alpha");
  w.beta = mat("beta");
  w.mu = mat("mu");
  if (!w.finite()) throw DmpError("non-finite dmp weights");
  return w;
}

}  // namespace rdl
