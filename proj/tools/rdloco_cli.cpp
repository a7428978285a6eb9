#include <CLI11.hpp>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "rdl/scene.hpp"
#include "rdl/simulation.hpp"

using namespace rdl;
using nlohmann::json;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitStall = 3;

struct CommonArgs {
  std::string config;
  std::string out = ".";
  std::string solver = "hybrid";
  int seed = -1;
  int max_iters = -1;
  double tol = -1;
  std::string input;      // trajectory file for rollout/track/metrics
  std::string reference;  // reference trajectory for track
};

void addCommon(CLI::App* cmd, CommonArgs& a, bool needs_input) {
  cmd->add_option("--config", a.config, "scene config JSON")->required();
  cmd->add_option("--out", a.out, "output directory");
  cmd->add_option("--solver", a.solver, "trajectory solver")
      ->check(CLI::IsMember({"hybrid", "lbfgs"}));
  cmd->add_option("--seed", a.seed, "override the optimizer seed");
  cmd->add_option("--max-iters", a.max_iters, "override the iteration cap");
  cmd->add_option("--tol", a.tol, "override the gradient tolerance");
  if (needs_input)
    cmd->add_option("--in", a.input, "input trajectory JSON")->required();
}

SceneSpec loadSpec(const CommonArgs& a) {
  SceneSpec spec = sceneFromJson(readJsonFile(a.config));
  if (a.seed >= 0) spec.opts.seed = static_cast<unsigned>(a.seed);
  if (a.max_iters > 0) spec.opts.max_iters = a.max_iters;
  if (a.tol > 0) spec.opts.grad_rel_tol = a.tol;
  return spec;
}

BuiltScene buildAndDump(const CommonArgs& a) {
  std::filesystem::create_directories(a.out);
  BuiltScene scene = buildScene(loadSpec(a), a.out + "/cache");
  writeJsonFile(a.out + "/effective_config.json", effectiveConfig(scene));
  return scene;
}

Eigen::VectorXd scatterForces(const Trajectory& traj, int i, int V, int dim) {
  if (i >= static_cast<int>(traj.active.size()) || traj.active[i].empty())
    return Eigen::VectorXd();
  Eigen::VectorXd f = Eigen::VectorXd::Zero(V * dim);
  for (size_t c = 0; c < traj.active[i].size(); ++c)
    f.segment(traj.active[i][c] * dim, dim) += traj.forces[i].row(c);
  return f;
}

int runPrecompute(const CommonArgs& a) {
  BuiltScene scene = buildAndDump(a);
  json out;
  out["schema_version"] = kSchemaVersion;
  out["cache_files"] = scene.cache_files;
  out["vertices"] = scene.mesh->numVertices();
  out["elements"] = scene.mesh->numElements();
  out["r"] = scene.model->r;
  out["kinetic_cubature_size"] =
      scene.model->kinetic_cubature.items.size();
  out["kinetic_cubature_error"] =
      scene.model->kinetic_cubature.training_error;
  if (scene.problem.drag && !scene.problem.drag->cubature.empty()) {
    out["drag_cubature_size"] = scene.problem.drag->cubature.items.size();
    out["drag_cubature_error"] =
        scene.problem.drag->cubature.training_error;
  }
  writeJsonFile(a.out + "/precompute.json", out);
  std::cout << out.dump(2) << "\n";
  return 0;
}

int runOptimize(const CommonArgs& a) {
  BuiltScene scene = buildAndDump(a);
  const auto t0 = std::chrono::steady_clock::now();
  OptimizerState state = a.solver == "lbfgs"
                             ? optimizeLbfgsReference(scene.problem, scene.spec.opts)
                             : optimize(scene.problem, scene.spec.opts);
  const double wall_ms =
      std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
          .count();

  writeJsonFile(a.out + "/trajectory.json", trajectoryToJson(state.traj));
  {
    std::ofstream csv(a.out + "/history.csv");
    writeHistoryCsv(state.history, csv);
  }
  if (state.traj.dmp) {
    json dj = dmpToJson(*state.traj.dmp);
    dj["schema_version"] = kSchemaVersion;
    writeJsonFile(a.out + "/dmp.json", dj);
  }

  json violation_max;  // null when the trajectory cannot be re-simulated
  try {
    Eigen::VectorXd viol =
        physicsViolation(scene.problem, state.traj, state.c_dmp);
    violation_max = viol.size() ? viol.maxCoeff() : 0.0;
  } catch (const SimError&) {
  }
  json summary;
  summary["schema_version"] = kSchemaVersion;
  summary["solver"] = a.solver;
  summary["seed"] = scene.spec.opts.seed;
  summary["iterations"] = state.iter;
  summary["initial_objective"] = state.initial_value;
  summary["final_objective"] = state.value;
  summary["initial_grad_norm"] = state.initial_grad_norm;
  summary["grad_norm"] = state.grad_norm;
  summary["c_dmp"] = state.c_dmp;
  summary["violation_max"] = violation_max;
  summary["wall_ms"] = wall_ms;
  summary["converged"] = state.converged;
  summary["stalled"] = state.stalled;
  summary["stop_reason"] = state.stop_reason;
  writeJsonFile(a.out + "/summary.json", summary);
  std::cout << summary.dump(2) << "\n";
  return state.stalled ? kExitStall : 0;
}

int runRollout(const CommonArgs& a) {
  BuiltScene scene = buildAndDump(a);
  Trajectory in = trajectoryFromJson(readJsonFile(a.input));
  if (!in.dmp)
    throw ConfigError(a.input + ": dmp: controller weights required for rollout");
  if (in.K() < 2) throw ConfigError(a.input + ": configs: need at least 2 frames");
  Trajectory out = rolloutOpenLoop(scene.problem, *in.dmp, in.configs[0],
                                   in.configs[1], in.K(), in.dt);
  writeJsonFile(a.out + "/rollout.json", trajectoryToJson(out));
  std::cout << "rollout: " << out.K() << " frames -> " << a.out
            << "/rollout.json\n";
  return 0;
}

int runTrack(const CommonArgs& a) {
  BuiltScene scene = buildAndDump(a);
  Trajectory ref = trajectoryFromJson(readJsonFile(a.reference));
  if (ref.K() < 3)
    throw ConfigError(a.reference + ": configs: need at least 3 frames");
  const RsModel& model = *scene.model;
  const int V = scene.mesh->numVertices();
  const int dim = model.dim;

  Trajectory out;
  out.dt = ref.dt;
  out.configs = {ref.configs[0], ref.configs[1]};
  std::vector<double> errors;
  for (int i = 2; i < ref.K(); ++i) {
    ReducedConfig q =
        trackStep(scene.problem, out.configs[i - 2], out.configs[i - 1],
                  ref.configs[i], scatterForces(ref, i, V, dim), ref.dt);
    out.configs.push_back(q);
    Eigen::VectorXd e = reconstruct(model, q) - reconstruct(model, ref.configs[i]);
    errors.push_back(std::sqrt(e.squaredNorm() / V));
  }
  out.active.assign(out.K(), {});
  out.forces.assign(out.K(), Eigen::MatrixXd(0, dim));
  writeJsonFile(a.out + "/tracked.json", trajectoryToJson(out));

  std::ofstream csv(a.out + "/tracking_error.csv");
  csv << "step,error\n";
  double mean = 0;
  for (size_t i = 0; i < errors.size(); ++i) {
    csv << (i + 2) << "," << errors[i] << "\n";
    mean += errors[i];
  }
  mean /= errors.empty() ? 1 : errors.size();
  json summary;
  summary["schema_version"] = kSchemaVersion;
  summary["mean_error"] = mean;
  summary["max_error"] =
      errors.empty() ? 0.0 : *std::max_element(errors.begin(), errors.end());
  writeJsonFile(a.out + "/tracking_summary.json", summary);
  std::cout << summary.dump(2) << "\n";
  return 0;
}

int runMetrics(const CommonArgs& a) {
  BuiltScene scene = buildAndDump(a);
  Trajectory traj = trajectoryFromJson(readJsonFile(a.input));
  Eigen::VectorXd viol = physicsViolation(scene.problem, traj);
  std::ofstream csv(a.out + "/violation.csv");
  csv << "frame,violation\n";
  for (int i = 0; i < viol.size(); ++i) csv << (i + 1) << "," << viol[i] << "\n";
  json summary;
  summary["schema_version"] = kSchemaVersion;
  summary["violation_max"] = viol.size() ? viol.maxCoeff() : 0.0;
  summary["violation_mean"] = viol.size() ? viol.mean() : 0.0;
  writeJsonFile(a.out + "/metrics.json", summary);
  std::cout << summary.dump(2) << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Locomotion synthesis for reduced deformable bodies"};
  app.require_subcommand(1);

  CommonArgs pre, opt, roll, track, met;
  CLI::App* c_pre = app.add_subcommand("precompute", "build and cache the scene");
  addCommon(c_pre, pre, false);
  CLI::App* c_opt = app.add_subcommand("optimize", "synthesize a trajectory");
  addCommon(c_opt, opt, false);
  CLI::App* c_roll = app.add_subcommand("rollout", "open-loop controller playback");
  addCommon(c_roll, roll, true);
  CLI::App* c_track = app.add_subcommand("track", "one-step feedback tracking");
  addCommon(c_track, track, false);
  c_track->add_option("--reference", track.reference, "reference trajectory JSON")
      ->required();
  CLI::App* c_met = app.add_subcommand("metrics", "physics-violation series");
  addCommon(c_met, met, true);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    if (c_pre->parsed()) return runPrecompute(pre);
    if (c_opt->parsed()) return runOptimize(opt);
    if (c_roll->parsed()) return runRollout(roll);
    if (c_track->parsed()) return runTrack(track);
    if (c_met->parsed()) return runMetrics(met);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const InvalidSpecError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const SimError& e) {
    std::cerr << "solver stall: " << e.what() << "\n";
    return kExitStall;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
