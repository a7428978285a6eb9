#pragma once

#include <json.hpp>

#include "rdl/optimizer.hpp"

namespace rdl {

/// Major schema version carried by every file this toolchain writes; readers
/// reject other majors.
inline constexpr int kSchemaVersion = 1;

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Complete description of one synthesis run, resolvable to a LocoProblem.
/// Parsing fills every default, so serializing the parsed spec yields an
/// effective config that reproduces the run exactly.
struct SceneSpec {
  MeshSpec mesh;

  double density = 1.0;
  double young = 1e5;
  double poisson = 0.48;

  std::string variant = "rs";  // rs | lma | stvk
  int r = 4;
  double cubature_tol = 1e-2;       // kinetic cubature training target
  double drag_cubature_tol = 0;     // <= 0 keeps the full surface sum
  int pose_count = 100;             // cubature training poses
  double pose_amplitude = 0.1;
  unsigned pose_seed = 0;

  bool has_env = false;
  std::string env_type = "ground";  // ground | fluid | v-ground
  std::vector<Obstacle> obstacles;
  Eigen::VectorXd env_lo, env_hi;
  Eigen::VectorXi env_res;
  double mu = 0.7;
  Eigen::VectorXd fluid_velocity;

  Eigen::VectorXd gravity;  // resolved default: -9.81 along the last axis
  bool self_collision = false;

  std::vector<TaskObjective> tasks;
  OptimizeOptions opts;
  std::map<std::string, double> weight_overrides;
};

/// Parse and validate; throws ConfigError naming the offending field.
SceneSpec sceneFromJson(const nlohmann::json& j);

/// Ready-to-run problem with its precomputed pieces.
struct BuiltScene {
  SceneSpec spec;
  std::shared_ptr<VolumetricMesh> mesh;
  std::shared_ptr<const FemOperators> fem;
  std::shared_ptr<RsModel> model;
  LocoProblem problem;
  std::vector<std::string> cache_files;  // written or reused this build
};

/// Builds (or loads from content-hash-keyed caches under cache_dir when
/// non-empty) the mesh, reduced model, cubatures, field, and drag model.
BuiltScene buildScene(const SceneSpec& spec, const std::string& cache_dir = "");

/// Effective config: every field explicit, weights resolved against the
/// built scene's element size. Re-parsing it reproduces the run.
nlohmann::json effectiveConfig(const BuiltScene& scene);

/// FNV-1a 64-bit content hash, hex string.
std::string contentHash(const std::string& data);

nlohmann::json trajectoryToJson(const Trajectory& traj);
Trajectory trajectoryFromJson(const nlohmann::json& j);

nlohmann::json historyToJson(const std::vector<HistoryRow>& rows);

void writeJsonFile(const std::string& path, const nlohmann::json& j);
/// Throws ConfigError on parse failure or schema-version mismatch.
nlohmann::json readJsonFile(const std::string& path);

}  // namespace rdl
