#pragma once

#include <Eigen/Dense>
#include <memory>
#include <string>
#include <vector>

#include "rdl/mesh.hpp"
#include "rdl/reduced_model.hpp"

namespace rdl {

enum class EnvType { Ground, Fluid };

/// Static analytic obstacle; the field samples signed distances from these.
/// Distances are positive OUTSIDE obstacles.
struct Obstacle {
  std::string kind;        // "half_plane" | "box"
  Eigen::VectorXd normal;  // half-plane: dist = normal . p - offset (unit normal
  double offset = 0;       // points away from the solid)
  Eigen::VectorXd lo, hi;  // box corners
};

double obstacleDistance(const Obstacle& ob, const Eigen::VectorXd& p);
double obstaclesDistance(const std::vector<Obstacle>& obs, const Eigen::VectorXd& p);

struct FieldQuery {
  double dist = 0;
  Eigen::VectorXd grad;
  Eigen::MatrixXd hess;
  bool clamped = false;  // query point was outside the grid bounds
};

struct EnvironmentError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Regular-grid signed distance field with per-axis Catmull-Rom (C1)
/// interpolation. Immutable after build.
struct EnvironmentField {
  EnvType env_type = EnvType::Ground;
  double mu = 0.7;
  double c_drag = 0;
  Eigen::VectorXd fluid_velocity;  // dim, rest velocity of the medium

  int dim = 2;
  Eigen::VectorXd lo, hi;   // grid bounds
  Eigen::VectorXi cells;    // cells per axis (nodes = cells + 1)
  double h_grid = 0;        // max cell edge
  Eigen::VectorXd values;   // node-ordered, x fastest

  FieldQuery query(const Eigen::VectorXd& p, int order = 2) const;
};

/// Samples the obstacle union onto a grid. `resolution` is cells per axis
/// (>= 2 each). Bounds should enclose the workspace with margin.
std::shared_ptr<EnvironmentField> buildField(const std::vector<Obstacle>& obstacles,
                                             const Eigen::VectorXd& lo,
                                             const Eigen::VectorXd& hi,
                                             const Eigen::VectorXi& resolution,
                                             EnvType env_type);

struct SelfPair {
  int a = 0, b = 0;          // a < b
  Eigen::VectorXd direction;  // unit separation direction d^ab at eta*u
};

struct CollisionReport {
  std::vector<SelfPair> self_pairs;
  double eta = 1.0;  // largest scale in (0,1] with no self-collisions
};

/// Vertex-vertex self-collision detection in the local (u-only) frame with a
/// BVH broad phase; pairs sharing an element are excluded. Contact radius is
/// 0.3 * l. eta is found by 20-iteration bisection on the scale of u.
CollisionReport detectSelfCollisions(const RsModel& model, const VolumetricMesh& mesh,
                                     const Eigen::VectorXd& u);

}  // namespace rdl
