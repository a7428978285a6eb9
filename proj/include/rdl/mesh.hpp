#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

namespace rdl {

/// Simplicial volumetric mesh (triangles in 2D, tetrahedra in 3D) with an
/// outward-oriented boundary. All lengths are meters.
struct VolumetricMesh {
  int dim = 2;
  Eigen::MatrixXd vertices;  // V x dim
  Eigen::MatrixXi elements;  // P x (dim+1), positive signed volume
  Eigen::MatrixXi surface;   // S x dim boundary facets, outward oriented
  double rest_volume = 0.0;

  int numVertices() const { return static_cast<int>(vertices.rows()); }
  int numElements() const { return static_cast<int>(elements.rows()); }
  int numSurfacePatches() const { return static_cast<int>(surface.rows()); }
};

/// Procedural shape description. Supported shapes:
///   bar2d   : sx, sy, nx, ny          (rectangle, grid of split quads)
///   ring2d  : r_outer, r_inner, na, nr (annulus)
///   beam3d  : sx, sy, sz, nx, ny, nz  (box, 6 tets per cell)
///   cross3d : arm_len, arm_w, sz, n   (plus-shaped plate, thin in z)
/// `offset` translates the whole mesh after construction.
struct MeshSpec {
  std::string shape = "bar2d";
  double sx = 1.0, sy = 0.2, sz = 0.2;
  double r_outer = 0.5, r_inner = 0.3;
  int nx = 10, ny = 2, nz = 2;
  int na = 16, nr = 2;
  double arm_len = 0.5, arm_w = 0.2;
  Eigen::Vector3d offset = Eigen::Vector3d::Zero();
};

struct InvalidSpecError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

VolumetricMesh buildMesh(const MeshSpec& spec);

/// Throws std::runtime_error on any violated mesh invariant.
void validateMesh(const VolumetricMesh& mesh);

double signedElementVolume(const VolumetricMesh& mesh, int elem);

/// Mass-weighted centroid with uniform density (geometric, volume-weighted).
Eigen::VectorXd meshCentroid(const VolumetricMesh& mesh);

std::string meshToJson(const VolumetricMesh& mesh);
VolumetricMesh meshFromJson(const std::string& text);

}  // namespace rdl
