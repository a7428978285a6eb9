#include "rdl/mesh.hpp"

#include <json.hpp>

#include <map>
#include <set>
#include <stdexcept>

namespace rdl {

double signedElementVolume(const VolumetricMesh& mesh, int elem) {
  const int d = mesh.dim;
  Eigen::MatrixXd Dm(d, d);
  for (int c = 0; c < d; ++c)
    Dm.col(c) = (mesh.vertices.row(mesh.elements(elem, c + 1)) -
                 mesh.vertices.row(mesh.elements(elem, 0)))
                    .transpose();
  double fact = (d == 2) ? 2.0 : 6.0;
  return Dm.determinant() / fact;
}

Eigen::VectorXd meshCentroid(const VolumetricMesh& mesh) {
  Eigen::VectorXd c = Eigen::VectorXd::Zero(mesh.dim);
  double vol = 0.0;
  for (int e = 0; e < mesh.numElements(); ++e) {
    double v = signedElementVolume(mesh, e);
    Eigen::VectorXd ec = Eigen::VectorXd::Zero(mesh.dim);
    for (int k = 0; k <= mesh.dim; ++k)
      ec += mesh.vertices.row(mesh.elements(e, k)).transpose();
    ec /= (mesh.dim + 1);
    c += v * ec;
    vol += v;
  }
  return c / vol;
}

namespace {

// Collect boundary facets: facets referenced by exactly one element,
// oriented so the outward normal points away from the element centroid.
Eigen::MatrixXi extractSurface(const VolumetricMesh& mesh) {
  const int d = mesh.dim;
  std::map<std::vector<int>, std::pair<int, std::vector<int>>> count;
  for (int e = 0; e < mesh.numElements(); ++e) {
    for (int skip = 0; skip <= d; ++skip) {
      std::vector<int> facet;
      for (int k = 0; k <= d; ++k)
        if (k != skip) facet.push_back(mesh.elements(e, k));
      std::vector<int> key = facet;
      std::sort(key.begin(), key.end());
      auto it = count.find(key);
      if (it == count.end())
        count[key] = {e, facet};
      else
        it->second.first = -1;  // interior
    }
  }
  std::vector<std::vector<int>> boundary;
  for (auto& [key, val] : count) {
    if (val.first < 0) continue;
    int e = val.first;
    std::vector<int> facet = val.second;
    // orientation: outward normal test against element centroid
    Eigen::VectorXd ec = Eigen::VectorXd::Zero(d);
    for (int k = 0; k <= d; ++k)
      ec += mesh.vertices.row(mesh.elements(e, k)).transpose();
    ec /= (d + 1);
    Eigen::VectorXd fc = Eigen::VectorXd::Zero(d);
    for (int v : facet) fc += mesh.vertices.row(v).transpose();
    fc /= d;
    Eigen::VectorXd n(d);
    if (d == 2) {
      Eigen::Vector2d t = mesh.vertices.row(facet[1]) - mesh.vertices.row(facet[0]);
      n = Eigen::Vector2d(t.y(), -t.x());
    } else {
      Eigen::Vector3d a = mesh.vertices.row(facet[1]) - mesh.vertices.row(facet[0]);
      Eigen::Vector3d b = mesh.vertices.row(facet[2]) - mesh.vertices.row(facet[0]);
      n = a.cross(b);
    }
    if (n.dot(fc - ec) < 0) std::swap(facet[0], facet[1]);
    boundary.push_back(facet);
  }
  Eigen::MatrixXi surf(static_cast<int>(boundary.size()), d);
  for (int i = 0; i < surf.rows(); ++i)
    for (int k = 0; k < d; ++k) surf(i, k) = boundary[i][k];
  return surf;
}

void finalize(VolumetricMesh& mesh, const Eigen::Vector3d& offset) {
  for (int i = 0; i < mesh.numVertices(); ++i)
    for (int k = 0; k < mesh.dim; ++k) mesh.vertices(i, k) += offset[k];
  mesh.rest_volume = 0.0;
  for (int e = 0; e < mesh.numElements(); ++e)
    mesh.rest_volume += signedElementVolume(mesh, e);
  mesh.surface = extractSurface(mesh);
  validateMesh(mesh);
}

VolumetricMesh buildBar2d(const MeshSpec& s) {
  if (s.sx <= 0 || s.sy <= 0) throw InvalidSpecError("bar2d: dimensions must be positive");
  if (s.nx < 1 || s.ny < 1) throw InvalidSpecError("bar2d: subdivisions must be >= 1");
  VolumetricMesh m;
  m.dim = 2;
  const int nvx = s.nx + 1, nvy = s.ny + 1;
  m.vertices.resize(nvx * nvy, 2);
  for (int j = 0; j < nvy; ++j)
    for (int i = 0; i < nvx; ++i)
      m.vertices.row(j * nvx + i) << s.sx * i / s.nx, s.sy * j / s.ny;
  m.elements.resize(2 * s.nx * s.ny, 3);
  int e = 0;
  for (int j = 0; j < s.ny; ++j)
    for (int i = 0; i < s.nx; ++i) {
      int v00 = j * nvx + i, v10 = v00 + 1, v01 = v00 + nvx, v11 = v01 + 1;
      m.elements.row(e++) << v00, v10, v11;
      m.elements.row(e++) << v00, v11, v01;
    }
  return m;
}

VolumetricMesh buildRing2d(const MeshSpec& s) {
  if (s.r_outer <= 0 || s.r_inner <= 0 || s.r_inner >= s.r_outer)
    throw InvalidSpecError("ring2d: need 0 < r_inner < r_outer");
  if (s.na < 3 || s.nr < 1) throw InvalidSpecError("ring2d: need na >= 3, nr >= 1");
  VolumetricMesh m;
  m.dim = 2;
  const int nvr = s.nr + 1;
  m.vertices.resize(s.na * nvr, 2);
  for (int a = 0; a < s.na; ++a) {
    double ang = 2.0 * M_PI * a / s.na;
    for (int r = 0; r < nvr; ++r) {
      double rad = s.r_inner + (s.r_outer - s.r_inner) * r / s.nr;
      m.vertices.row(a * nvr + r) << rad * std::cos(ang), rad * std::sin(ang);
    }
  }
  m.elements.resize(2 * s.na * s.nr, 3);
  int e = 0;
  for (int a = 0; a < s.na; ++a) {
    int an = (a + 1) % s.na;
    for (int r = 0; r < s.nr; ++r) {
      int v00 = a * nvr + r, v01 = v00 + 1;
      int v10 = an * nvr + r, v11 = v10 + 1;
      m.elements.row(e++) << v00, v11, v10;
      m.elements.row(e++) << v00, v01, v11;
    }
  }
  return m;
}

// 6-tet (Kuhn) subdivision of each grid cell keeps all tets positively
// oriented and conforming across cells.
void emitCellTets(Eigen::MatrixXi& elems, int& e, const int v[8]) {
  static const int tets[6][4] = {{0, 1, 3, 7}, {0, 3, 2, 7}, {0, 2, 6, 7},
                                 {0, 6, 4, 7}, {0, 4, 5, 7}, {0, 5, 1, 7}};
  for (auto& t : tets) {
    elems.row(e++) << v[t[0]], v[t[1]], v[t[2]], v[t[3]];
  }
}

VolumetricMesh buildBeam3d(const MeshSpec& s) {
  if (s.sx <= 0 || s.sy <= 0 || s.sz <= 0)
    throw InvalidSpecError("beam3d: dimensions must be positive");
  if (s.nx < 1 || s.ny < 1 || s.nz < 1)
    throw InvalidSpecError("beam3d: subdivisions must be >= 1");
  VolumetricMesh m;
  m.dim = 3;
  const int nvx = s.nx + 1, nvy = s.ny + 1, nvz = s.nz + 1;
  m.vertices.resize(nvx * nvy * nvz, 3);
  auto vid = [&](int i, int j, int k) { return (k * nvy + j) * nvx + i; };
  for (int k = 0; k < nvz; ++k)
    for (int j = 0; j < nvy; ++j)
      for (int i = 0; i < nvx; ++i)
        m.vertices.row(vid(i, j, k)) << s.sx * i / s.nx, s.sy * j / s.ny, s.sz * k / s.nz;
  m.elements.resize(6 * s.nx * s.ny * s.nz, 4);
  int e = 0;
  for (int k = 0; k < s.nz; ++k)
    for (int j = 0; j < s.ny; ++j)
      for (int i = 0; i < s.nx; ++i) {
        // corner order: bit 0 -> x, bit 1 -> y, bit 2 -> z
        int v[8];
        for (int b = 0; b < 8; ++b)
          v[b] = vid(i + (b & 1), j + ((b >> 1) & 1), k + ((b >> 2) & 1));
        emitCellTets(m.elements, e, v);
      }
  return m;
}

VolumetricMesh buildCross3d(const MeshSpec& s) {
  if (s.arm_len <= 0 || s.arm_w <= 0 || s.sz <= 0)
    throw InvalidSpecError("cross3d: dimensions must be positive");
  if (s.nx < 1 || s.nz < 1) throw InvalidSpecError("cross3d: subdivisions must be >= 1");
  // plus-shaped footprint on a (2*arm_len + arm_w) square, masked grid cells
  const double cell = s.arm_w / s.nx;  // nx cells across the arm width
  const int half = static_cast<int>(std::round(s.arm_len / cell));
  const int n = 2 * half + s.nx;  // cells per side of the bounding square
  const double span = n * cell;
  // cell is inside iff it lies in the middle band along x or along y
  auto inside = [&](int ci, int cj) {
    bool midx = ci >= half && ci < half + s.nx;
    bool midy = cj >= half && cj < half + s.nx;
    return midx || midy;
  };
  VolumetricMesh m;
  m.dim = 3;
  const int nvxy = n + 1, nvz = s.nz + 1;
  std::vector<int> vmap(nvxy * nvxy * nvz, -1);
  std::vector<Eigen::Vector3d> verts;
  auto gid = [&](int i, int j, int k) { return (k * nvxy + j) * nvxy + i; };
  auto getv = [&](int i, int j, int k) {
    int g = gid(i, j, k);
    if (vmap[g] < 0) {
      vmap[g] = static_cast<int>(verts.size());
      verts.emplace_back(span * i / n - span / 2, span * j / n - span / 2,
                         s.sz * k / s.nz);
    }
    return vmap[g];
  };
  std::vector<Eigen::Matrix<int, 1, 4>> elems;
  Eigen::MatrixXi tmp(6, 4);
  for (int k = 0; k < s.nz; ++k)
    for (int j = 0; j < n; ++j)
      for (int i = 0; i < n; ++i) {
        if (!inside(i, j)) continue;
        int v[8];
        for (int b = 0; b < 8; ++b)
          v[b] = getv(i + (b & 1), j + ((b >> 1) & 1), k + ((b >> 2) & 1));
        int e = 0;
        emitCellTets(tmp, e, v);
        for (int t = 0; t < 6; ++t) elems.push_back(tmp.row(t));
      }
  m.vertices.resize(static_cast<int>(verts.size()), 3);
  for (size_t i = 0; i < verts.size(); ++i) m.vertices.row(i) = verts[i];
  m.elements.resize(static_cast<int>(elems.size()), 4);
  for (size_t i = 0; i < elems.size(); ++i) m.elements.row(i) = elems[i];
  return m;
}

}  // namespace

VolumetricMesh buildMesh(const MeshSpec& spec) {
  VolumetricMesh m;
  if (spec.shape == "bar2d")
    m = buildBar2d(spec);
  else if (spec.shape == "ring2d")
    m = buildRing2d(spec);
  else if (spec.shape == "beam3d")
    m = buildBeam3d(spec);
  else if (spec.shape == "cross3d")
    m = buildCross3d(spec);
  else
    throw InvalidSpecError("unknown shape: " + spec.shape);
  finalize(m, spec.offset);
  return m;
}

void validateMesh(const VolumetricMesh& mesh) {
  const int d = mesh.dim;
  if (d != 2 && d != 3) throw std::runtime_error("mesh: dim must be 2 or 3");
  const int V = mesh.numVertices();
  for (int e = 0; e < mesh.numElements(); ++e) {
    for (int k = 0; k <= d; ++k) {
      int v = mesh.elements(e, k);
      if (v < 0 || v >= V) throw std::runtime_error("mesh: vertex index out of range");
    }
    if (signedElementVolume(mesh, e) <= 0)
      throw std::runtime_error("mesh: element " + std::to_string(e) +
                               " has non-positive volume");
  }
  for (int f = 0; f < mesh.numSurfacePatches(); ++f)
    for (int k = 0; k < d; ++k) {
      int v = mesh.surface(f, k);
      if (v < 0 || v >= V) throw std::runtime_error("mesh: surface index out of range");
    }
}

std::string meshToJson(const VolumetricMesh& mesh) {
  nlohmann::json j;
  j["dim"] = mesh.dim;
  // row-major flat layout
  std::vector<double> flat;
  flat.reserve(mesh.vertices.size());
  for (int i = 0; i < mesh.numVertices(); ++i)
    for (int k = 0; k < mesh.dim; ++k) flat.push_back(mesh.vertices(i, k));
  j["vertices"] = flat;
  std::vector<int> elems;
  for (int e = 0; e < mesh.numElements(); ++e)
    for (int k = 0; k <= mesh.dim; ++k) elems.push_back(mesh.elements(e, k));
  j["elements"] = elems;
  std::vector<int> surf;
  for (int f = 0; f < mesh.numSurfacePatches(); ++f)
    for (int k = 0; k < mesh.dim; ++k) surf.push_back(mesh.surface(f, k));
  j["surface"] = surf;
  return j.dump();
}

VolumetricMesh meshFromJson(const std::string& text) {
  nlohmann::json j = nlohmann::json::parse(text);
  VolumetricMesh m;
  m.dim = j.at("dim").get<int>();
  std::vector<double> flat = j.at("vertices").get<std::vector<double>>();
  std::vector<int> elems = j.at("elements").get<std::vector<int>>();
  std::vector<int> surf = j.at("surface").get<std::vector<int>>();
  const int V = static_cast<int>(flat.size()) / m.dim;
  const int P = static_cast<int>(elems.size()) / (m.dim + 1);
  const int S = static_cast<int>(surf.size()) / m.dim;
  m.vertices.resize(V, m.dim);
  for (int i = 0; i < V; ++i)
    for (int k = 0; k < m.dim; ++k) m.vertices(i, k) = flat[i * m.dim + k];
  m.elements.resize(P, m.dim + 1);
  for (int e = 0; e < P; ++e)
    for (int k = 0; k <= m.dim; ++k) m.elements(e, k) = elems[e * (m.dim + 1) + k];
  m.surface.resize(S, m.dim);
  for (int f = 0; f < S; ++f)
    for (int k = 0; k < m.dim; ++k) m.surface(f, k) = surf[f * m.dim + k];
  m.rest_volume = 0;
  for (int e = 0; e < P; ++e) m.rest_volume += signedElementVolume(m, e);
  validateMesh(m);
  return m;
}

}  // namespace rdl
