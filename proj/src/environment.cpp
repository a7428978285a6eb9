#include "rdl/environment.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

namespace rdl {

double obstacleDistance(const Obstacle& ob, const Eigen::VectorXd& p) {
  if (ob.kind == "half_plane") return ob.normal.dot(p) - ob.offset;
  if (ob.kind == "box") {
    Eigen::VectorXd q = (ob.lo - p).cwiseMax(p - ob.hi);
    double outside = q.cwiseMax(0.0).norm();
    double inside = std::min(q.maxCoeff(), 0.0);
    return outside + inside;
  }
  throw EnvironmentError("unknown obstacle kind: " + ob.kind);
}

double obstaclesDistance(const std::vector<Obstacle>& obs, const Eigen::VectorXd& p) {
  double d = std::numeric_limits<double>::infinity();
  for (const auto& ob : obs) d = std::min(d, obstacleDistance(ob, p));
  return d;
}

namespace {

// Catmull-Rom basis and derivatives on t in [0,1]
void crWeights(double t, double w[4], double dw[4], double ddw[4]) {
  const double t2 = t * t, t3 = t2 * t;
  w[0] = 0.5 * (-t3 + 2 * t2 - t);
  w[1] = 0.5 * (3 * t3 - 5 * t2 + 2);
  w[2] = 0.5 * (-3 * t3 + 4 * t2 + t);
  w[3] = 0.5 * (t3 - t2);
  dw[0] = 0.5 * (-3 * t2 + 4 * t - 1);
  dw[1] = 0.5 * (9 * t2 - 10 * t);
  dw[2] = 0.5 * (-9 * t2 + 8 * t + 1);
  dw[3] = 0.5 * (3 * t2 - 2 * t);
  ddw[0] = 0.5 * (-6 * t + 4);
  ddw[1] = 0.5 * (18 * t - 10);
  ddw[2] = 0.5 * (-18 * t + 8);
  ddw[3] = 0.5 * (6 * t - 2);
}

}  // namespace

FieldQuery EnvironmentField::query(const Eigen::VectorXd& p, int order) const {
  FieldQuery out;
  out.grad = Eigen::VectorXd::Zero(dim);
  out.hess = Eigen::MatrixXd::Zero(dim, dim);

  Eigen::VectorXd h(dim);
  Eigen::VectorXi cell(dim), nnode(dim);
  Eigen::VectorXd t(dim);
  for (int a = 0; a < dim; ++a) {
    h[a] = (hi[a] - lo[a]) / cells[a];
    nnode[a] = cells[a] + 1;
    double x = p[a];
    if (x < lo[a] || x > hi[a]) {
      out.clamped = true;
      x = std::clamp(x, lo[a], hi[a]);
    }
    double s = (x - lo[a]) / h[a];
    cell[a] = std::min(static_cast<int>(std::floor(s)), cells[a] - 1);
    t[a] = s - cell[a];
  }

  double w[3][4], dw[3][4], ddw[3][4];
  for (int a = 0; a < dim; ++a) crWeights(t[a], w[a], dw[a], ddw[a]);

  // ghost nodes one past each edge are linearly extrapolated so the
  // interpolant reproduces linear data in the boundary cells too
  std::function<double(Eigen::VectorXi)> getVal = [&](Eigen::VectorXi idx) -> double {
    for (int a = 0; a < dim; ++a) {
      if (idx[a] < 0) {
        Eigen::VectorXi i0 = idx, i1 = idx;
        i0[a] = 0;
        i1[a] = -idx[a];
        return 2 * getVal(i0) - getVal(i1);
      }
      if (idx[a] > nnode[a] - 1) {
        Eigen::VectorXi i0 = idx, i1 = idx;
        i0[a] = nnode[a] - 1;
        i1[a] = 2 * (nnode[a] - 1) - idx[a];
        return 2 * getVal(i0) - getVal(i1);
      }
    }
    long flat = idx[dim - 1];
    for (int a = dim - 2; a >= 0; --a) flat = flat * nnode[a] + idx[a];
    return values[flat];
  };
  auto node2 = [&](int mx, int my) {
    Eigen::VectorXi idx(2);
    idx << cell[0] - 1 + mx, cell[1] - 1 + my;
    return getVal(idx);
  };
  auto node3 = [&](int mx, int my, int mz) {
    Eigen::VectorXi idx(3);
    idx << cell[0] - 1 + mx, cell[1] - 1 + my, cell[2] - 1 + mz;
    return getVal(idx);
  };

  if (dim == 2) {
    for (int mx = 0; mx < 4; ++mx)
      for (int my = 0; my < 4; ++my) {
        double f = node2(mx, my);
        out.dist += w[0][mx] * w[1][my] * f;
        if (order < 1) continue;
        out.grad[0] += dw[0][mx] / h[0] * w[1][my] * f;
        out.grad[1] += w[0][mx] * dw[1][my] / h[1] * f;
        if (order < 2) continue;
        out.hess(0, 0) += ddw[0][mx] / (h[0] * h[0]) * w[1][my] * f;
        out.hess(1, 1) += w[0][mx] * ddw[1][my] / (h[1] * h[1]) * f;
        out.hess(0, 1) += dw[0][mx] * dw[1][my] / (h[0] * h[1]) * f;
      }
    out.hess(1, 0) = out.hess(0, 1);
  } else {
    for (int mx = 0; mx < 4; ++mx)
      for (int my = 0; my < 4; ++my)
        for (int mz = 0; mz < 4; ++mz) {
          double f = node3(mx, my, mz);
          double wx = w[0][mx], wy = w[1][my], wz = w[2][mz];
          out.dist += wx * wy * wz * f;
          if (order < 1) continue;
          double gx = dw[0][mx] / h[0], gy = dw[1][my] / h[1], gz = dw[2][mz] / h[2];
          out.grad[0] += gx * wy * wz * f;
          out.grad[1] += wx * gy * wz * f;
          out.grad[2] += wx * wy * gz * f;
          if (order < 2) continue;
          out.hess(0, 0) += ddw[0][mx] / (h[0] * h[0]) * wy * wz * f;
          out.hess(1, 1) += wx * ddw[1][my] / (h[1] * h[1]) * wz * f;
          out.hess(2, 2) += wx * wy * ddw[2][mz] / (h[2] * h[2]) * f;
          out.hess(0, 1) += gx * gy * wz * f;
          out.hess(0, 2) += gx * wy * gz * f;
          out.hess(1, 2) += wx * gy * gz * f;
        }
    out.hess(1, 0) = out.hess(0, 1);
    out.hess(2, 0) = out.hess(0, 2);
    out.hess(2, 1) = out.hess(1, 2);
  }
  return out;
}

std::shared_ptr<EnvironmentField> buildField(const std::vector<Obstacle>& obstacles,
                                             const Eigen::VectorXd& lo,
                                             const Eigen::VectorXd& hi,
                                             const Eigen::VectorXi& resolution,
                                             EnvType env_type) {
  const int dim = static_cast<int>(lo.size());
  if (hi.size() != dim || resolution.size() != dim)
    throw EnvironmentError("field bounds/resolution dimension mismatch");
  for (int a = 0; a < dim; ++a) {
    if (resolution[a] < 2) throw EnvironmentError("field needs >= 2 cells per axis");
    if (hi[a] <= lo[a]) throw EnvironmentError("field bounds must have positive extent");
  }
  auto field = std::make_shared<EnvironmentField>();
  field->env_type = env_type;
  field->dim = dim;
  field->lo = lo;
  field->hi = hi;
  field->cells = resolution;
  field->fluid_velocity = Eigen::VectorXd::Zero(dim);

  Eigen::VectorXd h(dim);
  Eigen::VectorXi nnode(dim);
  long total = 1;
  for (int a = 0; a < dim; ++a) {
    h[a] = (hi[a] - lo[a]) / resolution[a];
    nnode[a] = resolution[a] + 1;
    total *= nnode[a];
  }
  field->h_grid = h.maxCoeff();
  field->values.resize(total);

  Eigen::VectorXd p(dim);
  if (dim == 2) {
    for (int iy = 0; iy < nnode[1]; ++iy)
      for (int ix = 0; ix < nnode[0]; ++ix) {
        p << lo[0] + ix * h[0], lo[1] + iy * h[1];
        field->values[iy * nnode[0] + ix] = obstaclesDistance(obstacles, p);
      }
  } else {
    for (int iz = 0; iz < nnode[2]; ++iz)
      for (int iy = 0; iy < nnode[1]; ++iy)
        for (int ix = 0; ix < nnode[0]; ++ix) {
          p << lo[0] + ix * h[0], lo[1] + iy * h[1], lo[2] + iz * h[2];
          field->values[(iz * nnode[1] + iy) * nnode[0] + ix] =
              obstaclesDistance(obstacles, p);
        }
  }
  return field;
}

namespace {

struct BvhNode {
  Eigen::VectorXd lo, hi;
  int begin = 0, end = 0;  // vertex index range (leaf if small)
  int left = -1, right = -1;
};

struct Bvh {
  int dim;
  std::vector<BvhNode> nodes;
  std::vector<int> order;  // vertex indices, partitioned by the tree
  const Eigen::VectorXd* x = nullptr;

  Eigen::VectorXd point(int v) const { return x->segment(v * dim, dim); }

  int build(int begin, int end) {
    BvhNode node;
    node.begin = begin;
    node.end = end;
    node.lo = point(order[begin]);
    node.hi = node.lo;
    for (int i = begin + 1; i < end; ++i) {
      node.lo = node.lo.cwiseMin(point(order[i]));
      node.hi = node.hi.cwiseMax(point(order[i]));
    }
    int idx = static_cast<int>(nodes.size());
    nodes.push_back(node);
    if (end - begin > 4) {
      int axis;
      (node.hi - node.lo).maxCoeff(&axis);
      int mid = (begin + end) / 2;
      std::nth_element(order.begin() + begin, order.begin() + mid, order.begin() + end,
                       [&](int a, int b) { return point(a)[axis] < point(b)[axis]; });
      int l = build(begin, mid);
      int r = build(mid, end);
      nodes[idx].left = l;
      nodes[idx].right = r;
    }
    return idx;
  }
};

double boxDistance(const BvhNode& a, const BvhNode& b) {
  Eigen::VectorXd gap = (a.lo - b.hi).cwiseMax(b.lo - a.hi).cwiseMax(0.0);
  return gap.norm();
}

void collectPairs(const Bvh& bvh, int na, int nb, double rho,
                  const std::function<void(int, int)>& emit) {
  const BvhNode& A = bvh.nodes[na];
  const BvhNode& B = bvh.nodes[nb];
  if (boxDistance(A, B) > rho) return;
  const bool leafA = A.left < 0, leafB = B.left < 0;
  if (leafA && leafB) {
    for (int i = A.begin; i < A.end; ++i) {
      int j0 = (na == nb) ? i + 1 : B.begin;
      for (int j = j0; j < B.end; ++j) emit(bvh.order[i], bvh.order[j]);
    }
    return;
  }
  if (na == nb) {
    collectPairs(bvh, A.left, A.left, rho, emit);
    collectPairs(bvh, A.right, A.right, rho, emit);
    collectPairs(bvh, A.left, A.right, rho, emit);
    return;
  }
  if (leafA) {
    collectPairs(bvh, na, B.left, rho, emit);
    collectPairs(bvh, na, B.right, rho, emit);
  } else {
    collectPairs(bvh, A.left, nb, rho, emit);
    collectPairs(bvh, A.right, nb, rho, emit);
  }
}

std::vector<std::pair<int, int>> closePairs(const Eigen::VectorXd& x, int dim, double rho,
                                            const std::unordered_set<long long>& adjacent,
                                            int V) {
  Bvh bvh;
  bvh.dim = dim;
  bvh.x = &x;
  bvh.order.resize(V);
  for (int v = 0; v < V; ++v) bvh.order[v] = v;
  bvh.build(0, V);

  std::vector<std::pair<int, int>> out;
  collectPairs(bvh, 0, 0, rho, [&](int a, int b) {
    if (a > b) std::swap(a, b);
    if (adjacent.count(static_cast<long long>(a) * V + b)) return;
    if ((x.segment(a * dim, dim) - x.segment(b * dim, dim)).norm() < rho)
      out.emplace_back(a, b);
  });
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace

CollisionReport detectSelfCollisions(const RsModel& model, const VolumetricMesh& mesh,
                                     const Eigen::VectorXd& u) {
  const int d = model.dim, V = mesh.numVertices();
  const double rho = 0.3 * model.fem->avg_element_size;

  std::unordered_set<long long> adjacent;
  for (int e = 0; e < mesh.numElements(); ++e)
    for (int i = 0; i <= d; ++i)
      for (int j = i + 1; j <= d; ++j) {
        int a = mesh.elements(e, i), b = mesh.elements(e, j);
        if (a > b) std::swap(a, b);
        adjacent.insert(static_cast<long long>(a) * V + b);
      }

  auto positions = [&](double scale) {
    ReducedConfig q = ReducedConfig::zero(model.r, d);
    q.u = scale * u;
    return reconstruct(model, q);
  };

  CollisionReport report;
  Eigen::VectorXd x1 = positions(1.0);
  auto pairs = closePairs(x1, d, rho, adjacent, V);
  if (pairs.empty()) return report;

  // largest collision-free scale by bisection; u = 0 is guaranteed free
  double good = 0.0, bad = 1.0;
  for (int it = 0; it < 20; ++it) {
    double mid = 0.5 * (good + bad);
    if (closePairs(positions(mid), d, rho, adjacent, V).empty())
      good = mid;
    else
      bad = mid;
  }
  report.eta = std::max(good, 1e-6);

  Eigen::VectorXd x_eta = positions(report.eta);
  for (auto [a, b] : pairs) {
    SelfPair sp;
    sp.a = a;
    sp.b = b;
    Eigen::VectorXd dir = x_eta.segment(a * d, d) - x_eta.segment(b * d, d);
    double n = dir.norm();
    if (n < 1e-12) {
      dir = Eigen::VectorXd::Zero(d);
      dir[0] = 1.0;
    } else {
      dir /= n;
    }
    sp.direction = dir;
    report.self_pairs.push_back(sp);
  }
  return report;
}

}  // namespace rdl
