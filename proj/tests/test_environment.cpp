#include <doctest.h>

#include <random>
#include <set>

#include "rdl/environment.hpp"

using namespace rdl;

namespace {

Eigen::VectorXd vec2(double x, double y) {
  Eigen::VectorXd v(2);
  v << x, y;
  return v;
}

Obstacle flatGround() {
  Obstacle ob;
  ob.kind = "half_plane";
  ob.normal = vec2(0, 1);
  ob.offset = 0;
  return ob;
}

std::vector<Obstacle> vGround() {
  const double s = 1.0 / std::sqrt(2.0);
  Obstacle left, right;
  left.kind = right.kind = "half_plane";
  left.normal = vec2(s, s);
  right.normal = vec2(-s, s);
  left.offset = right.offset = 0;
  return {left, right};
}

std::shared_ptr<EnvironmentField> groundField(int res = 16) {
  Eigen::VectorXi cells(2);
  cells << res, res;
  return buildField({flatGround()}, vec2(-2, -2), vec2(2, 2), cells, EnvType::Ground);
}

struct Setup {
  VolumetricMesh mesh;
  std::shared_ptr<const FemOperators> fem;
  std::shared_ptr<RsModel> model;
};

Setup makeBar(int nx = 10, int ny = 2, int r = 4) {
  Setup s;
  MeshSpec spec;
  spec.shape = "bar2d";
  spec.sx = 1.0;
  spec.sy = 0.2;
  spec.nx = nx;
  spec.ny = ny;
  s.mesh = buildMesh(spec);
  s.fem = assembleFem(s.mesh, 1.0, 1e5, 0.48);
  s.model = buildRsBases(s.mesh, s.fem, r);
  return s;
}

std::set<std::pair<int, int>> pairSet(const CollisionReport& rep) {
  std::set<std::pair<int, int>> out;
  for (const auto& p : rep.self_pairs) out.insert({p.a, p.b});
  return out;
}

// brute-force all-pairs reference for the BVH broad phase
std::set<std::pair<int, int>> bruteForcePairs(const Setup& s, const Eigen::VectorXd& u) {
  ReducedConfig q = ReducedConfig::zero(s.model->r, 2);
  q.u = u;
  Eigen::VectorXd x = reconstruct(*s.model, q);
  const double rho = 0.3 * s.fem->avg_element_size;
  const int V = s.mesh.numVertices();
  std::set<std::pair<int, int>> adj;
  for (int e = 0; e < s.mesh.numElements(); ++e)
    for (int i = 0; i < 3; ++i)
      for (int j = i + 1; j < 3; ++j) {
        int a = s.mesh.elements(e, i), b = s.mesh.elements(e, j);
        adj.insert({std::min(a, b), std::max(a, b)});
      }
  std::set<std::pair<int, int>> out;
  for (int a = 0; a < V; ++a)
    for (int b = a + 1; b < V; ++b) {
      if (adj.count({a, b})) continue;
      if ((x.segment(a * 2, 2) - x.segment(b * 2, 2)).norm() < rho) out.insert({a, b});
    }
  return out;
}

// smallest scale of the first bending mode that self-collides, or 0 if none
Eigen::VectorXd bentBarU(const Setup& s) {
  Eigen::VectorXd u = Eigen::VectorXd::Zero(s.model->r);
  for (double scale = 0.5; scale <= 400.0; scale *= 1.3) {
    u[0] = scale;
    if (!bruteForcePairs(s, u).empty()) return u;
    u[0] = -scale;
    if (!bruteForcePairs(s, u).empty()) return u;
  }
  return Eigen::VectorXd::Zero(s.model->r);
}

}  // namespace

TEST_CASE("flat ground distance and gradient are exact") {
  auto f = groundField();
  auto q = f->query(vec2(0, 0.5));
  CHECK(q.dist == doctest::Approx(0.5).epsilon(1e-9));
  CHECK(q.grad[0] == doctest::Approx(0.0).epsilon(1e-9));
  CHECK(q.grad[1] == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(!q.clamped);

  // cell centers and arbitrary interior points stay exact: the interpolant
  // reproduces linear data
  std::mt19937 rng(7);
  std::uniform_real_distribution<double> un(-1.9, 1.9);
  for (int i = 0; i < 50; ++i) {
    Eigen::VectorXd p = vec2(un(rng), un(rng));
    CHECK(f->query(p).dist == doctest::Approx(p[1]).epsilon(1e-9));
  }
}

TEST_CASE("V ground is the min of the two plane distances away from the crease") {
  Eigen::VectorXi cells(2);
  cells << 32, 32;
  auto f = buildField(vGround(), vec2(-2, -2), vec2(2, 2), cells, EnvType::Ground);
  auto obs = vGround();
  // points whose interpolation stencil sees only one plane
  for (auto p : {vec2(1.2, 0.8), vec2(-1.2, 0.8), vec2(1.5, -0.5), vec2(-1.5, -0.5)}) {
    double exact = obstaclesDistance(obs, p);
    CHECK(f->query(p).dist == doctest::Approx(exact).epsilon(1e-9));
  }
}

TEST_CASE("random queries match the analytic distance within one cell") {
  Obstacle box;
  box.kind = "box";
  box.normal = vec2(0, 0);
  box.lo = vec2(-0.5, -0.5);
  box.hi = vec2(0.5, 0.2);
  std::vector<Obstacle> obs = {flatGround(), box};
  Eigen::VectorXi cells(2);
  cells << 24, 24;
  auto f = buildField(obs, vec2(-2, -2), vec2(2, 2), cells, EnvType::Ground);

  std::mt19937 rng(11);
  std::uniform_real_distribution<double> un(-2, 2);
  for (int i = 0; i < 200; ++i) {
    Eigen::VectorXd p = vec2(un(rng), un(rng));
    double exact = obstaclesDistance(obs, p);
    CHECK(std::abs(f->query(p).dist - exact) < f->h_grid);
  }
}

TEST_CASE("query gradient and hessian match finite differences") {
  Eigen::VectorXi cells(2);
  cells << 20, 20;
  auto f = buildField(vGround(), vec2(-2, -2), vec2(2, 2), cells, EnvType::Ground);

  std::mt19937 rng(3);
  std::uniform_real_distribution<double> un(-1.5, 1.5);
  const double eps = 1e-6;
  for (int i = 0; i < 40; ++i) {
    Eigen::VectorXd p = vec2(un(rng), un(rng));
    auto q = f->query(p);
    for (int a = 0; a < 2; ++a) {
      Eigen::VectorXd dp = Eigen::VectorXd::Zero(2);
      dp[a] = eps;
      double fd = (f->query(p + dp, 0).dist - f->query(p - dp, 0).dist) / (2 * eps);
      CHECK(q.grad[a] == doctest::Approx(fd).epsilon(1e-4).scale(1.0));
    }
  }

  // hessian: FD of the gradient, checked inside a single cell (the second
  // derivative is only piecewise continuous across faces)
  Eigen::VectorXd p = vec2(0.63, 0.91);
  auto q = f->query(p);
  const double he = 1e-5;
  for (int a = 0; a < 2; ++a) {
    Eigen::VectorXd dp = Eigen::VectorXd::Zero(2);
    dp[a] = he;
    Eigen::VectorXd fd = (f->query(p + dp).grad - f->query(p - dp).grad) / (2 * he);
    for (int b = 0; b < 2; ++b)
      CHECK(q.hess(a, b) == doctest::Approx(fd[b]).epsilon(1e-4).scale(1.0));
  }
}

TEST_CASE("field value is continuous across cell faces") {
  Eigen::VectorXi cells(2);
  cells << 16, 16;
  auto f = buildField(vGround(), vec2(-2, -2), vec2(2, 2), cells, EnvType::Ground);
  const double step = 1e-3, lipschitz = 4.0;
  for (double x = -1.8; x < 1.8; x += step) {
    double a = f->query(vec2(x, 0.7), 0).dist;
    double b = f->query(vec2(x + step, 0.7), 0).dist;
    CHECK(std::abs(b - a) < lipschitz * step);
  }
}

TEST_CASE("gradient magnitude is near one away from the crease") {
  Eigen::VectorXi cells(2);
  cells << 32, 32;
  auto f = buildField(vGround(), vec2(-2, -2), vec2(2, 2), cells, EnvType::Ground);
  std::mt19937 rng(5);
  std::uniform_real_distribution<double> un(-1.8, 1.8);
  int checked = 0;
  while (checked < 60) {
    Eigen::VectorXd p = vec2(un(rng), un(rng));
    if (std::abs(p[0]) < 0.5) continue;  // stay off the medial axis
    CHECK(f->query(p).grad.norm() == doctest::Approx(1.0).epsilon(0.1));
    ++checked;
  }
}

TEST_CASE("build rejects undersized grids and query flags clamping") {
  Eigen::VectorXi bad(2);
  bad << 1, 8;
  CHECK_THROWS_AS(buildField({flatGround()}, vec2(-1, -1), vec2(1, 1), bad,
                             EnvType::Ground),
                  EnvironmentError);
  auto f = groundField();
  auto q = f->query(vec2(5.0, 0.5));
  CHECK(q.clamped);
  auto inside = f->query(vec2(0.0, 0.5));
  CHECK(!inside.clamped);
}

TEST_CASE("rest configuration has no self-collisions") {
  Setup s = makeBar();
  auto rep = detectSelfCollisions(*s.model, s.mesh, Eigen::VectorXd::Zero(s.model->r));
  CHECK(rep.self_pairs.empty());
  CHECK(rep.eta == doctest::Approx(1.0));
}

TEST_CASE("bent bar reports overlapping pairs with eta < 1 and unit directions") {
  Setup s = makeBar();
  Eigen::VectorXd u = bentBarU(s);
  REQUIRE(u.norm() > 0);

  auto rep = detectSelfCollisions(*s.model, s.mesh, u);
  REQUIRE(!rep.self_pairs.empty());
  CHECK(rep.eta > 0);
  CHECK(rep.eta < 1);
  for (const auto& p : rep.self_pairs) {
    CHECK(p.a < p.b);
    CHECK(p.direction.norm() == doctest::Approx(1.0).epsilon(1e-9));
  }

  // d^ab points from a to b's pre-contact side: at eta*u the pair is still
  // separated, so the direction matches the actual offset there
  ReducedConfig q = ReducedConfig::zero(s.model->r, 2);
  q.u = rep.eta * u;
  Eigen::VectorXd x = reconstruct(*s.model, q);
  for (const auto& p : rep.self_pairs) {
    Eigen::VectorXd off = x.segment(p.a * 2, 2) - x.segment(p.b * 2, 2);
    CHECK(off.normalized().dot(p.direction) == doctest::Approx(1.0).epsilon(1e-9));
  }
}

TEST_CASE("pair detection ignores rigid placement") {
  Setup s = makeBar();
  Eigen::VectorXd u = bentBarU(s);
  REQUIRE(u.norm() > 0);
  // detection is defined in the local frame, so only u enters the API;
  // verify the local pair set matches a rigidly transformed reconstruction
  ReducedConfig q = ReducedConfig::zero(s.model->r, 2);
  q.u = u;
  q.c << 3.0, -2.0;
  q.w << 1.1;
  Eigen::VectorXd xw = reconstruct(*s.model, q);
  const double rho = 0.3 * s.fem->avg_element_size;
  auto local = bruteForcePairs(s, u);
  std::set<std::pair<int, int>> world;
  for (auto [a, b] : pairSet(detectSelfCollisions(*s.model, s.mesh, u)))
    if ((xw.segment(a * 2, 2) - xw.segment(b * 2, 2)).norm() < rho) world.insert({a, b});
  CHECK(world == local);
}

TEST_CASE("BVH pair set equals brute force all-pairs") {
  for (int nx : {10, 16}) {
    Setup s = makeBar(nx, 2);
    Eigen::VectorXd u = bentBarU(s);
    REQUIRE(u.norm() > 0);
    CHECK(pairSet(detectSelfCollisions(*s.model, s.mesh, u)) == bruteForcePairs(s, u));
    // mid-range scale too, where only some pairs are active
    CHECK(pairSet(detectSelfCollisions(*s.model, s.mesh, 0.97 * u)) ==
          bruteForcePairs(s, 0.97 * u));
  }
}

TEST_CASE("eta brackets the collision-free range monotonically") {
  Setup s = makeBar();
  Eigen::VectorXd u = bentBarU(s);
  REQUIRE(u.norm() > 0);
  auto rep = detectSelfCollisions(*s.model, s.mesh, u);
  REQUIRE(rep.eta < 1);
  for (double f : {0.1, 0.4, 0.8, 0.999})
    CHECK(bruteForcePairs(s, f * rep.eta * u).empty());
}

TEST_CASE("box obstacle distance is signed") {
  Obstacle box;
  box.kind = "box";
  box.normal = vec2(0, 0);
  box.lo = vec2(-1, -1);
  box.hi = vec2(1, 1);
  CHECK(obstacleDistance(box, vec2(2, 0)) == doctest::Approx(1.0));
  CHECK(obstacleDistance(box, vec2(2, 2)) == doctest::Approx(std::sqrt(2.0)));
  CHECK(obstacleDistance(box, vec2(0, 0)) == doctest::Approx(-1.0));
  CHECK(obstacleDistance(box, vec2(0.5, 0)) == doctest::Approx(-0.5));
}
