#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <functional>
#include <random>

#include "rdl/scene.hpp"

using namespace rdl;
using nlohmann::json;

namespace {

json baseConfig() {
  json j;
  j["mesh"] = {{"shape", "bar2d"}, {"sx", 1.0}, {"sy", 0.2},
               {"nx", 6},          {"ny", 2}};
  j["material"] = {{"density", 1.0}, {"young", 1e5}, {"poisson", 0.45}};
  j["reduced"] = {{"variant", "rs"}, {"r", 3}, {"pose_count", 100}};
  j["environment"] = {
      {"type", "ground"},
      {"lo", {-2.0, -1.0}},
      {"hi", {2.0, 1.0}},
      {"resolution", {8, 8}},
      {"obstacles",
       json::array({{{"kind", "half_plane"},
                     {"normal", {0.0, 1.0}},
                     {"offset", -0.1}}})}};
  j["tasks"] = json::array({{{"kind", "move"}, {"v", {0.2, 0.0}}}});
  j["optimizer"] = {{"K", 8}, {"dt", 0.05}, {"max_iters", 5}};
  return j;
}

std::string fieldOf(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const ConfigError& e) {
    std::string msg = e.what();
    return msg.substr(0, msg.find(':'));
  }
  return "";
}

std::string slurp(const std::string& path) {
  std::ifstream f(path);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("config errors name the offending field") {
  auto at = [](json patch) {
    return fieldOf([&] { sceneFromJson(patch); });
  };
  json j = baseConfig();
  j["material"]["poisson"] = 0.5;
  CHECK(at(j) == "material.poisson");

  j = baseConfig();
  j["tasks"][0]["kind"] = "teleport";
  CHECK(at(j) == "tasks[0].kind");

  j = baseConfig();
  j["optimizer"]["K"] = 2;
  CHECK(at(j) == "optimizer.K");

  j = baseConfig();
  j["optimizer"]["dt"] = 0.0;
  CHECK(at(j) == "optimizer.dt");

  j = baseConfig();
  j["bogus"] = 1;
  CHECK(at(j) == "config.bogus");

  j = baseConfig();
  j["weights"] = {{"c_warp", 1.0}};
  CHECK(at(j) == "weights.c_warp");

  j = baseConfig();
  j["environment"]["type"] = "lava";
  CHECK(at(j) == "environment.type");

  j = baseConfig();
  j["mesh"]["shape"] = "blob";
  CHECK(at(j) == "mesh.shape");
}

TEST_CASE("omitted weights resolve to the documented defaults") {
  BuiltScene scene = buildScene(sceneFromJson(baseConfig()));
  const double l = scene.fem->avg_element_size;
  json eff = effectiveConfig(scene);
  const json& w = eff["weights"];
  CHECK(w["c_coll"].get<double>() == 1e2);
  CHECK(w["c_self"].get<double>() == 1e2);
  CHECK(w["c_env"].get<double>() == doctest::Approx(1e1 / (l * l)));
  CHECK(w["c_drag"].get<double>() == 1e3);
  CHECK(w["c_reg"].get<double>() == 1e-3);
  CHECK(w["c_shuffle"].get<double>() == 1e-1);
  CHECK(w["c_move"].get<double>() == 1e-1);
  CHECK(w["c_bal"].get<double>() == 1e-2);
  CHECK(w["gamma"].get<double>() == doctest::Approx(std::log(10.0) / l));
  CHECK(w["eps1"].get<double>() == doctest::Approx(3 * l));
  CHECK(w["eps2"].get<double>() == 0.01);
  CHECK(w["mu"].get<double>() == 0.7);
  CHECK(eff["optimizer"]["dt"].get<double>() == 0.05);
  CHECK(eff["gravity"] == json::array({0.0, -9.81}));
}

TEST_CASE("effective config closes over the run") {
  json j = baseConfig();
  j["weights"] = {{"c_reg", 2e-3}};
  BuiltScene a = buildScene(sceneFromJson(j));
  json dump_a = effectiveConfig(a);
  BuiltScene b = buildScene(sceneFromJson(dump_a));
  json dump_b = effectiveConfig(b);
  CHECK(dump_a.dump() == dump_b.dump());
  CHECK(b.problem.weights.c_reg == 2e-3);
}

TEST_CASE("precompute caches are content keyed and idempotent") {
  const std::string dir = "scene_cache_test";
  std::filesystem::remove_all(dir);
  SceneSpec spec = sceneFromJson(baseConfig());
  BuiltScene a = buildScene(spec, dir);
  REQUIRE(a.cache_files.size() >= 2);
  std::map<std::string, std::string> first;
  for (const std::string& f : a.cache_files) first[f] = slurp(dir + "/" + f);

  BuiltScene b = buildScene(spec, dir);
  CHECK(b.cache_files == a.cache_files);
  for (const std::string& f : b.cache_files)
    CHECK(slurp(dir + "/" + f) == first[f]);

  CHECK(b.model->r == a.model->r);
  CHECK(b.model->kinetic_cubature.items == a.model->kinetic_cubature.items);

  SceneSpec other = spec;
  other.r = 4;
  BuiltScene c = buildScene(other, dir);
  CHECK(c.cache_files[0] == a.cache_files[0]);
  CHECK(c.cache_files[1] != a.cache_files[1]);
  std::filesystem::remove_all(dir);
}

TEST_CASE("trajectory json roundtrip is bitwise exact") {
  Trajectory t;
  t.dt = 0.05;
  std::mt19937 rng(7);
  std::normal_distribution<double> dist;
  for (int i = 0; i < 4; ++i) {
    ReducedConfig q = ReducedConfig::zero(3, 2);
    for (int k = 0; k < 3; ++k) q.u[k] = dist(rng);
    q.c = Eigen::Vector2d(dist(rng), dist(rng));
    q.w[0] = dist(rng);
    t.configs.push_back(q);
  }
  t.active = {{}, {0, 5}, {2}, {}};
  t.forces.assign(4, Eigen::MatrixXd(0, 2));
  t.forces[1] = Eigen::MatrixXd::Random(2, 2);
  t.forces[2] = Eigen::MatrixXd::Random(1, 2);

  json j = trajectoryToJson(t);
  Trajectory u = trajectoryFromJson(j);
  REQUIRE(u.K() == t.K());
  for (int i = 0; i < t.K(); ++i) {
    CHECK(u.configs[i].stacked() == t.configs[i].stacked());
    CHECK(u.active[i] == t.active[i]);
    CHECK(u.forces[i] == t.forces[i]);
  }
  CHECK(trajectoryToJson(u).dump() == j.dump());
}

TEST_CASE("trajectory schema errors name the field") {
  Trajectory t;
  t.dt = 0.05;
  t.configs.assign(3, ReducedConfig::zero(2, 2));
  json good = trajectoryToJson(t);

  json j = good;
  j["schema_version"] = kSchemaVersion + 1;
  CHECK(fieldOf([&] { trajectoryFromJson(j); }) ==
        "trajectory.schema_version");

  j = good;
  j["configs"][1] = {1.0, 2.0};
  CHECK(fieldOf([&] { trajectoryFromJson(j); }) == "trajectory.configs[1]");

  j = good;
  j["dt"] = -1.0;
  CHECK(fieldOf([&] { trajectoryFromJson(j); }) == "trajectory.dt");
}

TEST_CASE("json files reject unknown schema majors") {
  const std::string path = "schema_test.json";
  writeJsonFile(path, {{"schema_version", kSchemaVersion}, {"x", 1}});
  CHECK(readJsonFile(path)["x"] == 1);
  writeJsonFile(path, {{"schema_version", kSchemaVersion + 1}});
  CHECK_THROWS_AS(readJsonFile(path), ConfigError);
  std::ofstream(path) << "{not json";
  CHECK_THROWS_AS(readJsonFile(path), ConfigError);
  std::filesystem::remove(path);
}

TEST_CASE("content hash is stable and collision aware") {
  CHECK(contentHash("") == "cbf29ce484222325");
  CHECK(contentHash("a") == contentHash("a"));
  CHECK(contentHash("a") != contentHash("b"));
}
