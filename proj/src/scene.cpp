#include "rdl/scene.hpp"

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

namespace rdl {

namespace {

using nlohmann::json;

[[noreturn]] void fail(const std::string& path, const std::string& what) {
  throw ConfigError(path + ": " + what);
}

void checkKeys(const json& j, const std::string& path,
               const std::set<std::string>& allowed) {
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!allowed.count(it.key())) fail(path + "." + it.key(), "unknown field");
}

const json* find(const json& j, const std::string& key) {
  auto it = j.find(key);
  return it == j.end() ? nullptr : &*it;
}

double numAt(const json& j, const std::string& key, const std::string& path,
             double def) {
  const json* v = find(j, key);
  if (!v) return def;
  if (!v->is_number()) fail(path + "." + key, "expected a number");
  return v->get<double>();
}

int intAt(const json& j, const std::string& key, const std::string& path,
          int def) {
  const json* v = find(j, key);
  if (!v) return def;
  if (!v->is_number_integer()) fail(path + "." + key, "expected an integer");
  return v->get<int>();
}

bool boolAt(const json& j, const std::string& key, const std::string& path,
            bool def) {
  const json* v = find(j, key);
  if (!v) return def;
  if (!v->is_boolean()) fail(path + "." + key, "expected a boolean");
  return v->get<bool>();
}

std::string strAt(const json& j, const std::string& key,
                  const std::string& path, const std::string& def) {
  const json* v = find(j, key);
  if (!v) return def;
  if (!v->is_string()) fail(path + "." + key, "expected a string");
  return v->get<std::string>();
}

Eigen::VectorXd vecAt(const json& j, const std::string& key,
                      const std::string& path, int size,
                      const Eigen::VectorXd& def) {
  const json* v = find(j, key);
  if (!v) return def;
  if (!v->is_array()) fail(path + "." + key, "expected an array");
  if (size >= 0 && static_cast<int>(v->size()) != size)
    fail(path + "." + key,
         "expected " + std::to_string(size) + " entries, got " +
             std::to_string(v->size()));
  Eigen::VectorXd out(v->size());
  for (size_t i = 0; i < v->size(); ++i) {
    if (!(*v)[i].is_number())
      fail(path + "." + key + "[" + std::to_string(i) + "]",
           "expected a number");
    out[i] = (*v)[i].get<double>();
  }
  return out;
}

std::vector<double> toStd(const Eigen::VectorXd& v) {
  return std::vector<double>(v.data(), v.data() + v.size());
}

int meshDim(const std::string& shape) {
  return (shape == "bar2d" || shape == "ring2d") ? 2 : 3;
}

MeshSpec meshFrom(const json& j) {
  MeshSpec m;
  checkKeys(j, "mesh",
            {"shape", "sx", "sy", "sz", "nx", "ny", "nz", "r_outer", "r_inner",
             "na", "nr", "arm_len", "arm_w", "offset"});
  m.shape = strAt(j, "shape", "mesh", m.shape);
  if (m.shape != "bar2d" && m.shape != "ring2d" && m.shape != "beam3d" &&
      m.shape != "cross3d")
    fail("mesh.shape", "unknown shape '" + m.shape + "'");
  m.sx = numAt(j, "sx", "mesh", m.sx);
  m.sy = numAt(j, "sy", "mesh", m.sy);
  m.sz = numAt(j, "sz", "mesh", m.sz);
  m.nx = intAt(j, "nx", "mesh", m.nx);
  m.ny = intAt(j, "ny", "mesh", m.ny);
  m.nz = intAt(j, "nz", "mesh", m.nz);
  m.r_outer = numAt(j, "r_outer", "mesh", m.r_outer);
  m.r_inner = numAt(j, "r_inner", "mesh", m.r_inner);
  m.na = intAt(j, "na", "mesh", m.na);
  m.nr = intAt(j, "nr", "mesh", m.nr);
  m.arm_len = numAt(j, "arm_len", "mesh", m.arm_len);
  m.arm_w = numAt(j, "arm_w", "mesh", m.arm_w);
  Eigen::VectorXd off = vecAt(j, "offset", "mesh", -1, Eigen::VectorXd());
  if (off.size() == 2)
    m.offset = Eigen::Vector3d(off[0], off[1], 0);
  else if (off.size() == 3)
    m.offset = off;
  else if (off.size() != 0)
    fail("mesh.offset", "expected 2 or 3 entries");
  return m;
}

json meshTo(const MeshSpec& m) {
  json j;
  j["shape"] = m.shape;
  j["sx"] = m.sx;
  j["sy"] = m.sy;
  j["sz"] = m.sz;
  j["nx"] = m.nx;
  j["ny"] = m.ny;
  j["nz"] = m.nz;
  j["r_outer"] = m.r_outer;
  j["r_inner"] = m.r_inner;
  j["na"] = m.na;
  j["nr"] = m.nr;
  j["arm_len"] = m.arm_len;
  j["arm_w"] = m.arm_w;
  j["offset"] = meshDim(m.shape) == 2
                    ? std::vector<double>{m.offset[0], m.offset[1]}
                    : std::vector<double>{m.offset[0], m.offset[1], m.offset[2]};
  return j;
}

Obstacle obstacleFrom(const json& j, const std::string& path, int dim) {
  Obstacle ob;
  checkKeys(j, path, {"kind", "normal", "offset", "lo", "hi"});
  ob.kind = strAt(j, "kind", path, "");
  if (ob.kind == "half_plane") {
    ob.normal = vecAt(j, "normal", path, dim, Eigen::VectorXd());
    if (!ob.normal.size()) fail(path + ".normal", "required for half_plane");
    const double n = ob.normal.norm();
    if (n < 1e-12) fail(path + ".normal", "must be nonzero");
    ob.normal /= n;
    ob.offset = numAt(j, "offset", path, 0.0);
  } else if (ob.kind == "box") {
    ob.lo = vecAt(j, "lo", path, dim, Eigen::VectorXd());
    ob.hi = vecAt(j, "hi", path, dim, Eigen::VectorXd());
    if (!ob.lo.size() || !ob.hi.size())
      fail(path, "box needs lo and hi corners");
    if (((ob.hi - ob.lo).array() <= 0).any())
      fail(path + ".hi", "must exceed lo on every axis");
  } else {
    fail(path + ".kind", "unknown obstacle kind '" + ob.kind + "'");
  }
  return ob;
}

json obstacleTo(const Obstacle& ob) {
  json j;
  j["kind"] = ob.kind;
  if (ob.kind == "half_plane") {
    j["normal"] = toStd(ob.normal);
    j["offset"] = ob.offset;
  } else {
    j["lo"] = toStd(ob.lo);
    j["hi"] = toStd(ob.hi);
  }
  return j;
}

TaskObjective taskFrom(const json& j, const std::string& path, int dim, int r) {
  TaskObjective t;
  checkKeys(j, path,
            {"kind", "v", "theta", "d", "h", "up", "targets", "importance",
             "weight"});
  t.kind = strAt(j, "kind", path, "");
  t.weight = numAt(j, "weight", path, -1.0);
  if (t.kind == "move") {
    t.v_c = vecAt(j, "v", path, dim, Eigen::VectorXd());
    if (!t.v_c.size()) fail(path + ".v", "required for move");
  } else if (t.kind == "turn") {
    t.theta = numAt(j, "theta", path, 0.0);
    t.d = vecAt(j, "d", path, -1, Eigen::VectorXd());
  } else if (t.kind == "balance") {
    t.d = vecAt(j, "d", path, dim, Eigen::VectorXd());
    if (!t.d.size()) fail(path + ".d", "required for balance");
    const double n = t.d.norm();
    if (n < 1e-12) fail(path + ".d", "must be nonzero");
    t.d /= n;
  } else if (t.kind == "jump") {
    t.v_c = vecAt(j, "v", path, dim, Eigen::VectorXd::Zero(dim));
    t.h = numAt(j, "h", path, 0.0);
    Eigen::VectorXd up = Eigen::VectorXd::Zero(dim);
    up[dim - 1] = 1;
    t.up = vecAt(j, "up", path, dim, up);
  } else if (t.kind == "keyframe") {
    const json* tg = find(j, "targets");
    if (!tg || !tg->is_array() || tg->empty())
      fail(path + ".targets", "non-empty array required for keyframe");
    for (size_t i = 0; i < tg->size(); ++i) {
      const std::string tp = path + ".targets[" + std::to_string(i) + "]";
      const json& e = (*tg)[i];
      checkKeys(e, tp, {"t", "u"});
      int ti = intAt(e, "t", tp, -1);
      if (ti < 0) fail(tp + ".t", "timestep index required");
      Eigen::VectorXd u = vecAt(e, "u", tp, r, Eigen::VectorXd());
      if (!u.size()) fail(tp + ".u", "required");
      t.key_t.push_back(ti);
      t.key_u.push_back(u);
    }
    t.key_importance =
        vecAt(j, "importance", path, r, Eigen::VectorXd::Ones(r));
  } else {
    fail(path + ".kind", "unknown task kind '" + t.kind + "'");
  }
  return t;
}

json taskTo(const TaskObjective& t) {
  json j;
  j["kind"] = t.kind;
  j["weight"] = t.weight;
  if (t.kind == "move") {
    j["v"] = toStd(t.v_c);
  } else if (t.kind == "turn") {
    j["theta"] = t.theta;
    if (t.d.size()) j["d"] = toStd(t.d);
  } else if (t.kind == "balance") {
    j["d"] = toStd(t.d);
  } else if (t.kind == "jump") {
    j["v"] = toStd(t.v_c);
    j["h"] = t.h;
    j["up"] = toStd(t.up);
  } else if (t.kind == "keyframe") {
    json tg = json::array();
    for (size_t i = 0; i < t.key_t.size(); ++i)
      tg.push_back({{"t", t.key_t[i]}, {"u", toStd(t.key_u[i])}});
    j["targets"] = tg;
    j["importance"] = toStd(t.key_importance);
  }
  return j;
}

const std::map<std::string, double WeightSet::*>& weightFields() {
  static const std::map<std::string, double WeightSet::*> m = {
      {"c_coll", &WeightSet::c_coll},   {"c_self", &WeightSet::c_self},
      {"c_env", &WeightSet::c_env},     {"c_drag", &WeightSet::c_drag},
      {"c_reg", &WeightSet::c_reg},     {"c_shuffle", &WeightSet::c_shuffle},
      {"c_dmp", &WeightSet::c_dmp},     {"c_move", &WeightSet::c_move},
      {"c_turn", &WeightSet::c_turn},   {"c_bal", &WeightSet::c_bal},
      {"c_jump", &WeightSet::c_jump},   {"c_key", &WeightSet::c_key},
      {"c_track", &WeightSet::c_track}, {"gamma", &WeightSet::gamma},
      {"eps1", &WeightSet::eps1},       {"eps2", &WeightSet::eps2},
      {"mu", &WeightSet::mu}};
  return m;
}

void checkSchema(const json& j, const std::string& path) {
  const json* v = find(j, "schema_version");
  if (!v) return;
  if (!v->is_number_integer() || v->get<int>() != kSchemaVersion)
    fail(path + ".schema_version",
         "unsupported version (expected " + std::to_string(kSchemaVersion) +
             ")");
}

std::vector<Eigen::VectorXd> trainingPoses(const RsModel& model,
                                           const SceneSpec& s) {
  return samplePoses(model, s.pose_count, s.pose_amplitude, s.pose_seed);
}

bool loadCache(const std::string& dir, const std::string& name, json& out) {
  if (dir.empty()) return false;
  const std::string path = dir + "/" + name;
  if (!std::filesystem::exists(path)) return false;
  out = readJsonFile(path);
  return true;
}

void storeCache(const std::string& dir, const std::string& name,
                const json& j) {
  if (dir.empty()) return;
  std::filesystem::create_directories(dir);
  writeJsonFile(dir + "/" + name, j);
}

}  // namespace

std::string contentHash(const std::string& data) {
  uint64_t h = 14695981039346656037ull;
  for (unsigned char c : data) {
    h ^= c;
    h *= 1099511628211ull;
  }
  std::ostringstream os;
  os << std::hex << h;
  return os.str();
}

SceneSpec sceneFromJson(const json& j) {
  if (!j.is_object()) fail("config", "expected a JSON object");
  checkKeys(j, "config",
            {"schema_version", "mesh", "material", "reduced", "environment",
             "gravity", "self_collision", "tasks", "optimizer", "weights"});
  checkSchema(j, "config");

  SceneSpec s;
  const json* mj = find(j, "mesh");
  if (!mj) fail("config.mesh", "required");
  s.mesh = meshFrom(*mj);
  const int dim = meshDim(s.mesh.shape);

  if (const json* mat = find(j, "material")) {
    checkKeys(*mat, "material", {"density", "young", "poisson"});
    s.density = numAt(*mat, "density", "material", s.density);
    s.young = numAt(*mat, "young", "material", s.young);
    s.poisson = numAt(*mat, "poisson", "material", s.poisson);
  }
  if (s.density <= 0) fail("material.density", "must be positive");
  if (s.young <= 0) fail("material.young", "must be positive");
  if (!(s.poisson >= 0 && s.poisson < 0.5))
    fail("material.poisson", "must lie in [0, 0.5)");

  if (const json* rd = find(j, "reduced")) {
    checkKeys(*rd, "reduced",
              {"variant", "r", "cubature_tol", "drag_cubature_tol",
               "pose_count", "pose_amplitude", "pose_seed"});
    s.variant = strAt(*rd, "variant", "reduced", s.variant);
    if (s.variant != "rs" && s.variant != "lma" && s.variant != "stvk")
      fail("reduced.variant", "expected rs, lma, or stvk");
    s.r = intAt(*rd, "r", "reduced", s.r);
    if (s.r < 1) fail("reduced.r", "must be at least 1");
    s.cubature_tol = numAt(*rd, "cubature_tol", "reduced", s.cubature_tol);
    if (s.cubature_tol <= 0) fail("reduced.cubature_tol", "must be positive");
    s.drag_cubature_tol =
        numAt(*rd, "drag_cubature_tol", "reduced", s.drag_cubature_tol);
    s.pose_count = intAt(*rd, "pose_count", "reduced", s.pose_count);
    if (s.pose_count < 100)
      fail("reduced.pose_count", "cubature training needs at least 100 poses");
    s.pose_amplitude =
        numAt(*rd, "pose_amplitude", "reduced", s.pose_amplitude);
    if (s.pose_amplitude <= 0)
      fail("reduced.pose_amplitude", "must be positive");
    s.pose_seed = static_cast<unsigned>(
        intAt(*rd, "pose_seed", "reduced", static_cast<int>(s.pose_seed)));
  }

  if (const json* env = find(j, "environment")) {
    s.has_env = true;
    checkKeys(*env, "environment",
              {"type", "mu", "lo", "hi", "resolution", "fluid_velocity",
               "obstacles"});
    s.env_type = strAt(*env, "type", "environment", "ground");
    if (s.env_type != "ground" && s.env_type != "fluid" &&
        s.env_type != "v-ground")
      fail("environment.type", "expected ground, fluid, or v-ground");
    s.mu = numAt(*env, "mu", "environment", s.mu);
    if (s.mu < 0) fail("environment.mu", "must be nonnegative");
    s.env_lo = vecAt(*env, "lo", "environment", dim, Eigen::VectorXd());
    s.env_hi = vecAt(*env, "hi", "environment", dim, Eigen::VectorXd());
    if (!s.env_lo.size() || !s.env_hi.size())
      fail("environment", "lo and hi grid bounds required");
    if (((s.env_hi - s.env_lo).array() <= 0).any())
      fail("environment.hi", "must exceed lo on every axis");
    Eigen::VectorXd res = vecAt(*env, "resolution", "environment", dim,
                                Eigen::VectorXd::Constant(dim, 16));
    s.env_res.resize(dim);
    for (int a = 0; a < dim; ++a) {
      s.env_res[a] = static_cast<int>(res[a]);
      if (s.env_res[a] < 2)
        fail("environment.resolution", "needs at least 2 cells per axis");
    }
    s.fluid_velocity = vecAt(*env, "fluid_velocity", "environment", dim,
                             Eigen::VectorXd::Zero(dim));
    if (const json* obs = find(*env, "obstacles")) {
      if (!obs->is_array()) fail("environment.obstacles", "expected an array");
      for (size_t i = 0; i < obs->size(); ++i)
        s.obstacles.push_back(obstacleFrom(
            (*obs)[i], "environment.obstacles[" + std::to_string(i) + "]",
            dim));
    }
    if (s.obstacles.empty())
      fail("environment.obstacles", "at least one obstacle required");
  }

  Eigen::VectorXd g_def = Eigen::VectorXd::Zero(dim);
  g_def[dim - 1] = -9.81;
  s.gravity = vecAt(j, "gravity", "config", dim, g_def);
  s.self_collision = boolAt(j, "self_collision", "config", false);

  if (const json* ts = find(j, "tasks")) {
    if (!ts->is_array()) fail("config.tasks", "expected an array");
    for (size_t i = 0; i < ts->size(); ++i)
      s.tasks.push_back(
          taskFrom((*ts)[i], "tasks[" + std::to_string(i) + "]", dim, s.r));
  }

  if (const json* op = find(j, "optimizer")) {
    checkKeys(*op, "optimizer",
              {"K", "dt", "max_iters", "tol", "d0", "d_max", "use_dmp",
               "dmp_kind", "neurons", "dmp_interval", "dmp_lbfgs_iters",
               "c_dmp0", "seed", "random_init", "random_amplitude", "threads",
               "lbfgs_round", "cone_penalty"});
    OptimizeOptions& o = s.opts;
    o.K = intAt(*op, "K", "optimizer", o.K);
    if (o.K < 3) fail("optimizer.K", "must be at least 3");
    o.dt = numAt(*op, "dt", "optimizer", o.dt);
    if (o.dt <= 0) fail("optimizer.dt", "must be positive");
    o.max_iters = intAt(*op, "max_iters", "optimizer", o.max_iters);
    if (o.max_iters < 1) fail("optimizer.max_iters", "must be at least 1");
    o.grad_rel_tol = numAt(*op, "tol", "optimizer", o.grad_rel_tol);
    if (o.grad_rel_tol <= 0) fail("optimizer.tol", "must be positive");
    o.d0 = numAt(*op, "d0", "optimizer", o.d0);
    o.d_max = numAt(*op, "d_max", "optimizer", o.d_max);
    o.use_dmp = boolAt(*op, "use_dmp", "optimizer", o.use_dmp);
    const std::string kind = strAt(*op, "dmp_kind", "optimizer", "periodic");
    if (kind == "periodic")
      o.dmp_kind = DmpKind::Periodic;
    else if (kind == "non_periodic")
      o.dmp_kind = DmpKind::NonPeriodic;
    else
      fail("optimizer.dmp_kind", "expected periodic or non_periodic");
    o.neurons = intAt(*op, "neurons", "optimizer", o.neurons);
    if (o.neurons < 1) fail("optimizer.neurons", "must be at least 1");
    o.dmp_interval = intAt(*op, "dmp_interval", "optimizer", o.dmp_interval);
    if (o.dmp_interval < 1)
      fail("optimizer.dmp_interval", "must be at least 1");
    o.dmp_lbfgs_iters =
        intAt(*op, "dmp_lbfgs_iters", "optimizer", o.dmp_lbfgs_iters);
    o.c_dmp0 = numAt(*op, "c_dmp0", "optimizer", o.c_dmp0);
    if (o.c_dmp0 <= 0) fail("optimizer.c_dmp0", "must be positive");
    o.seed = static_cast<unsigned>(
        intAt(*op, "seed", "optimizer", static_cast<int>(o.seed)));
    o.random_init = boolAt(*op, "random_init", "optimizer", o.random_init);
    o.random_amplitude =
        numAt(*op, "random_amplitude", "optimizer", o.random_amplitude);
    o.threads = intAt(*op, "threads", "optimizer", o.threads);
    o.lbfgs_round = intAt(*op, "lbfgs_round", "optimizer", o.lbfgs_round);
    o.cone_penalty = numAt(*op, "cone_penalty", "optimizer", o.cone_penalty);
  }

  if (const json* w = find(j, "weights")) {
    if (!w->is_object()) fail("config.weights", "expected an object");
    for (auto it = w->begin(); it != w->end(); ++it) {
      if (!weightFields().count(it.key()))
        fail("weights." + it.key(), "unknown weight");
      if (!it.value().is_number())
        fail("weights." + it.key(), "expected a number");
      s.weight_overrides[it.key()] = it.value().get<double>();
    }
  }
  return s;
}

BuiltScene buildScene(const SceneSpec& spec, const std::string& cache_dir) {
  BuiltScene out;
  out.spec = spec;

  json mesh_key = meshTo(spec.mesh);
  const std::string mesh_name =
      "mesh_" + contentHash(mesh_key.dump()) + ".json";
  json cached;
  if (loadCache(cache_dir, mesh_name, cached)) {
    out.mesh = std::make_shared<VolumetricMesh>(meshFromJson(cached.dump()));
  } else {
    out.mesh = std::make_shared<VolumetricMesh>(buildMesh(spec.mesh));
    if (!cache_dir.empty()) {
      json mj = json::parse(meshToJson(*out.mesh));
      mj["schema_version"] = kSchemaVersion;
      storeCache(cache_dir, mesh_name, mj);
    }
  }
  if (!cache_dir.empty()) out.cache_files.push_back(mesh_name);

  out.fem = assembleFem(*out.mesh, spec.density, spec.young, spec.poisson);
  const double l = out.fem->avg_element_size;

  json model_key;
  model_key["mesh"] = mesh_key;
  model_key["material"] = {{"density", spec.density},
                           {"young", spec.young},
                           {"poisson", spec.poisson}};
  model_key["reduced"] = {{"variant", spec.variant},
                          {"r", spec.r},
                          {"cubature_tol", spec.cubature_tol},
                          {"pose_count", spec.pose_count},
                          {"pose_amplitude", spec.pose_amplitude},
                          {"pose_seed", spec.pose_seed}};
  const std::string model_name =
      "model_" + contentHash(model_key.dump()) + ".json";
  if (loadCache(cache_dir, model_name, cached)) {
    out.model = modelFromJson(cached, out.fem);
  } else {
    out.model = spec.variant == "rs"
                    ? buildRsBases(*out.mesh, out.fem, spec.r)
                    : buildLinearModel(*out.mesh, out.fem, spec.r,
                                       spec.variant == "lma"
                                           ? ModelVariant::LMA
                                           : ModelVariant::StVK);
    if (spec.variant == "rs")
      trainKineticCubature(*out.model, trainingPoses(*out.model, spec),
                           spec.cubature_tol);
    if (!cache_dir.empty()) {
      json mj = modelToJson(*out.model);
      storeCache(cache_dir, model_name, mj);
    }
  }
  if (!cache_dir.empty()) out.cache_files.push_back(model_name);

  LocoProblem& p = out.problem;
  p.model = out.model;
  if (spec.self_collision) p.mesh = out.mesh;
  p.weights = WeightSet::defaults(l);
  p.weights.mu = spec.mu;
  for (const auto& [name, val] : spec.weight_overrides)
    p.weights.*(weightFields().at(name)) = val;
  p.gravity = spec.gravity;
  p.tasks = spec.tasks;

  if (spec.has_env) {
    const EnvType et =
        spec.env_type == "fluid" ? EnvType::Fluid : EnvType::Ground;
    auto field =
        buildField(spec.obstacles, spec.env_lo, spec.env_hi, spec.env_res, et);
    field->mu = spec.mu;
    field->c_drag = p.weights.c_drag;
    if (et == EnvType::Fluid) field->fluid_velocity = spec.fluid_velocity;
    p.field = field;

    if (et == EnvType::Fluid) {
      auto drag = std::make_shared<DragModel>();
      drag->patches = out.mesh->surface;
      if (spec.drag_cubature_tol > 0) {
        json drag_key;
        drag_key["model"] = model_key;
        drag_key["env"] = {{"tol", spec.drag_cubature_tol},
                           {"dt", spec.opts.dt},
                           {"c_drag", p.weights.c_drag},
                           {"fluid_velocity", toStd(spec.fluid_velocity)}};
        const std::string drag_name =
            "drag_" + contentHash(drag_key.dump()) + ".json";
        if (loadCache(cache_dir, drag_name, cached)) {
          drag->cubature.items = cached.at("items").get<std::vector<int>>();
          auto wts = cached.at("weights").get<std::vector<double>>();
          drag->cubature.weights =
              Eigen::Map<Eigen::VectorXd>(wts.data(), wts.size());
          drag->cubature.training_error = cached.at("training_error");
        } else {
          drag->cubature = trainDragCubature(
              *out.model, drag->patches, *field, spec.opts.dt,
              p.weights.c_drag, trainingPoses(*out.model, spec),
              spec.drag_cubature_tol);
          json dj;
          dj["schema_version"] = kSchemaVersion;
          dj["items"] = drag->cubature.items;
          dj["weights"] = toStd(drag->cubature.weights);
          dj["training_error"] = drag->cubature.training_error;
          storeCache(cache_dir, drag_name, dj);
        }
        if (!cache_dir.empty()) out.cache_files.push_back(drag_name);
      }
      p.drag = drag;
    }
  }
  return out;
}

nlohmann::json effectiveConfig(const BuiltScene& scene) {
  const SceneSpec& s = scene.spec;
  json j;
  j["schema_version"] = kSchemaVersion;
  j["mesh"] = meshTo(s.mesh);
  j["material"] = {{"density", s.density},
                   {"young", s.young},
                   {"poisson", s.poisson}};
  j["reduced"] = {{"variant", s.variant},
                  {"r", s.r},
                  {"cubature_tol", s.cubature_tol},
                  {"drag_cubature_tol", s.drag_cubature_tol},
                  {"pose_count", s.pose_count},
                  {"pose_amplitude", s.pose_amplitude},
                  {"pose_seed", s.pose_seed}};
  if (s.has_env) {
    json env;
    env["type"] = s.env_type;
    env["mu"] = s.mu;
    env["lo"] = toStd(s.env_lo);
    env["hi"] = toStd(s.env_hi);
    std::vector<int> res(s.env_res.data(), s.env_res.data() + s.env_res.size());
    env["resolution"] = res;
    env["fluid_velocity"] = toStd(s.fluid_velocity);
    json obs = json::array();
    for (const Obstacle& ob : s.obstacles) obs.push_back(obstacleTo(ob));
    env["obstacles"] = obs;
    j["environment"] = env;
  }
  j["gravity"] = toStd(s.gravity);
  j["self_collision"] = s.self_collision;
  json ts = json::array();
  for (const TaskObjective& t : s.tasks) ts.push_back(taskTo(t));
  j["tasks"] = ts;
  const OptimizeOptions& o = s.opts;
  j["optimizer"] = {
      {"K", o.K},
      {"dt", o.dt},
      {"max_iters", o.max_iters},
      {"tol", o.grad_rel_tol},
      {"d0", o.d0},
      {"d_max", o.d_max},
      {"use_dmp", o.use_dmp},
      {"dmp_kind", o.dmp_kind == DmpKind::Periodic ? "periodic" : "non_periodic"},
      {"neurons", o.neurons},
      {"dmp_interval", o.dmp_interval},
      {"dmp_lbfgs_iters", o.dmp_lbfgs_iters},
      {"c_dmp0", o.c_dmp0},
      {"seed", o.seed},
      {"random_init", o.random_init},
      {"random_amplitude", o.random_amplitude},
      {"threads", o.threads},
      {"lbfgs_round", o.lbfgs_round},
      {"cone_penalty", o.cone_penalty}};
  // resolved weights are echoed in full so the dump closes over the run
  json w;
  for (const auto& [name, member] : weightFields())
    w[name] = scene.problem.weights.*member;
  j["weights"] = w;
  return j;
}

nlohmann::json trajectoryToJson(const Trajectory& traj) {
  json j;
  j["schema_version"] = kSchemaVersion;
  j["dt"] = traj.dt;
  j["K"] = traj.K();
  const int r = traj.K() ? static_cast<int>(traj.configs[0].u.size()) : 0;
  const int dim = traj.K() ? static_cast<int>(traj.configs[0].c.size()) : 0;
  j["r"] = r;
  j["dim"] = dim;
  json cfgs = json::array();
  for (const ReducedConfig& q : traj.configs) cfgs.push_back(toStd(q.stacked()));
  j["configs"] = cfgs;
  if (!traj.active.empty()) {
    json act = json::array(), frc = json::array();
    for (int i = 0; i < traj.K(); ++i) {
      act.push_back(traj.active[i]);
      std::vector<double> flat;
      for (int c = 0; c < traj.forces[i].rows(); ++c)
        for (int a = 0; a < dim; ++a) flat.push_back(traj.forces[i](c, a));
      frc.push_back(flat);
    }
    j["active"] = act;
    j["forces"] = frc;
  }
  if (traj.dmp) j["dmp"] = dmpToJson(*traj.dmp);
  return j;
}

Trajectory trajectoryFromJson(const json& j) {
  checkSchema(j, "trajectory");
  Trajectory traj;
  if (!j.is_object()) fail("trajectory", "expected a JSON object");
  traj.dt = numAt(j, "dt", "trajectory", 0.0);
  if (traj.dt <= 0) fail("trajectory.dt", "must be positive");
  const int r = intAt(j, "r", "trajectory", -1);
  const int dim = intAt(j, "dim", "trajectory", -1);
  if (r < 1) fail("trajectory.r", "must be at least 1");
  if (dim != 2 && dim != 3) fail("trajectory.dim", "must be 2 or 3");
  const json* cfgs = find(j, "configs");
  if (!cfgs || !cfgs->is_array() || cfgs->empty())
    fail("trajectory.configs", "non-empty array required");
  const int nq = r + dim + (dim == 2 ? 1 : 3);
  for (size_t i = 0; i < cfgs->size(); ++i) {
    const std::string path = "trajectory.configs[" + std::to_string(i) + "]";
    if (!(*cfgs)[i].is_array() || static_cast<int>((*cfgs)[i].size()) != nq)
      fail(path, "expected " + std::to_string(nq) + " entries");
    Eigen::VectorXd q(nq);
    for (int k = 0; k < nq; ++k) q[k] = (*cfgs)[i][k].get<double>();
    traj.configs.push_back(ReducedConfig::fromStacked(q, r, dim));
  }
  const int K = traj.K();
  if (intAt(j, "K", "trajectory", K) != K)
    fail("trajectory.K", "does not match the configs array length");
  traj.active.assign(K, {});
  traj.forces.assign(K, Eigen::MatrixXd(0, dim));
  if (const json* act = find(j, "active")) {
    const json* frc = find(j, "forces");
    if (!act->is_array() || static_cast<int>(act->size()) != K)
      fail("trajectory.active", "expected one entry per frame");
    if (!frc || !frc->is_array() || static_cast<int>(frc->size()) != K)
      fail("trajectory.forces", "expected one entry per frame");
    for (int i = 0; i < K; ++i) {
      traj.active[i] = (*act)[i].get<std::vector<int>>();
      auto flat = (*frc)[i].get<std::vector<double>>();
      const int n = static_cast<int>(traj.active[i].size());
      if (static_cast<int>(flat.size()) != n * dim)
        fail("trajectory.forces[" + std::to_string(i) + "]",
             "size does not match the active set");
      Eigen::MatrixXd f(n, dim);
      for (int c = 0; c < n; ++c)
        for (int a = 0; a < dim; ++a) f(c, a) = flat[c * dim + a];
      traj.forces[i] = f;
    }
  }
  if (const json* dj = find(j, "dmp")) traj.dmp = dmpFromJson(*dj);
  return traj;
}

nlohmann::json historyToJson(const std::vector<HistoryRow>& rows) {
  json arr = json::array();
  for (const HistoryRow& h : rows)
    arr.push_back({{"iter", h.iter},
                   {"objective", h.value},
                   {"grad_norm", h.grad_norm},
                   {"damping", h.d},
                   {"c_dmp", h.c_dmp},
                   {"active_count", h.active_count},
                   {"wall_ms", h.wall_ms}});
  return arr;
}

void writeJsonFile(const std::string& path, const json& j) {
  std::ofstream f(path);
  if (!f) throw ConfigError(path + ": cannot open for writing");
  f << j.dump(2) << "\n";
}

nlohmann::json readJsonFile(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError(path + ": cannot open");
  json j;
  try {
    f >> j;
  } catch (const json::parse_error& e) {
    throw ConfigError(path + ": " + e.what());
  }
  checkSchema(j, path);
  return j;
}

}  // namespace rdl
