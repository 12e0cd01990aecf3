#include "hotmpm/scene.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

namespace hotmpm {

namespace {

using nlohmann::json;

void require_keys(const json& j, const std::string& path, const std::set<std::string>& known,
                  const std::set<std::string>& required) {
  if (!j.is_object()) throw ParseError(path, "expected an object");
  for (const auto& [key, _] : j.items())
    if (!known.count(key)) throw ParseError(path, "unknown key '" + key + "'");
  for (const auto& key : required)
    if (!j.contains(key)) throw ParseError(path, "missing required key '" + key + "'");
}

double get_number(const json& j, const std::string& path) {
  if (!j.is_number()) throw ParseError(path, "expected a number");
  return j.get<double>();
}

int get_int(const json& j, const std::string& path) {
  if (!j.is_number_integer()) throw ParseError(path, "expected an integer");
  return j.get<int>();
}

std::string get_string(const json& j, const std::string& path) {
  if (!j.is_string()) throw ParseError(path, "expected a string");
  return j.get<std::string>();
}

std::array<double, 3> get_vector(const json& j, const std::string& path, int dim) {
  if (!j.is_array() || static_cast<int>(j.size()) != dim)
    throw ParseError(path, "expected an array of " + std::to_string(dim) + " numbers");
  std::array<double, 3> v{};
  for (int a = 0; a < dim; ++a) v[a] = get_number(j[a], path + "[" + std::to_string(a) + "]");
  return v;
}

PlasticitySpec parse_plasticity(const json& j, const std::string& path) {
  PlasticitySpec p;
  require_keys(j, path, {"kind", "yield_stress", "lo", "hi"}, {"kind"});
  const std::string kind = get_string(j.at("kind"), path + ".kind");
  if (kind == "none") {
    p.kind = PlasticitySpec::Kind::None;
  } else if (kind == "von_mises") {
    p.kind = PlasticitySpec::Kind::VonMises;
    if (!j.contains("yield_stress")) throw ParseError(path, "missing required key 'yield_stress'");
    p.yield_stress = get_number(j.at("yield_stress"), path + ".yield_stress");
    if (!(p.yield_stress > 0)) throw ParseError(path + ".yield_stress", "must be positive");
  } else if (kind == "snow_clamp") {
    p.kind = PlasticitySpec::Kind::SnowClamp;
    if (j.contains("lo")) p.clamp_lo = get_number(j.at("lo"), path + ".lo");
    if (j.contains("hi")) p.clamp_hi = get_number(j.at("hi"), path + ".hi");
    if (!(p.clamp_lo <= 1.0 && 1.0 <= p.clamp_hi))
      throw ParseError(path, "snow clamp interval must bracket 1");
  } else {
    throw ParseError(path + ".kind", "unknown plasticity kind '" + kind + "'");
  }
  return p;
}

MaterialSpec parse_material(const json& j, const std::string& path) {
  MaterialSpec m;
  require_keys(j, path, {"density", "youngs", "poisson", "plasticity"},
               {"density", "youngs", "poisson"});
  m.density = get_number(j.at("density"), path + ".density");
  m.youngs = get_number(j.at("youngs"), path + ".youngs");
  m.poisson = get_number(j.at("poisson"), path + ".poisson");
  if (!(m.density > 0)) throw ParseError(path + ".density", "must be positive");
  if (!(m.youngs > 0)) throw ParseError(path + ".youngs", "must be positive");
  if (!(m.poisson >= 0 && m.poisson < 0.5))
    throw ParseError(path + ".poisson", "must lie in [0, 0.5)");
  if (j.contains("plasticity")) m.plasticity = parse_plasticity(j.at("plasticity"), path + ".plasticity");
  return m;
}

ShapeSpec parse_shape(const json& j, const std::string& path, int dim, bool collider) {
  ShapeSpec s;
  require_keys(j, path, {"kind", "min", "max", "center", "radius", "point", "normal", "axis"},
               {"kind"});
  const std::string kind = get_string(j.at("kind"), path + ".kind");
  auto need = [&](const char* key) -> const json& {
    if (!j.contains(key)) throw ParseError(path, std::string("missing required key '") + key + "'");
    return j.at(key);
  };
  if (kind == "box") {
    s.kind = ShapeSpec::Kind::Box;
    s.min = get_vector(need("min"), path + ".min", dim);
    s.max = get_vector(need("max"), path + ".max", dim);
    for (int a = 0; a < dim; ++a)
      if (!(s.min[a] < s.max[a])) throw ParseError(path, "box min must be below max on every axis");
  } else if (kind == "sphere") {
    s.kind = ShapeSpec::Kind::Sphere;
    s.center = get_vector(need("center"), path + ".center", dim);
    s.radius = get_number(need("radius"), path + ".radius");
    if (!(s.radius > 0)) throw ParseError(path + ".radius", "must be positive");
  } else if (kind == "half_space") {
    if (!collider) throw ParseError(path + ".kind", "half_space is only valid for colliders");
    s.kind = ShapeSpec::Kind::HalfSpace;
    s.point = get_vector(need("point"), path + ".point", dim);
    s.normal = get_vector(need("normal"), path + ".normal", dim);
  } else if (kind == "cylinder") {
    if (!collider) throw ParseError(path + ".kind", "cylinder is only valid for colliders");
    s.kind = ShapeSpec::Kind::Cylinder;
    s.center = get_vector(need("center"), path + ".center", dim);
    s.radius = get_number(need("radius"), path + ".radius");
    if (!(s.radius > 0)) throw ParseError(path + ".radius", "must be positive");
    if (dim == 3) s.axis = get_vector(need("axis"), path + ".axis", 3);
  } else {
    throw ParseError(path + ".kind", "unknown shape kind '" + kind + "'");
  }
  return s;
}

MotionSpec parse_motion(const json& j, const std::string& path, int dim) {
  MotionSpec m;
  require_keys(j, path, {"kind", "velocity", "center", "axis", "omega"}, {"kind"});
  const std::string kind = get_string(j.at("kind"), path + ".kind");
  if (kind == "static") {
    m.kind = MotionSpec::Kind::Static;
  } else if (kind == "linear") {
    m.kind = MotionSpec::Kind::Linear;
    if (!j.contains("velocity")) throw ParseError(path, "missing required key 'velocity'");
    m.velocity = get_vector(j.at("velocity"), path + ".velocity", dim);
  } else if (kind == "rotation") {
    m.kind = MotionSpec::Kind::Rotation;
    if (!j.contains("center")) throw ParseError(path, "missing required key 'center'");
    if (!j.contains("omega")) throw ParseError(path, "missing required key 'omega'");
    m.center = get_vector(j.at("center"), path + ".center", dim);
    m.omega = get_number(j.at("omega"), path + ".omega");
    if (dim == 3) {
      if (!j.contains("axis")) throw ParseError(path, "missing required key 'axis'");
      m.axis = get_vector(j.at("axis"), path + ".axis", 3);
    }
  } else {
    throw ParseError(path + ".kind", "unknown motion kind '" + kind + "'");
  }
  return m;
}

InitialDeformationSpec parse_initial_deformation(const json& j, const std::string& path) {
  InitialDeformationSpec f;
  require_keys(j, path, {"kind", "lo", "hi"}, {"kind"});
  const std::string kind = get_string(j.at("kind"), path + ".kind");
  if (kind == "identity") {
    f.kind = InitialDeformationSpec::Kind::Identity;
  } else if (kind == "random_diagonal") {
    f.kind = InitialDeformationSpec::Kind::RandomDiagonal;
    if (!j.contains("lo") || !j.contains("hi"))
      throw ParseError(path, "random_diagonal requires 'lo' and 'hi'");
    f.lo = get_number(j.at("lo"), path + ".lo");
    f.hi = get_number(j.at("hi"), path + ".hi");
    if (!(f.lo > 0 && f.lo <= f.hi)) throw ParseError(path, "need 0 < lo <= hi");
  } else {
    throw ParseError(path + ".kind", "unknown initial deformation kind '" + kind + "'");
  }
  return f;
}

void check_in_domain(const SceneConfig& s, const ShapeSpec& shape, const std::string& path) {
  auto inside = [&](const std::array<double, 3>& x) {
    for (int a = 0; a < s.dim; ++a)
      if (x[a] < s.domain_min[a] || x[a] > s.domain_max[a]) return false;
    return true;
  };
  if (shape.kind == ShapeSpec::Kind::Box) {
    if (!inside(shape.min) || !inside(shape.max))
      throw ParseError(path, "shape extends outside the declared domain box");
  } else if (shape.kind == ShapeSpec::Kind::Sphere) {
    std::array<double, 3> lo = shape.center, hi = shape.center;
    for (int a = 0; a < s.dim; ++a) {
      lo[a] -= shape.radius;
      hi[a] += shape.radius;
    }
    if (!inside(lo) || !inside(hi))
      throw ParseError(path, "shape extends outside the declared domain box");
  }
}

}  // namespace

SceneConfig parse_scene(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError("", std::string("invalid JSON: ") + e.what());
  }

  SceneConfig s;
  require_keys(j, "scene",
               {"dim", "dx", "gravity", "fps", "frames", "epsilon", "tau", "levels", "window",
                "solver", "embedding", "cn_length_factor", "seed", "ppc", "sampling", "domain",
                "materials", "objects", "colliders"},
               {"dx", "domain", "materials", "objects"});

  if (j.contains("dim")) s.dim = get_int(j.at("dim"), "scene.dim");
  if (s.dim != 2 && s.dim != 3) throw ParseError("scene.dim", "must be 2 or 3");
  s.dx = get_number(j.at("dx"), "scene.dx");
  if (!(s.dx > 0)) throw ParseError("scene.dx", "must be positive");
  if (j.contains("gravity")) s.gravity = get_vector(j.at("gravity"), "scene.gravity", s.dim);
  if (j.contains("fps")) s.fps = get_number(j.at("fps"), "scene.fps");
  if (!(s.fps > 0)) throw ParseError("scene.fps", "must be positive");
  if (j.contains("frames")) s.frames = get_int(j.at("frames"), "scene.frames");
  if (s.frames < 0) throw ParseError("scene.frames", "must be non-negative");

  if (j.contains("epsilon")) s.epsilon = get_number(j.at("epsilon"), "scene.epsilon");
  if (!(s.epsilon > 0)) throw ParseError("scene.epsilon", "must be positive");
  if (j.contains("tau")) s.tau = get_number(j.at("tau"), "scene.tau");
  if (s.tau < 0) throw ParseError("scene.tau", "must be non-negative");
  if (j.contains("levels")) s.levels = get_int(j.at("levels"), "scene.levels");
  if (s.levels < 1) throw ParseError("scene.levels", "must be at least 1");
  if (j.contains("window")) s.window = get_int(j.at("window"), "scene.window");
  if (s.window < 1) throw ParseError("scene.window", "must be at least 1");
  if (j.contains("solver")) s.solver = get_string(j.at("solver"), "scene.solver");
  if (j.contains("embedding")) s.embedding = get_string(j.at("embedding"), "scene.embedding");
  if (s.embedding != "linear" && s.embedding != "quadratic")
    throw ParseError("scene.embedding", "must be 'linear' or 'quadratic'");
  if (j.contains("cn_length_factor"))
    s.cn_length_factor = get_number(j.at("cn_length_factor"), "scene.cn_length_factor");
  if (!(s.cn_length_factor > 0)) throw ParseError("scene.cn_length_factor", "must be positive");

  if (j.contains("seed")) {
    if (!j.at("seed").is_number_unsigned() && !j.at("seed").is_number_integer())
      throw ParseError("scene.seed", "expected an integer");
    s.seed = j.at("seed").get<std::uint64_t>();
  }
  if (j.contains("ppc")) s.ppc = get_int(j.at("ppc"), "scene.ppc");
  if (s.ppc < 0) throw ParseError("scene.ppc", "must be non-negative");
  if (j.contains("sampling")) s.sampling = get_string(j.at("sampling"), "scene.sampling");
  if (s.sampling != "jittered" && s.sampling != "poisson")
    throw ParseError("scene.sampling", "must be 'jittered' or 'poisson'");

  {
    const json& dom = j.at("domain");
    require_keys(dom, "scene.domain", {"min", "max"}, {"min", "max"});
    s.domain_min = get_vector(dom.at("min"), "scene.domain.min", s.dim);
    s.domain_max = get_vector(dom.at("max"), "scene.domain.max", s.dim);
    for (int a = 0; a < s.dim; ++a)
      if (!(s.domain_min[a] < s.domain_max[a]))
        throw ParseError("scene.domain", "min must be below max on every axis");
  }

  const json& mats = j.at("materials");
  if (!mats.is_array() || mats.empty())
    throw ParseError("scene.materials", "expected a non-empty array");
  for (std::size_t i = 0; i < mats.size(); ++i)
    s.materials.push_back(parse_material(mats[i], "scene.materials[" + std::to_string(i) + "]"));

  const json& objs = j.at("objects");
  if (!objs.is_array() || objs.empty())
    throw ParseError("scene.objects", "expected a non-empty array");
  for (std::size_t i = 0; i < objs.size(); ++i) {
    const std::string path = "scene.objects[" + std::to_string(i) + "]";
    const json& o = objs[i];
    require_keys(o, path, {"shape", "material", "velocity", "initial_deformation"},
                 {"shape", "material"});
    ObjectSpec obj;
    obj.shape = parse_shape(o.at("shape"), path + ".shape", s.dim, false);
    obj.material = get_int(o.at("material"), path + ".material");
    if (obj.material < 0 || obj.material >= static_cast<int>(s.materials.size()))
      throw ParseError(path + ".material", "references a material id that does not exist");
    if (o.contains("velocity")) obj.velocity = get_vector(o.at("velocity"), path + ".velocity", s.dim);
    if (o.contains("initial_deformation"))
      obj.initial_deformation =
          parse_initial_deformation(o.at("initial_deformation"), path + ".initial_deformation");
    check_in_domain(s, obj.shape, path + ".shape");
    s.objects.push_back(obj);
  }

  if (j.contains("colliders")) {
    const json& cols = j.at("colliders");
    if (!cols.is_array()) throw ParseError("scene.colliders", "expected an array");
    for (std::size_t i = 0; i < cols.size(); ++i) {
      const std::string path = "scene.colliders[" + std::to_string(i) + "]";
      const json& c = cols[i];
      require_keys(c, path, {"shape", "motion"}, {"shape"});
      ColliderSpec col;
      col.shape = parse_shape(c.at("shape"), path + ".shape", s.dim, true);
      if (c.contains("motion")) col.motion = parse_motion(c.at("motion"), path + ".motion", s.dim);
      s.colliders.push_back(col);
    }
  }

  return s;
}

SceneConfig load_scene_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError(path, "cannot open scene file");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_scene(buf.str());
}

std::vector<std::string> builtin_scene_names() {
  return {"stretched_box", "stiffness_bar", "twist_bar", "soft_blob", "sauce_blob", "cube3d"};
}

}  // namespace hotmpm
