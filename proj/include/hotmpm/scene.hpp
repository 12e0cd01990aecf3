#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "hotmpm/common.hpp"

namespace hotmpm {

struct PlasticitySpec {
  enum class Kind { None, VonMises, SnowClamp } kind = Kind::None;
  double yield_stress = 0;
  double clamp_lo = 0.99, clamp_hi = 1.001;
};

struct MaterialSpec {
  double density = 0;
  double youngs = 0;
  double poisson = 0;
  PlasticitySpec plasticity;
};

struct ShapeSpec {
  enum class Kind { Box, Sphere, HalfSpace, Cylinder } kind = Kind::Box;
  std::array<double, 3> min{}, max{};      // Box
  std::array<double, 3> center{};          // Sphere / Cylinder axis point
  double radius = 0;                       // Sphere / Cylinder
  std::array<double, 3> point{}, normal{}; // HalfSpace (inside: (x-point).n <= 0)
  std::array<double, 3> axis{};            // Cylinder (3D)
};

struct MotionSpec {
  enum class Kind { Static, Linear, Rotation } kind = Kind::Static;
  std::array<double, 3> velocity{};  // Linear
  std::array<double, 3> center{};    // Rotation
  std::array<double, 3> axis{};      // Rotation (3D)
  double omega = 0;                  // rad/s
};

struct InitialDeformationSpec {
  enum class Kind { Identity, RandomDiagonal } kind = Kind::Identity;
  double lo = 1, hi = 1;
};

struct ObjectSpec {
  ShapeSpec shape;
  int material = 0;
  std::array<double, 3> velocity{};
  InitialDeformationSpec initial_deformation;
};

struct ColliderSpec {
  ShapeSpec shape;
  MotionSpec motion;
};

/// Full scene description; parsed from a JSON document with strict key and
/// invariant validation.
struct SceneConfig {
  int dim = 2;
  double dx = 0.01;
  std::array<double, 3> gravity{};
  double fps = 24;
  int frames = 24;

  double epsilon = 1e-7;
  double tau = 1e-4;
  int levels = 3;
  int window = 8;
  std::string solver = "hot";
  std::string embedding = "linear";
  double cn_length_factor = 24;

  std::uint64_t seed = 0;
  int ppc = 0;  // 0 means the 2^dim default
  std::string sampling = "jittered";

  std::array<double, 3> domain_min{}, domain_max{};
  std::vector<MaterialSpec> materials;
  std::vector<ObjectSpec> objects;
  std::vector<ColliderSpec> colliders;
};

/// Parses and validates a scene document. Unknown keys, missing required
/// keys, and invariant violations raise ParseError naming the offending path.
SceneConfig parse_scene(const std::string& text);

SceneConfig load_scene_file(const std::string& path);

/// Names of the bundled benchmark scenes (the .json files under scenes/).
std::vector<std::string> builtin_scene_names();

}  // namespace hotmpm
