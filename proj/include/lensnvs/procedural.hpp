#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "lensnvs/geometry.hpp"
#include "lensnvs/scene.hpp"

namespace lensnvs::data {

/// Analytic surface texture over 2-D surface coordinates (u, v).
struct Texture {
  enum class Kind { kChecker, kSine };
  Kind kind = Kind::kChecker;
  geom::Vec3 color_a{0.2, 0.2, 0.2};
  geom::Vec3 color_b{0.8, 0.8, 0.8};
  double period = 1.0;  // world units per full cycle
  double phase_u = 0.0;
  double phase_v = 0.0;

  geom::Vec3 eval(double u, double v) const;
};

/// Axis-aligned box; textured on all faces with the face's two free coordinates.
struct Box {
  geom::Vec3 lo;
  geom::Vec3 hi;
  Texture texture;
};

struct ProceduralSpec {
  int width = 64;
  int height = 64;
  double focal = 64.0;
  int views = 16;
  double ring_radius = 0.25;
  double look_depth = 4.0;      // cameras look at (0, 0, -look_depth)
  double background_depth = 6.0;  // fronto-parallel plane z = -background_depth
  int boxes = 3;
  double min_box_depth = 2.0;
  double max_box_depth = 5.0;
  double min_texture_period = 0.3;
};

/// The world behind a procedural scene. Colors are linear RGB in [0.05, 0.95].
class ProceduralWorld {
 public:
  struct Hit {
    double t;
    geom::Vec3 color;
  };

  ProceduralWorld(double background_depth, Texture background, std::vector<Box> boxes);
  static ProceduralWorld random(const ProceduralSpec& spec, std::uint64_t seed);

  /// Nearest intersection along origin + t * dir with t > 0.
  std::optional<Hit> intersect(const geom::Vec3& origin, const geom::Vec3& dir) const;
  /// One ray per pixel center; misses (never for rays facing -z) are black.
  img::Image render(const geom::Camera& camera) const;

  double background_depth() const { return background_depth_; }
  const std::vector<Box>& boxes() const { return boxes_; }

 private:
  double background_depth_;
  Texture background_;
  std::vector<Box> boxes_;
};

/// Poses on a circle of `radius` in the z = 0 plane, all looking at
/// (0, 0, -look_depth). Throws on radius <= 0 or fewer than 2 views.
std::vector<geom::Pose> camera_ring(int views, double radius, double look_depth);

/// Random world plus ring cameras rendered analytically; near/far bracket
/// the content seen by the ring.
Scene generate_procedural_scene(const ProceduralSpec& spec, std::uint64_t seed);

}  // namespace lensnvs::data
