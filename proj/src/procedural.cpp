#include "lensnvs/procedural.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>

#include "lensnvs/random.hpp"

namespace lensnvs::data {

using geom::Vec3;

Vec3 Texture::eval(double u, double v) const {
  const double su = u / period + phase_u;
  const double sv = v / period + phase_v;
  if (kind == Kind::kChecker) {
    // Half-period squares.
    const auto iu = static_cast<long long>(std::floor(2.0 * su));
    const auto iv = static_cast<long long>(std::floor(2.0 * sv));
    return ((iu + iv) & 1) ? color_b : color_a;
  }
  const double w = 0.5 + 0.25 * (std::sin(2.0 * std::numbers::pi * su) + std::sin(2.0 * std::numbers::pi * sv));
  return (1.0 - w) * color_a + w * color_b;
}

ProceduralWorld::ProceduralWorld(double background_depth, Texture background, std::vector<Box> boxes)
    : background_depth_(background_depth), background_(background), boxes_(std::move(boxes)) {
  if (!(background_depth > 0.0)) throw std::invalid_argument("ProceduralWorld: background depth must be positive");
  for (const auto& b : boxes_) {
    if (!(b.lo.array() < b.hi.array()).all()) throw std::invalid_argument("ProceduralWorld: empty box");
  }
}

namespace {

Texture random_texture(Rng& rng, double min_period) {
  std::uniform_real_distribution<double> color(0.05, 0.95);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  Texture t;
  t.kind = unit(rng) < 0.5 ? Texture::Kind::kChecker : Texture::Kind::kSine;
  t.color_a = Vec3(color(rng), color(rng), color(rng));
  t.color_b = Vec3(color(rng), color(rng), color(rng));
  t.period = min_period * (1.0 + 2.0 * unit(rng));
  t.phase_u = unit(rng);
  t.phase_v = unit(rng);
  return t;
}

}  // namespace

ProceduralWorld ProceduralWorld::random(const ProceduralSpec& spec, std::uint64_t seed) {
  if (!(spec.min_box_depth > 0.0 && spec.min_box_depth < spec.max_box_depth &&
        spec.max_box_depth < spec.background_depth)) {
    throw std::invalid_argument("ProceduralSpec: need 0 < min_box_depth < max_box_depth < background_depth");
  }
  if (spec.boxes < 0) throw std::invalid_argument("ProceduralSpec: negative box count");
  Rng rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const Texture background = random_texture(rng, spec.min_texture_period * 2.0);
  std::vector<Box> boxes;
  // Half field of view tangent; boxes are kept inside the central frustum.
  const double tan_half = 0.5 * std::min(spec.width, spec.height) / spec.focal;
  for (int i = 0; i < spec.boxes; ++i) {
    const double depth = spec.min_box_depth + (spec.max_box_depth - spec.min_box_depth) * unit(rng);
    const double reach = 0.6 * tan_half * depth;
    const double size = (0.15 + 0.2 * unit(rng)) * tan_half * depth;
    const Vec3 c((2.0 * unit(rng) - 1.0) * reach, (2.0 * unit(rng) - 1.0) * reach, -depth);
    const Vec3 half(0.5 * size, 0.5 * size * (0.7 + 0.6 * unit(rng)), 0.5 * size);
    boxes.push_back({c - half, c + half, random_texture(rng, spec.min_texture_period)});
  }
  return ProceduralWorld(spec.background_depth, background, std::move(boxes));
}

std::optional<ProceduralWorld::Hit> ProceduralWorld::intersect(const Vec3& origin, const Vec3& dir) const {
  std::optional<Hit> best;
  if (dir.z() < 0.0) {
    const double t = (-background_depth_ - origin.z()) / dir.z();
    if (t > 0.0) {
      const Vec3 p = origin + t * dir;
      best = Hit{t, background_.eval(p.x(), p.y())};
    }
  }
  for (const auto& box : boxes_) {
    // Slab test; remember which axis the entry face is on.
    double t_near = -std::numeric_limits<double>::infinity();
    double t_far = std::numeric_limits<double>::infinity();
    int axis = -1;
    bool miss = false;
    for (int a = 0; a < 3; ++a) {
      if (dir(a) == 0.0) {
        if (origin(a) < box.lo(a) || origin(a) > box.hi(a)) miss = true;
        continue;
      }
      double t0 = (box.lo(a) - origin(a)) / dir(a);
      double t1 = (box.hi(a) - origin(a)) / dir(a);
      if (t0 > t1) std::swap(t0, t1);
      if (t0 > t_near) {
        t_near = t0;
        axis = a;
      }
      t_far = std::min(t_far, t1);
    }
    if (miss || axis < 0 || t_near > t_far || t_near <= 0.0) continue;
    if (best && best->t <= t_near) continue;
    const Vec3 p = origin + t_near * dir;
    const int ua = (axis + 1) % 3;
    const int va = (axis + 2) % 3;
    best = Hit{t_near, box.texture.eval(p(ua), p(va))};
  }
  return best;
}

img::Image ProceduralWorld::render(const geom::Camera& camera) const {
  const auto& k = camera.intrinsics;
  img::Image out(k.height, k.width, 3);
  for (int y = 0; y < k.height; ++y) {
    for (int x = 0; x < k.width; ++x) {
      const Vec3 d_cam((x - k.cx) / k.fx, -(y - k.cy) / k.fy, -1.0);
      const Vec3 dir = camera.pose.rotation() * d_cam;
      const auto hit = intersect(camera.pose.center(), dir);
      if (!hit) continue;
      for (int c = 0; c < 3; ++c) out.at(y, x, c) = hit->color(c);
    }
  }
  return out;
}

std::vector<geom::Pose> camera_ring(int views, double radius, double look_depth) {
  if (views < 2) throw std::invalid_argument("camera_ring: need at least 2 views");
  if (!(radius > 0.0)) throw std::invalid_argument("camera_ring: radius must be positive");
  if (!(look_depth > 0.0)) throw std::invalid_argument("camera_ring: look depth must be positive");
  std::vector<geom::Pose> poses;
  for (int i = 0; i < views; ++i) {
    const double a = 2.0 * std::numbers::pi * i / views;
    const Vec3 eye(radius * std::cos(a), radius * std::sin(a), 0.0);
    poses.push_back(geom::Pose::look_at(eye, Vec3(0.0, 0.0, -look_depth)));
  }
  return poses;
}

Scene generate_procedural_scene(const ProceduralSpec& spec, std::uint64_t seed) {
  const auto intr = geom::Intrinsics::centered(spec.width, spec.height, spec.focal);
  const auto poses = camera_ring(spec.views, spec.ring_radius, spec.look_depth);
  const ProceduralWorld world = ProceduralWorld::random(spec, seed);
  Scene scene;
  scene.name = "procedural-" + std::to_string(seed);
  scene.layout = SceneLayout::kProcedural;
  scene.near = 0.8 * spec.min_box_depth;
  scene.far = 1.3 * spec.background_depth;  // corner rays travel farther than the plane depth
  for (const auto& pose : poses) {
    SceneView v;
    v.camera = {intr, pose};
    v.gt = world.render(v.camera);
    scene.views.push_back(std::move(v));
  }
  scene.validate();
  return scene;
}

}  // namespace lensnvs::data
