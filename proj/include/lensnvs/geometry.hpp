#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "lensnvs/image.hpp"
#include "lensnvs/random.hpp"

namespace lensnvs::geom {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

/// Pinhole intrinsics. Pixel (x, y) of the raster has its center at continuous
/// coordinate (x, y); image y grows downward.
struct Intrinsics {
  double fx = 1.0;
  double fy = 1.0;
  double cx = 0.0;
  double cy = 0.0;
  int width = 0;
  int height = 0;

  /// Centered principal point, equal focal lengths.
  static Intrinsics centered(int width, int height, double focal);
  void validate() const;
  friend bool operator==(const Intrinsics&, const Intrinsics&) = default;
};

/// World-from-camera rigid transform. The camera looks down its local -z
/// axis with +x right and +y up.
class Pose {
 public:
  Pose() = default;
  /// Throws unless R^T R = I to 1e-9 and det(R) = +1.
  Pose(const Mat3& rotation, const Vec3& translation);

  static Pose identity() { return Pose(); }
  /// Camera at `eye` looking at `target`; `up` need not be orthogonal.
  static Pose look_at(const Vec3& eye, const Vec3& target, const Vec3& up = Vec3::UnitY());

  const Mat3& rotation() const { return rotation_; }
  const Vec3& translation() const { return translation_; }
  Vec3 center() const { return translation_; }
  /// Unit viewing direction in world space.
  Vec3 forward() const { return -rotation_.col(2); }

  Vec3 to_world(const Vec3& camera_point) const { return rotation_ * camera_point + translation_; }
  Vec3 to_camera(const Vec3& world_point) const {
    return rotation_.transpose() * (world_point - translation_);
  }

  bool same_as(const Pose& other, double tol = 1e-12) const;

 private:
  Mat3 rotation_ = Mat3::Identity();
  Vec3 translation_ = Vec3::Zero();
};

/// Throws std::invalid_argument unless `r` is a proper rotation to 1e-9.
void require_rotation(const Mat3& r, const char* what);

/// Nearest proper rotation (SVD projection).
Mat3 orthonormalize(const Mat3& r);

struct Camera {
  Intrinsics intrinsics;
  Pose pose;
};

struct PixelCoord {
  double x = 0.0;
  double y = 0.0;
};

struct Ray {
  Vec3 origin = Vec3::Zero();
  Vec3 direction = -Vec3::UnitZ();
  double near = 1.0;
  double far = 2.0;
};

struct RaySamples {
  std::vector<double> t;
  std::vector<Vec3> positions;
};

enum class DepthSampling { kUniformDepth, kUniformDisparity };

const char* to_string(DepthSampling mode);
DepthSampling depth_sampling_from_string(const std::string& name);

/// Ray through the center of (continuous) pixel `px`. Throws when `px` lies
/// outside [0, W-1] × [0, H-1] or when 0 < near < far is violated.
Ray ray_for_pixel(const Camera& camera, PixelCoord px, double near, double far);

/// One sample per bin over [near, far] in depth or in disparity. Bin centers
/// without jitter, uniform within each bin with it.
RaySamples sample_stratified(const Ray& ray, int k, DepthSampling mode, Rng* jitter = nullptr);
RaySamples sample_stratified(const Ray& ray, int k, DepthSampling mode,
                             std::optional<std::uint64_t> jitter_seed);

struct Projection {
  PixelCoord px;
  double depth = 0.0;
  bool behind = false;  // depth <= 0; px is meaningless then
};

Projection project(const Vec3& point, const Camera& camera);

/// World point at camera-space depth `depth` through `px`. Throws if depth <= 0.
Vec3 unproject(PixelCoord px, double depth, const Camera& camera);

/// Indices of the `n` candidates whose viewing direction is angularly
/// closest to the target's, excluding any candidate with the target's exact
/// pose. Ties break on camera-center distance, then on input index.
std::vector<std::size_t> select_source_views(const Pose& target, std::span<const Camera> candidates,
                                             std::size_t n);

/// Bilinear footprint of a continuous coordinate on a W×H grid.
struct BilinearTap {
  int x0 = 0;
  int y0 = 0;
  int x1 = 0;
  int y1 = 0;
  double wx = 0.0;  // weight of x1
  double wy = 0.0;  // weight of y1
  bool in_bounds = false;
};

/// Coordinates outside [0, W-1] × [0, H-1] yield in_bounds = false.
BilinearTap bilinear_tap(PixelCoord px, int width, int height);

struct Sample {
  std::vector<double> value;
  bool in_bounds = false;
};

/// Bilinear interpolation of all channels; zero vector when out of bounds.
Sample bilinear_sample(const img::Image& map, PixelCoord px);

}  // namespace lensnvs::geom
