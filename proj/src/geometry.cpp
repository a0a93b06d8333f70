#include "lensnvs/geometry.hpp"

#include <Eigen/Dense>
#include <Eigen/SVD>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>
#include <tuple>

namespace lensnvs::geom {

Intrinsics Intrinsics::centered(int width, int height, double focal) {
  Intrinsics k;
  k.fx = focal;
  k.fy = focal;
  k.cx = 0.5 * (width - 1);
  k.cy = 0.5 * (height - 1);
  k.width = width;
  k.height = height;
  k.validate();
  return k;
}

void Intrinsics::validate() const {
  if (!(fx > 0.0) || !(fy > 0.0)) throw std::invalid_argument("Intrinsics: focal lengths must be positive");
  if (width <= 0 || height <= 0) throw std::invalid_argument("Intrinsics: image size must be positive");
  if (cx < -width || cx > 2.0 * width || cy < -height || cy > 2.0 * height) {
    throw std::invalid_argument("Intrinsics: principal point outside the allowed margin");
  }
}

void require_rotation(const Mat3& r, const char* what) {
  if (!r.allFinite()) throw std::invalid_argument(std::string(what) + ": non-finite rotation");
  const double ortho = (r.transpose() * r - Mat3::Identity()).cwiseAbs().maxCoeff();
  if (ortho > 1e-9) {
    throw std::invalid_argument(std::string(what) + ": rotation not orthonormal (error " +
                                std::to_string(ortho) + ")");
  }
  if (r.determinant() < 0.0) throw std::invalid_argument(std::string(what) + ": rotation has det -1");
}

Mat3 orthonormalize(const Mat3& r) {
  Eigen::JacobiSVD<Mat3> svd(r, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 u = svd.matrixU();
  const Mat3 v = svd.matrixV();
  if ((u * v.transpose()).determinant() < 0.0) u.col(2) *= -1.0;
  return u * v.transpose();
}

Pose::Pose(const Mat3& rotation, const Vec3& translation) : rotation_(rotation), translation_(translation) {
  require_rotation(rotation_, "Pose");
  if (!translation_.allFinite()) throw std::invalid_argument("Pose: non-finite translation");
}

Pose Pose::look_at(const Vec3& eye, const Vec3& target, const Vec3& up) {
  const Vec3 back = (eye - target).normalized();
  const Vec3 right = up.cross(back).normalized();
  const Vec3 true_up = back.cross(right);
  Mat3 r;
  r.col(0) = right;
  r.col(1) = true_up;
  r.col(2) = back;
  return Pose(orthonormalize(r), eye);
}

bool Pose::same_as(const Pose& other, double tol) const {
  return (rotation_ - other.rotation_).cwiseAbs().maxCoeff() <= tol &&
         (translation_ - other.translation_).cwiseAbs().maxCoeff() <= tol;
}

const char* to_string(DepthSampling mode) {
  return mode == DepthSampling::kUniformDepth ? "uniform-depth" : "uniform-disparity";
}

DepthSampling depth_sampling_from_string(const std::string& name) {
  if (name == "uniform-depth" || name == "depth") return DepthSampling::kUniformDepth;
  if (name == "uniform-disparity" || name == "disparity") return DepthSampling::kUniformDisparity;
  throw std::invalid_argument("unknown depth sampling mode '" + name + "'");
}

Ray ray_for_pixel(const Camera& camera, PixelCoord px, double near, double far) {
  const auto& k = camera.intrinsics;
  if (!(px.x >= 0.0 && px.x <= k.width - 1 && px.y >= 0.0 && px.y <= k.height - 1)) {
    throw std::out_of_range("ray_for_pixel: pixel (" + std::to_string(px.x) + ", " +
                            std::to_string(px.y) + ") outside the image");
  }
  if (!(near > 0.0 && near < far)) throw std::invalid_argument("ray_for_pixel: need 0 < near < far");
  const Vec3 dir_cam((px.x - k.cx) / k.fx, -(px.y - k.cy) / k.fy, -1.0);
  Ray ray;
  ray.origin = camera.pose.center();
  ray.direction = (camera.pose.rotation() * dir_cam).normalized();
  ray.near = near;
  ray.far = far;
  return ray;
}

RaySamples sample_stratified(const Ray& ray, int k, DepthSampling mode, Rng* jitter) {
  if (k < 2) throw std::invalid_argument("sample_stratified: need at least 2 samples");
  if (!(ray.near > 0.0 && ray.near < ray.far)) throw std::invalid_argument("sample_stratified: need 0 < near < far");
  RaySamples out;
  out.t.resize(k);
  out.positions.resize(k);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int i = 0; i < k; ++i) {
    const double u = jitter != nullptr ? unit(*jitter) : 0.5;
    const double s = (i + u) / k;
    double t;
    if (mode == DepthSampling::kUniformDepth) {
      t = ray.near + s * (ray.far - ray.near);
    } else {
      const double disparity = (1.0 - s) / ray.near + s / ray.far;
      t = 1.0 / disparity;
    }
    out.t[i] = std::clamp(t, ray.near, ray.far);
    out.positions[i] = ray.origin + out.t[i] * ray.direction;
  }
  return out;
}

RaySamples sample_stratified(const Ray& ray, int k, DepthSampling mode,
                             std::optional<std::uint64_t> jitter_seed) {
  if (!jitter_seed) return sample_stratified(ray, k, mode, static_cast<Rng*>(nullptr));
  Rng rng(*jitter_seed);
  return sample_stratified(ray, k, mode, &rng);
}

Projection project(const Vec3& point, const Camera& camera) {
  const Vec3 p = camera.pose.to_camera(point);
  Projection out;
  out.depth = -p.z();
  if (!(out.depth > 0.0)) {
    out.behind = true;
    return out;
  }
  const auto& k = camera.intrinsics;
  out.px.x = k.cx + k.fx * p.x() / out.depth;
  out.px.y = k.cy - k.fy * p.y() / out.depth;
  return out;
}

Vec3 unproject(PixelCoord px, double depth, const Camera& camera) {
  if (!(depth > 0.0)) throw std::invalid_argument("unproject: depth must be positive");
  const auto& k = camera.intrinsics;
  const Vec3 p((px.x - k.cx) / k.fx * depth, -(px.y - k.cy) / k.fy * depth, -depth);
  return camera.pose.to_world(p);
}

std::vector<std::size_t> select_source_views(const Pose& target, std::span<const Camera> candidates,
                                             std::size_t n) {
  struct Key {
    long long angle;
    long long distance;
    std::size_t index;
  };
  const Vec3 fwd = target.forward();
  std::vector<Key> keys;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    const Pose& pose = candidates[i].pose;
    if (pose.same_as(target)) continue;
    const double cosine = std::clamp(fwd.dot(pose.forward()), -1.0, 1.0);
    // Quantized so rounding noise cannot reorder geometrically tied candidates.
    keys.push_back({std::llround(std::acos(cosine) * 1e9),
                    std::llround((pose.center() - target.center()).norm() * 1e9), i});
  }
  if (keys.size() < n) {
    throw std::invalid_argument("select_source_views: requested " + std::to_string(n) +
                                " views but only " + std::to_string(keys.size()) +
                                " candidates remain");
  }
  std::sort(keys.begin(), keys.end(), [](const Key& a, const Key& b) {
    return std::tie(a.angle, a.distance, a.index) < std::tie(b.angle, b.distance, b.index);
  });
  std::vector<std::size_t> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = keys[i].index;
  return out;
}

BilinearTap bilinear_tap(PixelCoord px, int width, int height) {
  BilinearTap tap;
  if (!(px.x >= 0.0 && px.x <= width - 1 && px.y >= 0.0 && px.y <= height - 1)) return tap;
  tap.in_bounds = true;
  auto axis = [](double v, int extent, int& i0, int& i1, double& w) {
    if (extent == 1) {
      i0 = i1 = 0;
      w = 0.0;
      return;
    }
    i0 = std::min(static_cast<int>(std::floor(v)), extent - 2);
    i1 = i0 + 1;
    w = v - i0;
  };
  axis(px.x, width, tap.x0, tap.x1, tap.wx);
  axis(px.y, height, tap.y0, tap.y1, tap.wy);
  return tap;
}

Sample bilinear_sample(const img::Image& map, PixelCoord px) {
  Sample out;
  out.value.assign(map.channels(), 0.0);
  const auto tap = bilinear_tap(px, map.width(), map.height());
  if (!tap.in_bounds) return out;
  out.in_bounds = true;
  for (int c = 0; c < map.channels(); ++c) {
    const double top = (1.0 - tap.wx) * map.at(tap.y0, tap.x0, c) + tap.wx * map.at(tap.y0, tap.x1, c);
    const double bottom = (1.0 - tap.wx) * map.at(tap.y1, tap.x0, c) + tap.wx * map.at(tap.y1, tap.x1, c);
    out.value[c] = (1.0 - tap.wy) * top + tap.wy * bottom;
  }
  return out;
}

}  // namespace lensnvs::geom
