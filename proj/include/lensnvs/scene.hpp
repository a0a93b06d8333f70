#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "lensnvs/geometry.hpp"
#include "lensnvs/image.hpp"
#include "lensnvs/lensless.hpp"

namespace lensnvs::data {

enum class SceneLayout { kLlff, kProcedural };

const char* to_string(SceneLayout layout);
SceneLayout scene_layout_from_string(const std::string& name);

struct SceneView {
  geom::Camera camera;
  img::Image gt;
  // Present once the scene has been through lensless synthesis.
  std::optional<lensless::LenslessCapture> capture;
  std::optional<img::Image> coarse;
};

struct Scene {
  std::string name;
  SceneLayout layout = SceneLayout::kProcedural;
  double near = 0.0;
  double far = 0.0;
  std::vector<SceneView> views;

  /// Throws std::invalid_argument on < 2 views, near >= far, or image sizes
  /// that disagree with the intrinsics or with each other.
  void validate() const;
  bool has_lensless() const;
  std::vector<geom::Camera> cameras() const;
};

/// Held-out split: every 8th view (0, 8, 16, ...) is for validation.
bool is_validation_view(std::size_t index);
std::vector<std::size_t> validation_views(std::size_t count);
std::vector<std::size_t> training_views(std::size_t count);

/// Free-form key=value text stored next to a scene.
using Manifest = std::map<std::string, std::string>;
Manifest read_manifest(const std::filesystem::path& path);
/// Written to a temporary file and renamed into place.
void write_manifest(const std::filesystem::path& path, const Manifest& manifest);

/// Loads an LLFF-style directory: poses_bounds.npy plus images in gt/ (or
/// images/), PNG (sRGB, linearized) or PFM (linear). lensless/ and coarse/
/// are picked up when present. The scene bounds are the min near and max far.
Scene load_llff_scene(const std::filesystem::path& dir);

/// Writes gt/, lensless/, coarse/ as PFM (float32), poses_bounds.npy and the
/// manifest (merged with the scene's own keys). Intrinsics must be square
/// pixels with a centered principal point, which LLFF cannot express otherwise.
void save_scene(const std::filesystem::path& dir, const Scene& scene, const Manifest& extra = {});

}  // namespace lensnvs::data
