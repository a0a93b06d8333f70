#include "lensnvs/scene.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <stdexcept>

#include "lensnvs/image_io.hpp"
#include "lensnvs/llff.hpp"

namespace lensnvs::data {

namespace fs = std::filesystem;

const char* to_string(SceneLayout layout) {
  return layout == SceneLayout::kLlff ? "llff" : "procedural";
}

SceneLayout scene_layout_from_string(const std::string& name) {
  if (name == "llff") return SceneLayout::kLlff;
  if (name == "procedural") return SceneLayout::kProcedural;
  throw std::invalid_argument("unknown scene layout '" + name + "'");
}

void Scene::validate() const {
  if (views.size() < 2) throw std::invalid_argument("Scene '" + name + "': need at least 2 views");
  if (!(near > 0.0 && near < far)) throw std::invalid_argument("Scene '" + name + "': need 0 < near < far");
  const auto& k0 = views.front().camera.intrinsics;
  for (std::size_t i = 0; i < views.size(); ++i) {
    const auto& v = views[i];
    const auto& k = v.camera.intrinsics;
    k.validate();
    if (k.width != k0.width || k.height != k0.height) {
      throw std::invalid_argument("Scene '" + name + "': view " + std::to_string(i) + " has different dimensions");
    }
    if (v.gt.width() != k.width || v.gt.height() != k.height) {
      throw std::invalid_argument("Scene '" + name + "': view " + std::to_string(i) + " image does not match intrinsics");
    }
    if (v.coarse && !v.coarse->same_shape(v.gt)) {
      throw std::invalid_argument("Scene '" + name + "': view " + std::to_string(i) + " coarse estimate has wrong shape");
    }
  }
}

bool Scene::has_lensless() const {
  return !views.empty() && std::all_of(views.begin(), views.end(), [](const SceneView& v) { return v.coarse.has_value(); });
}

std::vector<geom::Camera> Scene::cameras() const {
  std::vector<geom::Camera> out;
  out.reserve(views.size());
  for (const auto& v : views) out.push_back(v.camera);
  return out;
}

bool is_validation_view(std::size_t index) { return index % 8 == 0; }

std::vector<std::size_t> validation_views(std::size_t count) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < count; ++i) {
    if (is_validation_view(i)) out.push_back(i);
  }
  return out;
}

std::vector<std::size_t> training_views(std::size_t count) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < count; ++i) {
    if (!is_validation_view(i)) out.push_back(i);
  }
  return out;
}

Manifest read_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open manifest " + path.string());
  Manifest m;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": expected key=value");
    }
    m[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return m;
}

void write_manifest(const fs::path& path, const Manifest& manifest) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    for (const auto& [k, v] : manifest) out << k << '=' << v << '\n';
    if (!out) throw std::runtime_error("write failed: " + tmp.string());
  }
  fs::rename(tmp, path);
}

namespace {

std::string view_file(std::size_t i, const char* ext) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%03zu%s", i, ext);
  return buf;
}

// Image files in a directory, sorted by name; only png and pfm are considered.
std::vector<fs::path> list_images(const fs::path& dir) {
  std::vector<fs::path> out;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    auto ext = entry.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    if (ext == ".png" || ext == ".pfm") out.push_back(entry.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<img::Image> load_folder(const fs::path& dir, std::size_t expected) {
  const auto files = list_images(dir);
  if (files.size() != expected) {
    throw std::runtime_error(dir.string() + ": found " + std::to_string(files.size()) + " images but " +
                             std::to_string(expected) + " poses");
  }
  std::vector<img::Image> out;
  for (const auto& f : files) {
    img::Image im = img::read_image(f);
    if (im.channels() == 1) im = img::broadcast_channels(im, 3);
    out.push_back(std::move(im));
  }
  return out;
}

}  // namespace

Scene load_llff_scene(const fs::path& dir) {
  const fs::path poses_path = dir / "poses_bounds.npy";
  if (!fs::exists(poses_path)) throw std::runtime_error(dir.string() + ": missing poses_bounds.npy");
  const auto records = geom::read_poses_bounds(poses_path);

  Manifest manifest;
  if (fs::exists(dir / "manifest")) manifest = read_manifest(dir / "manifest");

  fs::path gt_dir = dir / "gt";
  if (!fs::is_directory(gt_dir)) gt_dir = dir / "images";
  if (!fs::is_directory(gt_dir)) throw std::runtime_error(dir.string() + ": no gt/ or images/ folder");
  auto gts = load_folder(gt_dir, records.size());

  Scene scene;
  scene.name = manifest.count("name") ? manifest["name"] : dir.filename().string();
  scene.layout = manifest.count("layout") ? scene_layout_from_string(manifest["layout"]) : SceneLayout::kLlff;
  scene.near = records.empty() ? 0.0 : records.front().near;
  scene.far = records.empty() ? 0.0 : records.front().far;
  for (std::size_t i = 0; i < records.size(); ++i) {
    scene.near = std::min(scene.near, records[i].near);
    scene.far = std::max(scene.far, records[i].far);
    SceneView v;
    v.camera = records[i].camera;
    v.gt = std::move(gts[i]);
    scene.views.push_back(std::move(v));
  }

  if (fs::is_directory(dir / "lensless")) {
    auto caps = load_folder(dir / "lensless", records.size());
    const double snr = manifest.count("snr_db") ? std::stod(manifest["snr_db"]) : img::kNoNoise;
    const auto boundary = manifest.count("boundary") ? img::boundary_from_string(manifest["boundary"])
                                                     : img::Boundary::kZeroPadLinear;
    for (std::size_t i = 0; i < caps.size(); ++i) {
      scene.views[i].capture = lensless::LenslessCapture{std::move(caps[i]), snr, manifest["psf_id"], boundary};
    }
  }
  if (fs::is_directory(dir / "coarse")) {
    auto coarse = load_folder(dir / "coarse", records.size());
    for (std::size_t i = 0; i < coarse.size(); ++i) scene.views[i].coarse = std::move(coarse[i]);
  }
  scene.validate();
  return scene;
}

void save_scene(const fs::path& dir, const Scene& scene, const Manifest& extra) {
  scene.validate();
  fs::create_directories(dir / "gt");
  std::vector<geom::LlffRecord> records;
  for (std::size_t i = 0; i < scene.views.size(); ++i) {
    const auto& v = scene.views[i];
    img::write_pfm(dir / "gt" / view_file(i, ".pfm"), v.gt);
    if (v.capture) {
      fs::create_directories(dir / "lensless");
      img::write_pfm(dir / "lensless" / view_file(i, ".pfm"), v.capture->raster);
    }
    if (v.coarse) {
      fs::create_directories(dir / "coarse");
      img::write_pfm(dir / "coarse" / view_file(i, ".pfm"), *v.coarse);
    }
    records.push_back({v.camera, scene.near, scene.far});
  }
  geom::write_poses_bounds(dir / "poses_bounds.npy", records);

  Manifest m = extra;
  m["name"] = scene.name;
  m["layout"] = to_string(scene.layout);
  m["views"] = std::to_string(scene.views.size());
  if (scene.has_lensless() && scene.views.front().capture) {
    const auto& cap = *scene.views.front().capture;
    m["psf_id"] = cap.psf_id;
    m["boundary"] = img::to_string(cap.boundary);
    if (!m.count("snr_db")) m["snr_db"] = std::to_string(cap.snr_db);
  }
  write_manifest(dir / "manifest", m);
}

}  // namespace lensnvs::data
