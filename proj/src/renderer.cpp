#include "lensnvs/renderer.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>
#include <stdexcept>

namespace lensnvs::render {

using geom::Vec3;
using nn::Tensor;

void RendererConfig::validate() const {
  if (feature_dim < 1 || pyramid_levels < 1 || heads < 1 || view_depth < 0 || ray_depth < 0 ||
      points_per_ray < 1 || source_views < 1 || direction_frequencies < 1 || depth_frequencies < 1) {
    throw std::invalid_argument("RendererConfig: all counts must be >= 1");
  }
  if (feature_dim % heads != 0) throw std::invalid_argument("RendererConfig: feature_dim must be divisible by heads");
}

std::string RendererConfig::to_text() const {
  std::ostringstream os;
  os << "feature_dim=" << feature_dim << '\n'
     << "pyramid_levels=" << pyramid_levels << '\n'
     << "heads=" << heads << '\n'
     << "view_depth=" << view_depth << '\n'
     << "ray_depth=" << ray_depth << '\n'
     << "points_per_ray=" << points_per_ray << '\n'
     << "source_views=" << source_views << '\n'
     << "direction_frequencies=" << direction_frequencies << '\n'
     << "depth_frequencies=" << depth_frequencies << '\n'
     << "sampling=" << geom::to_string(sampling) << '\n';
  return os.str();
}

RendererConfig RendererConfig::from_text(const std::string& text) {
  RendererConfig c;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    const std::string key = line.substr(0, eq);
    const std::string value = line.substr(eq + 1);
    if (key == "feature_dim") c.feature_dim = std::stoi(value);
    else if (key == "pyramid_levels") c.pyramid_levels = std::stoi(value);
    else if (key == "heads") c.heads = std::stoi(value);
    else if (key == "view_depth") c.view_depth = std::stoi(value);
    else if (key == "ray_depth") c.ray_depth = std::stoi(value);
    else if (key == "points_per_ray") c.points_per_ray = std::stoi(value);
    else if (key == "source_views") c.source_views = std::stoi(value);
    else if (key == "direction_frequencies") c.direction_frequencies = std::stoi(value);
    else if (key == "depth_frequencies") c.depth_frequencies = std::stoi(value);
    else if (key == "sampling") c.sampling = geom::depth_sampling_from_string(value);
  }
  c.validate();
  return c;
}

void sinusoidal_encoding(double x, int frequencies, std::span<double> out) {
  for (int f = 0; f < frequencies; ++f) {
    const double a = std::ldexp(std::numbers::pi, f) * x;
    out[2 * f] = std::sin(a);
    out[2 * f + 1] = std::cos(a);
  }
}

double normalized_depth(double t, double near, double far, geom::DepthSampling mode) {
  if (mode == geom::DepthSampling::kUniformDepth) return (t - near) / (far - near);
  return (1.0 / t - 1.0 / near) / (1.0 / far - 1.0 / near);
}

namespace {

void add_block_params(nn::ParamStore& store, const std::string& p, int d, Rng& rng) {
  store.create_constant(p + ".ln1.g", {d}, 1.0);
  store.create_constant(p + ".ln1.b", {d}, 0.0);
  for (const char* m : {".q", ".k", ".v"}) {
    store.create_xavier(p + m + ".w", {d, d}, d, d, rng);
    store.create_constant(p + m + ".b", {d}, 0.0);
  }
  store.create_constant(p + ".ln2.g", {d}, 1.0);
  store.create_constant(p + ".ln2.b", {d}, 0.0);
  store.create_xavier(p + ".ff1.w", {d, 2 * d}, d, 2 * d, rng);
  store.create_constant(p + ".ff1.b", {2 * d}, 0.0);
  store.create_xavier(p + ".ff2.w", {2 * d, d}, 2 * d, d, rng);
  store.create_constant(p + ".ff2.b", {d}, 0.0);
}

void add_pool_params(nn::ParamStore& store, const std::string& p, int d, Rng& rng) {
  store.create_constant(p + ".ln.g", {d}, 1.0);
  store.create_constant(p + ".ln.b", {d}, 0.0);
  for (const char* m : {".q", ".k", ".v"}) {
    store.create_xavier(p + m + ".w", {d, d}, d, d, rng);
    store.create_constant(p + m + ".b", {d}, 0.0);
  }
}

Tensor image_to_chw(const img::Image& image) {
  if (image.channels() != 3) throw std::invalid_argument("extract_features: expected a 3-channel image");
  const int h = image.height();
  const int w = image.width();
  std::vector<double> v(image.size());
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) v[(static_cast<std::size_t>(c) * h + y) * w + x] = image.at(y, x, c);
  return Tensor::constant({3, h, w}, std::move(v));
}

}  // namespace

void Renderer::init_parameters(const RendererConfig& config, nn::ParamStore& store, std::uint64_t seed) {
  config.validate();
  Rng rng(seed);
  const int d = config.feature_dim;
  store.create_xavier("feat.l0.conv.w", {d, 3, 3, 3}, 27, 9 * d, rng);
  store.create_constant("feat.l0.conv.b", {d}, 0.0);
  store.create_xavier("feat.l0.mix.w", {d, d, 1, 1}, d, d, rng);
  store.create_constant("feat.l0.mix.b", {d}, 0.0);
  for (int l = 1; l < config.pyramid_levels; ++l) {
    const std::string p = "feat.l" + std::to_string(l) + ".down";
    store.create_xavier(p + ".w", {d, d, 3, 3}, 9 * d, 9 * d, rng);
    store.create_constant(p + ".b", {d}, 0.0);
  }
  const int view_in = d + config.token_cues();
  store.create_xavier("view.embed.w", {view_in, d}, view_in, d, rng);
  store.create_constant("view.embed.b", {d}, 0.0);
  for (int i = 0; i < config.view_depth; ++i) add_block_params(store, "view.block" + std::to_string(i), d, rng);
  add_pool_params(store, "view.pool", d, rng);
  const int ray_in = d + 2 * config.depth_frequencies;
  store.create_xavier("ray.embed.w", {ray_in, d}, ray_in, d, rng);
  store.create_constant("ray.embed.b", {d}, 0.0);
  for (int i = 0; i < config.ray_depth; ++i) add_block_params(store, "ray.block" + std::to_string(i), d, rng);
  add_pool_params(store, "ray.pool", d, rng);
  store.create_xavier("head.w", {d, 3}, d, 3, rng);
  store.create_constant("head.b", {3}, 0.0);
}

Renderer::Renderer(RendererConfig config, const nn::ParamStore& store) : config_(config), store_(&store) {
  config_.validate();
  const int d = config_.feature_dim;
  auto expect = [&](const std::string& name, const nn::Shape& shape) {
    if (!store.contains(name)) throw std::invalid_argument("Renderer: missing parameter '" + name + "'");
    if (store.get(name).shape() != shape) {
      throw std::invalid_argument("Renderer: parameter '" + name + "' has shape " +
                                  nn::shape_string(store.get(name).shape()) + ", expected " + nn::shape_string(shape));
    }
  };
  expect("feat.l0.conv.w", {d, 3, 3, 3});
  expect("view.embed.w", {d + config_.token_cues(), d});
  expect("ray.embed.w", {d + 2 * config_.depth_frequencies, d});
  expect("head.w", {d, 3});
  for (int l = 1; l < config_.pyramid_levels; ++l) expect("feat.l" + std::to_string(l) + ".down.w", {d, d, 3, 3});
  for (int i = 0; i < config_.view_depth; ++i) expect("view.block" + std::to_string(i) + ".q.w", {d, d});
  for (int i = 0; i < config_.ray_depth; ++i) expect("ray.block" + std::to_string(i) + ".q.w", {d, d});
}

FeaturePyramid Renderer::extract_features(const img::Image& image) const {
  img::require_finite(image, "extract_features");
  FeaturePyramid pyramid;
  Tensor x = nn::conv2d(image_to_chw(image), param("feat.l0.conv.w"), param("feat.l0.conv.b"), 1, 1);
  x = nn::conv2d(nn::gelu(x), param("feat.l0.mix.w"), param("feat.l0.mix.b"), 1, 0);
  pyramid.levels.push_back(x);
  for (int l = 1; l < config_.pyramid_levels; ++l) {
    const std::string p = "feat.l" + std::to_string(l) + ".down";
    x = nn::conv2d(nn::gelu(x), param(p + ".w"), param(p + ".b"), 2, 1);
    pyramid.levels.push_back(x);
  }
  return pyramid;
}

void Renderer::attach_features(std::span<CameraView> views) const {
  for (auto& v : views) {
    if (!v.features) v.features = extract_features(v.image);
  }
}

Tensor Renderer::transformer_block(const Tensor& x, nn::Mask mask, const std::string& p) const {
  const Tensor h = nn::layernorm(x, param(p + ".ln1.g"), param(p + ".ln1.b"));
  const Tensor q = nn::linear(h, param(p + ".q.w"), param(p + ".q.b"));
  const Tensor k = nn::linear(h, param(p + ".k.w"), param(p + ".k.b"));
  const Tensor v = nn::linear(h, param(p + ".v.w"), param(p + ".v.b"));
  const Tensor a = nn::add(x, nn::attention(q, k, v, mask, config_.heads));
  const Tensor h2 = nn::layernorm(a, param(p + ".ln2.g"), param(p + ".ln2.b"));
  const Tensor f = nn::linear(nn::gelu(nn::linear(h2, param(p + ".ff1.w"), param(p + ".ff1.b"))),
                              param(p + ".ff2.w"), param(p + ".ff2.b"));
  return nn::add(a, f);
}

Tensor Renderer::pooled_attention(const Tensor& x, nn::Mask mask, const std::string& p,
                                  std::vector<double>* weights) const {
  const int batch = x.dim(0);
  const int d = x.dim(2);
  const Tensor h = nn::layernorm(x, param(p + ".ln.g"), param(p + ".ln.b"));
  const Tensor query = nn::reshape(nn::linear(nn::masked_mean(h, mask), param(p + ".q.w"), param(p + ".q.b")),
                                   {batch, 1, d});
  const Tensor k = nn::linear(h, param(p + ".k.w"), param(p + ".k.b"));
  const Tensor v = nn::linear(h, param(p + ".v.w"), param(p + ".v.b"));
  return nn::reshape(nn::attention(query, k, v, mask, config_.heads, weights), {batch, d});
}

ViewAggregation Renderer::view_aggregate(std::span<const Vec3> points, std::span<const Vec3> ray_dirs,
                                         std::span<const CameraView> sources) const {
  if (points.size() != ray_dirs.size()) throw std::invalid_argument("view_aggregate: points/directions mismatch");
  if (sources.empty()) throw std::invalid_argument("view_aggregate: no source views");
  for (const auto& s : sources) {
    if (!s.features || static_cast<int>(s.features->levels.size()) != config_.pyramid_levels) {
      throw std::invalid_argument("view_aggregate: source view without features");
    }
    if (s.image.channels() != 3 || s.image.width() != s.camera.intrinsics.width ||
        s.image.height() != s.camera.intrinsics.height) {
      throw std::invalid_argument("view_aggregate: source image does not match its intrinsics");
    }
  }
  const int d = config_.feature_dim;
  const int n_src = static_cast<int>(sources.size());
  const int n_cues = config_.token_cues();
  const std::size_t n_pts = points.size();

  // Level-0 taps per (point, source); a point is valid if any source sees it.
  std::vector<geom::BilinearTap> taps(n_pts * n_src);
  std::vector<geom::PixelCoord> coords(n_pts * n_src);
  ViewAggregation out;
  out.valid.assign(n_pts, 0);
  for (std::size_t p = 0; p < n_pts; ++p) {
    for (int s = 0; s < n_src; ++s) {
      const auto& cam = sources[s].camera;
      const auto proj = geom::project(points[p], cam);
      if (proj.behind) continue;
      auto tap = geom::bilinear_tap(proj.px, cam.intrinsics.width, cam.intrinsics.height);
      if (tap.in_bounds) {
        taps[p * n_src + s] = tap;
        coords[p * n_src + s] = proj.px;
        out.valid[p] = 1;
      }
    }
  }
  std::vector<std::size_t> valid_points;
  for (std::size_t p = 0; p < n_pts; ++p) {
    if (out.valid[p]) valid_points.push_back(p);
  }
  const int n_valid = static_cast<int>(valid_points.size());
  if (n_valid == 0) {
    out.features = Tensor::zeros({0, d});
    return out;
  }

  std::vector<std::uint8_t> mask(static_cast<std::size_t>(n_valid) * n_src, 0);
  std::vector<double> cues(static_cast<std::size_t>(n_valid) * n_src * n_cues, 0.0);
  std::vector<Tensor> per_source;
  for (int s = 0; s < n_src; ++s) {
    const auto& cam = sources[s].camera;
    const auto& fp = *sources[s].features;
    std::vector<geom::BilinearTap> level_taps(n_valid);
    for (int i = 0; i < n_valid; ++i) level_taps[i] = taps[valid_points[i] * n_src + s];
    Tensor feat = nn::bilinear_gather(fp.levels[0], level_taps);
    for (int l = 1; l < config_.pyramid_levels; ++l) {
      const int lw = fp.levels[l].dim(2);
      const int lh = fp.levels[l].dim(1);
      const double f = std::ldexp(1.0, -l);
      std::vector<geom::BilinearTap> coarse(n_valid);
      for (int i = 0; i < n_valid; ++i) {
        if (!level_taps[i].in_bounds) continue;
        const auto& c = coords[valid_points[i] * n_src + s];
        const geom::PixelCoord pc{std::clamp(c.x * f, 0.0, lw - 1.0), std::clamp(c.y * f, 0.0, lh - 1.0)};
        coarse[i] = geom::bilinear_tap(pc, lw, lh);
      }
      feat = nn::add(feat, nn::bilinear_gather(fp.levels[l], coarse));
    }
    per_source.push_back(feat);

    for (int i = 0; i < n_valid; ++i) {
      const auto& tap = level_taps[i];
      if (!tap.in_bounds) continue;
      const std::size_t p = valid_points[i];
      mask[static_cast<std::size_t>(i) * n_src + s] = 1;
      double* cue = cues.data() + (static_cast<std::size_t>(i) * n_src + s) * n_cues;
      const auto rgb = geom::bilinear_sample(sources[s].image, coords[p * n_src + s]).value;
      std::copy(rgb.begin(), rgb.end(), cue);
      const Vec3 to_point = (points[p] - cam.pose.center()).normalized();
      const double angle = std::acos(std::clamp(to_point.dot(ray_dirs[p].normalized()), -1.0, 1.0));
      sinusoidal_encoding(angle, config_.direction_frequencies, std::span<double>(cue + 9, 2 * config_.direction_frequencies));
    }
  }
  // Color deviation from the cross-view mean and its square: a consistency cue.
  for (int i = 0; i < n_valid; ++i) {
    double meanc[3] = {0, 0, 0};
    int count = 0;
    for (int s = 0; s < n_src; ++s) {
      if (!mask[static_cast<std::size_t>(i) * n_src + s]) continue;
      const double* cue = cues.data() + (static_cast<std::size_t>(i) * n_src + s) * n_cues;
      for (int c = 0; c < 3; ++c) meanc[c] += cue[c];
      ++count;
    }
    for (int s = 0; s < n_src; ++s) {
      if (!mask[static_cast<std::size_t>(i) * n_src + s]) continue;
      double* cue = cues.data() + (static_cast<std::size_t>(i) * n_src + s) * n_cues;
      for (int c = 0; c < 3; ++c) {
        const double dev = cue[c] - meanc[c] / count;
        cue[3 + c] = dev;
        cue[6 + c] = dev * dev;
      }
    }
  }

  Tensor sampled = nn::reshape(nn::concat_last(per_source), {n_valid, n_src, d});
  Tensor tokens = nn::concat_last({sampled, Tensor::constant({n_valid, n_src, n_cues}, std::move(cues))});
  Tensor x = nn::linear(tokens, param("view.embed.w"), param("view.embed.b"));
  for (int i = 0; i < config_.view_depth; ++i) x = transformer_block(x, mask, "view.block" + std::to_string(i));
  out.features = pooled_attention(x, mask, "view.pool", &out.pooled_weights);
  return out;
}

Tensor Renderer::point_aggregate(const Tensor& point_features, std::span<const double> t_norm, nn::Mask valid) const {
  if (point_features.rank() != 3 || point_features.dim(2) != config_.feature_dim) {
    throw std::invalid_argument("point_aggregate: features must be [R, K, d]");
  }
  const int rays = point_features.dim(0);
  const int k = point_features.dim(1);
  const std::size_t n = static_cast<std::size_t>(rays) * k;
  if (t_norm.size() != n) throw std::invalid_argument("point_aggregate: need one depth per point");
  if (!valid.empty() && valid.size() != n) throw std::invalid_argument("point_aggregate: mask size mismatch");
  const int freqs = config_.depth_frequencies;
  std::vector<double> enc(n * 2 * freqs);
  for (std::size_t i = 0; i < n; ++i) {
    sinusoidal_encoding(t_norm[i], freqs, std::span<double>(enc.data() + i * 2 * freqs, 2 * freqs));
  }
  Tensor x = nn::concat_last({point_features, Tensor::constant({rays, k, 2 * freqs}, std::move(enc))});
  x = nn::linear(x, param("ray.embed.w"), param("ray.embed.b"));
  for (int i = 0; i < config_.ray_depth; ++i) x = transformer_block(x, valid, "ray.block" + std::to_string(i));
  const Tensor pooled = pooled_attention(x, valid, "ray.pool", nullptr);
  return nn::sigmoid(nn::linear(pooled, param("head.w"), param("head.b")));
}

RenderOutput Renderer::render_rays(std::span<const geom::Ray> rays, std::span<const CameraView> sources,
                                   Rng* jitter) const {
  if (sources.empty()) throw std::invalid_argument("render_rays: no source views");
  const int k = config_.points_per_ray;
  const std::size_t n_rays = rays.size();
  std::vector<Vec3> points;
  std::vector<Vec3> dirs;
  std::vector<double> t_norm;
  points.reserve(n_rays * k);
  for (const auto& ray : rays) {
    geom::RaySamples samples;
    if (k == 1) {
      samples.t = {0.5 * (ray.near + ray.far)};
      samples.positions = {ray.origin + samples.t[0] * ray.direction};
    } else {
      samples = geom::sample_stratified(ray, k, config_.sampling, jitter);
    }
    for (int i = 0; i < k; ++i) {
      points.push_back(samples.positions[i]);
      dirs.push_back(ray.direction);
      t_norm.push_back(normalized_depth(samples.t[i], ray.near, ray.far, config_.sampling));
    }
  }
  const ViewAggregation agg = view_aggregate(points, dirs, sources);

  RenderOutput out;
  out.valid.assign(n_rays, 0);
  std::vector<std::int64_t> row_of_point(points.size(), -1);
  std::int64_t next = 0;
  for (std::size_t p = 0; p < points.size(); ++p) {
    if (agg.valid[p]) {
      row_of_point[p] = next++;
      out.valid[p / k] = 1;
    }
  }
  std::vector<std::int64_t> gather_index;
  std::vector<std::uint8_t> point_mask;
  std::vector<double> valid_t;
  std::vector<std::int64_t> ray_row(n_rays, -1);
  std::int64_t n_valid_rays = 0;
  for (std::size_t r = 0; r < n_rays; ++r) {
    if (!out.valid[r]) continue;
    ray_row[r] = n_valid_rays++;
    for (int i = 0; i < k; ++i) {
      const std::size_t p = r * k + i;
      gather_index.push_back(row_of_point[p]);
      point_mask.push_back(agg.valid[p]);
      valid_t.push_back(t_norm[p]);
    }
  }
  if (n_valid_rays == 0) {
    out.colors = Tensor::zeros({static_cast<int>(n_rays), 3});
    return out;
  }
  const Tensor per_point = nn::reshape(nn::gather_rows(agg.features, gather_index),
                                       {static_cast<int>(n_valid_rays), k, config_.feature_dim});
  const Tensor colors = point_aggregate(per_point, valid_t, point_mask);
  out.colors = nn::gather_rows(colors, ray_row);
  return out;
}

img::Image Renderer::render_image(const geom::Camera& target, std::span<CameraView> sources, double near, double far,
                                  int batch) const {
  nn::NoGradGuard no_grad;
  attach_features(sources);
  const int w = target.intrinsics.width;
  const int h = target.intrinsics.height;
  img::Image out(h, w, 3);
  const std::size_t total = static_cast<std::size_t>(w) * h;
  batch = std::max(1, batch);
  for (std::size_t start = 0; start < total; start += batch) {
    const std::size_t end = std::min(total, start + batch);
    std::vector<geom::Ray> rays;
    for (std::size_t i = start; i < end; ++i) {
      rays.push_back(geom::ray_for_pixel(target, {static_cast<double>(i % w), static_cast<double>(i / w)}, near, far));
    }
    const auto result = render_rays(rays, sources);
    const auto colors = result.colors.values();
    for (std::size_t i = start; i < end; ++i) {
      for (int c = 0; c < 3; ++c) out.data()[i * 3 + c] = colors[(i - start) * 3 + c];
    }
  }
  return out;
}

}  // namespace lensnvs::render
