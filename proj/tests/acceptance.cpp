// End-to-end acceptance run. One PASS/FAIL line per criterion; exit status 1
// if any fails. Pass criterion numbers as arguments to run a subset.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <sstream>
#include <string>

#include <unistd.h>

#include <Eigen/Eigenvalues>

#include "lensnvs/cli.hpp"
#include "lensnvs/convolve.hpp"
#include "lensnvs/dataset.hpp"
#include "lensnvs/image_io.hpp"
#include "lensnvs/metrics.hpp"
#include "lensnvs/noise.hpp"
#include "lensnvs/procedural.hpp"
#include "lensnvs/trainer.hpp"

using namespace lensnvs;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

img::Image random_image(int h, int w, int c, Rng& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  img::Image im(h, w, c);
  for (double& v : im.data()) v = u(rng);
  return im;
}

Outcome convolution_oracle() {
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(1);
  std::uniform_int_distribution<int> size(1, 16);
  double worst = 0.0;
  for (int i = 0; i < 100; ++i) {
    const img::Image im = random_image(size(rng), size(rng), 1 + i % 3, rng);
    const img::Image k = random_image(std::min(size(rng), im.height()), std::min(size(rng), im.width()), 1, rng);
    const auto mode = i % 2 ? img::Boundary::kCircular : img::Boundary::kZeroPadLinear;
    const img::Image a = img::convolve_fft(im, k, mode);
    const img::Image b = img::convolve_direct(im, k, mode);
    for (std::size_t j = 0; j < a.data().size(); ++j) worst = std::max(worst, std::abs(a.data()[j] - b.data()[j]));
  }
  const double t = seconds_since(t0);
  return {worst < 1e-6 && t < 10.0, fmt("100 instances, max abs error %.3g, %.2f s", worst, t)};
}

Outcome wiener_recovery() {
  Rng rng(2);
  img::Image k = random_image(9, 9, 1, rng);
  const double s = k.sum();
  for (double& v : k.data()) v *= 0.4 / s;
  k.at(4, 4) += 0.6;
  const lensless::Psf psf(k, lensless::PsfProvenance::kSynthetic);
  const img::Image gt = random_image(48, 40, 3, rng);
  const auto cap = lensless::simulate_capture(gt, psf, img::kNoNoise, 0, img::Boundary::kCircular);
  const double p = img::psnr(lensless::wiener_deconvolve(cap, psf, 1e-10), gt);

  img::Image delta(5, 5, 1, 0.0);
  delta.at(2, 2) = 1.0;
  const lensless::Psf dpsf(delta, lensless::PsfProvenance::kSynthetic);
  const auto dcap = lensless::simulate_capture(gt, dpsf, img::kNoNoise, 0);
  const img::Image back = lensless::wiener_deconvolve(dcap, dpsf, 0.0);
  double err = 0.0;
  for (std::size_t i = 0; i < gt.data().size(); ++i) err = std::max(err, std::abs(back.data()[i] - gt.data()[i]));
  return {p > 60.0 && err < 1e-12, fmt("circular k=1e-10 psnr %.2f dB; delta k=0 max error %.3g", p, err)};
}

Outcome wiener_helps() {
  const data::Scene scene = data::generate_procedural_scene(data::ProceduralSpec{}, 3);
  const auto psf = lensless::synthetic_caustic_psf(31, 7);
  double min_margin = 1e9;
  std::string detail;
  for (std::size_t i = 0; i < 8; ++i) {
    const auto& gt = scene.views[i].gt;
    const auto cap = lensless::simulate_capture(gt, psf, 40.0, i);
    const double coarse = img::psnr(lensless::wiener_deconvolve(cap, psf, lensless::kDefaultWienerK), gt);
    const double raw = img::psnr(lensless::capture_window(cap, psf), gt);
    min_margin = std::min(min_margin, coarse - raw);
    if (i < 3) detail += fmt("%.2f vs %.2f, ", coarse, raw);
  }
  return {min_margin > 0.0, fmt("8 views (%s...), smallest margin %.2f dB", detail.c_str(), min_margin)};
}

Outcome noise_calibration() {
  Rng rng(4);
  const img::Image clean = random_image(512, 512, 1, rng);
  const img::Image noisy = img::add_gaussian_noise(clean, 40.0, 17);
  const double m = img::measured_snr_db(clean, noisy);
  return {std::abs(m - 40.0) <= 0.1, fmt("requested 40 dB, measured %.4f dB", m)};
}

double line_residual(const std::vector<geom::PixelCoord>& pts) {
  Eigen::Vector2d mean = Eigen::Vector2d::Zero();
  for (const auto& p : pts) mean += Eigen::Vector2d(p.x, p.y);
  mean /= static_cast<double>(pts.size());
  Eigen::Matrix2d cov = Eigen::Matrix2d::Zero();
  for (const auto& p : pts) {
    const Eigen::Vector2d d = Eigen::Vector2d(p.x, p.y) - mean;
    cov += d * d.transpose();
  }
  const Eigen::Vector2d n = Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d>(cov).eigenvectors().col(0);
  double worst = 0.0;
  for (const auto& p : pts) worst = std::max(worst, std::abs(n.dot(Eigen::Vector2d(p.x, p.y) - mean)));
  return worst;
}

Outcome geometry() {
  data::ProceduralSpec spec;
  spec.views = 12;
  const data::Scene scene = data::generate_procedural_scene(spec, 5);
  Rng rng(5);
  std::uniform_real_distribution<double> u(0.0, 63.0), z(0.5, 20.0);
  double round_trip = 0.0;
  for (const auto& cam : scene.cameras()) {
    for (int i = 0; i < 100; ++i) {
      const geom::PixelCoord px{u(rng), u(rng)};
      const double depth = z(rng);
      const auto p = geom::project(geom::unproject(px, depth, cam), cam);
      round_trip = std::max({round_trip, std::abs(p.px.x - px.x), std::abs(p.px.y - px.y), std::abs(p.depth - depth)});
    }
  }
  double epi = 0.0;
  const auto cams = scene.cameras();
  for (std::size_t a = 0; a < cams.size(); ++a) {
    for (std::size_t b = 0; b < cams.size(); ++b) {
      if (a == b) continue;
      for (int i = 0; i < 4; ++i) {
        const auto ray = geom::ray_for_pixel(cams[a], {u(rng), u(rng)}, scene.near, scene.far);
        const auto s = geom::sample_stratified(ray, 32, geom::DepthSampling::kUniformDisparity);
        std::vector<geom::PixelCoord> pts;
        for (const auto& x : s.positions) {
          const auto p = geom::project(x, cams[b]);
          if (!p.behind) pts.push_back(p.px);
        }
        if (pts.size() >= 3) epi = std::max(epi, line_residual(pts));
      }
    }
  }
  return {round_trip < 1e-9 && epi < 1e-6,
          fmt("round trip %.3g, epipolar residual %.3g px over 132 view pairs", round_trip, epi)};
}

render::RendererConfig small_model() {
  render::RendererConfig c;
  c.feature_dim = 8;
  c.pyramid_levels = 2;
  c.points_per_ray = 8;
  c.source_views = 6;
  return c;
}

Outcome permutation_invariance() {
  data::ProceduralSpec spec;
  spec.width = spec.height = 24;
  spec.focal = 24.0;
  spec.views = 7;
  const data::Scene scene = data::generate_procedural_scene(spec, 6);
  nn::ParamStore store;
  render::Renderer::init_parameters(small_model(), store, 3);
  const render::Renderer r(small_model(), store);
  std::vector<render::CameraView> sources;
  for (std::size_t i = 1; i < scene.views.size(); ++i) sources.push_back({scene.views[i].camera, scene.views[i].gt, std::nullopt});
  r.attach_features(sources);
  std::vector<geom::Ray> rays;
  for (double y : {2.0, 11.5, 20.0})
    for (double x : {3.0, 12.0, 21.0}) rays.push_back(geom::ray_for_pixel(scene.views[0].camera, {x, y}, scene.near, scene.far));
  const auto base = r.render_rays(rays, sources);
  std::vector<int> perm(sources.size());
  std::iota(perm.begin(), perm.end(), 0);
  Rng rng(7);
  double drift = 0.0;
  for (int t = 0; t < 50; ++t) {
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<render::CameraView> shuffled;
    for (int i : perm) shuffled.push_back(sources[i]);
    const auto out = r.render_rays(rays, shuffled);
    for (std::size_t i = 0; i < base.colors.numel(); ++i)
      drift = std::max(drift, std::abs(out.colors.values()[i] - base.colors.values()[i]));
  }
  return {drift < 1e-9, fmt("50 permutations of 6 sources, max drift %.3g", drift)};
}

Outcome gradients() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto results = cli::gradient_suite();
  std::string failed;
  for (const auto& r : results)
    if (!r.pass) failed += " " + r.name + " (" + r.detail + ")";
  const double t = seconds_since(t0);
  const bool ok = failed.empty() && t < 60.0;
  return {ok, fmt("%zu cases, %.1f s%s%s", results.size(), t, failed.empty() ? "" : "; failed:", failed.c_str())};
}

// Desk-scale end-to-end experiment: one 64x64 scene with 16 views, a 31x31
// caustic PSF, 40 dB captures. The ablations change one synthesis setting.
struct ToyResult {
  double render_psnr = 0.0;
  double coarse_psnr = 0.0;
  double render_on_reference = 0.0;
  double seconds = 0.0;
};

constexpr std::int64_t kToySteps = 1200;

enum class Variant { kBase, kRgbPsf, kNoNoise };

const data::Scene& toy_scene() {
  static const data::Scene scene = data::generate_procedural_scene(data::ProceduralSpec{}, 11);
  return scene;
}

const data::Scene& toy_reference() {
  static const data::Scene ref = [] {
    data::SynthesisOptions o;
    o.seed = 3;
    return data::synthesize_lensless_dataset(toy_scene(), lensless::synthetic_caustic_psf(31, 7), o);
  }();
  return ref;
}

const ToyResult& toy_run(Variant v) {
  static std::map<Variant, ToyResult> cache;
  if (auto it = cache.find(v); it != cache.end()) return it->second;
  const auto t0 = std::chrono::steady_clock::now();
  data::SynthesisOptions o;
  o.seed = 3;
  lensless::Psf psf = lensless::synthetic_caustic_psf(31, 7);
  if (v == Variant::kRgbPsf) {
    psf = lensless::synthetic_caustic_psf(31, 7, true);
    o.grayscale = false;
  }
  if (v == Variant::kNoNoise) o.snr_db = img::kNoNoise;
  const data::Scene train_data = v == Variant::kBase ? toy_reference() : data::synthesize_lensless_dataset(toy_scene(), psf, o);

  render::RendererConfig model;
  model.feature_dim = 16;
  model.view_depth = 1;
  model.ray_depth = 1;
  model.points_per_ray = 16;
  model.source_views = 8;
  train::TrainConfig tc;
  tc.steps = kToySteps;
  tc.rays = 256;
  tc.min_sources = 6;
  tc.max_sources = 8;
  tc.lr = 3e-3;
  tc.lambda = 0.4;
  tc.log_interval = kToySteps;
  nn::ParamStore store;
  render::Renderer::init_parameters(model, store, 5);
  train::Trainer trainer({train_data}, tc, model, store);
  trainer.run();
  const auto own = train::evaluate_validation(trainer.renderer(), train_data, 8);
  const auto ref = train::evaluate_validation(trainer.renderer(), toy_reference(), 8);
  return cache[v] = {own.render.psnr, own.coarse.psnr, ref.render.psnr, seconds_since(t0)};
}

Outcome toy_end_to_end() {
  const ToyResult& r = toy_run(Variant::kBase);
  const double margin = r.render_psnr - r.coarse_psnr;
  return {margin >= 2.0, fmt("%lld steps in %.0f s: held-out render %.2f dB vs coarse input %.2f dB (margin %+.2f dB)",
                             static_cast<long long>(kToySteps), r.seconds, r.render_psnr, r.coarse_psnr, margin)};
}

Outcome ablations() {
  const ToyResult& base = toy_run(Variant::kBase);
  const ToyResult& rgb = toy_run(Variant::kRgbPsf);
  const ToyResult& clean = toy_run(Variant::kNoNoise);
  // Each PSF variant is scored in its own regime; both noise variants on noisy captures.
  const bool gray_ok = base.render_psnr >= rgb.render_psnr - 0.1;
  const bool noise_ok = base.render_on_reference >= clean.render_on_reference - 0.1;
  return {gray_ok && noise_ok,
          fmt("gray PSF %.2f dB vs RGB PSF %.2f dB; noise-trained %.2f dB vs noise-free-trained %.2f dB on noisy captures",
              base.render_psnr, rgb.render_psnr, base.render_on_reference, clean.render_on_reference)};
}

struct Workdir {
  fs::path root;
  Workdir() : root(fs::temp_directory_path() / ("lensnvs_acceptance_" + std::to_string(::getpid()))) {
    fs::remove_all(root);
    fs::create_directories(root);
  }
  ~Workdir() { fs::remove_all(root); }
  std::string operator/(const std::string& name) const { return (root / name).string(); }
};

int cli_call(std::vector<std::string> args, std::string* stdout_text = nullptr) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  if (stdout_text) *stdout_text = out.str();
  if (code != 0) std::fprintf(stderr, "lensnvs %s failed (%d): %s\n", args.front().c_str(), code, err.str().c_str());
  return code;
}

Outcome manifest_replay() {
  Workdir w;
  struct Step {
    std::string label;
    std::vector<std::string> args;
    std::vector<std::string> outputs;
  };
  const std::string scene = w / "scene", lensless = w / "lensless", ckpt = w / "model.ckpt";
  const std::vector<Step> steps = {
      {"psf", {"psf", "--generate", "15", "--seed", "3", "--out", w / "psf.pfm"}, {w / "psf.pfm"}},
      {"dataset gen",
       {"dataset", "gen", "--out", scene, "--views", "10", "--width", "32", "--height", "32", "--focal", "32", "--seed", "2"},
       {scene}},
      {"dataset synth", {"dataset", "synth", "--scene", scene, "--out", lensless, "--psf", w / "psf.pfm", "--seed", "4"},
       {lensless}},
      {"simulate",
       {"simulate", "--in", lensless + "/gt/001.pfm", "--psf", w / "psf.pfm", "--seed", "8", "--out", w / "cap.pfm"},
       {w / "cap.pfm"}},
      {"deconvolve", {"deconvolve", "--in", w / "cap.pfm", "--psf", w / "psf.pfm", "--out", w / "coarse.pfm"},
       {w / "coarse.pfm"}},
      {"train",
       {"train", "--data", lensless, "--out", ckpt, "--steps", "3", "--rays", "300", "--feature-dim", "8", "--levels", "2",
        "--points", "6", "--views", "5", "--min-views", "4", "--max-views", "6", "--seed", "9"},
       {ckpt}},
      {"finetune",
       {"finetune", "--data", lensless, "--checkpoint", ckpt, "--steps", "2", "--rays", "300", "--min-views", "4",
        "--max-views", "6", "--out", w / "ft.ckpt"},
       {w / "ft.ckpt"}},
      {"render", {"render", "--scene", lensless, "--checkpoint", w / "ft.ckpt", "--target-pose", "0", "--out", w / "view.pfm"},
       {w / "view.pfm"}},
      {"eval", {"eval", "--pred", w / "view.pfm", "--gt", lensless + "/gt/000.pfm"}, {}},
  };
  std::vector<std::string> bad;
  for (std::size_t i = 0; i < steps.size(); ++i) {
    const auto& s = steps[i];
    const std::string manifest = w / ("m" + std::to_string(i) + ".txt");
    auto args = s.args;
    args.insert(args.end(), {"--threads", "1", "--manifest", manifest});
    std::string first_out, second_out;
    if (cli_call(args, &first_out) != 0) return {false, "'" + s.label + "' failed to run"};
    std::vector<std::string> hashes;
    for (const auto& o : s.outputs) hashes.push_back(cli::hash_path(o));
    // Leave later steps' inputs intact: move outputs aside, replay, compare.
    for (const auto& o : s.outputs) fs::rename(o, o + ".first");
    std::vector<std::string> replay = s.args;
    replay.resize(s.label.find(' ') == std::string::npos ? 1 : 2);
    replay.insert(replay.end(), {"--config", manifest, "--manifest", manifest + ".replay"});
    if (cli_call(replay, &second_out) != 0) return {false, "replay of '" + s.label + "' failed"};
    // The replay records the same manifest it was started from.
    bool same = (!s.outputs.empty() || first_out == second_out) &&
                cli::hash_path(manifest) == cli::hash_path(manifest + ".replay");
    for (std::size_t j = 0; j < s.outputs.size(); ++j) same = same && cli::hash_path(s.outputs[j]) == hashes[j];
    if (!same) bad.push_back(s.label);
    for (const auto& o : s.outputs) fs::remove_all(o + ".first");
  }
  std::string list;
  for (const auto& s : steps) list += (list.empty() ? "" : ", ") + s.label;
  std::string failed;
  for (const auto& b : bad) failed += " " + b;
  return {bad.empty(), bad.empty() ? "replayed bit-wise: " + list : "outputs differ on replay:" + failed};
}

Outcome checkpoint_round_trip() {
  Workdir w;
  data::ProceduralSpec spec;
  spec.width = spec.height = 24;
  spec.focal = 24.0;
  spec.views = 10;
  data::SynthesisOptions o;
  o.seed = 1;
  const data::Scene scene = data::synthesize_lensless_dataset(data::generate_procedural_scene(spec, 8),
                                                              lensless::synthetic_caustic_psf(7, 1), o);
  const render::RendererConfig model = small_model();
  nn::ParamStore store;
  render::Renderer::init_parameters(model, store, 4);
  train::TrainConfig tc;
  tc.steps = 3;
  tc.rays = 300;
  tc.min_sources = 4;
  tc.max_sources = 6;
  train::Trainer({scene}, tc, model, store).run();
  nn::save_checkpoint(w / "m.ckpt", store, train::checkpoint_metadata(model));
  nn::ParamStore loaded;
  const auto meta = nn::load_checkpoint(w / "m.ckpt", loaded);
  const auto model_back = render::RendererConfig::from_text(meta.metadata);
  const auto a = train::evaluate_view(render::Renderer(model, store), scene, 0, 6).image;
  const auto b = train::evaluate_view(render::Renderer(model_back, loaded), scene, 0, 6).image;
  const bool same = a.height() == b.height() && std::equal(a.data().begin(), a.data().end(), b.data().begin());
  return {same && meta.step == store.step(),
          fmt("%zu parameters, render %s after save/load", store.parameter_count(), same ? "bit-identical" : "differs")};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"fft convolution matches direct convolution", convolution_oracle},
      {"wiener recovers noiseless captures", wiener_recovery},
      {"wiener coarse estimate beats the raw capture at 40 dB", wiener_helps},
      {"noise calibration on 512x512", noise_calibration},
      {"projection round trip and epipolar lines", geometry},
      {"source permutation invariance", permutation_invariance},
      {"analytic gradients match finite differences", gradients},
      {"toy training beats its coarse input by 2 dB", toy_end_to_end},
      {"ablation directions", ablations},
      {"manifest replay is bit-wise", manifest_replay},
      {"checkpoint round trip renders identically", checkpoint_round_trip},
  };
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::stoi(argv[i]));
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int n = static_cast<int>(i + 1);
    if (!only.empty() && !only.count(n)) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    failures += o.pass ? 0 : 1;
    std::printf("%s criterion %d (%s): %s\n", o.pass ? "PASS" : "FAIL", n, criteria[i].first.c_str(), o.detail.c_str());
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
