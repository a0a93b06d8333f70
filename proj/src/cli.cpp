#include "lensnvs/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "lensnvs/dataset.hpp"
#include "lensnvs/image_io.hpp"
#include "lensnvs/llff.hpp"
#include "lensnvs/metrics.hpp"
#include "lensnvs/parallel.hpp"
#include "lensnvs/procedural.hpp"
#include "lensnvs/random.hpp"
#include "lensnvs/trainer.hpp"

namespace lensnvs::cli {

namespace fs = std::filesystem;

namespace {

// Thrown for bad flag combinations that CLI11 cannot express; exit code 1.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string ext_of(const fs::path& p) {
  std::string e = p.extension().string();
  std::transform(e.begin(), e.end(), e.begin(), [](unsigned char c) { return std::tolower(c); });
  return e;
}

lensless::Psf load_psf(const fs::path& path) {
  img::Image k = ext_of(path) == ".png" ? img::read_png(path, img::Transfer::kLinear) : img::read_pfm(path);
  return lensless::Psf(std::move(k), lensless::PsfProvenance::kCalibratedFile, true);
}

void save_psf(const fs::path& path, const lensless::Psf& psf) {
  if (ext_of(path) == ".png") {
    // PSF energy is spread thin; store peak-normalized 16-bit linear codes.
    img::Image scaled = psf.kernel();
    const double peak = scaled.max();
    for (double& v : scaled.data()) v /= peak;
    img::write_png(path, scaled, 16, img::Transfer::kLinear);
  } else {
    img::write_pfm(path, psf.kernel());
  }
}

std::pair<int, int> parse_dims(const std::string& text) {
  const auto x = text.find('x');
  if (x == std::string::npos) throw UsageError("expected <h>x<w>, got '" + text + "'");
  try {
    return {std::stoi(text.substr(0, x)), std::stoi(text.substr(x + 1))};
  } catch (const std::exception&) {
    throw UsageError("expected <h>x<w>, got '" + text + "'");
  }
}

img::Boundary parse_boundary(const std::string& name) {
  try {
    return img::boundary_from_string(name);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
}

// Scene directories under `root`: root itself if it holds poses_bounds.npy,
// otherwise its immediate subdirectories that do, in name order.
std::vector<fs::path> scene_dirs(const fs::path& root) {
  if (fs::exists(root / "poses_bounds.npy")) return {root};
  if (!fs::is_directory(root)) throw std::runtime_error("no such data directory: " + root.string());
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(root)) {
    if (e.is_directory() && fs::exists(e.path() / "poses_bounds.npy")) out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  if (out.empty()) throw std::runtime_error(root.string() + ": no scenes (poses_bounds.npy) found");
  return out;
}

struct CommonOptions {
  std::string config;
  int threads = 1;
  std::string manifest;
};

void add_common(CLI::App* sub, CommonOptions& common) {
  sub->add_option("--config", common.config, "key=value file supplying flags (command-line flags win)");
  sub->add_option("--threads", common.threads, "Worker threads (1 = bit-reproducible)")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
  sub->add_option("--manifest", common.manifest,
                  "Where to write the run manifest (default: next to the output, or stdout)");
}

// Data preparation shared by train and finetune.
struct DataOptions {
  std::string data;
  std::string psf;
  int psf_size = 31;
  std::uint64_t psf_seed = 0;
  double noise_db = lensless::kDefaultSnrDb;
  bool no_noise = false;
  bool rgb_psf = false;
  bool resynthesize = false;
  double k = lensless::kDefaultWienerK;
};

void add_data_options(CLI::App* sub, DataOptions& d) {
  sub->add_option("--data", d.data, "Scene directory, or a directory of scene directories")->required();
  sub->add_option("--psf", d.psf, "PSF file (PFM or 16-bit PNG) used when captures are synthesized");
  sub->add_option("--psf-size", d.psf_size, "Synthetic PSF side when --psf is not given")->capture_default_str();
  sub->add_option("--psf-seed", d.psf_seed, "Synthetic PSF seed")->capture_default_str();
  sub->add_option("--noise-db", d.noise_db, "Capture SNR in dB for synthesized captures")->capture_default_str();
  sub->add_flag("--no-noise", d.no_noise, "Ablation: synthesize noise-free captures");
  sub->add_flag("--rgb-psf", d.rgb_psf, "Ablation: keep a per-channel (RGB) PSF instead of a grayscale one");
  sub->add_flag("--resynthesize", d.resynthesize,
                "Re-simulate captures even if the scene stores them (implied by --no-noise and --rgb-psf)");
  sub->add_option("--k", d.k, "Wiener regularization for synthesized coarse estimates")->capture_default_str();
}

lensless::Psf resolve_psf(const DataOptions& d) {
  if (!d.psf.empty()) return load_psf(d.psf);
  return lensless::synthetic_caustic_psf(d.psf_size, d.psf_seed, d.rgb_psf);
}

std::vector<data::Scene> prepare_scenes(const DataOptions& d, std::uint64_t seed, RunManifest& manifest) {
  std::vector<data::Scene> scenes;
  std::optional<lensless::Psf> psf;
  const bool force = d.resynthesize || d.no_noise || d.rgb_psf;
  const auto dirs = scene_dirs(d.data);
  for (std::size_t i = 0; i < dirs.size(); ++i) {
    manifest.inputs.push_back({dirs[i].string(), hash_path(dirs[i])});
    data::Scene scene = data::load_llff_scene(dirs[i]);
    if (force || !scene.has_lensless()) {
      if (!psf) {
        psf = resolve_psf(d);
        if (!d.psf.empty()) manifest.inputs.push_back({d.psf, hash_path(d.psf)});
      }
      data::SynthesisOptions o;
      o.snr_db = d.no_noise ? img::kNoNoise : d.noise_db;
      o.seed = substream_seed(seed, "data", i);
      o.grayscale = !d.rgb_psf;
      o.k = d.k;
      scene = data::synthesize_lensless_dataset(scene, *psf, o);
    }
    scenes.push_back(std::move(scene));
  }
  return scenes;
}

void emit_manifest(const RunManifest& m, const CommonOptions& common, const fs::path& fallback, std::ostream& out) {
  const fs::path path = !common.manifest.empty() ? fs::path(common.manifest) : fallback;
  if (path.empty()) {
    out << '\n' << m.to_text();
    return;
  }
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw std::runtime_error("cannot write manifest " + path.string());
  f << m.to_text();
}

// CLI11 only reads config files for the root app, so a subcommand's
// --config file is expanded into flags placed ahead of the explicit ones.
std::vector<std::string> expand_config(std::vector<std::string> args) {
  std::size_t leaf = args.empty() ? 0 : (args[0] == "dataset" ? 2 : 1);
  if (leaf > args.size()) return args;
  std::string file;
  for (std::size_t i = leaf; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) file = args[i + 1];
    if (args[i].rfind("--config=", 0) == 0) file = args[i].substr(9);
  }
  if (file.empty()) return args;
  if (!fs::is_regular_file(file)) throw UsageError("config file not found: " + file);
  std::vector<std::string> injected;
  for (const auto& item : CLI::ConfigBase().from_file(file)) {
    if (item.name == "config" || item.name == "++" || item.name == "--" || item.inputs.empty()) continue;
    if (item.inputs.size() == 1 && item.inputs.front().empty()) continue;
    if (item.inputs.size() == 1) {
      injected.push_back("--" + item.name + "=" + item.inputs.front());
    } else {
      injected.push_back("--" + item.name);
      injected.insert(injected.end(), item.inputs.begin(), item.inputs.end());
    }
  }
  args.insert(args.begin() + static_cast<std::ptrdiff_t>(leaf), injected.begin(), injected.end());
  return args;
}

fs::path beside(const std::string& out) { return out.empty() ? fs::path() : fs::path(out + ".manifest.txt"); }

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Lensless capture simulation, Wiener recovery and novel-view rendering", "lensnvs"};
  app.set_version_flag("--version", std::string("lensnvs ") + tool_version());
  app.require_subcommand(1);
  app.failure_message(CLI::FailureMessage::help);
  app.get_formatter()->column_width(36);
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);

  std::vector<CLI::App*> leaves;
  CommonOptions common;
  std::function<void(const std::string&)> action;  // run after parsing
  CLI::App* active = nullptr;
  std::string active_name;

  auto leaf = [&](CLI::App* parent, const std::string& name, const std::string& desc, const std::string& full) {
    CLI::App* sub = parent->add_subcommand(name, desc);
    add_common(sub, common);
    sub->callback([&, sub, full] {
      active = sub;
      active_name = full;
    });
    leaves.push_back(sub);
    return sub;
  };

  // psf ---------------------------------------------------------------------
  struct {
    std::string in, out, crop;
    int generate = 0;
    std::uint64_t seed = 0;
    bool rgb = false, grayscale = false, inspect = false;
    double binarize = 0.0;
  } psf_o;
  CLI::App* psf = leaf(&app, "psf", "Load or generate a PSF, derive variants, inspect it", "psf");
  auto* psf_in = psf->add_option("--in", psf_o.in, "PSF file (PFM or 16-bit linear PNG)");
  auto* psf_gen = psf->add_option("--generate", psf_o.generate, "Generate a synthetic caustic PSF of this side length");
  psf_in->excludes(psf_gen);
  psf->add_option("--seed", psf_o.seed, "Seed for --generate")->capture_default_str();
  psf->add_flag("--rgb", psf_o.rgb, "Generate a per-channel (RGB) PSF");
  psf->add_flag("--grayscale", psf_o.grayscale, "Collapse to one channel");
  psf->add_option("--crop", psf_o.crop, "Center crop to <h>x<w> (renormalized)");
  psf->add_option("--binarize", psf_o.binarize, "Binarize at this fraction of the max (0 = off; default use 0.1)")
      ->capture_default_str();
  psf->add_flag("--inspect", psf_o.inspect, "Print sum, max and minimum spectral magnitude");
  psf->add_option("--out", psf_o.out, "Output PSF (PFM, or PNG stored peak-normalized)");

  // simulate ------------------------------------------------------------------
  struct {
    std::string in, psf, out, boundary = "zero-pad-linear";
    double snr_db = lensless::kDefaultSnrDb;
    bool no_noise = false, rgb_psf = false;
    std::uint64_t seed = 0;
  } sim_o;
  CLI::App* sim = leaf(&app, "simulate", "Simulate a lensless capture of an image", "simulate");
  sim->add_option("--in", sim_o.in, "Ground-truth image (PNG sRGB or PFM linear)")->required();
  sim->add_option("--psf", sim_o.psf, "PSF file")->required();
  sim->add_option("--snr-db", sim_o.snr_db, "Noise level in dB")->capture_default_str();
  sim->add_flag("--no-noise", sim_o.no_noise, "Skip noise");
  sim->add_flag("--rgb-psf", sim_o.rgb_psf, "Use a 3-channel PSF per channel instead of collapsing it to gray");
  sim->add_option("--seed", sim_o.seed, "Noise seed")->capture_default_str();
  sim->add_option("--boundary", sim_o.boundary, "zero-pad-linear (full-sensor capture) or circular")
      ->capture_default_str();
  sim->add_option("--out", sim_o.out, "Capture output (PFM)")->required();

  // deconvolve ----------------------------------------------------------------
  struct {
    std::string in, psf, out, boundary = "zero-pad-linear";
    double k = lensless::kDefaultWienerK;
    bool rgb_psf = false;
  } dec_o;
  CLI::App* dec = leaf(&app, "deconvolve", "Wiener-deconvolve a capture into a coarse estimate", "deconvolve");
  dec->add_option("--in", dec_o.in, "Capture (PFM or PNG)")->required();
  dec->add_option("--psf", dec_o.psf, "PSF file")->required();
  dec->add_option("--k", dec_o.k, "Noise-to-signal regularizer")->capture_default_str();
  dec->add_option("--boundary", dec_o.boundary, "Boundary model the capture was made with")->capture_default_str();
  dec->add_flag("--rgb-psf", dec_o.rgb_psf, "Deconvolve each channel with its own PSF channel");
  dec->add_option("--out", dec_o.out, "Coarse estimate output (PFM or PNG)")->required();

  // dataset -------------------------------------------------------------------
  CLI::App* dataset = app.add_subcommand("dataset", "Procedural scenes and lensless dataset synthesis");
  dataset->require_subcommand(1);
  data::ProceduralSpec gen_spec;
  std::string gen_out;
  std::uint64_t gen_seed = 0;
  CLI::App* gen = leaf(dataset, "gen", "Generate a procedural multi-view scene", "dataset gen");
  gen->add_option("--out", gen_out, "Scene directory")->required();
  gen->add_option("--views", gen_spec.views, "Cameras on the ring")->capture_default_str();
  gen->add_option("--width", gen_spec.width, "Image width")->capture_default_str();
  gen->add_option("--height", gen_spec.height, "Image height")->capture_default_str();
  gen->add_option("--focal", gen_spec.focal, "Focal length in pixels")->capture_default_str();
  gen->add_option("--radius", gen_spec.ring_radius, "Camera ring radius")->capture_default_str();
  gen->add_option("--look-depth", gen_spec.look_depth, "Depth of the ring's look-at point")->capture_default_str();
  gen->add_option("--background-depth", gen_spec.background_depth, "Depth of the background plane")
      ->capture_default_str();
  gen->add_option("--boxes", gen_spec.boxes, "Number of textured boxes")->capture_default_str();
  gen->add_option("--seed", gen_seed, "Scene seed")->capture_default_str();

  struct {
    std::string scene, out, psf, boundary = "zero-pad-linear";
    int psf_size = 31;
    std::uint64_t psf_seed = 0, seed = 0;
    double snr_db = lensless::kDefaultSnrDb, k = lensless::kDefaultWienerK;
    bool no_noise = false, rgb_psf = false;
  } syn_o;
  CLI::App* syn = leaf(dataset, "synth", "Simulate captures and Wiener estimates for every view", "dataset synth");
  syn->add_option("--scene", syn_o.scene, "Input scene directory")->required();
  syn->add_option("--out", syn_o.out, "Output scene directory")->required();
  syn->add_option("--psf", syn_o.psf, "PSF file (default: synthetic caustic PSF)");
  syn->add_option("--psf-size", syn_o.psf_size, "Synthetic PSF side")->capture_default_str();
  syn->add_option("--psf-seed", syn_o.psf_seed, "Synthetic PSF seed")->capture_default_str();
  syn->add_option("--snr-db", syn_o.snr_db, "Capture SNR in dB")->capture_default_str();
  syn->add_flag("--no-noise", syn_o.no_noise, "Noise-free captures (ablation)");
  syn->add_flag("--rgb-psf", syn_o.rgb_psf, "Per-channel PSF (ablation)");
  syn->add_option("--seed", syn_o.seed, "Noise seed")->capture_default_str();
  syn->add_option("--k", syn_o.k, "Wiener regularizer")->capture_default_str();
  syn->add_option("--boundary", syn_o.boundary, "Boundary model")->capture_default_str();

  // train / finetune ------------------------------------------------------------
  render::RendererConfig model;
  std::string sampling = geom::to_string(model.sampling);
  train::TrainConfig tc;
  DataOptions train_data;
  std::string train_out, train_log, train_init;
  CLI::App* tr = leaf(&app, "train", "Train the renderer end-to-end on lensless scenes", "train");
  add_data_options(tr, train_data);
  tr->add_option("--steps", tc.steps, "Optimization steps")->capture_default_str();
  tr->add_option("--lr", tc.lr, "Initial learning rate (decays to 10% over the run)")->capture_default_str();
  tr->add_option("--lambda", tc.lambda, "Perceptual loss weight")->capture_default_str();
  tr->add_option("--rays", tc.rays, "Rays per step")->capture_default_str();
  tr->add_option("--min-views", tc.min_sources, "Fewest source views per step")->capture_default_str();
  tr->add_option("--max-views", tc.max_sources, "Most source views per step")->capture_default_str();
  tr->add_option("--seed", tc.seed, "Root seed (init, data, sampling substreams)")->capture_default_str();
  tr->add_option("--val-interval", tc.val_interval, "Validate every N steps (0 = at the end only)")
      ->capture_default_str();
  tr->add_option("--log-interval", tc.log_interval, "Loss log row every N steps")->capture_default_str();
  tr->add_option("--feature-dim", model.feature_dim, "Feature width d")->capture_default_str();
  tr->add_option("--levels", model.pyramid_levels, "Feature pyramid levels")->capture_default_str();
  tr->add_option("--heads", model.heads, "Attention heads")->capture_default_str();
  tr->add_option("--view-depth", model.view_depth, "Transformer blocks across views")->capture_default_str();
  tr->add_option("--ray-depth", model.ray_depth, "Transformer blocks along rays")->capture_default_str();
  tr->add_option("--points", model.points_per_ray, "Samples per ray")->capture_default_str();
  tr->add_option("--views", model.source_views, "Source views for validation renders")->capture_default_str();
  tr->add_option("--sampling", sampling, "uniform-disparity or uniform-depth")->capture_default_str();
  tr->add_option("--init", train_init, "Start from this checkpoint instead of a fresh initialization");
  tr->add_option("--out", train_out, "Checkpoint output")->required();
  tr->add_option("--log", train_log, "CSV metric log (default: <out>.csv)");

  train::TrainConfig fc;
  fc.steps = 100;
  DataOptions ft_data;
  std::string ft_ckpt, ft_out, ft_log;
  CLI::App* ft = leaf(&app, "finetune", "Continue training on one scene at 0.1x learning rate", "finetune");
  add_data_options(ft, ft_data);
  ft->add_option("--checkpoint", ft_ckpt, "Checkpoint to start from")->required();
  ft->add_option("--steps", fc.steps, "Finetuning steps")->capture_default_str();
  ft->add_option("--lr", fc.lr, "Base learning rate (scaled by 0.1)")->capture_default_str();
  ft->add_option("--lambda", fc.lambda, "Perceptual loss weight")->capture_default_str();
  ft->add_option("--rays", fc.rays, "Rays per step")->capture_default_str();
  ft->add_option("--min-views", fc.min_sources, "Fewest source views per step")->capture_default_str();
  ft->add_option("--max-views", fc.max_sources, "Most source views per step")->capture_default_str();
  ft->add_option("--seed", fc.seed, "Root seed")->capture_default_str();
  ft->add_option("--log-interval", fc.log_interval, "Loss log row every N steps")->capture_default_str();
  ft->add_option("--out", ft_out, "Checkpoint output")->required();
  ft->add_option("--log", ft_log, "CSV metric log (default: <out>.csv)");

  // render ----------------------------------------------------------------------
  struct {
    std::string scene, checkpoint, target, out;
    int views = 0, points = 0;
  } ren_o;
  CLI::App* ren = leaf(&app, "render", "Render a target view of a scene from its coarse source views", "render");
  ren->add_option("--scene", ren_o.scene, "Scene directory with coarse estimates")->required();
  ren->add_option("--checkpoint", ren_o.checkpoint, "Trained checkpoint")->required();
  ren->add_option("--target-pose", ren_o.target, "View index in the scene, or a poses_bounds .npy (first row)")
      ->required();
  ren->add_option("--out", ren_o.out, "Output image (PNG or PFM)")->required();
  ren->add_option("--views", ren_o.views, "Source views (0 = checkpoint setting; 10 by default)")
      ->capture_default_str();
  ren->add_option("--points", ren_o.points, "Samples per ray (0 = checkpoint setting; 192 by default)")
      ->capture_default_str();

  // eval ----------------------------------------------------------------------------
  std::string eval_pred, eval_gt;
  CLI::App* ev = leaf(&app, "eval", "PSNR/SSIM of predicted images against references", "eval");
  ev->add_option("--pred", eval_pred, "Predicted image or directory")->required();
  ev->add_option("--gt", eval_gt, "Reference image or directory (paired by sorted name)")->required();

  CLI::App* sc = leaf(&app, "selfcheck", "Run the gradient and invariant suites", "selfcheck");

  try {
    const auto expanded = expand_config(args);
    std::vector<std::string> reversed(expanded.rbegin(), expanded.rend());
    app.parse(reversed);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  RunManifest manifest;
  manifest.subcommand = active_name;
  {
    // Unset string options would come back as explicit empty values.
    std::istringstream lines(active->config_to_str(true, false));
    for (std::string line; std::getline(lines, line);) {
      if (line.size() >= 3 && line.compare(line.size() - 3, 3, "=\"\"") == 0) continue;
      if (line.rfind("config=", 0) == 0 || line.rfind("manifest=", 0) == 0) continue;
      manifest.config += line + '\n';
    }
  }
  set_num_threads(common.threads);

  try {
    if (active == psf) {
      if (psf_o.in.empty() && psf_o.generate == 0) throw UsageError("psf: give --in or --generate");
      if (psf_o.out.empty() && !psf_o.inspect) throw UsageError("psf: nothing to do (give --out and/or --inspect)");
      lensless::Psf p = psf_o.in.empty() ? lensless::synthetic_caustic_psf(psf_o.generate, psf_o.seed, psf_o.rgb)
                                         : load_psf(psf_o.in);
      if (!psf_o.in.empty()) manifest.inputs.push_back({psf_o.in, hash_path(psf_o.in)});
      manifest.seed = psf_o.seed;
      if (psf_o.grayscale) p = lensless::psf_to_grayscale(p);
      if (!psf_o.crop.empty()) {
        const auto [h, w] = parse_dims(psf_o.crop);
        p = lensless::psf_crop(p, h, w);
      }
      if (psf_o.binarize != 0.0) p = lensless::psf_binarize(p, psf_o.binarize);
      if (psf_o.inspect) {
        const auto st = lensless::inspect_psf(p);
        out << "id " << p.id() << "\nsize " << p.height() << "x" << p.width() << "x" << p.channels() << "\nsum "
            << fmt("%.9g", st.sum) << "\nmax " << fmt("%.9g", st.max) << "\nspectral_min "
            << fmt("%.9g", st.spectral_min) << '\n';
      }
      if (!psf_o.out.empty()) save_psf(psf_o.out, p);
      emit_manifest(manifest, common, beside(psf_o.out), out);
    } else if (active == sim) {
      lensless::Psf p = load_psf(sim_o.psf);
      if (!sim_o.rgb_psf) p = lensless::psf_to_grayscale(p);
      const img::Image gt = img::read_image(sim_o.in);
      manifest.inputs = {{sim_o.in, hash_path(sim_o.in)}, {sim_o.psf, hash_path(sim_o.psf)}};
      manifest.seed = sim_o.seed;
      const auto cap = lensless::simulate_capture(gt, p, sim_o.no_noise ? img::kNoNoise : sim_o.snr_db, sim_o.seed,
                                                  parse_boundary(sim_o.boundary));
      img::write_pfm(sim_o.out, cap.raster);
      emit_manifest(manifest, common, beside(sim_o.out), out);
    } else if (active == dec) {
      lensless::Psf p = load_psf(dec_o.psf);
      if (!dec_o.rgb_psf) p = lensless::psf_to_grayscale(p);
      lensless::LenslessCapture cap;
      cap.raster = img::read_image(dec_o.in);
      cap.boundary = parse_boundary(dec_o.boundary);
      cap.psf_id = p.id();
      manifest.inputs = {{dec_o.in, hash_path(dec_o.in)}, {dec_o.psf, hash_path(dec_o.psf)}};
      img::write_image(dec_o.out, lensless::wiener_deconvolve(cap, p, dec_o.k));
      emit_manifest(manifest, common, beside(dec_o.out), out);
    } else if (active == gen) {
      const data::Scene scene = data::generate_procedural_scene(gen_spec, gen_seed);
      manifest.seed = gen_seed;
      data::save_scene(gen_out, scene, {{"seed", std::to_string(gen_seed)}});
      out << "wrote " << scene.views.size() << " views to " << gen_out << '\n';
      emit_manifest(manifest, common, fs::path(gen_out) / "run_manifest.txt", out);
    } else if (active == syn) {
      const data::Scene scene = data::load_llff_scene(syn_o.scene);
      manifest.inputs.push_back({syn_o.scene, hash_path(syn_o.scene)});
      lensless::Psf p = syn_o.psf.empty() ? lensless::synthetic_caustic_psf(syn_o.psf_size, syn_o.psf_seed, syn_o.rgb_psf)
                                          : load_psf(syn_o.psf);
      if (!syn_o.psf.empty()) manifest.inputs.push_back({syn_o.psf, hash_path(syn_o.psf)});
      data::SynthesisOptions o;
      o.snr_db = syn_o.no_noise ? img::kNoNoise : syn_o.snr_db;
      o.seed = syn_o.seed;
      o.grayscale = !syn_o.rgb_psf;
      o.k = syn_o.k;
      o.boundary = parse_boundary(syn_o.boundary);
      manifest.seed = syn_o.seed;
      const data::Scene result = data::synthesize_lensless_dataset(scene, p, o);
      fs::create_directories(syn_o.out);
      data::save_scene(syn_o.out, result, data::synthesis_manifest(p, o));
      save_psf(fs::path(syn_o.out) / "psf.pfm", o.grayscale && p.channels() == 3 ? lensless::psf_to_grayscale(p) : p);
      out << "synthesized " << result.views.size() << " views into " << syn_o.out << '\n';
      emit_manifest(manifest, common, fs::path(syn_o.out) / "run_manifest.txt", out);
    } else if (active == tr) {
      model.sampling = geom::depth_sampling_from_string(sampling);
      model.validate();
      manifest.seed = tc.seed;
      tc.snr_db = train_data.no_noise ? img::kNoNoise : train_data.noise_db;
      tc.grayscale = !train_data.rgb_psf;
      auto scenes = prepare_scenes(train_data, tc.seed, manifest);
      nn::ParamStore store;
      if (!train_init.empty()) {
        manifest.inputs.push_back({train_init, hash_path(train_init)});
        const auto loaded = nn::load_checkpoint(train_init, store);
        model = render::RendererConfig::from_text(loaded.metadata);
      } else {
        render::Renderer::init_parameters(model, store, substream_seed(tc.seed, "init", 0));
      }
      train::Trainer trainer(std::move(scenes), tc, model, store);
      train::TrainHooks hooks;
      hooks.csv_path = train_log.empty() ? fs::path(train_out + ".csv") : fs::path(train_log);
      hooks.dump_dir = fs::path(train_out).parent_path().empty() ? fs::path(".") : fs::path(train_out).parent_path();
      hooks.on_log = [&](const train::LogRow& r) {
        out << "step " << r.step << " mse " << fmt("%.6f", r.mse) << " perceptual " << fmt("%.6f", r.perceptual)
            << " total " << fmt("%.6f", r.total);
        if (!std::isnan(r.val_psnr)) out << " val_psnr " << fmt("%.3f", r.val_psnr) << " val_ssim " << fmt("%.4f", r.val_ssim);
        out << '\n';
      };
      trainer.run(hooks);
      nn::save_checkpoint(train_out, store, train::checkpoint_metadata(model));
      emit_manifest(manifest, common, beside(train_out), out);
    } else if (active == ft) {
      manifest.seed = fc.seed;
      manifest.inputs.push_back({ft_ckpt, hash_path(ft_ckpt)});
      auto scenes = prepare_scenes(ft_data, fc.seed, manifest);
      if (scenes.size() != 1) throw UsageError("finetune: --data must name exactly one scene");
      if (fc.steps == 0) {
        fs::copy_file(ft_ckpt, ft_out, fs::copy_options::overwrite_existing);
      } else {
        nn::ParamStore store;
        const auto loaded = nn::load_checkpoint(ft_ckpt, store);
        const auto ft_model = render::RendererConfig::from_text(loaded.metadata);
        train::TrainHooks hooks;
        hooks.csv_path = ft_log.empty() ? fs::path(ft_out + ".csv") : fs::path(ft_log);
        train::finetune(scenes.front(), fc, ft_model, store, hooks);
        nn::save_checkpoint(ft_out, store, loaded.metadata);
      }
      emit_manifest(manifest, common, beside(ft_out), out);
    } else if (active == ren) {
      nn::ParamStore store;
      const auto loaded = nn::load_checkpoint(ren_o.checkpoint, store);
      auto m = render::RendererConfig::from_text(loaded.metadata);
      if (ren_o.points > 0) m.points_per_ray = ren_o.points;
      if (ren_o.views > 0) m.source_views = ren_o.views;
      const data::Scene scene = data::load_llff_scene(ren_o.scene);
      if (!scene.has_lensless()) throw std::runtime_error(ren_o.scene + ": scene has no coarse estimates");
      manifest.inputs = {{ren_o.scene, hash_path(ren_o.scene)}, {ren_o.checkpoint, hash_path(ren_o.checkpoint)}};
      const render::Renderer renderer(m, store);
      const bool is_index = !ren_o.target.empty() &&
                            std::all_of(ren_o.target.begin(), ren_o.target.end(), [](unsigned char c) { return std::isdigit(c); });
      img::Image image;
      if (is_index) {
        const auto idx = static_cast<std::size_t>(std::stoul(ren_o.target));
        const auto e = train::evaluate_view(renderer, scene, idx, m.source_views);
        image = e.image;
        out << "view " << idx << " psnr " << fmt("%.3f", e.render.psnr) << " ssim " << fmt("%.4f", e.render.ssim)
            << " (coarse input psnr " << fmt("%.3f", e.coarse.psnr) << " ssim " << fmt("%.4f", e.coarse.ssim) << ")\n";
      } else {
        manifest.inputs.push_back({ren_o.target, hash_path(ren_o.target)});
        const auto records = geom::read_poses_bounds(ren_o.target);
        if (records.empty()) throw std::runtime_error(ren_o.target + ": no poses");
        const auto cams = scene.cameras();
        const int n = std::min<int>(m.source_views, static_cast<int>(cams.size()));
        std::vector<render::CameraView> sources;
        for (std::size_t i : geom::select_source_views(records.front().camera.pose, cams, n)) {
          sources.push_back({cams[i], *scene.views[i].coarse, std::nullopt});
        }
        image = renderer.render_image(records.front().camera, sources, scene.near, scene.far);
      }
      img::write_image(ren_o.out, image);
      emit_manifest(manifest, common, beside(ren_o.out), out);
    } else if (active == ev) {
      std::vector<fs::path> preds, gts;
      auto collect = [](const fs::path& p) {
        std::vector<fs::path> files;
        if (fs::is_directory(p)) {
          for (const auto& e : fs::directory_iterator(p)) {
            const auto x = ext_of(e.path());
            if (e.is_regular_file() && (x == ".png" || x == ".pfm")) files.push_back(e.path());
          }
          std::sort(files.begin(), files.end());
        } else {
          files.push_back(p);
        }
        return files;
      };
      preds = collect(eval_pred);
      gts = collect(eval_gt);
      if (preds.size() != gts.size() || preds.empty()) {
        throw std::runtime_error("eval: " + std::to_string(preds.size()) + " predictions vs " +
                                 std::to_string(gts.size()) + " references");
      }
      manifest.inputs = {{eval_pred, hash_path(eval_pred)}, {eval_gt, hash_path(eval_gt)}};
      double sum_psnr = 0.0, sum_ssim = 0.0;
      out << "image                          psnr      ssim\n";
      for (std::size_t i = 0; i < preds.size(); ++i) {
        const auto r = img::evaluate(img::read_image(preds[i]), img::read_image(gts[i]));
        char line[160];
        std::snprintf(line, sizeof line, "%-28s %8.3f  %8.4f\n", preds[i].filename().string().c_str(), r.psnr, r.ssim);
        out << line;
        sum_psnr += r.psnr;
        sum_ssim += r.ssim;
      }
      char line[160];
      std::snprintf(line, sizeof line, "%-28s %8.3f  %8.4f\n", "mean", sum_psnr / preds.size(), sum_ssim / preds.size());
      out << line;
      emit_manifest(manifest, common, {}, out);
    } else if (active == sc) {
      bool ok = true;
      for (const auto& suite : {invariant_suite(), gradient_suite()}) {
        for (const auto& r : suite) {
          out << (r.pass ? "[PASS] " : "[FAIL] ") << r.name << ": " << r.detail << '\n';
          ok = ok && r.pass;
        }
      }
      out << (ok ? "selfcheck passed\n" : "selfcheck FAILED\n");
      if (!common.manifest.empty()) emit_manifest(manifest, common, {}, out);
      return ok ? kExitOk : kExitRuntime;
    }
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n\n" << active->help();
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitOk;
}

int run(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run(args, std::cout, std::cerr);
}

}  // namespace lensnvs::cli
