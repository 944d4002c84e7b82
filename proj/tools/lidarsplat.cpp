// lidarsplat: command-line front end of the reconstruction pipeline.
#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "lidarsplat/config.hpp"
#include "lidarsplat/expansion.hpp"
#include "lidarsplat/field.hpp"
#include "lidarsplat/io.hpp"
#include "lidarsplat/metrics.hpp"
#include "lidarsplat/optimizer.hpp"
#include "lidarsplat/rasterizer.hpp"
#include "lidarsplat/synth.hpp"

namespace fs = std::filesystem;
using namespace lidarsplat;

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  int threads = 0;
  bool quiet = false;

  RunConfig load() const {
    RunConfig cfg = config.empty() ? RunConfig{} : load_run_config(config);
    if (seed) cfg.seed = *seed;
    return cfg;
  }
};

void log(const Common& c, const std::string& msg) {
  if (!c.quiet) std::cerr << msg << "\n";
}

std::vector<TrainingView> load_views(const Manifest& m) {
  std::vector<TrainingView> views;
  for (const auto& f : m.frames) views.push_back({f.pose, load_scan(m, f)});
  return views;
}

bool has_extension(const fs::path& p, const char* ext) {
  std::string e = p.extension().string();
  for (auto& ch : e) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
  return e == ext;
}

void write_image(const fs::path& path, const RangeImage& img, const BeamTable& beams) {
  if (has_extension(path, ".ply")) {
    write_ply(path, unproject(img, beams));
  } else {
    write_rvim(path, img);
  }
}

void ensure_parent(const fs::path& p) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
}

ProgressFn progress_logger(const Common& c, const char* phase, int total) {
  if (c.quiet) return {};
  const int every = std::max(1, total / 20);
  return [phase, every, total](const LossRecord& r) {
    if (r.iteration % every != 0 && r.iteration != total) return;
    std::fprintf(stderr, "[%s] %d/%d loss %.6f (d %.4f i %.4f r %.4f s %.4f)\n", phase,
                 r.iteration, total, r.terms.total, r.terms.depth, r.terms.intensity,
                 r.terms.raydrop, r.terms.scale);
  };
}

std::unique_ptr<ScanProvider> make_provider(const std::string& spec, const Manifest& manifest,
                                            double noise_sigma, std::uint64_t seed) {
  auto split = spec.find(':');
  const std::string kind = spec.substr(0, split);
  const std::string arg = split == std::string::npos ? "" : spec.substr(split + 1);
  auto scene_path = [&] { return arg.empty() ? manifest.base_dir / "scene.json" : fs::path(arg); };
  if (kind == "passthrough") return std::make_unique<PassthroughProvider>();
  if (kind == "oracle") {
    return std::make_unique<OracleProvider>(load_scene(scene_path()), manifest.beams);
  }
  if (kind == "noisy-oracle") {
    return std::make_unique<NoisyProvider>(
        std::make_unique<OracleProvider>(load_scene(scene_path()), manifest.beams), noise_sigma,
        seed);
  }
  if (kind == "external") {
    if (arg.empty()) throw CLI::ValidationError("--provider", "external needs a spool directory");
    return std::make_unique<ExternalProvider>(arg, manifest.beams);
  }
  throw CLI::ValidationError("--provider", "unknown provider '" + spec + "'");
}

std::vector<double> parse_numbers(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (used != item.size() && item.find_first_not_of(" \t", used) != std::string::npos) {
        throw std::invalid_argument(item);
      }
    } catch (const std::exception&) {
      throw CLI::ValidationError("numbers", "cannot parse '" + item + "'");
    }
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"LiDAR novel view synthesis with a neural field of 2D Gaussians"};
  app.require_subcommand(1);
  app.fallthrough();
  Common common;
  app.add_option("--config", common.config, "JSON run configuration");
  app.add_option("--seed", common.seed, "Random seed (overrides the config)");
  app.add_option("--threads", common.threads, "Cap on worker threads (0 = all cores)")
      ->check(CLI::NonNegativeNumber);
  app.add_flag("--quiet", common.quiet, "No progress output");

  // project
  std::string in_path, out_path, beams_path;
  auto* project = app.add_subcommand("project", "Project a sensor-frame PLY into an RVIM range image");
  project->add_option("--input", in_path, "PLY point cloud")->required();
  project->add_option("--beams", beams_path, "JSON with beams and width")->required();
  project->add_option("--output", out_path, "RVIM output")->required();

  auto* unproj = app.add_subcommand("unproject", "Turn an RVIM range image into a PLY point cloud");
  unproj->add_option("--input", in_path, "RVIM range image")->required();
  unproj->add_option("--beams", beams_path, "JSON with beams and width")->required();
  unproj->add_option("--output", out_path, "PLY output")->required();

  // reconstruct
  std::string manifest_path, checkpoint_path, csv_path;
  std::optional<int> iters, anchors;
  auto* recon = app.add_subcommand("reconstruct", "Single-traverse reconstruction");
  recon->add_option("--manifest", manifest_path, "Training manifest")->required();
  recon->add_option("--output", checkpoint_path, "Checkpoint to write")->required();
  recon->add_option("--loss-csv", csv_path, "Loss log CSV");
  recon->add_option("--iters", iters, "Iterations (overrides train.single_pass_iters)")
      ->check(CLI::NonNegativeNumber);
  recon->add_option("--anchors", anchors, "Anchor count (overrides train.anchor_count)")
      ->check(CLI::PositiveNumber);

  // render
  std::string pose_text, median_path, mask_path;
  std::optional<int> frame_index;
  std::optional<double> delta;
  auto* rend = app.add_subcommand("render", "Render a checkpoint at one pose");
  rend->add_option("--checkpoint", checkpoint_path, "Checkpoint")->required();
  rend->add_option("--beams", beams_path, "JSON with beams and width (a manifest works)")
      ->required();
  rend->add_option("--pose", pose_text, "16 comma-separated row-major values");
  rend->add_option("--frame", frame_index, "Frame index of --beams when it is a manifest");
  rend->add_option("--output", out_path, "RVIM or PLY output")->required();
  rend->add_option("--median", median_path, "Median-depth plane (RVAX)");
  rend->add_option("--mask", mask_path, "Distortion mask plane (RVAX, 0/1)");
  rend->add_option("--delta", delta, "Mask threshold (default: median scale at this pose)");

  // pairs
  std::string out_dir;
  std::optional<double> sigma, tau;
  auto* pairs = app.add_subcommand("pairs", "Write perturbed-render / real-scan training pairs");
  pairs->add_option("--checkpoint", checkpoint_path, "Checkpoint")->required();
  pairs->add_option("--manifest", manifest_path, "Training manifest")->required();
  pairs->add_option("--output", out_dir, "Output directory")->required();
  pairs->add_option("--sigma", sigma, "Input noise (overrides expansion.sigma)");
  pairs->add_option("--tau", tau, "Dropout fraction (overrides expansion.tau)");

  // expand
  std::string provider_spec = "oracle", offsets_text;
  double noise_sigma = 0.1;
  bool no_ddad = false;
  auto* expand = app.add_subcommand("expand", "Refine with generated extrapolated scans");
  expand->add_option("--checkpoint", checkpoint_path, "Single-pass checkpoint")->required();
  expand->add_option("--manifest", manifest_path, "Training manifest")->required();
  expand->add_option("--output", out_path, "Refined checkpoint")->required();
  expand->add_option("--provider", provider_spec,
                     "oracle[:scene.json] | noisy-oracle[:scene.json] | passthrough | "
                     "external:<spool>")
      ->capture_default_str();
  expand->add_option("--noise-sigma", noise_sigma, "Depth noise of noisy-oracle (m)")
      ->capture_default_str();
  expand->add_option("--offsets", offsets_text, "Comma-separated lateral offsets (m)");
  expand->add_option("--iters", iters, "Iterations (overrides train.expand_iters)")
      ->check(CLI::NonNegativeNumber);
  expand->add_option("--delta", delta, "Distortion threshold (default: from the checkpoint)");
  expand->add_flag("--no-ddad", no_ddad, "Supervise generated scans on every pixel");
  expand->add_option("--loss-csv", csv_path, "Loss log CSV");

  // eval
  std::string json_path, table_path;
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint against held-out scans");
  eval->add_option("--checkpoint", checkpoint_path, "Checkpoint")->required();
  eval->add_option("--manifest", manifest_path, "Held-out manifest")->required();
  eval->add_option("--output", json_path, "Report JSON");
  eval->add_option("--table", table_path, "Report table (stdout when omitted)");

  // fixture
  std::string fixture_name = "corridor";
  int fixture_beams = 32, fixture_width = 512;
  auto* fixture = app.add_subcommand("fixture", "Write a synthetic dataset");
  fixture->add_option("--name", fixture_name, "Fixture name")
      ->check(CLI::IsMember({"corridor"}))
      ->capture_default_str();
  fixture->add_option("--output", out_dir, "Output directory")->required();
  fixture->add_option("--beams", fixture_beams, "Beam count")->capture_default_str();
  fixture->add_option("--width", fixture_width, "Columns")->capture_default_str();

  auto* config = app.add_subcommand("config", "Print the default configuration");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

#ifdef _OPENMP
  if (common.threads > 0) omp_set_num_threads(common.threads);
#endif

  try {
    if (*project) {
      const BeamTable beams = load_beams(beams_path);
      ensure_parent(out_path);
      write_rvim(out_path, project_points(read_ply(in_path), beams));
    } else if (*unproj) {
      const BeamTable beams = load_beams(beams_path);
      const RangeImage img = read_rvim(in_path);
      if (img.height() != beams.height() || img.width() != beams.width) {
        throw IoError(in_path + ": dimensions do not match the beam table");
      }
      ensure_parent(out_path);
      write_ply(out_path, unproject(img, beams));
    } else if (*recon) {
      RunConfig cfg = common.load();
      if (iters) cfg.train.single_pass_iters = *iters;
      if (anchors) cfg.train.anchor_count = *anchors;
      const Manifest m = load_manifest(manifest_path);
      const auto views = load_views(m);
      if (views.empty()) throw IoError(manifest_path + ": no frames");
      Scene scene = init_scene(aggregate_points(views, m.beams), cfg.train.anchor_count,
                               cfg.seed, cfg.field);
      log(common, "anchors: " + std::to_string(scene.anchor_count()));
      const int n = cfg.train.single_pass_iters;
      TrainResult r = reconstruct_single_pass(std::move(scene), views, m.beams, cfg.train, n,
                                              cfg.seed, progress_logger(common, "reconstruct", n));
      ensure_parent(checkpoint_path);
      save_checkpoint(checkpoint_path, r.scene);
      if (!csv_path.empty()) write_loss_csv(csv_path, r.log);
    } else if (*rend) {
      const RunConfig cfg = common.load();
      const Scene scene = load_checkpoint(checkpoint_path);
      const BeamTable beams = load_beams(beams_path);
      Pose pose;
      if (!pose_text.empty()) {
        const auto v = parse_numbers(pose_text);
        if (v.size() != 16) throw CLI::ValidationError("--pose", "needs 16 values");
        pose = Pose::from_row_major(v);
      } else if (frame_index) {
        const Manifest m = load_manifest(beams_path);
        if (*frame_index < 0 || *frame_index >= static_cast<int>(m.frames.size())) {
          throw CLI::ValidationError("--frame", "out of range");
        }
        pose = m.frames[*frame_index].pose;
      }
      const RenderOutput out = render(scene, pose, beams, cfg.render);
      ensure_parent(out_path);
      write_image(out_path, out.image, beams);
      if (!median_path.empty()) {
        write_plane(median_path, beams.height(), beams.width, out.median_depth);
      }
      if (!mask_path.empty()) {
        const double d = delta ? *delta : median_scale_delta(decode_attributes(scene, pose));
        const DistortionMask mask = distortion_mask(out, d);
        write_plane(mask_path, beams.height(), beams.width,
                    std::vector<double>(mask.mask.begin(), mask.mask.end()));
      }
    } else if (*pairs) {
      RunConfig cfg = common.load();
      if (sigma) cfg.expansion.sigma = *sigma;
      if (tau) cfg.expansion.tau = *tau;
      const Scene scene = load_checkpoint(checkpoint_path);
      const Manifest m = load_manifest(manifest_path);
      const auto result = make_training_pairs(scene, load_views(m), m.beams, cfg.expansion.sigma,
                                              cfg.expansion.tau, cfg.seed, cfg.render);
      write_pairs(out_dir, result, m.beams);
      log(common, "pairs: " + std::to_string(result.size()));
    } else if (*expand) {
      RunConfig cfg = common.load();
      if (iters) cfg.train.expand_iters = *iters;
      if (!offsets_text.empty()) cfg.expansion.offsets = parse_numbers(offsets_text);
      if (no_ddad) cfg.expansion.ddad = false;
      Scene scene = load_checkpoint(checkpoint_path);
      const Manifest m = load_manifest(manifest_path);
      const auto views = load_views(m);
      auto provider = make_provider(provider_spec, m, noise_sigma, cfg.seed);
      const auto poses = extrapolate_poses(m.poses(), cfg.expansion.offsets);
      const GenerationResult gen = generate_scans(scene, poses, *provider, m.beams, cfg.render);
      for (const auto& f : gen.failures) {
        log(common, "generation failed for pose " + std::to_string(f.index) + ": " + f.message);
      }
      log(common, "generated scans: " + std::to_string(gen.scans.size()) + "/" +
                      std::to_string(poses.size()));
      ExpandOptions opts;
      opts.ddad = cfg.expansion.ddad;
      opts.delta = delta ? *delta : single_pass_delta(scene, m.poses());
      log(common, "delta: " + std::to_string(opts.delta));
      const int n = cfg.train.expand_iters;
      TrainResult r = expand_reconstruct(std::move(scene), views, gen.scans, m.beams, cfg.train,
                                         opts, n, cfg.seed, progress_logger(common, "expand", n));
      ensure_parent(out_path);
      save_checkpoint(out_path, r.scene);
      if (!csv_path.empty()) write_loss_csv(csv_path, r.log);
    } else if (*eval) {
      const RunConfig cfg = common.load();
      const Scene scene = load_checkpoint(checkpoint_path);
      const Manifest m = load_manifest(manifest_path);
      std::vector<RangeImage> scans;
      for (const auto& f : m.frames) scans.push_back(load_scan(m, f));
      const EvalReport report = evaluate(scene, m.poses(), scans, m.beams, cfg.metrics, cfg.render);
      if (!json_path.empty()) {
        ensure_parent(json_path);
        std::ofstream(json_path) << report_json(report);
      }
      if (!table_path.empty()) {
        ensure_parent(table_path);
        std::ofstream(table_path) << report_table(report);
      } else {
        std::cout << report_table(report);
      }
    } else if (*fixture) {
      const RunConfig cfg = common.load();
      const Fixture f = corridor_fixture(cfg.seed, fixture_beams, fixture_width);
      write_fixture(out_dir, f);
      log(common, "fixture written to " + out_dir);
    } else if (*config) {
      std::cout << dump_run_config(common.load());
    }
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
