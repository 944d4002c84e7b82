#include "lidarsplat/expansion.hpp"

#include <unistd.h>

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <random>
#include <sstream>
#include <thread>

#include <json.hpp>

namespace lidarsplat {
namespace {

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

std::uint64_t pose_hash(const Pose& pose, std::uint64_t seed) {
  std::uint64_t h = splitmix(seed);
  for (int i = 0; i < 16; ++i) {
    double v = pose.matrix(i / 4, i % 4);
    if (v == 0.0) v = 0.0;  // fold -0
    std::uint64_t bits;
    std::memcpy(&bits, &v, sizeof bits);
    h = splitmix(h ^ bits);
  }
  return h;
}

void check_shape(const RangeImage& a, const BeamTable& beams, const char* what) {
  if (a.height() != beams.height() || a.width() != beams.width) {
    throw std::runtime_error(std::string(what) + " dimensions do not match the beam table");
  }
}

}  // namespace

std::vector<TrainingPair> make_training_pairs(const Scene& scene,
                                              const std::vector<TrainingView>& views,
                                              const BeamTable& beams, double sigma, double tau,
                                              std::uint64_t seed,
                                              const RenderConfig& render_cfg) {
  std::vector<TrainingPair> pairs;
  pairs.reserve(views.size());
  for (std::size_t i = 0; i < views.size(); ++i) {
    const auto& v = views[i];
    check_shape(v.scan, beams, "scan");
    const ViewAttributes attrs = perturbed_decode(scene, v.pose, sigma, tau, seed ^ i);
    pairs.push_back({rasterize(attrs, v.pose, beams, render_cfg).image, v.scan, v.pose});
  }
  return pairs;
}

void write_pairs(const std::filesystem::path& dir, const std::vector<TrainingPair>& pairs,
                 const BeamTable& beams) {
  namespace fs = std::filesystem;
  fs::create_directories(dir / "conditions");
  fs::create_directories(dir / "targets");
  Manifest conditions, targets;
  conditions.beams = targets.beams = beams;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "%03zu.rvim", i);
    write_rvim(dir / "conditions" / name, pairs[i].condition);
    write_rvim(dir / "targets" / name, pairs[i].target);
    conditions.frames.push_back({pairs[i].pose, std::string("conditions/") + name});
    targets.frames.push_back({pairs[i].pose, std::string("targets/") + name});
  }
  save_manifest(dir / "conditions.json", conditions);
  save_manifest(dir / "targets.json", targets);
}

std::vector<Pose> extrapolate_poses(const std::vector<Pose>& poses,
                                    const std::vector<double>& lateral_offsets) {
  std::vector<Pose> out;
  out.reserve(poses.size() * lateral_offsets.size());
  for (const auto& p : poses) {
    const Eigen::Vector3d left = p.rotation().col(1);
    for (double o : lateral_offsets) {
      Pose shifted = p;
      shifted.matrix.topRightCorner<3, 1>() += o * left;
      out.push_back(shifted);
    }
  }
  return out;
}

RangeImage PassthroughProvider::generate(const RangeImage& condition, const Pose&) {
  return condition;
}

OracleProvider::OracleProvider(SyntheticScene scene, BeamTable beams)
    : scene_(std::move(scene)), beams_(std::move(beams)) {
  beams_.validate();
}

RangeImage OracleProvider::generate(const RangeImage&, const Pose& pose) {
  return raycast_scan(scene_, pose, beams_);
}

NoisyProvider::NoisyProvider(std::unique_ptr<ScanProvider> inner, double sigma,
                             std::uint64_t seed, int cells_vertical, int cells_horizontal)
    : inner_(std::move(inner)),
      sigma_(sigma),
      seed_(seed),
      cells_v_(cells_vertical),
      cells_h_(cells_horizontal) {
  if (!inner_) throw std::invalid_argument("noisy provider needs an inner provider");
  if (sigma < 0.0 || cells_vertical < 1 || cells_horizontal < 1) {
    throw std::invalid_argument("bad noise field parameters");
  }
}

RangeImage NoisyProvider::generate(const RangeImage& condition, const Pose& pose) {
  RangeImage img = inner_->generate(condition, pose);
  std::mt19937_64 rng(pose_hash(pose, seed_));
  std::normal_distribution<double> normal(0.0, sigma_);
  // Node values on a (cells_v + 1) x cells_h lattice, periodic in azimuth.
  std::vector<double> nodes(static_cast<std::size_t>(cells_v_ + 1) * cells_h_);
  for (double& v : nodes) v = normal(rng);
  const int h = img.height(), w = img.width();
  auto depth = img.depth();
  const auto ray = img.raydrop();
  for (int r = 0; r < h; ++r) {
    const double fy = h > 1 ? static_cast<double>(r) / (h - 1) * cells_v_ : 0.0;
    const int y0 = std::min(static_cast<int>(fy), cells_v_ - 1);
    const double ty = fy - y0;
    for (int c = 0; c < w; ++c) {
      const double fx = static_cast<double>(c) / w * cells_h_;
      const int x0 = static_cast<int>(fx) % cells_h_, x1 = (x0 + 1) % cells_h_;
      const double tx = fx - std::floor(fx);
      auto at = [&](int y, int x) { return nodes[static_cast<std::size_t>(y) * cells_h_ + x]; };
      const double n = (1 - ty) * ((1 - tx) * at(y0, x0) + tx * at(y0, x1)) +
                       ty * ((1 - tx) * at(y0 + 1, x0) + tx * at(y0 + 1, x1));
      const std::size_t k = img.index(r, c);
      if (ray[k] >= 0.5 && depth[k] > 0.0) depth[k] = std::max(depth[k] + n, 1e-3);
    }
  }
  return img;
}

ExternalProvider::ExternalProvider(std::filesystem::path spool, BeamTable beams,
                                   std::chrono::milliseconds timeout,
                                   std::chrono::milliseconds poll)
    : spool_(std::move(spool)), beams_(std::move(beams)), timeout_(timeout), poll_(poll) {
  beams_.validate();
  for (const char* sub : {"conditions", "jobs", "out"}) {
    std::filesystem::create_directories(spool_ / sub);
  }
  prefix_ = "job" + std::to_string(static_cast<long>(::getpid()));
}

std::chrono::milliseconds ExternalProvider::default_timeout() {
  if (const char* env = std::getenv("LIDARSPLAT_SPOOL_TIMEOUT")) {
    char* end = nullptr;
    const double seconds = std::strtod(env, &end);
    if (end != env && *end == '\0' && seconds > 0.0) {
      return std::chrono::milliseconds(static_cast<long long>(seconds * 1000.0));
    }
  }
  return std::chrono::seconds(300);
}

RangeImage ExternalProvider::generate(const RangeImage& condition, const Pose& pose) {
  namespace fs = std::filesystem;
  const std::string id = prefix_ + "-" + std::to_string(next_++);
  const fs::path cond = fs::absolute(spool_ / "conditions" / (id + ".rvim"));
  const fs::path cond_tmp = spool_ / "conditions" / ("." + id + ".rvim.tmp");
  write_rvim(cond_tmp, condition);
  fs::rename(cond_tmp, cond);

  nlohmann::json ticket = {{"condition_path", cond.string()},
                           {"pose", pose.to_row_major()},
                           {"beams", beams_.elevations},
                           {"width", beams_.width}};
  const fs::path job_tmp = spool_ / "jobs" / ("." + id + ".json.tmp");
  {
    std::ofstream out(job_tmp);
    if (!out) throw IoError("cannot write " + job_tmp.string());
    out << ticket.dump() << "\n";
  }
  fs::rename(job_tmp, spool_ / "jobs" / (id + ".json"));

  const fs::path answer = spool_ / "out" / (id + ".rvim");
  const fs::path error = spool_ / "out" / (id + ".err");
  const auto deadline = std::chrono::steady_clock::now() + timeout_;
  while (true) {
    if (fs::exists(answer)) {
      try {
        return read_rvim(answer);
      } catch (const IoError& e) {
        throw ProviderError(id + ": " + e.what());
      }
    }
    if (fs::exists(error)) {
      std::ifstream in(error);
      std::stringstream msg;
      msg << in.rdbuf();
      throw ProviderError(id + ": " + msg.str());
    }
    if (std::chrono::steady_clock::now() >= deadline) {
      throw ProviderError(id + ": timed out waiting for the external provider");
    }
    std::this_thread::sleep_for(poll_);
  }
}

GenerationResult generate_scans(const Scene& scene, const std::vector<Pose>& poses,
                                ScanProvider& provider, const BeamTable& beams,
                                const RenderConfig& render_cfg) {
  GenerationResult result;
  for (std::size_t i = 0; i < poses.size(); ++i) {
    const RangeImage condition = render(scene, poses[i], beams, render_cfg).image;
    RangeImage image;
    try {
      image = provider.generate(condition, poses[i]);
    } catch (const ProviderError& e) {
      result.failures.push_back({i, e.what()});
      continue;
    }
    if (!image.same_shape(condition)) {
      throw std::runtime_error("provider " + provider.tag() +
                               " returned a scan of the wrong dimensions");
    }
    result.scans.push_back({std::move(image), poses[i], provider.tag()});
  }
  return result;
}

double single_pass_delta(const Scene& scene, const std::vector<Pose>& poses) {
  if (poses.empty()) throw std::invalid_argument("delta needs at least one pose");
  std::vector<double> axes;
  for (const auto& p : poses) {
    const ViewAttributes a = decode_attributes(scene, p);
    for (int g = 0; g < a.size(); ++g) axes.push_back(a.scales.row(g).maxCoeff());
  }
  return median_scale_delta(std::move(axes));
}

TrainResult expand_reconstruct(Scene scene, const std::vector<TrainingView>& real,
                               const std::vector<GeneratedScan>& generated,
                               const BeamTable& beams, const TrainConfig& cfg,
                               const ExpandOptions& options, int iterations, std::uint64_t seed,
                               const ProgressFn& progress) {
  if (real.empty()) throw std::invalid_argument("expansion needs at least one real frame");
  if (options.ddad && !generated.empty() && !(options.delta > 0.0)) {
    throw std::invalid_argument("masked expansion needs a positive delta");
  }
  TrainConfig local = cfg;
  local.densify = false;
  TrainResult result;
  Trainer trainer(std::move(scene), beams, local);
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick_real(0, real.size() - 1);
  std::uniform_int_distribution<std::size_t> pick_gen(0, generated.empty() ? 0 : generated.size() - 1);
  for (int it = 0; it < iterations; ++it) {
    LossRecord rec;
    rec.iteration = trainer.iteration() + 1;
    if (generated.empty() || it % 2 == 0) {
      const auto& v = real[pick_real(rng)];
      rec.terms = trainer.step(v.pose, v.scan);
    } else {
      const auto& g = generated[pick_gen(rng)];
      LossMask mask;
      if (options.ddad) mask.delta = options.delta;
      rec.generated = true;
      rec.terms = trainer.step(g.pose, g.image, mask);
    }
    if (progress) progress(rec);
    result.log.push_back(rec);
  }
  result.scene = trainer.take_scene();
  return result;
}

}  // namespace lidarsplat
