#pragma once

#include "lidarsplat/field.hpp"
#include "lidarsplat/io.hpp"
#include "lidarsplat/optimizer.hpp"
#include "lidarsplat/rasterizer.hpp"
#include "lidarsplat/synth.hpp"

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace lidarsplat {

struct TrainingPair {
  RangeImage condition;  // perturbed rendering
  RangeImage target;     // real scan
  Pose pose;
};

/// Conditions rendered from perturbed decodes (seed ^ frame index) paired
/// with the real scans.
std::vector<TrainingPair> make_training_pairs(const Scene& scene,
                                              const std::vector<TrainingView>& views,
                                              const BeamTable& beams, double sigma = 0.2,
                                              double tau = 0.1, std::uint64_t seed = 0,
                                              const RenderConfig& render_cfg = {});

/// conditions/NNN.rvim, targets/NNN.rvim, conditions.json, targets.json.
void write_pairs(const std::filesystem::path& dir, const std::vector<TrainingPair>& pairs,
                 const BeamTable& beams);

/// Every pose shifted by each offset along its own +y axis, frame-major.
std::vector<Pose> extrapolate_poses(const std::vector<Pose>& poses,
                                    const std::vector<double>& lateral_offsets = {-3.5, 3.5});

/// A provider could not produce a scan for one pose.
class ProviderError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ScanProvider {
 public:
  virtual ~ScanProvider() = default;
  virtual RangeImage generate(const RangeImage& condition, const Pose& pose) = 0;
  virtual std::string tag() const = 0;
};

/// Returns the condition unchanged.
class PassthroughProvider : public ScanProvider {
 public:
  RangeImage generate(const RangeImage& condition, const Pose& pose) override;
  std::string tag() const override { return "passthrough"; }
};

/// Ground-truth scans of a synthetic scene.
class OracleProvider : public ScanProvider {
 public:
  OracleProvider(SyntheticScene scene, BeamTable beams);
  RangeImage generate(const RangeImage& condition, const Pose& pose) override;
  std::string tag() const override { return "oracle"; }

 private:
  SyntheticScene scene_;
  BeamTable beams_;
};

/// Adds a smooth random depth offset field (standard deviation `sigma`)
/// to another provider's returns. The field is seeded by `seed` and the
/// pose, so it does not depend on call order.
class NoisyProvider : public ScanProvider {
 public:
  NoisyProvider(std::unique_ptr<ScanProvider> inner, double sigma, std::uint64_t seed,
                int cells_vertical = 4, int cells_horizontal = 32);
  RangeImage generate(const RangeImage& condition, const Pose& pose) override;
  std::string tag() const override { return "noisy-" + inner_->tag(); }

 private:
  std::unique_ptr<ScanProvider> inner_;
  double sigma_;
  std::uint64_t seed_;
  int cells_v_, cells_h_;
};

/// Spool directory exchange with an out-of-process generator:
///   <spool>/conditions/<id>.rvim   condition written by us
///   <spool>/jobs/<id>.json         {"condition_path", "pose", "beams", "width"}
///   <spool>/out/<id>.rvim          answer, or out/<id>.err on failure
/// Tickets and answers appear by atomic rename.
class ExternalProvider : public ScanProvider {
 public:
  ExternalProvider(std::filesystem::path spool, BeamTable beams,
                   std::chrono::milliseconds timeout = default_timeout(),
                   std::chrono::milliseconds poll = std::chrono::milliseconds(50));
  RangeImage generate(const RangeImage& condition, const Pose& pose) override;
  std::string tag() const override { return "external"; }

  /// LIDARSPLAT_SPOOL_TIMEOUT (seconds) or 300 s.
  static std::chrono::milliseconds default_timeout();

 private:
  std::filesystem::path spool_;
  BeamTable beams_;
  std::chrono::milliseconds timeout_, poll_;
  std::string prefix_;
  int next_ = 0;
};

struct GeneratedScan {
  RangeImage image;
  Pose pose;
  std::string tag;
};

struct GenerationFailure {
  std::size_t index = 0;
  std::string message;
};

struct GenerationResult {
  std::vector<GeneratedScan> scans;
  std::vector<GenerationFailure> failures;
};

/// Renders a clean condition at each pose and asks the provider for a scan.
/// Provider failures skip the pose; a wrongly sized answer throws.
GenerationResult generate_scans(const Scene& scene, const std::vector<Pose>& poses,
                                ScanProvider& provider, const BeamTable& beams,
                                const RenderConfig& render_cfg = {});

/// Median of the longest scale axis over the scene decoded at every pose.
double single_pass_delta(const Scene& scene, const std::vector<Pose>& poses);

struct ExpandOptions {
  double delta = 0.0;  // distortion threshold, frozen for the whole phase
  bool ddad = true;    // mask generated-scan losses; false injects them fully
};

/// Refinement on real frames and generated scans in strict alternation,
/// real first. Densification stays off. Without generated scans every
/// step is a real step.
TrainResult expand_reconstruct(Scene scene, const std::vector<TrainingView>& real,
                               const std::vector<GeneratedScan>& generated,
                               const BeamTable& beams, const TrainConfig& cfg,
                               const ExpandOptions& options, int iterations, std::uint64_t seed,
                               const ProgressFn& progress = {});

}  // namespace lidarsplat
