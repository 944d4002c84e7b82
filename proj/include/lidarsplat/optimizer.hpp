#pragma once

#include "lidarsplat/field.hpp"
#include "lidarsplat/rasterizer.hpp"
#include "lidarsplat/ssim.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <vector>

namespace lidarsplat {

struct LearningRates {
  double geometry = 1e-3;
  double intensity = 4e-3;
  double raydrop = 4e-3;
  double opacity = 2e-3;
  double tokens = 5e-3;
};

struct TrainConfig {
  double lambda_intensity = 0.2;  // D-SSIM share of the intensity loss
  SsimConfig ssim{};
  LearningRates lr{};
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  bool densify = true;
  int densify_from = 500;
  int densify_until = 1000;  // last iteration that may densify; 0 = no limit
  int densify_interval = 100;
  double split_threshold = 0.002;
  double prune_opacity = 0.005;
  double max_anchor_factor = 2.0;

  int anchor_count = 10000;
  int single_pass_iters = 5000;
  int expand_iters = 2000;

  RenderConfig render{};

  /// Throws std::invalid_argument on out-of-range values.
  void validate() const;
};

struct LossTerms {
  double total = 0.0;
  double depth = 0.0;
  double intensity = 0.0;
  double raydrop = 0.0;
  double scale = 0.0;
};

/// Image terms of the training loss. When `mask` is given every per-pixel
/// term is multiplied by it before averaging. Fills `grad` when non-null.
LossTerms image_loss(const RenderOutput& pred, const RangeImage& target, const TrainConfig& cfg,
                     const DistortionMask* mask = nullptr, ImageGradient* grad = nullptr);

/// Mean product of the two scales over all decoded Gaussians.
double scale_regularizer(const ViewAttributes& attrs, AttributeGradients* grad = nullptr);

/// Full loss: image terms plus the (never masked) scale regularizer.
LossTerms loss(const RenderOutput& pred, const RangeImage& target, const ViewAttributes& attrs,
               const TrainConfig& cfg, const DistortionMask* mask = nullptr);

/// Where the loss mask comes from: a fixed mask, or a distortion mask
/// recomputed from the forward render with threshold `delta`.
struct LossMask {
  const DistortionMask* fixed = nullptr;
  double delta = 0.0;
};

/// Per-anchor accumulated pixel-space gradient magnitude and visibility
/// count, the growth statistic for densification.
struct DensifyStats {
  std::vector<double> grad_sum;
  std::vector<int> hits;

  void reset(int anchors) {
    grad_sum.assign(static_cast<std::size_t>(anchors), 0.0);
    hits.assign(static_cast<std::size_t>(anchors), 0);
  }
};

struct GradientState {
  LossTerms loss;
  FieldGradients field;
  std::size_t masked_pixels = 0;
};

/// Reverse-mode gradients of the loss at one pose with respect to all
/// tokens and network weights.
GradientState backward(const Scene& scene, const Pose& pose, const BeamTable& beams,
                       const RangeImage& target, const TrainConfig& cfg, const LossMask& mask = {},
                       DensifyStats* stats = nullptr);

class Adam {
 public:
  explicit Adam(const Scene& scene);

  void step(Scene& scene, const FieldGradients& grads, const TrainConfig& cfg);
  /// Remaps token moments after the anchor set changed: new row i takes the
  /// state of old row source[i].
  void remap_tokens(const std::vector<int>& source);
  int steps() const { return steps_; }
  void set_steps(int steps) { steps_ = steps; }

 private:
  FieldGradients m_;
  FieldGradients v_;
  int steps_ = 0;
};

/// Single update with fresh optimizer state at `iteration` (1-based).
void adam_step(Scene& scene, const FieldGradients& grads, const TrainConfig& cfg, int iteration);

struct DensifyResult {
  bool ran = false;
  int split = 0;
  int pruned = 0;
  std::vector<int> source;  // old anchor index of each new anchor
};

/// Splits anchors whose mean accumulated gradient exceeds the threshold and
/// prunes anchors whose opacity at `last_pose` is below the prune threshold,
/// every densify_interval iterations from densify_from on. The anchor count
/// never exceeds max_anchor_factor * initial_anchors.
DensifyResult densify_and_prune(Scene& scene, DensifyStats& stats, const TrainConfig& cfg,
                                int iteration, const Pose& last_pose, int initial_anchors);

struct TrainingView {
  Pose pose;
  RangeImage scan;
};

struct LossRecord {
  int iteration = 0;
  LossTerms terms;
  bool generated = false;  // step on a generated scan
};

/// One optimization run over a fixed scene: owns the optimizer state and
/// densification statistics.
class Trainer {
 public:
  Trainer(Scene scene, BeamTable beams, TrainConfig cfg);

  LossTerms step(const Pose& pose, const RangeImage& target, const LossMask& mask = {});
  DensifyResult densify(const Pose& last_pose);

  int iteration() const { return iteration_; }
  const Scene& scene() const { return scene_; }
  Scene take_scene() { return std::move(scene_); }
  std::size_t last_masked_pixels() const { return last_masked_; }

 private:
  Scene scene_;
  BeamTable beams_;
  TrainConfig cfg_;
  Adam adam_;
  DensifyStats stats_;
  int iteration_ = 0;
  int initial_anchors_ = 0;
  std::size_t last_masked_ = 0;
};

/// World-frame points of every view, the anchor initialization pool.
PointCloud aggregate_points(const std::vector<TrainingView>& views, const BeamTable& beams);

struct TrainResult {
  Scene scene;
  std::vector<LossRecord> log;
};

using ProgressFn = std::function<void(const LossRecord&)>;

/// Single-traverse reconstruction: seeded uniform frame sampling, render,
/// loss, backward, Adam, densify/prune for `iterations` steps. The last step
/// never densifies.
TrainResult reconstruct_single_pass(Scene scene, const std::vector<TrainingView>& views,
                                    const BeamTable& beams, const TrainConfig& cfg,
                                    int iterations, std::uint64_t seed,
                                    const ProgressFn& progress = {});

/// CSV with header iteration,total,depth,intensity,raydrop,scale.
void write_loss_csv(const std::filesystem::path& path, const std::vector<LossRecord>& log);

}  // namespace lidarsplat
