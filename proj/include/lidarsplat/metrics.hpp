#pragma once

#include "lidarsplat/field.hpp"
#include "lidarsplat/rangeview.hpp"
#include "lidarsplat/rasterizer.hpp"
#include "lidarsplat/ssim.hpp"

#include <Eigen/Core>
#include <span>
#include <string>
#include <vector>

namespace lidarsplat {

using Points = std::vector<Eigen::Vector3d>;

Points positions(const PointCloud& cloud);

/// Symmetric mean nearest-neighbour distance (exact, grid accelerated).
/// Throws std::invalid_argument on an empty cloud.
double chamfer(const Points& a, const Points& b);

/// Harmonic mean of precision (a within threshold of b) and recall.
double fscore(const Points& a, const Points& b, double threshold = 0.1);

/// 10 log10(peak^2 / MSE), 100 dB when MSE < 1e-10.
double psnr(std::span<const double> pred, std::span<const double> target, double peak = 1.0);

struct BevConfig {
  int bins = 100;
  double extent = 50.0;     // m, grid covers [-extent, extent]^2
  double bandwidth = 0.0;   // m, MMD kernel; 0 means one bin
};

/// Normalized top-down occupancy histogram, row = y bin, col = x bin.
/// Points outside the grid are ignored; throws when none fall inside.
std::vector<double> bev_histogram(const Points& cloud, const BevConfig& cfg = {});

/// Jensen-Shannon divergence (nats) between BEV histograms.
double jsd_bev(const Points& a, const Points& b, const BevConfig& cfg = {});

/// Squared Gaussian-kernel discrepancy between BEV histograms, in 1e-5.
double mmd_bev(const Points& a, const Points& b, const BevConfig& cfg = {});

struct MetricsConfig {
  double fscore_threshold = 0.1;
  double raydrop_threshold = 0.5;
  BevConfig bev{};
  SsimConfig ssim{};
};

struct FrameMetrics {
  double chamfer = 0.0;
  double fscore = 1.0;
  double depth_l1 = 0.0;
  double intensity_psnr = 100.0;
  double intensity_ssim = 1.0;
  double raydrop_psnr = 100.0;
  double raydrop_ssim = 1.0;
  double jsd = 0.0;
  double mmd = 0.0;
};

/// All metrics between a predicted and a reference scan at the same pose.
/// Point clouds are taken in the sensor frame. An empty predicted cloud
/// scores infinite Chamfer, zero F-score and the maximal JSD.
FrameMetrics compare_scans(const RangeImage& pred, const RangeImage& target,
                           const BeamTable& beams, const MetricsConfig& cfg = {});

struct EvalReport {
  MetricsConfig config;
  std::vector<FrameMetrics> frames;
  FrameMetrics mean;
};

/// Renders every pose and compares it with the matching scan.
EvalReport evaluate(const Scene& scene, const std::vector<Pose>& poses,
                    const std::vector<RangeImage>& scans, const BeamTable& beams,
                    const MetricsConfig& cfg = {}, const RenderConfig& render_cfg = {});

std::string report_json(const EvalReport& report);
std::string report_table(const EvalReport& report);

}  // namespace lidarsplat
