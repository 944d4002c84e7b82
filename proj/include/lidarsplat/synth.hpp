#pragma once

#include "lidarsplat/io.hpp"
#include "lidarsplat/rangeview.hpp"

#include <Eigen/Core>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <optional>
#include <vector>

namespace lidarsplat {

/// Planar rectangle center + a*axis_u + b*axis_v with |a| <= half_u,
/// |b| <= half_v. Infinite half extents give an unbounded plane.
struct Rectangle {
  Eigen::Vector3d center = Eigen::Vector3d::Zero();
  Eigen::Vector3d axis_u = Eigen::Vector3d::UnitX();
  Eigen::Vector3d axis_v = Eigen::Vector3d::UnitY();
  double half_u = std::numeric_limits<double>::infinity();
  double half_v = std::numeric_limits<double>::infinity();
  double intensity = 0.5;
};

/// Axis-aligned box.
struct Box {
  Eigen::Vector3d min = Eigen::Vector3d::Zero();
  Eigen::Vector3d max = Eigen::Vector3d::Ones();
  double intensity = 0.5;
};

/// Vertical capped cylinder around (x, y), spanning z in [z_min, z_max].
struct Cylinder {
  double x = 0.0;
  double y = 0.0;
  double radius = 0.5;
  double z_min = 0.0;
  double z_max = 1.0;
  double intensity = 0.5;
};

struct RayHit {
  double distance = 0.0;
  double intensity = 0.0;
};

struct SyntheticScene {
  std::vector<Rectangle> rectangles;
  std::vector<Box> boxes;
  std::vector<Cylinder> cylinders;

  /// Nearest hit along origin + t*dir (unit dir) with 0 < t <= max_range.
  std::optional<RayHit> intersect(const Eigen::Vector3d& origin, const Eigen::Vector3d& dir,
                                  double max_range) const;
  /// Distance from a point to the closest primitive surface.
  double surface_distance(const Eigen::Vector3d& p) const;
};

struct ScanOptions {
  double noise_sigma = 0.0;  // m, Gaussian depth noise
  double drop_prob = 0.0;    // Bernoulli drop of returns
  std::uint64_t seed = 0;
  double max_range = 120.0;
};

/// Analytic scan of the scene: one nearest hit per beam ray.
RangeImage raycast_scan(const SyntheticScene& scene, const Pose& pose, const BeamTable& beams,
                        const ScanOptions& options = {});

struct Fixture {
  SyntheticScene scene;
  BeamTable beams;
  std::vector<Pose> trajectory;              // captured traverse
  std::vector<Pose> left_lane, right_lane;   // +y and -y parallel traverses
  double lane_offset = 3.5;
  double sensor_height = 1.8;
  int heldout_period = 10;
  int heldout_phase = 5;
  bool is_heldout(int frame) const { return frame % heldout_period == heldout_phase; }
};

/// Straight corridor: floor, side and end walls, parked boxes and poles.
/// `seed` jitters object placement and intensities.
Fixture corridor_fixture(std::uint64_t seed, int beams = 32, int width = 512);

/// Writes scans and manifests:
///   scans/{main,left,right}_NNN.rvim, scene.json,
///   train.json (captured minus held-out), heldout.json, all.json,
///   lane_left.json, lane_right.json, extrap_eval.json (lane frames at
///   held-out indices).
void write_fixture(const std::filesystem::path& dir, const Fixture& fixture);

void save_scene(const std::filesystem::path& path, const SyntheticScene& scene);
SyntheticScene load_scene(const std::filesystem::path& path);

}  // namespace lidarsplat
