#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <cstddef>
#include <span>
#include <vector>

namespace lidarsplat {

/// Per-beam elevation table plus the azimuth resolution of the sensor.
/// Row 0 of a range image is the highest beam.
struct BeamTable {
  std::vector<double> elevations;  // radians, strictly increasing
  int width = 0;

  int height() const { return static_cast<int>(elevations.size()); }

  /// Throws std::invalid_argument when the table is unusable.
  void validate() const;

  /// Evenly spaced beams between `lowest` and `highest` (radians).
  static BeamTable uniform(int height, double lowest, double highest, int width);
};

/// H x W grid with depth (m), intensity [0,1] and ray-drop [0,1] channels.
/// The ray-drop channel stores the probability that a beam returned; a
/// no-return pixel has depth 0 and ray-drop 0.
class RangeImage {
 public:
  RangeImage() = default;
  RangeImage(int height, int width);

  int height() const { return height_; }
  int width() const { return width_; }
  std::size_t size() const { return depth_.size(); }
  std::size_t index(int row, int col) const {
    return static_cast<std::size_t>(row) * width_ + col;
  }

  std::span<double> depth() { return depth_; }
  std::span<const double> depth() const { return depth_; }
  std::span<double> intensity() { return intensity_; }
  std::span<const double> intensity() const { return intensity_; }
  std::span<double> raydrop() { return raydrop_; }
  std::span<const double> raydrop() const { return raydrop_; }

  bool same_shape(const RangeImage& other) const {
    return height_ == other.height_ && width_ == other.width_;
  }
  bool operator==(const RangeImage& other) const = default;

 private:
  int height_ = 0;
  int width_ = 0;
  std::vector<double> depth_;
  std::vector<double> intensity_;
  std::vector<double> raydrop_;
};

/// Rigid sensor-to-world transform.
struct Pose {
  Eigen::Matrix4d matrix = Eigen::Matrix4d::Identity();
  double timestamp = 0.0;

  Eigen::Matrix3d rotation() const { return matrix.topLeftCorner<3, 3>(); }
  Eigen::Vector3d translation() const { return matrix.topRightCorner<3, 1>(); }

  /// Throws std::invalid_argument unless the rotation block is orthonormal
  /// within 1e-6 and the bottom row is (0,0,0,1).
  void validate() const;

  static Pose from_row_major(std::span<const double> values, double timestamp = 0.0);
  static Pose from_translation(const Eigen::Vector3d& t);
  std::vector<double> to_row_major() const;
};

struct LidarPoint {
  Eigen::Vector3d position;
  double intensity = 0.0;
};

using PointCloud = std::vector<LidarPoint>;

struct BeamIndex {
  int index = 0;
  double ratio = 0.0;
};

/// Closest beam to elevation `phi`, ties toward the lower index.
BeamIndex nearest_beam(double phi, const BeamTable& beams);

struct PixelIndex {
  int row = 0;
  int col = 0;
};

/// Pixel that receives a sensor-frame direction.
PixelIndex pixel_of(const Eigen::Vector3d& point, const BeamTable& beams);

/// Projects sensor-frame points into a range image. Collisions keep the
/// nearest return. Throws on non-finite or zero-length points.
RangeImage project_points(const PointCloud& points, const BeamTable& beams);

struct PixelRay {
  double phi = 0.0;
  double theta = 0.0;
  Eigen::Vector3d direction;
};

PixelRay pixel_to_ray(int row, int col, const BeamTable& beams);

/// One point per pixel with ray-drop >= 0.5 and positive depth.
PointCloud unproject(const RangeImage& image, const BeamTable& beams);

PointCloud transform(const PointCloud& cloud, const Pose& pose);

}  // namespace lidarsplat
