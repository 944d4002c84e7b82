#include "lidarsplat/rangeview.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

namespace lidarsplat {

void BeamTable::validate() const {
  if (elevations.size() < 2) {
    throw std::invalid_argument("beam table needs at least 2 beams");
  }
  if (width < 4) {
    throw std::invalid_argument("beam table width must be >= 4");
  }
  for (std::size_t i = 0; i < elevations.size(); ++i) {
    if (!std::isfinite(elevations[i])) {
      throw std::invalid_argument("beam elevation is not finite");
    }
    if (i > 0 && !(elevations[i] > elevations[i - 1])) {
      throw std::invalid_argument("beam elevations must be strictly increasing");
    }
  }
}

BeamTable BeamTable::uniform(int height, double lowest, double highest, int width) {
  BeamTable beams;
  beams.width = width;
  beams.elevations.resize(static_cast<std::size_t>(std::max(height, 0)));
  for (int i = 0; i < height; ++i) {
    double t = height > 1 ? static_cast<double>(i) / (height - 1) : 0.0;
    beams.elevations[i] = lowest + t * (highest - lowest);
  }
  beams.validate();
  return beams;
}

RangeImage::RangeImage(int height, int width)
    : height_(height), width_(width) {
  if (height < 0 || width < 0) {
    throw std::invalid_argument("negative range image dimensions");
  }
  auto n = static_cast<std::size_t>(height) * width;
  depth_.assign(n, 0.0);
  intensity_.assign(n, 0.0);
  raydrop_.assign(n, 0.0);
}

void Pose::validate() const {
  if (!matrix.allFinite()) throw std::invalid_argument("pose is not finite");
  Eigen::Matrix3d r = rotation();
  double err = (r.transpose() * r - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff();
  if (err > 1e-6) throw std::invalid_argument("pose rotation is not orthonormal");
  if (r.determinant() < 0) throw std::invalid_argument("pose rotation is a reflection");
  Eigen::RowVector4d bottom = matrix.row(3);
  if ((bottom - Eigen::RowVector4d(0, 0, 0, 1)).cwiseAbs().maxCoeff() > 0.0) {
    throw std::invalid_argument("pose bottom row must be (0,0,0,1)");
  }
}

Pose Pose::from_row_major(std::span<const double> values, double timestamp) {
  if (values.size() != 16) {
    throw std::invalid_argument("pose needs 16 values, got " + std::to_string(values.size()));
  }
  Pose pose;
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 4; ++c) pose.matrix(r, c) = values[r * 4 + c];
  pose.timestamp = timestamp;
  pose.validate();
  return pose;
}

Pose Pose::from_translation(const Eigen::Vector3d& t) {
  Pose pose;
  pose.matrix.topRightCorner<3, 1>() = t;
  return pose;
}

std::vector<double> Pose::to_row_major() const {
  std::vector<double> out(16);
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 4; ++c) out[r * 4 + c] = matrix(r, c);
  return out;
}

BeamIndex nearest_beam(double phi, const BeamTable& beams) {
  const auto& el = beams.elevations;
  const int h = beams.height();
  auto it = std::lower_bound(el.begin(), el.end(), phi);
  int hi = static_cast<int>(it - el.begin());
  int best;
  if (hi == 0) {
    best = 0;
  } else if (hi == h) {
    best = h - 1;
  } else {
    // Equal distance resolves to the lower beam.
    best = (phi - el[hi - 1] <= el[hi] - phi) ? hi - 1 : hi;
  }
  return {best, static_cast<double>(best) / (h - 1)};
}

PixelIndex pixel_of(const Eigen::Vector3d& p, const BeamTable& beams) {
  const int h = beams.height();
  const int w = beams.width;
  double range = p.norm();
  double phi = std::asin(std::clamp(p.z() / range, -1.0, 1.0));
  double theta = std::atan2(p.y(), p.x());
  BeamIndex beam = nearest_beam(phi, beams);
  // std::round rounds half away from zero.
  int row = static_cast<int>(std::round((1.0 - beam.ratio) * (h - 1)));
  int col = static_cast<int>(std::round(0.5 * (1.0 - theta / std::numbers::pi) * (w - 1)));
  return {std::clamp(row, 0, h - 1), std::clamp(col, 0, w - 1)};
}

RangeImage project_points(const PointCloud& points, const BeamTable& beams) {
  beams.validate();
  RangeImage image(beams.height(), beams.width);
  auto depth = image.depth();
  auto intensity = image.intensity();
  auto raydrop = image.raydrop();
  for (const auto& pt : points) {
    if (!pt.position.allFinite() || !std::isfinite(pt.intensity)) {
      throw std::invalid_argument("point has non-finite coordinates");
    }
    double range = pt.position.norm();
    if (range == 0.0) throw std::invalid_argument("point coincides with the sensor origin");
    PixelIndex px = pixel_of(pt.position, beams);
    std::size_t k = image.index(px.row, px.col);
    double value = std::clamp(pt.intensity, 0.0, 1.0);
    // Nearest return wins; exact depth ties keep the lower intensity so the
    // result does not depend on input order.
    bool take = raydrop[k] == 0.0 || range < depth[k] ||
                (range == depth[k] && value < intensity[k]);
    if (take) {
      depth[k] = range;
      intensity[k] = value;
      raydrop[k] = 1.0;
    }
  }
  return image;
}

PixelRay pixel_to_ray(int row, int col, const BeamTable& beams) {
  const int h = beams.height();
  const int w = beams.width;
  if (row < 0 || row >= h || col < 0 || col >= w) {
    throw std::out_of_range("pixel (" + std::to_string(row) + ", " + std::to_string(col) +
                            ") outside " + std::to_string(h) + "x" + std::to_string(w));
  }
  PixelRay ray;
  ray.phi = beams.elevations[h - 1 - row];
  ray.theta = std::numbers::pi * (1.0 - 2.0 * col / static_cast<double>(w - 1));
  double cp = std::cos(ray.phi);
  ray.direction = {std::cos(ray.theta) * cp, std::sin(ray.theta) * cp, std::sin(ray.phi)};
  return ray;
}

PointCloud unproject(const RangeImage& image, const BeamTable& beams) {
  if (image.height() != beams.height() || image.width() != beams.width) {
    throw std::invalid_argument("range image does not match beam table");
  }
  PointCloud cloud;
  auto depth = image.depth();
  auto intensity = image.intensity();
  auto raydrop = image.raydrop();
  for (int r = 0; r < image.height(); ++r) {
    for (int c = 0; c < image.width(); ++c) {
      std::size_t k = image.index(r, c);
      if (raydrop[k] < 0.5 || depth[k] <= 0.0) continue;
      PixelRay ray = pixel_to_ray(r, c, beams);
      cloud.push_back({depth[k] * ray.direction, intensity[k]});
    }
  }
  return cloud;
}

PointCloud transform(const PointCloud& cloud, const Pose& pose) {
  PointCloud out;
  out.reserve(cloud.size());
  Eigen::Matrix3d r = pose.rotation();
  Eigen::Vector3d t = pose.translation();
  for (const auto& p : cloud) out.push_back({r * p.position + t, p.intensity});
  return out;
}

}  // namespace lidarsplat
