#pragma once

#include "lidarsplat/field.hpp"
#include "lidarsplat/rangeview.hpp"

#include <Eigen/Core>

#include <array>
#include <optional>
#include <span>
#include <vector>

namespace lidarsplat {

struct RenderConfig {
  int tile_size = 16;
  double alpha_skip = 1.0 / 255.0;
  double transmittance_stop = 1e-4;
  double median_transmittance = 0.5;
  double min_determinant = 1e-9;
  double min_distance = 0.5;  // m; closer splat centers are culled
};

/// A 2D Gaussian expressed in the sensor frame: P(u, v) = u*axis_u +
/// v*axis_v + center, with axis_u = s_u t_u and axis_v = s_v t_v.
struct SplatFrame {
  int gaussian = 0;  // row in ViewAttributes
  Eigen::Vector3d axis_u;
  Eigen::Vector3d axis_v;
  Eigen::Vector3d center;
  Eigen::Vector3d tangent_u;  // unit t_u, world frame
  Eigen::Vector3d tangent_v;  // unit t_v, world frame
  double distance = 0.0;      // sensor to center
  double half_angle = 0.0;    // angular radius of the footprint

  // Pixel footprint: inclusive row range and up to three column ranges
  // (the azimuth seam splits a footprint in two).
  int row_lo = 0;
  int row_hi = -1;
  std::array<std::array<int, 2>, 3> col_ranges{};
  int col_range_count = 0;

  bool covers(int row, int col) const {
    if (row < row_lo || row > row_hi) return false;
    for (int k = 0; k < col_range_count; ++k)
      if (col >= col_ranges[k][0] && col <= col_ranges[k][1]) return true;
    return false;
  }
};

/// Builds sensor-frame splats, culling Gaussians closer than
/// cfg.min_distance, with degenerate orientation, or too transparent to
/// ever pass the skip threshold. The footprint is conservative: it covers
/// every pixel where opacity * G >= cfg.alpha_skip.
std::vector<SplatFrame> build_splat_frames(const ViewAttributes& attrs, const Pose& pose,
                                           const BeamTable& beams, const RenderConfig& cfg = {});

/// Angular radius of the cone that contains the splat points within
/// `radius` metres of a center `distance` metres away.
double footprint_half_angle(double radius, double distance);

struct SplatHit {
  double u = 0.0;
  double v = 0.0;
  double depth = 0.0;
};

/// Intersects the pixel ray (phi, theta) with the splat's tangent plane as
/// the meet of two planes through the ray. Returns nothing when the splat
/// is parallel to the ray.
std::optional<SplatHit> ray_splat_intersect(double phi, double theta, const SplatFrame& frame,
                                            double min_determinant = 1e-9);

/// One ray-splat intersection ready for compositing.
struct Intersection {
  int gaussian = 0;
  int frame = 0;
  double u = 0.0;
  double v = 0.0;
  double depth = 0.0;
  double weight = 0.0;  // G(u, v)
  double opacity = 0.0;
  double intensity = 0.0;
  double raydrop = 0.0;
};

struct PixelSample {
  double intensity = 0.0;
  double depth = 0.0;
  double raydrop = 0.0;
  double median_depth = 0.0;
  double transmittance = 1.0;
  double opacity = 0.0;  // sum of compositing weights
};

/// Front-to-back compositing of intersections already sorted by depth.
/// Entries that were skipped or lie past the early stop are removed from
/// `sorted`, so on return it holds exactly the contributing intersections.
PixelSample composite(std::vector<Intersection>& sorted, const RenderConfig& cfg = {});

struct RenderOutput {
  RangeImage image;
  std::vector<double> median_depth;
  std::vector<double> transmittance;
  std::vector<double> opacity;
};

/// Everything the backward pass needs from a forward render.
struct RenderTrace {
  std::vector<SplatFrame> frames;
  std::vector<std::size_t> pixel_begin;  // size H*W + 1, into contributions
  std::vector<Intersection> contributions;
};

/// Tiled renderer of decoded attributes.
RenderOutput rasterize(const ViewAttributes& attrs, const Pose& pose, const BeamTable& beams,
                       const RenderConfig& cfg = {}, RenderTrace* trace = nullptr);

/// Per-pixel loop over every splat, no tiling or footprints.
RenderOutput rasterize_bruteforce(const ViewAttributes& attrs, const Pose& pose,
                                  const BeamTable& beams, const RenderConfig& cfg = {});

RenderOutput render(const Scene& scene, const Pose& pose, const BeamTable& beams,
                    const RenderConfig& cfg = {});
RenderOutput render_bruteforce(const Scene& scene, const Pose& pose, const BeamTable& beams,
                               const RenderConfig& cfg = {});

/// Gradient of a scalar loss with respect to the three rendered channels.
struct ImageGradient {
  std::vector<double> intensity;
  std::vector<double> depth;
  std::vector<double> raydrop;

  explicit ImageGradient(std::size_t n = 0) : intensity(n, 0.0), depth(n, 0.0), raydrop(n, 0.0) {}
};

/// Accumulated absolute pixel-space gradient of each splat center, summed
/// component-wise over pixels.
struct ScreenGradient {
  std::vector<double> col;
  std::vector<double> row;
  std::vector<char> visible;
};

AttributeGradients rasterize_backward(const ViewAttributes& attrs, const Pose& pose,
                                      const BeamTable& beams, const RenderTrace& trace,
                                      const ImageGradient& grad, ScreenGradient* screen = nullptr);

/// Median over Gaussians of the longest scale axis (lower middle for even
/// counts).
double median_scale_delta(const ViewAttributes& attrs);
double median_scale_delta(std::vector<double> max_axes);

struct DistortionMask {
  int height = 0;
  int width = 0;
  double delta = 0.0;
  std::vector<char> mask;

  std::size_t count() const;
};

/// |median depth - rendered depth| > delta, restricted to pixels whose
/// accumulated opacity reaches `min_opacity`.
DistortionMask distortion_mask(const RenderOutput& out, double delta, double min_opacity = 0.1);

}  // namespace lidarsplat
