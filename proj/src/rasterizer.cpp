#include "lidarsplat/rasterizer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>

namespace lidarsplat {
namespace {

constexpr double kPi = std::numbers::pi;

struct PixelRays {
  std::vector<double> phi;
  std::vector<double> theta;
  std::vector<Eigen::Vector3d> dir;
  std::vector<Eigen::Vector3d> plane_u;  // normal of the azimuth plane
  std::vector<Eigen::Vector3d> plane_v;  // normal of the elevation plane
};

Eigen::Vector3d azimuth_plane(double theta) {
  return {std::sin(theta), -std::cos(theta), 0.0};
}

Eigen::Vector3d elevation_plane(double phi, double theta) {
  return {std::cos(theta) * std::sin(phi), std::sin(theta) * std::sin(phi), -std::cos(phi)};
}

PixelRays make_rays(const BeamTable& beams) {
  const int h = beams.height(), w = beams.width;
  PixelRays rays;
  const auto n = static_cast<std::size_t>(h) * w;
  rays.phi.resize(n);
  rays.theta.resize(n);
  rays.dir.resize(n);
  rays.plane_u.resize(n);
  rays.plane_v.resize(n);
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      auto k = static_cast<std::size_t>(r) * w + c;
      PixelRay ray = pixel_to_ray(r, c, beams);
      rays.phi[k] = ray.phi;
      rays.theta[k] = ray.theta;
      rays.dir[k] = ray.direction;
      rays.plane_u[k] = azimuth_plane(ray.theta);
      rays.plane_v[k] = elevation_plane(ray.phi, ray.theta);
    }
  }
  return rays;
}

struct Solve {
  double a11, a12, a21, a22, det, u, v;
};

std::optional<Solve> solve_planes(const Eigen::Vector3d& n1, const Eigen::Vector3d& n2,
                                  const SplatFrame& f, double min_det) {
  Solve s;
  s.a11 = n1.dot(f.axis_u);
  s.a12 = n1.dot(f.axis_v);
  s.a21 = n2.dot(f.axis_u);
  s.a22 = n2.dot(f.axis_v);
  s.det = s.a11 * s.a22 - s.a12 * s.a21;
  if (!(std::abs(s.det) >= min_det)) return std::nullopt;
  double r1 = -n1.dot(f.center);
  double r2 = -n2.dot(f.center);
  s.u = (r1 * s.a22 - s.a12 * r2) / s.det;
  s.v = (s.a11 * r2 - s.a21 * r1) / s.det;
  return s;
}

void set_footprint(SplatFrame& f, const BeamTable& beams, double cutoff) {
  const int h = beams.height(), w = beams.width;
  const int period = w - 1;
  f.half_angle = footprint_half_angle(
      cutoff * std::max(f.axis_u.norm(), f.axis_v.norm()), f.distance);

  // Axis-aligned box around the cutoff ellipse.
  Eigen::Vector3d ext;
  for (int i = 0; i < 3; ++i)
    ext[i] = cutoff * std::hypot(f.axis_u[i], f.axis_v[i]) + 1e-9;
  const Eigen::Vector3d& c = f.center;
  const double gx = std::max(0.0, std::abs(c.x()) - ext.x());
  const double gy = std::max(0.0, std::abs(c.y()) - ext.y());
  const double rho_min = std::hypot(gx, gy);
  const double rho_max = std::hypot(std::abs(c.x()) + ext.x(), std::abs(c.y()) + ext.y());
  const double zmax = c.z() + ext.z(), zmin = c.z() - ext.z();
  bool full = !std::isfinite(cutoff) || rho_min <= 0.0;
  double phi_hi = kPi / 2, phi_lo = -kPi / 2;
  if (std::isfinite(cutoff)) {
    phi_hi = std::atan2(zmax, zmax >= 0.0 ? rho_min : rho_max) + 1e-9;
    phi_lo = std::atan2(zmin, zmin <= 0.0 ? rho_min : rho_max) - 1e-9;
  }

  const auto& el = beams.elevations;
  auto lo = std::lower_bound(el.begin(), el.end(), phi_lo);
  auto hi = std::upper_bound(el.begin(), el.end(), phi_hi);
  if (lo >= hi) {
    f.row_lo = 0;
    f.row_hi = -1;
    f.col_range_count = 0;
    return;
  }
  int beam_lo = static_cast<int>(lo - el.begin());
  int beam_hi = static_cast<int>(hi - el.begin()) - 1;
  f.row_lo = h - 1 - beam_hi;
  f.row_hi = h - 1 - beam_lo;

  int col_lo = 0, col_hi = 0;
  if (!full) {
    const double theta_c = std::atan2(c.y(), c.x());
    double d_lo = 0.0, d_hi = 0.0;
    for (double sx : {-1.0, 1.0}) {
      for (double sy : {-1.0, 1.0}) {
        double d = std::remainder(
            std::atan2(c.y() + sy * ext.y(), c.x() + sx * ext.x()) - theta_c, 2.0 * kPi);
        d_lo = std::min(d_lo, d);
        d_hi = std::max(d_hi, d);
      }
    }
    auto col_of = [&](double theta) { return 0.5 * (1.0 - theta / kPi) * period; };
    col_lo = static_cast<int>(std::floor(col_of(theta_c + d_hi + 1e-9)));
    col_hi = static_cast<int>(std::ceil(col_of(theta_c + d_lo - 1e-9)));
    full = col_hi - col_lo >= period;
  }
  f.col_range_count = 0;
  if (full) {
    f.col_ranges[f.col_range_count++] = {0, w - 1};
    return;
  }
  for (int shift : {0, period, -period}) {
    int a = std::max(col_lo + shift, 0);
    int b = std::min(col_hi + shift, w - 1);
    if (a <= b) f.col_ranges[f.col_range_count++] = {a, b};
  }
}

void gather(const SplatFrame& f, int frame_index, const ViewAttributes& attrs,
            const PixelRays& rays, std::size_t k, const RenderConfig& cfg,
            std::vector<Intersection>& out) {
  auto s = solve_planes(rays.plane_u[k], rays.plane_v[k], f, cfg.min_determinant);
  if (!s) return;
  const Eigen::Vector3d p = s->u * f.axis_u + s->v * f.axis_v + f.center;
  const double depth = rays.dir[k].dot(p);
  if (!(depth > 0.0)) return;
  const double g = std::exp(-0.5 * (s->u * s->u + s->v * s->v));
  const int gi = f.gaussian;
  if (attrs.opacity(gi) * g < cfg.alpha_skip) return;
  Intersection hit;
  hit.gaussian = gi;
  hit.frame = frame_index;
  hit.u = s->u;
  hit.v = s->v;
  hit.depth = depth;
  hit.weight = g;
  hit.opacity = attrs.opacity(gi);
  hit.intensity = attrs.intensity(gi);
  hit.raydrop = attrs.raydrop(gi);
  out.push_back(hit);
}

void sort_front_to_back(std::vector<Intersection>& hits) {
  std::sort(hits.begin(), hits.end(), [](const Intersection& a, const Intersection& b) {
    if (a.depth != b.depth) return a.depth < b.depth;
    return a.gaussian < b.gaussian;
  });
}

RenderOutput empty_output(const BeamTable& beams) {
  RenderOutput out;
  out.image = RangeImage(beams.height(), beams.width);
  const auto n = out.image.size();
  out.median_depth.assign(n, 0.0);
  out.transmittance.assign(n, 1.0);
  out.opacity.assign(n, 0.0);
  return out;
}

void store(RenderOutput& out, std::size_t k, const PixelSample& s) {
  out.image.intensity()[k] = s.intensity;
  out.image.depth()[k] = s.depth;
  out.image.raydrop()[k] = s.raydrop;
  out.median_depth[k] = s.median_depth;
  out.transmittance[k] = s.transmittance;
  out.opacity[k] = s.opacity;
}

}  // namespace

double footprint_half_angle(double radius, double distance) {
  if (!(distance > radius)) return kPi;
  return std::asin(radius / distance);
}

std::vector<SplatFrame> build_splat_frames(const ViewAttributes& attrs, const Pose& pose,
                                           const BeamTable& beams, const RenderConfig& cfg) {
  beams.validate();
  const Eigen::Matrix3d rt = pose.rotation().transpose();
  const Eigen::Vector3d t = pose.translation();
  std::vector<SplatFrame> frames;
  frames.reserve(static_cast<std::size_t>(attrs.size()));
  for (int i = 0; i < attrs.size(); ++i) {
    Eigen::Vector4d q = attrs.rotations.row(i).transpose();
    double qn = q.norm();
    if (!(qn >= 1e-8)) continue;
    const double alpha = attrs.opacity(i);
    if (!(alpha >= cfg.alpha_skip)) continue;
    SplatFrame f;
    f.gaussian = i;
    f.center = rt * (attrs.centers.row(i).transpose() - t);
    f.distance = f.center.norm();
    if (!(f.distance >= cfg.min_distance)) continue;
    Eigen::Matrix3d r = quaternion_to_matrix(q / qn);
    f.tangent_u = r.col(0);
    f.tangent_v = r.col(1);
    f.axis_u = attrs.scales(i, 0) * (rt * f.tangent_u);
    f.axis_v = attrs.scales(i, 1) * (rt * f.tangent_v);
    // Radius (in standard deviations) beyond which opacity * G < skip.
    double cutoff = cfg.alpha_skip > 0.0
                        ? std::sqrt(std::max(0.0, 2.0 * std::log(alpha / cfg.alpha_skip)))
                        : std::numeric_limits<double>::infinity();
    set_footprint(f, beams, cutoff);
    frames.push_back(f);
  }
  return frames;
}

std::optional<SplatHit> ray_splat_intersect(double phi, double theta, const SplatFrame& frame,
                                            double min_determinant) {
  auto s = solve_planes(azimuth_plane(theta), elevation_plane(phi, theta), frame,
                        min_determinant);
  if (!s) return std::nullopt;
  const double cp = std::cos(phi);
  Eigen::Vector3d dir(std::cos(theta) * cp, std::sin(theta) * cp, std::sin(phi));
  Eigen::Vector3d p = s->u * frame.axis_u + s->v * frame.axis_v + frame.center;
  return SplatHit{s->u, s->v, dir.dot(p)};
}

PixelSample composite(std::vector<Intersection>& sorted, const RenderConfig& cfg) {
  PixelSample px;
  double t = 1.0;
  bool median_set = false;
  std::size_t kept = 0;
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    const Intersection& hit = sorted[i];
    const double a = hit.opacity * hit.weight;
    if (a < cfg.alpha_skip) continue;
    const double w = a * t;
    px.intensity += hit.intensity * w;
    px.depth += hit.depth * w;
    px.raydrop += hit.raydrop * w;
    px.opacity += w;
    t *= 1.0 - a;
    if (!median_set && t <= cfg.median_transmittance) {
      px.median_depth = hit.depth;
      median_set = true;
    }
    sorted[kept++] = hit;
    if (t < cfg.transmittance_stop) break;
  }
  sorted.resize(kept);
  px.transmittance = t;
  return px;
}

RenderOutput rasterize(const ViewAttributes& attrs, const Pose& pose, const BeamTable& beams,
                       const RenderConfig& cfg, RenderTrace* trace) {
  if (cfg.tile_size < 1) throw std::invalid_argument("tile size must be >= 1");
  const int h = beams.height(), w = beams.width;
  const int ts = cfg.tile_size;
  const int tiles_y = (h + ts - 1) / ts, tiles_x = (w + ts - 1) / ts;
  const int tile_count = tiles_y * tiles_x;

  std::vector<SplatFrame> frames = build_splat_frames(attrs, pose, beams, cfg);
  const PixelRays rays = make_rays(beams);

  std::vector<std::vector<int>> bins(static_cast<std::size_t>(tile_count));
  std::vector<int> touched;
  for (int fi = 0; fi < static_cast<int>(frames.size()); ++fi) {
    const SplatFrame& f = frames[fi];
    if (f.row_lo > f.row_hi) continue;
    touched.clear();
    for (int ty = f.row_lo / ts; ty <= f.row_hi / ts; ++ty) {
      for (int k = 0; k < f.col_range_count; ++k) {
        for (int tx = f.col_ranges[k][0] / ts; tx <= f.col_ranges[k][1] / ts; ++tx) {
          touched.push_back(ty * tiles_x + tx);
        }
      }
    }
    std::sort(touched.begin(), touched.end());
    touched.erase(std::unique(touched.begin(), touched.end()), touched.end());
    for (int tile : touched) bins[tile].push_back(fi);
  }

  RenderOutput out = empty_output(beams);
  const auto n = out.image.size();
  std::vector<std::vector<Intersection>> tile_hits(trace ? tile_count : 0);
  std::vector<std::size_t> counts(trace ? n : 0, 0);

#pragma omp parallel for schedule(dynamic)
  for (int tile = 0; tile < tile_count; ++tile) {
    const int ty = tile / tiles_x, tx = tile % tiles_x;
    std::vector<Intersection> hits;
    for (int r = ty * ts; r < std::min(h, (ty + 1) * ts); ++r) {
      for (int c = tx * ts; c < std::min(w, (tx + 1) * ts); ++c) {
        const auto k = static_cast<std::size_t>(r) * w + c;
        hits.clear();
        for (int fi : bins[tile]) {
          if (frames[fi].covers(r, c)) gather(frames[fi], fi, attrs, rays, k, cfg, hits);
        }
        sort_front_to_back(hits);
        store(out, k, composite(hits, cfg));
        if (trace) {
          counts[k] = hits.size();
          tile_hits[tile].insert(tile_hits[tile].end(), hits.begin(), hits.end());
        }
      }
    }
  }

  if (trace) {
    trace->pixel_begin.assign(n + 1, 0);
    for (std::size_t k = 0; k < n; ++k) trace->pixel_begin[k + 1] = trace->pixel_begin[k] + counts[k];
    trace->contributions.resize(trace->pixel_begin[n]);
    for (int tile = 0; tile < tile_count; ++tile) {
      const int ty = tile / tiles_x, tx = tile % tiles_x;
      std::size_t src = 0;
      for (int r = ty * ts; r < std::min(h, (ty + 1) * ts); ++r) {
        for (int c = tx * ts; c < std::min(w, (tx + 1) * ts); ++c) {
          const auto k = static_cast<std::size_t>(r) * w + c;
          std::copy_n(tile_hits[tile].begin() + static_cast<std::ptrdiff_t>(src), counts[k],
                      trace->contributions.begin() +
                          static_cast<std::ptrdiff_t>(trace->pixel_begin[k]));
          src += counts[k];
        }
      }
    }
    trace->frames = std::move(frames);
  }
  return out;
}

RenderOutput rasterize_bruteforce(const ViewAttributes& attrs, const Pose& pose,
                                  const BeamTable& beams, const RenderConfig& cfg) {
  const std::vector<SplatFrame> frames = build_splat_frames(attrs, pose, beams, cfg);
  const PixelRays rays = make_rays(beams);
  RenderOutput out = empty_output(beams);
  std::vector<Intersection> hits;
  for (std::size_t k = 0; k < out.image.size(); ++k) {
    hits.clear();
    for (int fi = 0; fi < static_cast<int>(frames.size()); ++fi) {
      gather(frames[fi], fi, attrs, rays, k, cfg, hits);
    }
    sort_front_to_back(hits);
    store(out, k, composite(hits, cfg));
  }
  return out;
}

RenderOutput render(const Scene& scene, const Pose& pose, const BeamTable& beams,
                    const RenderConfig& cfg) {
  return rasterize(decode_attributes(scene, pose), pose, beams, cfg);
}

RenderOutput render_bruteforce(const Scene& scene, const Pose& pose, const BeamTable& beams,
                               const RenderConfig& cfg) {
  return rasterize_bruteforce(decode_attributes(scene, pose), pose, beams, cfg);
}

namespace {

// Per-contribution gradient in the sensor frame, reduced per Gaussian later.
struct HitGradient {
  Eigen::Vector3d axis_u = Eigen::Vector3d::Zero();
  Eigen::Vector3d axis_v = Eigen::Vector3d::Zero();
  Eigen::Vector3d center = Eigen::Vector3d::Zero();
  double opacity = 0.0;
  double intensity = 0.0;
  double raydrop = 0.0;
  double screen_col = 0.0;
  double screen_row = 0.0;
};

}  // namespace

AttributeGradients rasterize_backward(const ViewAttributes& attrs, const Pose& pose,
                                      const BeamTable& beams, const RenderTrace& trace,
                                      const ImageGradient& grad, ScreenGradient* screen) {
  const int h = beams.height(), w = beams.width;
  const auto n = static_cast<std::size_t>(h) * w;
  if (trace.pixel_begin.size() != n + 1 || grad.depth.size() != n) {
    throw std::invalid_argument("render trace does not match the beam table");
  }
  const PixelRays rays = make_rays(beams);
  const double col_step = 2.0 * kPi / (w - 1);
  const double row_step = (beams.elevations.back() - beams.elevations.front()) / (h - 1);

  std::vector<HitGradient> hit_grads(trace.contributions.size());

#pragma omp parallel for schedule(dynamic, 64)
  for (std::ptrdiff_t pk = 0; pk < static_cast<std::ptrdiff_t>(n); ++pk) {
    const auto k = static_cast<std::size_t>(pk);
    const std::size_t b = trace.pixel_begin[k], e = trace.pixel_begin[k + 1];
    if (b == e) continue;
    const Eigen::Vector3d g_out(grad.intensity[k], grad.depth[k], grad.raydrop[k]);
    if (g_out.isZero(0.0)) continue;

    // Transmittance before each contribution.
    thread_local std::vector<double> trans;
    trans.resize(e - b);
    double t = 1.0;
    for (std::size_t i = b; i < e; ++i) {
      const auto& c = trace.contributions[i];
      trans[i - b] = t;
      t *= 1.0 - c.opacity * c.weight;
    }
    // Suffix composite behind contribution i with unit transmittance.
    double behind = 0.0;
    for (std::size_t i = e; i-- > b;) {
      const auto& c = trace.contributions[i];
      const double ti = trans[i - b];
      const double a = c.opacity * c.weight;
      const double value = g_out.dot(Eigen::Vector3d(c.intensity, c.depth, c.raydrop));
      const double g_a = ti * (value - behind);
      behind = value * a + (1.0 - a) * behind;

      HitGradient& hg = hit_grads[i];
      const double wgt = a * ti;
      hg.intensity = g_out(0) * wgt;
      hg.raydrop = g_out(2) * wgt;
      hg.opacity = g_a * c.weight;
      const double g_weight = g_a * c.opacity;
      const double g_depth = g_out(1) * wgt;

      const SplatFrame& f = trace.frames[c.frame];
      const Eigen::Vector3d& dir = rays.dir[k];
      const Eigen::Vector3d& n1 = rays.plane_u[k];
      const Eigen::Vector3d& n2 = rays.plane_v[k];
      // G = exp(-(u^2+v^2)/2); depth = dir . P(u, v).
      double gu = -c.u * c.weight * g_weight + g_depth * dir.dot(f.axis_u);
      double gv = -c.v * c.weight * g_weight + g_depth * dir.dot(f.axis_v);
      hg.axis_u = g_depth * c.u * dir;
      hg.axis_v = g_depth * c.v * dir;
      hg.center = g_depth * dir;

      // Back through the 2x2 solve A (u, v)^T = -(n1.c, n2.c)^T.
      const double a11 = n1.dot(f.axis_u), a12 = n1.dot(f.axis_v);
      const double a21 = n2.dot(f.axis_u), a22 = n2.dot(f.axis_v);
      const double det = a11 * a22 - a12 * a21;
      const double l1 = (a22 * gu - a21 * gv) / det;
      const double l2 = (-a12 * gu + a11 * gv) / det;
      hg.axis_u += -(l1 * c.u) * n1 - (l2 * c.u) * n2;
      hg.axis_v += -(l1 * c.v) * n1 - (l2 * c.v) * n2;
      const Eigen::Vector3d g_center_pixel = hg.center - (l1 * n1 + l2 * n2);
      hg.center = g_center_pixel;

      const double phi_c = std::asin(std::clamp(f.center.z() / f.distance, -1.0, 1.0));
      const double theta_c = std::atan2(f.center.y(), f.center.x());
      const Eigen::Vector3d e_theta(-std::sin(theta_c), std::cos(theta_c), 0.0);
      const Eigen::Vector3d e_phi(-std::cos(theta_c) * std::sin(phi_c),
                                  -std::sin(theta_c) * std::sin(phi_c), std::cos(phi_c));
      hg.screen_col =
          std::abs(g_center_pixel.dot(e_theta)) * f.distance * std::cos(phi_c) * col_step;
      hg.screen_row = std::abs(g_center_pixel.dot(e_phi)) * f.distance * row_step;
    }
  }

  const int count = attrs.size();
  AttributeGradients out = AttributeGradients::zeros(count);
  std::vector<Eigen::Vector3d> g_axis_u(count, Eigen::Vector3d::Zero());
  std::vector<Eigen::Vector3d> g_axis_v(count, Eigen::Vector3d::Zero());
  std::vector<Eigen::Vector3d> g_center(count, Eigen::Vector3d::Zero());
  if (screen) {
    screen->col.assign(count, 0.0);
    screen->row.assign(count, 0.0);
    screen->visible.assign(count, 0);
  }
  for (std::size_t i = 0; i < trace.contributions.size(); ++i) {
    const int gi = trace.contributions[i].gaussian;
    const HitGradient& hg = hit_grads[i];
    g_axis_u[gi] += hg.axis_u;
    g_axis_v[gi] += hg.axis_v;
    g_center[gi] += hg.center;
    out.opacity(gi) += hg.opacity;
    out.intensity(gi) += hg.intensity;
    out.raydrop(gi) += hg.raydrop;
    if (screen) {
      screen->col[gi] += hg.screen_col;
      screen->row[gi] += hg.screen_row;
      screen->visible[gi] = 1;
    }
  }

  const Eigen::Matrix3d rot = pose.rotation();
  const Eigen::Matrix3d rt = rot.transpose();
  for (const SplatFrame& f : trace.frames) {
    const int gi = f.gaussian;
    const double su = attrs.scales(gi, 0), sv = attrs.scales(gi, 1);
    out.scales(gi, 0) = g_axis_u[gi].dot(rt * f.tangent_u);
    out.scales(gi, 1) = g_axis_v[gi].dot(rt * f.tangent_v);
    out.centers.row(gi) = (rot * g_center[gi]).transpose();

    Eigen::Vector4d q = attrs.rotations.row(gi).transpose();
    q /= q.norm();
    const Eigen::Vector3d g0 = su * (rot * g_axis_u[gi]);
    const Eigen::Vector3d g1 = sv * (rot * g_axis_v[gi]);
    const double qw = q(0), qx = q(1), qy = q(2), qz = q(3);
    Eigen::Vector4d gq;
    gq(0) = 2 * (qz * g0.y() - qy * g0.z() - qz * g1.x() + qx * g1.z());
    gq(1) = 2 * (qy * g0.y() + qz * g0.z() + qy * g1.x() - 2 * qx * g1.y() + qw * g1.z());
    gq(2) = 2 * (-2 * qy * g0.x() + qx * g0.y() - qw * g0.z() + qx * g1.x() + qz * g1.z());
    gq(3) = 2 * (-2 * qz * g0.x() + qw * g0.y() + qx * g0.z() - qw * g1.x() - 2 * qz * g1.y() +
                 qy * g1.z());
    out.rotations.row(gi) = gq.transpose();
  }
  return out;
}

double median_scale_delta(std::vector<double> max_axes) {
  if (max_axes.empty()) throw std::invalid_argument("median scale of an empty Gaussian set");
  const auto mid = max_axes.begin() + static_cast<std::ptrdiff_t>((max_axes.size() - 1) / 2);
  std::nth_element(max_axes.begin(), mid, max_axes.end());
  return *mid;
}

double median_scale_delta(const ViewAttributes& attrs) {
  std::vector<double> axes(static_cast<std::size_t>(attrs.size()));
  for (int i = 0; i < attrs.size(); ++i) axes[i] = attrs.scales.row(i).maxCoeff();
  return median_scale_delta(std::move(axes));
}

std::size_t DistortionMask::count() const {
  return static_cast<std::size_t>(std::count(mask.begin(), mask.end(), 1));
}

DistortionMask distortion_mask(const RenderOutput& out, double delta, double min_opacity) {
  if (!(delta > 0.0)) throw std::invalid_argument("distortion threshold must be > 0");
  DistortionMask m;
  m.height = out.image.height();
  m.width = out.image.width();
  m.delta = delta;
  m.mask.assign(out.image.size(), 0);
  auto depth = out.image.depth();
  for (std::size_t k = 0; k < m.mask.size(); ++k) {
    if (out.opacity[k] < min_opacity) continue;
    const double dm = out.median_depth[k];
    m.mask[k] = (dm == 0.0 || std::abs(dm - depth[k]) > delta) ? 1 : 0;
  }
  return m;
}

}  // namespace lidarsplat
