#include "lidarsplat/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>
#include <stdexcept>

#include <json.hpp>

namespace lidarsplat {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kEps = 1e-12;

std::optional<double> hit_rectangle(const Rectangle& r, const Eigen::Vector3d& o,
                                    const Eigen::Vector3d& d) {
  const Eigen::Vector3d n = r.axis_u.cross(r.axis_v);
  const double denom = n.dot(d);
  if (std::abs(denom) < kEps) return std::nullopt;
  const double t = n.dot(r.center - o) / denom;
  if (!(t > 0.0)) return std::nullopt;
  const Eigen::Vector3d local = o + t * d - r.center;
  if (std::abs(local.dot(r.axis_u)) > r.half_u || std::abs(local.dot(r.axis_v)) > r.half_v) {
    return std::nullopt;
  }
  return t;
}

std::optional<double> hit_box(const Box& b, const Eigen::Vector3d& o, const Eigen::Vector3d& d) {
  double t0 = -kInf, t1 = kInf;
  for (int a = 0; a < 3; ++a) {
    if (std::abs(d[a]) < kEps) {
      if (o[a] < b.min[a] || o[a] > b.max[a]) return std::nullopt;
      continue;
    }
    double lo = (b.min[a] - o[a]) / d[a];
    double hi = (b.max[a] - o[a]) / d[a];
    if (lo > hi) std::swap(lo, hi);
    t0 = std::max(t0, lo);
    t1 = std::min(t1, hi);
  }
  if (t0 > t1) return std::nullopt;
  if (t0 > 0.0) return t0;
  if (t1 > 0.0) return t1;
  return std::nullopt;
}

std::optional<double> hit_cylinder(const Cylinder& c, const Eigen::Vector3d& o,
                                   const Eigen::Vector3d& d) {
  double best = kInf;
  const double ox = o.x() - c.x, oy = o.y() - c.y;
  const double a = d.x() * d.x() + d.y() * d.y();
  if (a > kEps) {
    const double b = ox * d.x() + oy * d.y();
    const double cc = ox * ox + oy * oy - c.radius * c.radius;
    const double disc = b * b - a * cc;
    if (disc >= 0.0) {
      const double s = std::sqrt(disc);
      for (double t : {(-b - s) / a, (-b + s) / a}) {
        const double z = o.z() + t * d.z();
        if (t > 0.0 && z >= c.z_min && z <= c.z_max) {
          best = std::min(best, t);
          break;
        }
      }
    }
  }
  if (std::abs(d.z()) > kEps) {
    for (double zc : {c.z_min, c.z_max}) {
      const double t = (zc - o.z()) / d.z();
      if (!(t > 0.0)) continue;
      const double x = ox + t * d.x(), y = oy + t * d.y();
      if (x * x + y * y <= c.radius * c.radius) best = std::min(best, t);
    }
  }
  if (best == kInf) return std::nullopt;
  return best;
}

double rectangle_distance(const Rectangle& r, const Eigen::Vector3d& p) {
  const Eigen::Vector3d local = p - r.center;
  const double a = std::clamp(local.dot(r.axis_u), -r.half_u, r.half_u);
  const double b = std::clamp(local.dot(r.axis_v), -r.half_v, r.half_v);
  return (local - a * r.axis_u - b * r.axis_v).norm();
}

double box_distance(const Box& b, const Eigen::Vector3d& p) {
  const Eigen::Vector3d out = (b.min - p).cwiseMax(p - b.max).cwiseMax(0.0);
  if (out.squaredNorm() > 0.0) return out.norm();
  return (p - b.min).cwiseMin(b.max - p).minCoeff();
}

double cylinder_distance(const Cylinder& c, const Eigen::Vector3d& p) {
  const double dr = std::hypot(p.x() - c.x, p.y() - c.y) - c.radius;
  const double dz = std::max(c.z_min - p.z(), p.z() - c.z_max);
  if (dr <= 0.0 && dz <= 0.0) return std::min(-dr, -dz);
  return std::hypot(std::max(dr, 0.0), std::max(dz, 0.0));
}

Pose lane_pose(double x, double y, double z, double t) {
  Pose p = Pose::from_translation({x, y, z});
  p.timestamp = t;
  return p;
}

nlohmann::json vec(const Eigen::Vector3d& v) { return {v.x(), v.y(), v.z()}; }

Eigen::Vector3d vec(const nlohmann::json& j) {
  if (!j.is_array() || j.size() != 3) throw IoError("scene: expected a 3-vector");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

nlohmann::json extent(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(); }

double extent(const nlohmann::json& j) { return j.is_null() ? kInf : j.get<double>(); }

}  // namespace

std::optional<RayHit> SyntheticScene::intersect(const Eigen::Vector3d& origin,
                                                const Eigen::Vector3d& dir,
                                                double max_range) const {
  double best = kInf;
  double intensity = 0.0;
  auto consider = [&](std::optional<double> t, double value) {
    if (t && *t < best) {
      best = *t;
      intensity = value;
    }
  };
  for (const auto& r : rectangles) consider(hit_rectangle(r, origin, dir), r.intensity);
  for (const auto& b : boxes) consider(hit_box(b, origin, dir), b.intensity);
  for (const auto& c : cylinders) consider(hit_cylinder(c, origin, dir), c.intensity);
  if (!(best <= max_range)) return std::nullopt;
  return RayHit{best, intensity};
}

double SyntheticScene::surface_distance(const Eigen::Vector3d& p) const {
  double best = kInf;
  for (const auto& r : rectangles) best = std::min(best, rectangle_distance(r, p));
  for (const auto& b : boxes) best = std::min(best, box_distance(b, p));
  for (const auto& c : cylinders) best = std::min(best, cylinder_distance(c, p));
  return best;
}

RangeImage raycast_scan(const SyntheticScene& scene, const Pose& pose, const BeamTable& beams,
                        const ScanOptions& options) {
  beams.validate();
  if (options.noise_sigma < 0.0 || options.drop_prob < 0.0 || options.drop_prob > 1.0) {
    throw std::invalid_argument("scan noise must be >= 0 and drop probability in [0, 1]");
  }
  const int h = beams.height(), w = beams.width;
  RangeImage img(h, w);
  std::mt19937_64 rng(options.seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const Eigen::Matrix3d rot = pose.rotation();
  const Eigen::Vector3d origin = pose.translation();
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      // Draws happen for every pixel so a pixel's noise is independent of hits.
      const double n = noise(rng);
      const double u = unit(rng);
      const auto hit = scene.intersect(origin, rot * pixel_to_ray(r, c, beams).direction,
                                       options.max_range);
      if (!hit || u < options.drop_prob) continue;
      const double depth = hit->distance + options.noise_sigma * n;
      if (!(depth > 0.0)) continue;
      const std::size_t k = img.index(r, c);
      img.depth()[k] = depth;
      img.intensity()[k] = std::clamp(hit->intensity, 0.0, 1.0);
      img.raydrop()[k] = 1.0;
    }
  }
  return img;
}

Fixture corridor_fixture(std::uint64_t seed, int beams, int width) {
  constexpr double kDeg = M_PI / 180.0;
  Fixture f;
  f.beams = BeamTable::uniform(beams, -25.0 * kDeg, 10.0 * kDeg, width);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> jitter(-1.0, 1.0);

  const double x0 = -20.0, x1 = 40.0, half_y = 9.0, wall_h = 4.0;
  const double xc = 0.5 * (x0 + x1), half_x = 0.5 * (x1 - x0);
  auto& rects = f.scene.rectangles;
  rects.push_back({{xc, 0, 0}, Eigen::Vector3d::UnitX(), Eigen::Vector3d::UnitY(), half_x,
                   half_y, 0.25});
  for (double y : {-half_y, half_y}) {
    rects.push_back({{xc, y, wall_h / 2}, Eigen::Vector3d::UnitX(), Eigen::Vector3d::UnitZ(),
                     half_x, wall_h / 2, 0.45});
  }
  for (double x : {x0, x1}) {
    rects.push_back({{x, 0, wall_h / 2}, Eigen::Vector3d::UnitY(), Eigen::Vector3d::UnitZ(),
                     half_y, wall_h / 2, 0.4});
  }

  // Parked cars along both sides.
  const double car_x[2][3] = {{-6.0, 7.0, 21.0}, {1.0, 14.0, 29.0}};
  for (int side = 0; side < 2; ++side) {
    const double y = side == 0 ? 6.2 : -6.2;
    for (double x : car_x[side]) {
      const double cx = x + jitter(rng);
      const double height = 1.5 + 0.2 * jitter(rng);
      f.scene.boxes.push_back({{cx - 2.0, y - 0.9, 0.0}, {cx + 2.0, y + 0.9, height},
                               0.65 + 0.1 * jitter(rng)});
    }
  }
  // Poles.
  for (int i = 0; i < 5; ++i) {
    for (double y : {-8.0, 8.0}) {
      const double x = -10.0 + 10.0 * i + 0.5 * jitter(rng) + (y > 0 ? 5.0 : 0.0);
      f.scene.cylinders.push_back({x, y, 0.25, 0.0, 5.0, 0.8 + 0.05 * jitter(rng)});
    }
  }

  for (int i = 0; i < 20; ++i) {
    const double x = static_cast<double>(i);
    const double t = 0.1 * i;
    f.trajectory.push_back(lane_pose(x, 0.0, f.sensor_height, t));
    f.left_lane.push_back(lane_pose(x, f.lane_offset, f.sensor_height, t));
    f.right_lane.push_back(lane_pose(x, -f.lane_offset, f.sensor_height, t));
  }
  return f;
}

void write_fixture(const std::filesystem::path& dir, const Fixture& fixture) {
  namespace fs = std::filesystem;
  fs::create_directories(dir / "scans");
  save_scene(dir / "scene.json", fixture.scene);

  auto scan_frames = [&](const std::vector<Pose>& poses, const std::string& prefix) {
    std::vector<Frame> frames;
    for (std::size_t i = 0; i < poses.size(); ++i) {
      char name[64];
      std::snprintf(name, sizeof name, "scans/%s_%03zu.rvim", prefix.c_str(), i);
      write_rvim(dir / name, raycast_scan(fixture.scene, poses[i], fixture.beams));
      frames.push_back({poses[i], name});
    }
    return frames;
  };
  const auto main = scan_frames(fixture.trajectory, "main");
  const auto left = scan_frames(fixture.left_lane, "left");
  const auto right = scan_frames(fixture.right_lane, "right");

  auto manifest = [&](std::vector<Frame> frames) {
    Manifest m;
    m.beams = fixture.beams;
    m.frames = std::move(frames);
    return m;
  };
  std::vector<Frame> train, heldout, extrap;
  for (std::size_t i = 0; i < main.size(); ++i) {
    if (fixture.is_heldout(static_cast<int>(i))) {
      heldout.push_back(main[i]);
      extrap.push_back(left[i]);
      extrap.push_back(right[i]);
    } else {
      train.push_back(main[i]);
    }
  }
  save_manifest(dir / "all.json", manifest(main));
  save_manifest(dir / "train.json", manifest(train));
  save_manifest(dir / "heldout.json", manifest(heldout));
  save_manifest(dir / "lane_left.json", manifest(left));
  save_manifest(dir / "lane_right.json", manifest(right));
  save_manifest(dir / "extrap_eval.json", manifest(extrap));
}

void save_scene(const std::filesystem::path& path, const SyntheticScene& scene) {
  nlohmann::json j;
  j["rectangles"] = nlohmann::json::array();
  for (const auto& r : scene.rectangles) {
    j["rectangles"].push_back({{"center", vec(r.center)},
                               {"axis_u", vec(r.axis_u)},
                               {"axis_v", vec(r.axis_v)},
                               {"half_u", extent(r.half_u)},
                               {"half_v", extent(r.half_v)},
                               {"intensity", r.intensity}});
  }
  j["boxes"] = nlohmann::json::array();
  for (const auto& b : scene.boxes) {
    j["boxes"].push_back({{"min", vec(b.min)}, {"max", vec(b.max)}, {"intensity", b.intensity}});
  }
  j["cylinders"] = nlohmann::json::array();
  for (const auto& c : scene.cylinders) {
    j["cylinders"].push_back({{"x", c.x},
                              {"y", c.y},
                              {"radius", c.radius},
                              {"z_min", c.z_min},
                              {"z_max", c.z_max},
                              {"intensity", c.intensity}});
  }
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << j.dump(2) << "\n";
}

SyntheticScene load_scene(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  SyntheticScene scene;
  try {
    const auto j = nlohmann::json::parse(in);
    for (const auto& r : j.at("rectangles")) {
      scene.rectangles.push_back({vec(r.at("center")), vec(r.at("axis_u")), vec(r.at("axis_v")),
                                  extent(r.at("half_u")), extent(r.at("half_v")),
                                  r.at("intensity").get<double>()});
    }
    for (const auto& b : j.at("boxes")) {
      scene.boxes.push_back({vec(b.at("min")), vec(b.at("max")), b.at("intensity").get<double>()});
    }
    for (const auto& c : j.at("cylinders")) {
      scene.cylinders.push_back({c.at("x").get<double>(), c.at("y").get<double>(),
                                 c.at("radius").get<double>(), c.at("z_min").get<double>(),
                                 c.at("z_max").get<double>(), c.at("intensity").get<double>()});
    }
  } catch (const nlohmann::json::exception& e) {
    throw IoError(path.string() + ": " + e.what());
  }
  return scene;
}

}  // namespace lidarsplat
