#include "lidarsplat/metrics.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <stdexcept>
#include <unordered_map>

#include <json.hpp>

namespace lidarsplat {
namespace {

// Uniform hash grid over a fixed cloud; nearest-neighbour queries search
// rings of cells outward until no closer point can remain.
class NearestGrid {
 public:
  explicit NearestGrid(const Points& pts) : pts_(pts) {
    lo_ = hi_ = pts.front();
    for (const auto& p : pts) {
      lo_ = lo_.cwiseMin(p);
      hi_ = hi_.cwiseMax(p);
    }
    const double span = (hi_ - lo_).maxCoeff();
    cell_ = span > 0.0 ? span / std::max(1.0, std::cbrt(static_cast<double>(pts.size()))) : 1.0;
    for (std::size_t i = 0; i < pts.size(); ++i) cells_[key(cell_of(pts[i]))].push_back(i);
    hi_cell_ = cell_of(hi_);
  }

  double nearest(const Eigen::Vector3d& q) const {
    const auto c = cell_of(q);
    // Rings below first_ring miss the occupied box, rings past last_ring hold nothing.
    std::int64_t first_ring = 0, last_ring = 0;
    for (int k = 0; k < 3; ++k) {
      first_ring = std::max({first_ring, -c[k], c[k] - hi_cell_[k]});
      last_ring = std::max({last_ring, c[k], hi_cell_[k] - c[k]});
    }
    double best = std::numeric_limits<double>::infinity();
    for (std::int64_t r = first_ring; r <= last_ring; ++r) {
      const auto x0 = std::max<std::int64_t>(c[0] - r, 0), x1 = std::min(c[0] + r, hi_cell_[0]);
      const auto y0 = std::max<std::int64_t>(c[1] - r, 0), y1 = std::min(c[1] + r, hi_cell_[1]);
      const auto z0 = std::max<std::int64_t>(c[2] - r, 0), z1 = std::min(c[2] + r, hi_cell_[2]);
      for (auto x = x0; x <= x1; ++x) {
        for (auto y = y0; y <= y1; ++y) {
          const bool edge = std::abs(x - c[0]) == r || std::abs(y - c[1]) == r;
          for (auto z = z0; z <= z1; ++z) {
            if (!edge && std::abs(z - c[2]) != r) {
              if (z < c[2] + r) z = c[2] + r - 1;
              continue;
            }
            visit({x, y, z}, q, best);
          }
        }
      }
      // Unvisited points are at least r cells away along some axis.
      const double reach = static_cast<double>(r) * cell_;
      if (best <= reach * reach) break;
    }
    return std::sqrt(best);
  }

 private:
  using Cell = std::array<std::int64_t, 3>;

  void visit(const Cell& c, const Eigen::Vector3d& q, double& best) const {
    auto it = cells_.find(key(c));
    if (it == cells_.end()) return;
    for (std::size_t i : it->second) best = std::min(best, (pts_[i] - q).squaredNorm());
  }
  Cell cell_of(const Eigen::Vector3d& p) const {
    const Eigen::Vector3d f = ((p - lo_) / cell_).array().floor().max(-1e15).min(1e15);
    return {static_cast<std::int64_t>(f.x()), static_cast<std::int64_t>(f.y()),
            static_cast<std::int64_t>(f.z())};
  }
  // Only cells inside the occupied box are ever keyed.
  static std::uint64_t key(const Cell& c) {
    auto u = [](std::int64_t v) { return static_cast<std::uint64_t>(v) & 0x1FFFFF; };
    return (u(c[0]) << 42) | (u(c[1]) << 21) | u(c[2]);
  }

  const Points& pts_;
  Eigen::Vector3d lo_, hi_;
  double cell_ = 1.0;
  Cell hi_cell_{};
  std::unordered_map<std::uint64_t, std::vector<std::size_t>> cells_;
};

std::vector<double> nearest_distances(const Points& from, const Points& to) {
  NearestGrid grid(to);
  std::vector<double> d(from.size());
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(from.size()); ++i) {
    d[i] = grid.nearest(from[i]);
  }
  return d;
}

void require_nonempty(const Points& a, const Points& b) {
  if (a.empty() || b.empty()) throw std::invalid_argument("point cloud is empty");
}

double mean(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

// 1D Gaussian kernel matrix over bin centers.
Eigen::MatrixXd bin_kernel(const BevConfig& cfg) {
  const double spacing = 2.0 * cfg.extent / cfg.bins;
  const double h = cfg.bandwidth > 0.0 ? cfg.bandwidth : spacing;
  Eigen::MatrixXd k(cfg.bins, cfg.bins);
  for (int i = 0; i < cfg.bins; ++i) {
    for (int j = 0; j < cfg.bins; ++j) {
      const double d = (i - j) * spacing;
      k(i, j) = std::exp(-d * d / (2.0 * h * h));
    }
  }
  return k;
}

double kl_term(double p, double m) { return p > 0.0 ? p * std::log(p / m) : 0.0; }

}  // namespace

Points positions(const PointCloud& cloud) {
  Points out;
  out.reserve(cloud.size());
  for (const auto& p : cloud) out.push_back(p.position);
  return out;
}

double chamfer(const Points& a, const Points& b) {
  require_nonempty(a, b);
  return 0.5 * (mean(nearest_distances(a, b)) + mean(nearest_distances(b, a)));
}

double fscore(const Points& a, const Points& b, double threshold) {
  require_nonempty(a, b);
  if (!(threshold > 0.0)) throw std::invalid_argument("F-score threshold must be > 0");
  auto fraction = [&](const Points& from, const Points& to) {
    const auto d = nearest_distances(from, to);
    std::size_t in = 0;
    for (double x : d) in += x <= threshold;
    return static_cast<double>(in) / static_cast<double>(d.size());
  };
  const double precision = fraction(a, b);
  const double recall = fraction(b, a);
  if (precision + recall == 0.0) return 0.0;
  return 2.0 * precision * recall / (precision + recall);
}

double psnr(std::span<const double> pred, std::span<const double> target, double peak) {
  if (pred.size() != target.size()) throw std::invalid_argument("PSNR inputs differ in size");
  if (pred.empty()) throw std::invalid_argument("PSNR of empty images");
  double mse = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) mse += (pred[i] - target[i]) * (pred[i] - target[i]);
  mse /= static_cast<double>(pred.size());
  if (mse < 1e-10) return 100.0;
  return 10.0 * std::log10(peak * peak / mse);
}

std::vector<double> bev_histogram(const Points& cloud, const BevConfig& cfg) {
  if (cfg.bins < 1 || !(cfg.extent > 0.0)) throw std::invalid_argument("bad BEV grid");
  std::vector<double> hist(static_cast<std::size_t>(cfg.bins) * cfg.bins, 0.0);
  const double scale = cfg.bins / (2.0 * cfg.extent);
  std::size_t count = 0;
  for (const auto& p : cloud) {
    const double fx = (p.x() + cfg.extent) * scale, fy = (p.y() + cfg.extent) * scale;
    if (!(fx >= 0.0 && fx < cfg.bins && fy >= 0.0 && fy < cfg.bins)) continue;
    hist[static_cast<std::size_t>(fy) * cfg.bins + static_cast<std::size_t>(fx)] += 1.0;
    ++count;
  }
  if (count == 0) throw std::invalid_argument("no points inside the BEV grid");
  for (double& v : hist) v /= static_cast<double>(count);
  return hist;
}

double jsd_bev(const Points& a, const Points& b, const BevConfig& cfg) {
  require_nonempty(a, b);
  const auto p = bev_histogram(a, cfg), q = bev_histogram(b, cfg);
  double js = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double m = 0.5 * (p[i] + q[i]);
    js += 0.5 * (kl_term(p[i], m) + kl_term(q[i], m));
  }
  return std::clamp(js, 0.0, std::log(2.0));
}

double mmd_bev(const Points& a, const Points& b, const BevConfig& cfg) {
  require_nonempty(a, b);
  const auto p = bev_histogram(a, cfg), q = bev_histogram(b, cfg);
  Eigen::MatrixXd d(cfg.bins, cfg.bins);
  for (int r = 0; r < cfg.bins; ++r)
    for (int c = 0; c < cfg.bins; ++c) d(r, c) = p[r * cfg.bins + c] - q[r * cfg.bins + c];
  // The 2D kernel factors into row and column kernels.
  const Eigen::MatrixXd k = bin_kernel(cfg);
  const double mmd = (d.cwiseProduct(k * d * k)).sum();
  return std::max(mmd, 0.0) * 1e5;
}

FrameMetrics compare_scans(const RangeImage& pred, const RangeImage& target,
                           const BeamTable& beams, const MetricsConfig& cfg) {
  if (!pred.same_shape(target)) throw std::invalid_argument("scan dimensions differ");
  FrameMetrics m;
  const auto pd = pred.depth(), td = target.depth(), tr = target.raydrop();
  double l1 = 0.0;
  std::size_t returns = 0;
  for (std::size_t k = 0; k < td.size(); ++k) {
    if (tr[k] < 0.5) continue;
    l1 += std::abs(pd[k] - td[k]);
    ++returns;
  }
  m.depth_l1 = returns ? l1 / static_cast<double>(returns) : 0.0;
  m.intensity_psnr = psnr(pred.intensity(), target.intensity());
  m.intensity_ssim = ssim(pred.intensity(), target.intensity(), pred.height(), pred.width(), cfg.ssim);
  m.raydrop_psnr = psnr(pred.raydrop(), target.raydrop());
  m.raydrop_ssim = ssim(pred.raydrop(), target.raydrop(), pred.height(), pred.width(), cfg.ssim);

  RangeImage thresholded = pred;
  for (double& r : thresholded.raydrop()) r = r >= cfg.raydrop_threshold ? 1.0 : 0.0;
  const Points a = positions(unproject(thresholded, beams));
  const Points b = positions(unproject(target, beams));
  if (b.empty()) throw std::invalid_argument("reference scan has no returns");
  if (a.empty()) {
    m.chamfer = std::numeric_limits<double>::infinity();
    m.fscore = 0.0;
    m.jsd = std::log(2.0);
    m.mmd = std::numeric_limits<double>::infinity();
    return m;
  }
  m.chamfer = chamfer(a, b);
  m.fscore = fscore(a, b, cfg.fscore_threshold);
  m.jsd = jsd_bev(a, b, cfg.bev);
  m.mmd = mmd_bev(a, b, cfg.bev);
  return m;
}

EvalReport evaluate(const Scene& scene, const std::vector<Pose>& poses,
                    const std::vector<RangeImage>& scans, const BeamTable& beams,
                    const MetricsConfig& cfg, const RenderConfig& render_cfg) {
  if (poses.size() != scans.size()) throw std::invalid_argument("one scan per pose required");
  if (poses.empty()) throw std::invalid_argument("nothing to evaluate");
  EvalReport report;
  report.config = cfg;
  FrameMetrics sum{0, 0, 0, 0, 0, 0, 0, 0, 0};
  for (std::size_t i = 0; i < poses.size(); ++i) {
    const RenderOutput out = render(scene, poses[i], beams, render_cfg);
    const FrameMetrics m = compare_scans(out.image, scans[i], beams, cfg);
    report.frames.push_back(m);
    sum.chamfer += m.chamfer;
    sum.fscore += m.fscore;
    sum.depth_l1 += m.depth_l1;
    sum.intensity_psnr += m.intensity_psnr;
    sum.intensity_ssim += m.intensity_ssim;
    sum.raydrop_psnr += m.raydrop_psnr;
    sum.raydrop_ssim += m.raydrop_ssim;
    sum.jsd += m.jsd;
    sum.mmd += m.mmd;
  }
  const double n = static_cast<double>(poses.size());
  report.mean = {sum.chamfer / n,        sum.fscore / n,         sum.depth_l1 / n,
                 sum.intensity_psnr / n, sum.intensity_ssim / n, sum.raydrop_psnr / n,
                 sum.raydrop_ssim / n,   sum.jsd / n,            sum.mmd / n};
  return report;
}

namespace {

nlohmann::json to_json(const FrameMetrics& m) {
  return {{"chamfer", m.chamfer},
          {"fscore", m.fscore},
          {"depth_l1", m.depth_l1},
          {"intensity_psnr", m.intensity_psnr},
          {"intensity_ssim", m.intensity_ssim},
          {"raydrop_psnr", m.raydrop_psnr},
          {"raydrop_ssim", m.raydrop_ssim},
          {"jsd", m.jsd},
          {"mmd_1e-5", m.mmd}};
}

}  // namespace

std::string report_json(const EvalReport& report) {
  nlohmann::json j;
  j["fscore_threshold"] = report.config.fscore_threshold;
  j["raydrop_threshold"] = report.config.raydrop_threshold;
  j["bev"] = {{"bins", report.config.bev.bins},
              {"extent", report.config.bev.extent},
              {"bandwidth", report.config.bev.bandwidth}};
  j["mean"] = to_json(report.mean);
  j["frames"] = nlohmann::json::array();
  for (const auto& f : report.frames) j["frames"].push_back(to_json(f));
  return j.dump(2) + "\n";
}

std::string report_table(const EvalReport& report) {
  std::string out;
  char line[256];
  std::snprintf(line, sizeof line, "%-6s %9s %8s %9s %9s %8s %9s %8s %8s %9s\n", "frame", "CD",
                "F", "depthL1", "I-PSNR", "I-SSIM", "R-PSNR", "R-SSIM", "JSD", "MMD");
  out += line;
  auto row = [&](const std::string& name, const FrameMetrics& m) {
    std::snprintf(line, sizeof line, "%-6s %9.4f %8.4f %9.4f %9.3f %8.4f %9.3f %8.4f %8.4f %9.3f\n",
                  name.c_str(), m.chamfer, m.fscore, m.depth_l1, m.intensity_psnr,
                  m.intensity_ssim, m.raydrop_psnr, m.raydrop_ssim, m.jsd, m.mmd);
    out += line;
  };
  for (std::size_t i = 0; i < report.frames.size(); ++i) row(std::to_string(i), report.frames[i]);
  row("mean", report.mean);
  return out;
}

}  // namespace lidarsplat
