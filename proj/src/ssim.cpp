#include "lidarsplat/ssim.hpp"

#include <cmath>
#include <stdexcept>

namespace lidarsplat {
namespace {

std::vector<double> gaussian_kernel(const SsimConfig& cfg) {
  if (cfg.window < 1 || cfg.window % 2 == 0) throw std::invalid_argument("SSIM window must be odd");
  std::vector<double> k(static_cast<std::size_t>(cfg.window));
  const int half = cfg.window / 2;
  double sum = 0.0;
  for (int i = 0; i < cfg.window; ++i) {
    double x = i - half;
    k[i] = std::exp(-x * x / (2.0 * cfg.sigma * cfg.sigma));
    sum += k[i];
  }
  for (double& v : k) v /= sum;
  return k;
}

// Separable "same" convolution with zero padding.
std::vector<double> blur(const std::vector<double>& img, int h, int w,
                         const std::vector<double>& k) {
  const int half = static_cast<int>(k.size()) / 2;
  std::vector<double> tmp(img.size(), 0.0), out(img.size(), 0.0);
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      double acc = 0.0;
      for (int j = -half; j <= half; ++j) {
        int cc = c + j;
        if (cc >= 0 && cc < w) acc += k[j + half] * img[static_cast<std::size_t>(r) * w + cc];
      }
      tmp[static_cast<std::size_t>(r) * w + c] = acc;
    }
  }
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      double acc = 0.0;
      for (int j = -half; j <= half; ++j) {
        int rr = r + j;
        if (rr >= 0 && rr < h) acc += k[j + half] * tmp[static_cast<std::size_t>(rr) * w + c];
      }
      out[static_cast<std::size_t>(r) * w + c] = acc;
    }
  }
  return out;
}

struct Moments {
  std::vector<double> mx, my, xx, yy, xy;
};

Moments moments(std::span<const double> x, std::span<const double> y, int h, int w,
                const std::vector<double>& k) {
  const std::size_t n = x.size();
  std::vector<double> vx(x.begin(), x.end()), vy(y.begin(), y.end());
  std::vector<double> x2(n), y2(n), xy(n);
  for (std::size_t i = 0; i < n; ++i) {
    x2[i] = x[i] * x[i];
    y2[i] = y[i] * y[i];
    xy[i] = x[i] * y[i];
  }
  return {blur(vx, h, w, k), blur(vy, h, w, k), blur(x2, h, w, k), blur(y2, h, w, k),
          blur(xy, h, w, k)};
}

void check(std::span<const double> a, std::span<const double> b, int h, int w) {
  if (a.size() != b.size() || a.size() != static_cast<std::size_t>(h) * w) {
    throw std::invalid_argument("SSIM inputs must be H x W images of equal size");
  }
}

}  // namespace

std::vector<double> ssim_map(std::span<const double> pred, std::span<const double> target,
                             int height, int width, const SsimConfig& cfg) {
  check(pred, target, height, width);
  const auto k = gaussian_kernel(cfg);
  const Moments m = moments(pred, target, height, width, k);
  const double c1 = (0.01 * cfg.peak) * (0.01 * cfg.peak);
  const double c2 = (0.03 * cfg.peak) * (0.03 * cfg.peak);
  std::vector<double> out(pred.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double mx = m.mx[i], my = m.my[i];
    const double sxx = m.xx[i] - mx * mx;
    const double syy = m.yy[i] - my * my;
    const double sxy = m.xy[i] - mx * my;
    out[i] = ((2 * mx * my + c1) * (2 * sxy + c2)) /
             ((mx * mx + my * my + c1) * (sxx + syy + c2));
  }
  return out;
}

double ssim(std::span<const double> pred, std::span<const double> target, int height, int width,
            const SsimConfig& cfg) {
  auto map = ssim_map(pred, target, height, width, cfg);
  double sum = 0.0;
  for (double v : map) sum += v;
  return map.empty() ? 1.0 : sum / static_cast<double>(map.size());
}

std::vector<double> ssim_backward(std::span<const double> pred, std::span<const double> target,
                                  int height, int width, std::span<const double> grad_map,
                                  const SsimConfig& cfg) {
  check(pred, target, height, width);
  if (grad_map.size() != pred.size()) throw std::invalid_argument("SSIM gradient size mismatch");
  const auto k = gaussian_kernel(cfg);
  const Moments m = moments(pred, target, height, width, k);
  const double c1 = (0.01 * cfg.peak) * (0.01 * cfg.peak);
  const double c2 = (0.03 * cfg.peak) * (0.03 * cfg.peak);
  const std::size_t n = pred.size();
  std::vector<double> d_mx(n), d_xx(n), d_xy(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double mx = m.mx[i], my = m.my[i];
    const double a1 = 2 * mx * my + c1;
    const double a2 = 2 * (m.xy[i] - mx * my) + c2;
    const double b1 = mx * mx + my * my + c1;
    const double b2 = (m.xx[i] - mx * mx) + (m.yy[i] - my * my) + c2;
    const double s = (a1 * a2) / (b1 * b2);
    const double g = grad_map[i];
    d_mx[i] = g * (2 * my * a2 / (b1 * b2) - 2 * my * a1 / (b1 * b2) - 2 * mx * s / b1 +
                   2 * mx * s / b2);
    d_xx[i] = g * (-s / b2);
    d_xy[i] = g * (2 * a1 / (b1 * b2));
  }
  // The window is symmetric, so the adjoint of the blur is the blur itself.
  auto g_mx = blur(d_mx, height, width, k);
  auto g_xx = blur(d_xx, height, width, k);
  auto g_xy = blur(d_xy, height, width, k);
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = g_mx[i] + 2 * pred[i] * g_xx[i] + target[i] * g_xy[i];
  }
  return out;
}

}  // namespace lidarsplat
