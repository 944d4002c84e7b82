#pragma once

#include <span>
#include <vector>

namespace lidarsplat {

struct SsimConfig {
  int window = 11;
  double sigma = 1.5;
  double peak = 1.0;
};

/// Per-pixel SSIM of two H x W images using a normalized Gaussian window
/// with zero padding at the borders.
std::vector<double> ssim_map(std::span<const double> pred, std::span<const double> target,
                             int height, int width, const SsimConfig& cfg = {});

/// Mean of ssim_map.
double ssim(std::span<const double> pred, std::span<const double> target, int height, int width,
            const SsimConfig& cfg = {});

/// Gradient with respect to `pred` of sum_p grad_map[p] * ssim_map[p].
std::vector<double> ssim_backward(std::span<const double> pred, std::span<const double> target,
                                  int height, int width, std::span<const double> grad_map,
                                  const SsimConfig& cfg = {});

}  // namespace lidarsplat
