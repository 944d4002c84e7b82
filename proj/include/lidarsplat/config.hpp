#pragma once

#include "lidarsplat/field.hpp"
#include "lidarsplat/metrics.hpp"
#include "lidarsplat/optimizer.hpp"
#include "lidarsplat/rasterizer.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace lidarsplat {

struct ExpansionConfig {
  double sigma = 0.2;  // input noise of perturbed decodes
  double tau = 0.1;    // dropout fraction of perturbed decodes
  std::vector<double> offsets{-3.5, 3.5};
  bool ddad = true;
};

/// Every tunable of the pipeline. Files carry "version": 1 and may omit
/// any key; unknown keys are errors.
struct RunConfig {
  static constexpr int kVersion = 1;
  std::uint64_t seed = 0;
  FieldConfig field{};
  RenderConfig render{};
  TrainConfig train{};
  ExpansionConfig expansion{};
  MetricsConfig metrics{};

  /// Throws std::invalid_argument on out-of-range values.
  void validate() const;
};

/// Throws IoError for unreadable or malformed files and unknown keys.
RunConfig load_run_config(const std::filesystem::path& path);
RunConfig parse_run_config(const std::string& text);
std::string dump_run_config(const RunConfig& cfg);

}  // namespace lidarsplat
