#pragma once

#include "lidarsplat/mlp.hpp"
#include "lidarsplat/rangeview.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <filesystem>
#include <vector>

namespace lidarsplat {

struct FieldConfig {
  int token_dim = 32;
  int hidden_width = 64;
  int hidden_layers = 2;
  double max_scale = 2.0;        // m
  double max_offset = 0.1;       // m
  double distance_norm = 80.0;   // m
  double min_distance = 0.5;     // m; closer anchors are not decoded
  // Output-head biases at initialization.
  double init_scale = 0.1;       // m
  double init_opacity = 0.8;

  int input_width() const { return token_dim + 4; }
};

/// Four attribute decoders sharing the input (token, local direction,
/// normalized distance). Geometry emits quaternion (4), scale logits (2) and
/// offset (3); the others emit a single logit.
struct AttributeNetworks {
  Mlp geometry;
  Mlp intensity;
  Mlp raydrop;
  Mlp opacity;

  static constexpr int kGeometryOutputs = 9;

  AttributeNetworks zeros_like() const {
    return {geometry.zeros_like(), intensity.zeros_like(), raydrop.zeros_like(),
            opacity.zeros_like()};
  }
  template <typename F>
  void for_each(F&& f) {
    f(geometry); f(intensity); f(raydrop); f(opacity);
  }
  template <typename F>
  void for_each(F&& f) const {
    f(geometry); f(intensity); f(raydrop); f(opacity);
  }
  bool operator==(const AttributeNetworks&) const = default;
};

using Positions = Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor>;
using Tokens = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct Scene {
  Positions positions;  // anchors, world frame
  Tokens tokens;        // one feature token per anchor
  AttributeNetworks networks;
  FieldConfig config;

  int anchor_count() const { return static_cast<int>(positions.rows()); }
  bool operator==(const Scene& other) const {
    return positions == other.positions && tokens == other.tokens &&
           networks == other.networks;
  }
};

/// Decoded per-view 2D Gaussians. `anchor[i]` is the source anchor of row i.
struct ViewAttributes {
  std::vector<int> anchor;
  Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor> centers;
  Eigen::Matrix<double, Eigen::Dynamic, 4, Eigen::RowMajor> rotations;  // (w, x, y, z)
  Eigen::Matrix<double, Eigen::Dynamic, 2, Eigen::RowMajor> scales;
  Eigen::VectorXd intensity;
  Eigen::VectorXd raydrop;
  Eigen::VectorXd opacity;

  int size() const { return static_cast<int>(anchor.size()); }
  void resize(int n);
};

/// Gradients with respect to every decoded attribute (quaternion gradient
/// is taken with respect to the unit quaternion).
struct AttributeGradients {
  Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor> centers;
  Eigen::Matrix<double, Eigen::Dynamic, 4, Eigen::RowMajor> rotations;
  Eigen::Matrix<double, Eigen::Dynamic, 2, Eigen::RowMajor> scales;
  Eigen::VectorXd intensity;
  Eigen::VectorXd raydrop;
  Eigen::VectorXd opacity;

  static AttributeGradients zeros(int n);
};

struct FieldGradients {
  Tokens tokens;
  AttributeNetworks networks;

  static FieldGradients zeros_like(const Scene& scene);
};

struct DecodeCache {
  std::vector<int> anchor;
  Eigen::MatrixXd input;
  Eigen::MatrixXd geometry_out;
  Eigen::VectorXd raw_quat_norm;
  Mlp::Cache geometry, intensity, raydrop, opacity;
};

Scene init_scene(const PointCloud& points, int anchor_count, std::uint64_t seed,
                 const FieldConfig& config = {});

ViewAttributes decode_attributes(const Scene& scene, const Pose& pose,
                                 DecodeCache* cache = nullptr);

/// Decoding with Gaussian noise on every network input and seeded random
/// dropout of a `tau` fraction of the Gaussians.
ViewAttributes perturbed_decode(const Scene& scene, const Pose& pose, double sigma, double tau,
                                std::uint64_t seed);

/// Back-propagates attribute gradients into token and network gradients
/// (accumulating into `out`).
void decode_backward(const Scene& scene, const DecodeCache& cache,
                     const AttributeGradients& grads, FieldGradients& out);

/// 3x3 rotation matrix of a unit quaternion (w, x, y, z).
Eigen::Matrix3d quaternion_to_matrix(const Eigen::Vector4d& q);

/// One JSON header line, then little-endian float32 blobs: positions,
/// tokens, and each network's layers (weight then bias), row-major.
void save_checkpoint(const std::filesystem::path& path, const Scene& scene);
Scene load_checkpoint(const std::filesystem::path& path);

}  // namespace lidarsplat
