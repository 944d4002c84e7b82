#include "lidarsplat/field.hpp"

#include "lidarsplat/io.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <stdexcept>

namespace lidarsplat {
namespace {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }
double logit(double p) { return std::log(p / (1.0 - p)); }

constexpr double kDegenerateQuat = 1e-8;

std::vector<int> network_widths(const FieldConfig& cfg, int outputs) {
  std::vector<int> w{cfg.input_width()};
  for (int i = 0; i < cfg.hidden_layers; ++i) w.push_back(cfg.hidden_width);
  w.push_back(outputs);
  return w;
}

struct Inputs {
  std::vector<int> anchor;
  Eigen::MatrixXd rows;
};

Inputs build_inputs(const Scene& scene, const Pose& pose) {
  const auto& cfg = scene.config;
  Eigen::Matrix3d rt = pose.rotation().transpose();
  Eigen::Vector3d t = pose.translation();
  Inputs in;
  in.anchor.reserve(scene.anchor_count());
  std::vector<Eigen::Vector4d> cond;
  cond.reserve(scene.anchor_count());
  for (int i = 0; i < scene.anchor_count(); ++i) {
    Eigen::Vector3d x = scene.positions.row(i).transpose();
    Eigen::Vector3d v = rt * (x - t);
    double d = v.norm();
    if (!(d >= cfg.min_distance)) continue;
    in.anchor.push_back(i);
    cond.emplace_back(v.x() / d, v.y() / d, v.z() / d, d / cfg.distance_norm);
  }
  const int n = static_cast<int>(in.anchor.size());
  in.rows.resize(n, cfg.input_width());
  for (int k = 0; k < n; ++k) {
    in.rows.row(k).head(cfg.token_dim) = scene.tokens.row(in.anchor[k]);
    in.rows.row(k).tail<4>() = cond[k].transpose();
  }
  return in;
}

ViewAttributes decode_rows(const Scene& scene, Inputs inputs, DecodeCache* cache) {
  const auto& cfg = scene.config;
  const auto& nets = scene.networks;
  DecodeCache local;
  DecodeCache& c = cache ? *cache : local;
  bool keep_cache = cache != nullptr;

  auto run = [&]() {
    c.geometry_out = nets.geometry.forward(inputs.rows, keep_cache ? &c.geometry : nullptr);
  };
  run();
  Eigen::VectorXd qnorm = c.geometry_out.leftCols<4>().rowwise().norm();
  if ((qnorm.array() < kDegenerateQuat).any()) {
    // Drop rows whose orientation is undefined and decode again.
    Inputs kept;
    std::vector<int> rows;
    for (int k = 0; k < qnorm.size(); ++k)
      if (qnorm(k) >= kDegenerateQuat) rows.push_back(k);
    kept.rows.resize(static_cast<Eigen::Index>(rows.size()), inputs.rows.cols());
    for (std::size_t k = 0; k < rows.size(); ++k) {
      kept.anchor.push_back(inputs.anchor[rows[k]]);
      kept.rows.row(static_cast<Eigen::Index>(k)) = inputs.rows.row(rows[k]);
    }
    inputs = std::move(kept);
    run();
    qnorm = c.geometry_out.leftCols<4>().rowwise().norm();
  }
  Eigen::MatrixXd rho = nets.intensity.forward(inputs.rows, keep_cache ? &c.intensity : nullptr);
  Eigen::MatrixXd drop = nets.raydrop.forward(inputs.rows, keep_cache ? &c.raydrop : nullptr);
  Eigen::MatrixXd alpha = nets.opacity.forward(inputs.rows, keep_cache ? &c.opacity : nullptr);

  const int n = static_cast<int>(inputs.anchor.size());
  ViewAttributes a;
  a.resize(n);
  a.anchor = inputs.anchor;
  for (int k = 0; k < n; ++k) {
    const auto g = c.geometry_out.row(k);
    a.rotations.row(k) = g.head<4>() / qnorm(k);
    a.scales(k, 0) = cfg.max_scale * sigmoid(g(4));
    a.scales(k, 1) = cfg.max_scale * sigmoid(g(5));
    for (int j = 0; j < 3; ++j) {
      a.centers(k, j) = scene.positions(a.anchor[k], j) + cfg.max_offset * std::tanh(g(6 + j));
    }
    a.intensity(k) = sigmoid(rho(k, 0));
    a.raydrop(k) = sigmoid(drop(k, 0));
    a.opacity(k) = sigmoid(alpha(k, 0));
  }
  if (keep_cache) {
    c.anchor = inputs.anchor;
    c.input = std::move(inputs.rows);
    c.raw_quat_norm = qnorm;
  }
  return a;
}

}  // namespace

void ViewAttributes::resize(int n) {
  anchor.assign(static_cast<std::size_t>(n), 0);
  centers.resize(n, 3);
  rotations.resize(n, 4);
  scales.resize(n, 2);
  intensity.resize(n);
  raydrop.resize(n);
  opacity.resize(n);
}

AttributeGradients AttributeGradients::zeros(int n) {
  AttributeGradients g;
  g.centers.setZero(n, 3);
  g.rotations.setZero(n, 4);
  g.scales.setZero(n, 2);
  g.intensity.setZero(n);
  g.raydrop.setZero(n);
  g.opacity.setZero(n);
  return g;
}

FieldGradients FieldGradients::zeros_like(const Scene& scene) {
  FieldGradients g;
  g.tokens.setZero(scene.tokens.rows(), scene.tokens.cols());
  g.networks = scene.networks.zeros_like();
  return g;
}

Eigen::Matrix3d quaternion_to_matrix(const Eigen::Vector4d& q) {
  const double w = q(0), x = q(1), y = q(2), z = q(3);
  Eigen::Matrix3d r;
  r << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
      2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
      2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
  return r;
}

Scene init_scene(const PointCloud& points, int anchor_count, std::uint64_t seed,
                 const FieldConfig& config) {
  if (points.empty()) throw std::invalid_argument("cannot initialize a scene from an empty cloud");
  if (anchor_count < 1) throw std::invalid_argument("anchor count must be >= 1");
  std::mt19937_64 rng(seed);

  std::vector<std::size_t> order(points.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng);
  std::uniform_int_distribution<std::size_t> pick(0, points.size() - 1);
  while (order.size() < static_cast<std::size_t>(anchor_count)) order.push_back(pick(rng));

  Scene scene;
  scene.config = config;
  scene.positions.resize(anchor_count, 3);
  for (int i = 0; i < anchor_count; ++i) {
    scene.positions.row(i) = points[order[i]].position.transpose();
  }
  scene.tokens.setZero(anchor_count, config.token_dim);

  auto& nets = scene.networks;
  nets.geometry = Mlp::random(network_widths(config, AttributeNetworks::kGeometryOutputs), rng);
  nets.intensity = Mlp::random(network_widths(config, 1), rng);
  nets.raydrop = Mlp::random(network_widths(config, 1), rng);
  nets.opacity = Mlp::random(network_widths(config, 1), rng);

  auto& geo_bias = nets.geometry.layers().back().bias;
  geo_bias.setZero();
  geo_bias(0) = 1.0;
  geo_bias(4) = geo_bias(5) = logit(config.init_scale / config.max_scale);
  nets.intensity.layers().back().bias.setZero();
  nets.raydrop.layers().back().bias.setZero();
  nets.opacity.layers().back().bias.setConstant(logit(config.init_opacity));
  return scene;
}

ViewAttributes decode_attributes(const Scene& scene, const Pose& pose, DecodeCache* cache) {
  return decode_rows(scene, build_inputs(scene, pose), cache);
}

ViewAttributes perturbed_decode(const Scene& scene, const Pose& pose, double sigma, double tau,
                                std::uint64_t seed) {
  if (!(sigma >= 0.0)) throw std::invalid_argument("sigma must be >= 0");
  if (!(tau >= 0.0 && tau < 1.0)) throw std::invalid_argument("tau must be in [0, 1)");
  Inputs inputs = build_inputs(scene, pose);
  std::mt19937_64 rng(seed);
  if (sigma > 0.0) {
    std::normal_distribution<double> noise(0.0, sigma);
    for (Eigen::Index r = 0; r < inputs.rows.rows(); ++r)
      for (Eigen::Index c = 0; c < inputs.rows.cols(); ++c) inputs.rows(r, c) += noise(rng);
  }
  ViewAttributes full = decode_rows(scene, std::move(inputs), nullptr);
  if (tau == 0.0) return full;

  std::bernoulli_distribution dropped(tau);
  std::vector<int> keep;
  for (int k = 0; k < full.size(); ++k)
    if (!dropped(rng)) keep.push_back(k);
  ViewAttributes out;
  out.resize(static_cast<int>(keep.size()));
  for (std::size_t j = 0; j < keep.size(); ++j) {
    const int k = keep[j];
    const auto r = static_cast<Eigen::Index>(j);
    out.anchor[j] = full.anchor[k];
    out.centers.row(r) = full.centers.row(k);
    out.rotations.row(r) = full.rotations.row(k);
    out.scales.row(r) = full.scales.row(k);
    out.intensity(r) = full.intensity(k);
    out.raydrop(r) = full.raydrop(k);
    out.opacity(r) = full.opacity(k);
  }
  return out;
}

void decode_backward(const Scene& scene, const DecodeCache& cache,
                     const AttributeGradients& grads, FieldGradients& out) {
  const auto& cfg = scene.config;
  const auto& nets = scene.networks;
  const auto n = static_cast<Eigen::Index>(cache.anchor.size());
  if (grads.intensity.size() != n) throw std::invalid_argument("gradient/cache size mismatch");

  Eigen::MatrixXd g_geo(n, AttributeNetworks::kGeometryOutputs);
  Eigen::MatrixXd g_rho(n, 1), g_drop(n, 1), g_alpha(n, 1);
  for (Eigen::Index k = 0; k < n; ++k) {
    const auto raw = cache.geometry_out.row(k);
    Eigen::Vector4d q = raw.head<4>().transpose() / cache.raw_quat_norm(k);
    Eigen::Vector4d gq = grads.rotations.row(k).transpose();
    g_geo.row(k).head<4>() = ((gq - q * q.dot(gq)) / cache.raw_quat_norm(k)).transpose();
    for (int j = 0; j < 2; ++j) {
      double s = sigmoid(raw(4 + j));
      g_geo(k, 4 + j) = grads.scales(k, j) * cfg.max_scale * s * (1.0 - s);
    }
    for (int j = 0; j < 3; ++j) {
      double th = std::tanh(raw(6 + j));
      g_geo(k, 6 + j) = grads.centers(k, j) * cfg.max_offset * (1.0 - th * th);
    }
  }
  auto head = [&](const Mlp& net, const Mlp::Cache& mc, const Eigen::VectorXd& g,
                  Eigen::MatrixXd& dst) {
    // Recover the sigmoid from the cached last-layer input.
    Eigen::MatrixXd logits = mc.inputs.back() * net.layers().back().weight;
    logits.rowwise() += net.layers().back().bias;
    for (Eigen::Index k = 0; k < n; ++k) {
      double s = sigmoid(logits(k, 0));
      dst(k, 0) = g(k) * s * (1.0 - s);
    }
  };
  head(nets.intensity, cache.intensity, grads.intensity, g_rho);
  head(nets.raydrop, cache.raydrop, grads.raydrop, g_drop);
  head(nets.opacity, cache.opacity, grads.opacity, g_alpha);

  Eigen::MatrixXd g_in = nets.geometry.backward(cache.geometry, g_geo, out.networks.geometry);
  g_in += nets.intensity.backward(cache.intensity, g_rho, out.networks.intensity);
  g_in += nets.raydrop.backward(cache.raydrop, g_drop, out.networks.raydrop);
  g_in += nets.opacity.backward(cache.opacity, g_alpha, out.networks.opacity);
  for (Eigen::Index k = 0; k < n; ++k) {
    out.tokens.row(cache.anchor[k]) += g_in.row(k).head(cfg.token_dim);
  }
}

namespace {

nlohmann::json field_config_json(const FieldConfig& c) {
  return {{"token_dim", c.token_dim},       {"hidden_width", c.hidden_width},
          {"hidden_layers", c.hidden_layers}, {"max_scale", c.max_scale},
          {"max_offset", c.max_offset},     {"distance_norm", c.distance_norm},
          {"min_distance", c.min_distance}, {"init_scale", c.init_scale},
          {"init_opacity", c.init_opacity}};
}

void write_matrix(std::ostream& out, const Eigen::Ref<const Eigen::MatrixXd>& m) {
  std::vector<float> buf;
  buf.reserve(static_cast<std::size_t>(m.size()));
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) buf.push_back(static_cast<float>(m(r, c)));
  out.write(reinterpret_cast<const char*>(buf.data()),
            static_cast<std::streamsize>(buf.size() * sizeof(float)));
}

template <typename M>
void read_matrix(std::istream& in, M& m, const std::filesystem::path& path) {
  std::vector<float> buf(static_cast<std::size_t>(m.size()));
  if (!in.read(reinterpret_cast<char*>(buf.data()),
               static_cast<std::streamsize>(buf.size() * sizeof(float)))) {
    throw IoError(path.string() + ": truncated checkpoint payload");
  }
  std::size_t i = 0;
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = buf[i++];
}

constexpr const char* kNetworkNames[] = {"geometry", "intensity", "raydrop", "opacity"};

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Scene& scene) {
  nlohmann::json header;
  header["format"] = "lidarsplat-checkpoint";
  header["version"] = 1;
  header["anchors"] = scene.anchor_count();
  header["field"] = field_config_json(scene.config);
  const Mlp* nets[] = {&scene.networks.geometry, &scene.networks.intensity,
                       &scene.networks.raydrop, &scene.networks.opacity};
  for (int i = 0; i < 4; ++i) header["networks"][kNetworkNames[i]] = nets[i]->widths();

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << header.dump() << '\n';
  write_matrix(out, scene.positions);
  write_matrix(out, scene.tokens);
  for (const Mlp* net : nets) {
    for (const auto& layer : net->layers()) {
      write_matrix(out, layer.weight);
      write_matrix(out, layer.bias);
    }
  }
  if (!out) throw IoError("failed writing " + path.string());
}

Scene load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw IoError(path.string() + ": empty checkpoint");
  Scene scene;
  try {
    auto header = nlohmann::json::parse(line);
    if (header.at("format") != "lidarsplat-checkpoint" || header.at("version") != 1) {
      throw IoError(path.string() + ": unsupported checkpoint format");
    }
    const auto& f = header.at("field");
    FieldConfig& c = scene.config;
    c.token_dim = f.at("token_dim");
    c.hidden_width = f.at("hidden_width");
    c.hidden_layers = f.at("hidden_layers");
    c.max_scale = f.at("max_scale");
    c.max_offset = f.at("max_offset");
    c.distance_norm = f.at("distance_norm");
    c.min_distance = f.at("min_distance");
    c.init_scale = f.at("init_scale");
    c.init_opacity = f.at("init_opacity");
    int n = header.at("anchors");
    if (n < 1) throw IoError(path.string() + ": checkpoint has no anchors");
    scene.positions.resize(n, 3);
    scene.tokens.resize(n, c.token_dim);
    Mlp* nets[] = {&scene.networks.geometry, &scene.networks.intensity,
                   &scene.networks.raydrop, &scene.networks.opacity};
    for (int i = 0; i < 4; ++i) {
      *nets[i] = Mlp(header.at("networks").at(kNetworkNames[i]).get<std::vector<int>>());
      if (nets[i]->widths().front() != c.input_width()) {
        throw IoError(path.string() + ": network input width mismatch");
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw IoError(path.string() + ": malformed checkpoint header: " + e.what());
  } catch (const std::invalid_argument& e) {
    throw IoError(path.string() + ": " + e.what());
  }
  read_matrix(in, scene.positions, path);
  read_matrix(in, scene.tokens, path);
  scene.networks.for_each([&](Mlp& net) {
    for (auto& layer : net.layers()) {
      read_matrix(in, layer.weight, path);
      read_matrix(in, layer.bias, path);
    }
  });
  if (!scene.positions.allFinite() || !scene.tokens.allFinite()) {
    throw IoError(path.string() + ": non-finite checkpoint values");
  }
  return scene;
}

}  // namespace lidarsplat
