#include "lidarsplat/optimizer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>
#include <stdexcept>

#include "lidarsplat/io.hpp"

namespace lidarsplat {
namespace {

double sign(double x) { return (x > 0.0) - (x < 0.0); }

}  // namespace

void TrainConfig::validate() const {
  if (!(lambda_intensity >= 0.0 && lambda_intensity <= 1.0)) {
    throw std::invalid_argument("lambda_intensity must be in [0, 1]");
  }
  for (double r : {lr.geometry, lr.intensity, lr.raydrop, lr.opacity, lr.tokens}) {
    if (!(r > 0.0)) throw std::invalid_argument("learning rates must be > 0");
  }
  if (densify_interval < 1) throw std::invalid_argument("densify_interval must be >= 1");
  if (densify_until < 0) throw std::invalid_argument("densify_until must be >= 0");
  if (anchor_count < 1) throw std::invalid_argument("anchor_count must be >= 1");
  if (single_pass_iters < 0 || expand_iters < 0) {
    throw std::invalid_argument("iteration counts must be >= 0");
  }
  if (max_anchor_factor < 1.0) throw std::invalid_argument("max_anchor_factor must be >= 1");
}

LossTerms image_loss(const RenderOutput& pred, const RangeImage& target, const TrainConfig& cfg,
                     const DistortionMask* mask, ImageGradient* grad) {
  if (!pred.image.same_shape(target)) {
    throw std::invalid_argument("prediction and target dimensions differ");
  }
  const std::size_t n = target.size();
  if (mask && mask->mask.size() != n) throw std::invalid_argument("mask dimensions differ");
  auto m = [&](std::size_t k) { return mask ? static_cast<double>(mask->mask[k]) : 1.0; };

  const auto pd = pred.image.depth(), pi = pred.image.intensity(), pr = pred.image.raydrop();
  const auto td = target.depth(), ti = target.intensity(), tr = target.raydrop();
  std::size_t returns = 0;
  for (std::size_t k = 0; k < n; ++k) returns += tr[k] >= 0.5;

  if (grad) *grad = ImageGradient(n);
  LossTerms terms;
  double l1_intensity = 0.0;
  const double inv_n = 1.0 / static_cast<double>(n);
  const double inv_ret = returns ? 1.0 / static_cast<double>(returns) : 0.0;
  const double lambda = cfg.lambda_intensity;
  for (std::size_t k = 0; k < n; ++k) {
    const double mk = m(k);
    if (tr[k] >= 0.5) {
      terms.depth += mk * std::abs(pd[k] - td[k]) * inv_ret;
      if (grad) grad->depth[k] = mk * sign(pd[k] - td[k]) * inv_ret;
    }
    l1_intensity += mk * std::abs(pi[k] - ti[k]) * inv_n;
    const double dr = pr[k] - tr[k];
    terms.raydrop += mk * dr * dr * inv_n;
    if (grad) {
      grad->intensity[k] = (1.0 - lambda) * mk * sign(pi[k] - ti[k]) * inv_n;
      grad->raydrop[k] = 2.0 * mk * dr * inv_n;
    }
  }
  double dssim = 0.0;
  if (lambda > 0.0) {
    const auto map = ssim_map(pi, ti, target.height(), target.width(), cfg.ssim);
    std::vector<double> weight(n);
    for (std::size_t k = 0; k < n; ++k) {
      dssim += m(k) * 0.5 * (1.0 - map[k]) * inv_n;
      weight[k] = -0.5 * m(k) * inv_n * lambda;
    }
    if (grad) {
      const auto g = ssim_backward(pi, ti, target.height(), target.width(), weight, cfg.ssim);
      for (std::size_t k = 0; k < n; ++k) grad->intensity[k] += g[k];
    }
  }
  terms.intensity = (1.0 - lambda) * l1_intensity + lambda * dssim;
  terms.total = terms.depth + terms.intensity + terms.raydrop;
  return terms;
}

double scale_regularizer(const ViewAttributes& attrs, AttributeGradients* grad) {
  const int n = attrs.size();
  if (n == 0) return 0.0;
  double sum = 0.0;
  for (int i = 0; i < n; ++i) sum += attrs.scales(i, 0) * attrs.scales(i, 1);
  if (grad) {
    for (int i = 0; i < n; ++i) {
      grad->scales(i, 0) += attrs.scales(i, 1) / n;
      grad->scales(i, 1) += attrs.scales(i, 0) / n;
    }
  }
  return sum / n;
}

LossTerms loss(const RenderOutput& pred, const RangeImage& target, const ViewAttributes& attrs,
               const TrainConfig& cfg, const DistortionMask* mask) {
  LossTerms terms = image_loss(pred, target, cfg, mask, nullptr);
  terms.scale = scale_regularizer(attrs);
  terms.total += terms.scale;
  return terms;
}

GradientState backward(const Scene& scene, const Pose& pose, const BeamTable& beams,
                       const RangeImage& target, const TrainConfig& cfg, const LossMask& mask,
                       DensifyStats* stats) {
  DecodeCache cache;
  const ViewAttributes attrs = decode_attributes(scene, pose, &cache);
  RenderTrace trace;
  const RenderOutput out = rasterize(attrs, pose, beams, cfg.render, &trace);

  DistortionMask computed;
  const DistortionMask* active = mask.fixed;
  if (!active && mask.delta > 0.0) {
    computed = distortion_mask(out, mask.delta);
    active = &computed;
  }

  GradientState state;
  state.field = FieldGradients::zeros_like(scene);
  state.masked_pixels = active ? active->count() : out.image.size();
  ImageGradient img_grad;
  state.loss = image_loss(out, target, cfg, active, &img_grad);

  ScreenGradient screen;
  AttributeGradients attr_grad =
      rasterize_backward(attrs, pose, beams, trace, img_grad, stats ? &screen : nullptr);
  state.loss.scale = scale_regularizer(attrs, &attr_grad);
  state.loss.total += state.loss.scale;
  decode_backward(scene, cache, attr_grad, state.field);

  if (stats) {
    for (int g = 0; g < attrs.size(); ++g) {
      if (!screen.visible[g]) continue;
      const int a = attrs.anchor[g];
      stats->grad_sum[a] += std::hypot(screen.col[g], screen.row[g]);
      stats->hits[a] += 1;
    }
  }
  return state;
}

Adam::Adam(const Scene& scene)
    : m_(FieldGradients::zeros_like(scene)), v_(FieldGradients::zeros_like(scene)) {}

namespace {

template <typename P, typename G>
void adam_update(P& param, const G& grad, P& m, P& v, double lr, const TrainConfig& cfg,
                 double bc1, double bc2) {
  m = cfg.beta1 * m + (1.0 - cfg.beta1) * grad;
  v = cfg.beta2 * v + (1.0 - cfg.beta2) * grad.cwiseProduct(grad);
  param.array() -= lr * (m.array() / bc1) / ((v.array() / bc2).sqrt() + cfg.epsilon);
}

void adam_network(Mlp& net, const Mlp& grad, Mlp& m, Mlp& v, double lr, const TrainConfig& cfg,
                  double bc1, double bc2) {
  for (std::size_t l = 0; l < net.layers().size(); ++l) {
    adam_update(net.layers()[l].weight, grad.layers()[l].weight, m.layers()[l].weight,
                v.layers()[l].weight, lr, cfg, bc1, bc2);
    adam_update(net.layers()[l].bias, grad.layers()[l].bias, m.layers()[l].bias,
                v.layers()[l].bias, lr, cfg, bc1, bc2);
  }
}

}  // namespace

void Adam::step(Scene& scene, const FieldGradients& grads, const TrainConfig& cfg) {
  if (grads.tokens.rows() != scene.tokens.rows() || m_.tokens.rows() != scene.tokens.rows()) {
    throw std::invalid_argument("gradient shape does not match the scene");
  }
  ++steps_;
  const double bc1 = 1.0 - std::pow(cfg.beta1, steps_);
  const double bc2 = 1.0 - std::pow(cfg.beta2, steps_);
  adam_update(scene.tokens, grads.tokens, m_.tokens, v_.tokens, cfg.lr.tokens, cfg, bc1, bc2);
  auto& n = scene.networks;
  adam_network(n.geometry, grads.networks.geometry, m_.networks.geometry, v_.networks.geometry,
               cfg.lr.geometry, cfg, bc1, bc2);
  adam_network(n.intensity, grads.networks.intensity, m_.networks.intensity,
               v_.networks.intensity, cfg.lr.intensity, cfg, bc1, bc2);
  adam_network(n.raydrop, grads.networks.raydrop, m_.networks.raydrop, v_.networks.raydrop,
               cfg.lr.raydrop, cfg, bc1, bc2);
  adam_network(n.opacity, grads.networks.opacity, m_.networks.opacity, v_.networks.opacity,
               cfg.lr.opacity, cfg, bc1, bc2);
}

void Adam::remap_tokens(const std::vector<int>& source) {
  auto remap = [&](Tokens& t) {
    Tokens out(static_cast<Eigen::Index>(source.size()), t.cols());
    for (std::size_t i = 0; i < source.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = t.row(source[i]);
    t = std::move(out);
  };
  remap(m_.tokens);
  remap(v_.tokens);
}

void adam_step(Scene& scene, const FieldGradients& grads, const TrainConfig& cfg, int iteration) {
  if (iteration < 1) throw std::invalid_argument("iteration is 1-based");
  Adam adam(scene);
  adam.set_steps(iteration - 1);
  adam.step(scene, grads, cfg);
}

DensifyResult densify_and_prune(Scene& scene, DensifyStats& stats, const TrainConfig& cfg,
                                int iteration, const Pose& last_pose, int initial_anchors) {
  DensifyResult result;
  if (!cfg.densify || iteration < cfg.densify_from || iteration % cfg.densify_interval != 0 ||
      (cfg.densify_until > 0 && iteration > cfg.densify_until)) {
    return result;
  }
  result.ran = true;
  const int n = scene.anchor_count();
  const ViewAttributes attrs = decode_attributes(scene, last_pose);
  std::vector<int> row_of(static_cast<std::size_t>(n), -1);
  for (int g = 0; g < attrs.size(); ++g) row_of[attrs.anchor[g]] = g;

  std::vector<char> prune(static_cast<std::size_t>(n), 0);
  int kept = n;
  for (int i = 0; i < n; ++i) {
    const int g = row_of[i];
    if (g >= 0 && attrs.opacity(g) < cfg.prune_opacity && kept > 1) {
      prune[i] = 1;
      --kept;
    }
  }

  std::vector<std::pair<double, int>> candidates;
  for (int i = 0; i < n; ++i) {
    if (prune[i] || row_of[i] < 0 || stats.hits[i] == 0) continue;
    const double mean = stats.grad_sum[i] / stats.hits[i];
    if (mean > cfg.split_threshold) candidates.emplace_back(mean, i);
  }
  std::stable_sort(candidates.begin(), candidates.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  const int cap = static_cast<int>(std::floor(cfg.max_anchor_factor * initial_anchors));
  const int budget = std::max(0, cap - kept);
  std::vector<char> split(static_cast<std::size_t>(n), 0);
  for (int k = 0; k < std::min<int>(budget, static_cast<int>(candidates.size())); ++k) {
    split[candidates[k].second] = 1;
  }

  Positions positions(kept + budget, 3);
  Tokens tokens(kept + budget, scene.tokens.cols());
  int out = 0;
  for (int i = 0; i < n; ++i) {
    if (prune[i]) {
      ++result.pruned;
      continue;
    }
    if (!split[i]) {
      positions.row(out) = scene.positions.row(i);
      tokens.row(out) = scene.tokens.row(i);
      result.source.push_back(i);
      ++out;
      continue;
    }
    const int g = row_of[i];
    Eigen::Vector4d q = attrs.rotations.row(g).transpose();
    const Eigen::Vector3d axis = quaternion_to_matrix(q).col(0);
    const double step = 0.5 * attrs.scales.row(g).maxCoeff();
    for (double s : {step, -step}) {
      positions.row(out) = scene.positions.row(i) + s * axis.transpose();
      tokens.row(out) = scene.tokens.row(i);
      result.source.push_back(i);
      ++out;
    }
    ++result.split;
  }
  scene.positions = positions.topRows(out);
  scene.tokens = tokens.topRows(out);
  stats.reset(out);
  return result;
}

Trainer::Trainer(Scene scene, BeamTable beams, TrainConfig cfg)
    : scene_(std::move(scene)),
      beams_(std::move(beams)),
      cfg_(std::move(cfg)),
      adam_(scene_),
      initial_anchors_(scene_.anchor_count()) {
  cfg_.validate();
  stats_.reset(scene_.anchor_count());
}

LossTerms Trainer::step(const Pose& pose, const RangeImage& target, const LossMask& mask) {
  GradientState state = backward(scene_, pose, beams_, target, cfg_, mask, &stats_);
  adam_.step(scene_, state.field, cfg_);
  ++iteration_;
  last_masked_ = state.masked_pixels;
  return state.loss;
}

DensifyResult Trainer::densify(const Pose& last_pose) {
  DensifyResult r =
      densify_and_prune(scene_, stats_, cfg_, iteration_, last_pose, initial_anchors_);
  if (r.ran) adam_.remap_tokens(r.source);
  return r;
}

PointCloud aggregate_points(const std::vector<TrainingView>& views, const BeamTable& beams) {
  PointCloud all;
  for (const auto& v : views) {
    PointCloud local = transform(unproject(v.scan, beams), v.pose);
    all.insert(all.end(), local.begin(), local.end());
  }
  return all;
}

TrainResult reconstruct_single_pass(Scene scene, const std::vector<TrainingView>& views,
                                    const BeamTable& beams, const TrainConfig& cfg,
                                    int iterations, std::uint64_t seed,
                                    const ProgressFn& progress) {
  if (views.empty()) throw std::invalid_argument("reconstruction needs at least one frame");
  TrainResult result;
  if (iterations <= 0) {
    result.scene = std::move(scene);
    return result;
  }
  Trainer trainer(std::move(scene), beams, cfg);
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, views.size() - 1);
  for (int it = 0; it < iterations; ++it) {
    const TrainingView& view = views[pick(rng)];
    LossRecord rec{trainer.iteration() + 1, trainer.step(view.pose, view.scan)};
    if (it + 1 < iterations) trainer.densify(view.pose);
    if (progress) progress(rec);
    result.log.push_back(rec);
  }
  result.scene = trainer.take_scene();
  return result;
}

void write_loss_csv(const std::filesystem::path& path, const std::vector<LossRecord>& log) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << "iteration,total,depth,intensity,raydrop,scale\n";
  char buf[256];
  for (const auto& r : log) {
    std::snprintf(buf, sizeof buf, "%d,%.17g,%.17g,%.17g,%.17g,%.17g\n", r.iteration,
                  r.terms.total, r.terms.depth, r.terms.intensity, r.terms.raydrop,
                  r.terms.scale);
    out << buf;
  }
  if (!out) throw IoError("failed writing " + path.string());
}

}  // namespace lidarsplat
