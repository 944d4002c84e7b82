#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>

#include "lidarsplat/optimizer.hpp"

using namespace lidarsplat;
namespace fs = std::filesystem;

namespace {

constexpr double kDeg = std::numbers::pi / 180.0;

BeamTable beams() { return BeamTable::uniform(12, -15.0 * kDeg, 10.0 * kDeg, 64); }

RangeImage filled(int h, int w, double depth, double intensity, double raydrop) {
  RangeImage img(h, w);
  std::fill(img.depth().begin(), img.depth().end(), depth);
  std::fill(img.intensity().begin(), img.intensity().end(), intensity);
  std::fill(img.raydrop().begin(), img.raydrop().end(), raydrop);
  return img;
}

RenderOutput as_render(const RangeImage& img) {
  RenderOutput out;
  out.image = img;
  out.median_depth.assign(img.size(), 0.0);
  out.transmittance.assign(img.size(), 1.0);
  out.opacity.assign(img.size(), 0.0);
  return out;
}

// A patch of wall in front of the sensor.
Scene wall_scene(int anchors, std::uint64_t seed, double scale = 0.4) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  PointCloud pts;
  for (int i = 0; i < 300; ++i) pts.push_back({{5.0 + 0.2 * u(rng), 3.0 * u(rng), 0.8 * u(rng)}, 0.5});
  FieldConfig fc;
  fc.init_scale = scale;
  Scene s = init_scene(pts, anchors, seed, fc);
  std::normal_distribution<double> g(0.0, 0.3);
  for (Eigen::Index i = 0; i < s.tokens.size(); ++i) s.tokens.data()[i] = g(rng);
  return s;
}

RangeImage wall_target(const BeamTable& b) {
  RangeImage t(b.height(), b.width);
  for (int r = 0; r < b.height(); ++r) {
    for (int c = 0; c < b.width; ++c) {
      const std::size_t k = t.index(r, c);
      const PixelRay ray = pixel_to_ray(r, c, b);
      if (ray.direction.x() > 0.8) {
        t.depth()[k] = 5.0 / ray.direction.x();
        t.intensity()[k] = 0.3 + 0.01 * c;
        t.raydrop()[k] = 1.0;
      }
    }
  }
  return t;
}

}  // namespace

TEST_CASE("constant depth offset") {
  TrainConfig cfg;
  const RangeImage target = filled(8, 16, 10.0, 0.4, 1.0);
  const RenderOutput pred = as_render(filled(8, 16, 10.1, 0.4, 1.0));
  const LossTerms t = image_loss(pred, target, cfg);
  CHECK(t.depth == doctest::Approx(0.1));
  CHECK(t.intensity == doctest::Approx(0.0));
  CHECK(t.raydrop == doctest::Approx(0.0));
}

TEST_CASE("depth term averages over target returns only") {
  TrainConfig cfg;
  RangeImage target = filled(4, 4, 10.0, 0.4, 1.0);
  for (int k = 0; k < 8; ++k) target.raydrop()[k] = 0.0;
  RangeImage p = target;
  for (int k = 0; k < 16; ++k) p.depth()[k] += k < 8 ? 5.0 : 0.2;
  CHECK(image_loss(as_render(p), target, cfg).depth == doctest::Approx(0.2));
}

TEST_CASE("intensity mix and raydrop mse") {
  TrainConfig cfg;
  cfg.lambda_intensity = 0.0;
  const RangeImage target = filled(8, 16, 10.0, 0.4, 1.0);
  RangeImage p = target;
  for (double& v : p.intensity()) v = 0.25;
  for (double& v : p.raydrop()) v = 0.5;
  const LossTerms t = image_loss(as_render(p), target, cfg);
  CHECK(t.intensity == doctest::Approx(0.15));
  CHECK(t.raydrop == doctest::Approx(0.25));
  CHECK(t.total == doctest::Approx(0.4));
  cfg.lambda_intensity = 0.2;
  CHECK(image_loss(as_render(target), target, cfg).total == doctest::Approx(0.0));
}

TEST_CASE("scale regularizer") {
  ViewAttributes a;
  a.resize(2);
  a.scales << 0.5, 0.2, 1.0, 0.4;
  AttributeGradients g = AttributeGradients::zeros(2);
  CHECK(scale_regularizer(a, &g) == doctest::Approx(0.25));
  CHECK(g.scales(0, 0) == doctest::Approx(0.1));
  CHECK(g.scales(1, 1) == doctest::Approx(0.5));
  ViewAttributes zero;
  zero.resize(1);
  zero.scales << 0.0, 0.0;
  CHECK(scale_regularizer(zero) == 0.0);
}

TEST_CASE("mask zeroes per-pixel terms and gradients") {
  TrainConfig cfg;
  const RangeImage target = filled(8, 16, 10.0, 0.4, 1.0);
  RangeImage p = filled(8, 16, 9.0, 0.1, 0.3);
  DistortionMask m;
  m.height = 8;
  m.width = 16;
  m.delta = 0.1;
  m.mask.assign(128, 0);
  ImageGradient grad;
  const LossTerms t = image_loss(as_render(p), target, cfg, &m, &grad);
  CHECK(t.total == 0.0);
  for (std::size_t k = 0; k < 128; ++k) {
    CHECK(grad.depth[k] == 0.0);
    CHECK(grad.intensity[k] == 0.0);
    CHECK(grad.raydrop[k] == 0.0);
  }
  m.mask[5] = 1;
  CHECK(image_loss(as_render(p), target, cfg, &m).depth == doctest::Approx(1.0 / 128));
}

TEST_CASE("image loss gradient matches central differences") {
  TrainConfig cfg;
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  RangeImage target(6, 9), p(6, 9);
  for (std::size_t k = 0; k < target.size(); ++k) {
    target.depth()[k] = 5 + u(rng);
    target.intensity()[k] = u(rng);
    target.raydrop()[k] = u(rng) < 0.7 ? 1.0 : 0.0;
    p.depth()[k] = 5 + u(rng);
    p.intensity()[k] = u(rng);
    p.raydrop()[k] = u(rng);
  }
  ImageGradient grad;
  image_loss(as_render(p), target, cfg, nullptr, &grad);
  const double h = 1e-7;
  auto fd = [&](double& x) {
    const double keep = x;
    x = keep + h;
    const double up = image_loss(as_render(p), target, cfg).total;
    x = keep - h;
    const double down = image_loss(as_render(p), target, cfg).total;
    x = keep;
    return (up - down) / (2 * h);
  };
  for (std::size_t k = 0; k < target.size(); ++k) {
    CHECK(grad.depth[k] == doctest::Approx(fd(p.depth()[k])).epsilon(1e-5));
    CHECK(grad.intensity[k] == doctest::Approx(fd(p.intensity()[k])).epsilon(1e-5));
    CHECK(grad.raydrop[k] == doctest::Approx(fd(p.raydrop()[k])).epsilon(1e-5));
  }
}

TEST_CASE("end-to-end gradient matches central differences") {
  const BeamTable b = beams();
  Scene s = wall_scene(12, 3);
  const RangeImage target = wall_target(b);
  TrainConfig cfg;
  const GradientState st = backward(s, Pose{}, b, target, cfg);
  REQUIRE(st.loss.depth > 0.0);

  auto total = [&] {
    const ViewAttributes a = decode_attributes(s, Pose{});
    return loss(rasterize(a, Pose{}, b, cfg.render), target, a, cfg).total;
  };
  CHECK(total() == doctest::Approx(st.loss.total).epsilon(1e-12));
  const double h = 1e-6;
  auto fd = [&](double& x) {
    const double keep = x;
    x = keep + h;
    const double up = total();
    x = keep - h;
    const double down = total();
    x = keep;
    return (up - down) / (2 * h);
  };
  Eigen::VectorXd num(s.tokens.size()), ana(s.tokens.size());
  for (Eigen::Index i = 0; i < s.tokens.size(); ++i) {
    num(i) = fd(s.tokens.data()[i]);
    ana(i) = st.field.tokens.data()[i];
  }
  CHECK((num - ana).norm() <= 1e-4 * num.norm());
  auto& bias = s.networks.opacity.layers().back().bias;
  CHECK(st.field.networks.opacity.layers().back().bias(0) ==
        doctest::Approx(fd(bias(0))).epsilon(1e-4));
  auto& gb = s.networks.geometry.layers().back().bias;
  for (int j = 0; j < gb.size(); ++j) {
    CHECK(st.field.networks.geometry.layers().back().bias(j) == doctest::Approx(fd(gb(j))).epsilon(1e-4));
  }
}

TEST_CASE("first adam step moves each parameter by the learning rate") {
  Scene s = wall_scene(4, 1);
  const Scene before = s;
  FieldGradients g = FieldGradients::zeros_like(s);
  g.tokens(0, 0) = 3.0;
  g.tokens(1, 2) = -1e-3;
  g.networks.geometry.layers()[0].weight(0, 0) = 0.5;
  g.networks.opacity.layers()[1].bias(0) = -2.0;
  TrainConfig cfg;
  adam_step(s, g, cfg, 1);
  CHECK(s.tokens(0, 0) - before.tokens(0, 0) == doctest::Approx(-5e-3).epsilon(1e-6));
  CHECK(s.tokens(1, 2) - before.tokens(1, 2) == doctest::Approx(5e-3).epsilon(1e-4));
  CHECK(s.tokens(2, 2) == before.tokens(2, 2));
  CHECK(s.networks.geometry.layers()[0].weight(0, 0) - before.networks.geometry.layers()[0].weight(0, 0) ==
        doctest::Approx(-1e-3).epsilon(1e-6));
  CHECK(s.networks.opacity.layers()[1].bias(0) - before.networks.opacity.layers()[1].bias(0) ==
        doctest::Approx(2e-3).epsilon(1e-6));
  CHECK(s.networks.intensity == before.networks.intensity);
}

TEST_CASE("adam bias correction at a later step") {
  Scene s = wall_scene(2, 1);
  const Scene before = s;
  FieldGradients g = FieldGradients::zeros_like(s);
  g.tokens(0, 0) = 1.0;
  TrainConfig cfg;
  adam_step(s, g, cfg, 10);
  const double m = 0.1 / (1 - std::pow(0.9, 10));
  const double v = 0.001 / (1 - std::pow(0.999, 10));
  CHECK(s.tokens(0, 0) - before.tokens(0, 0) == doctest::Approx(-5e-3 * m / (std::sqrt(v) + 1e-8)));
  CHECK_THROWS_AS(adam_step(s, g, cfg, 0), std::invalid_argument);
}

TEST_CASE("densify is idle outside its window and off-interval") {
  Scene s = wall_scene(10, 2);
  DensifyStats stats;
  stats.reset(10);
  stats.grad_sum[3] = 1.0;
  stats.hits[3] = 1;
  TrainConfig cfg;
  CHECK_FALSE(densify_and_prune(s, stats, cfg, 400, Pose{}, 10).ran);
  CHECK_FALSE(densify_and_prune(s, stats, cfg, 550, Pose{}, 10).ran);
  CHECK(s.anchor_count() == 10);
  cfg.densify_until = 600;
  CHECK_FALSE(densify_and_prune(s, stats, cfg, 700, Pose{}, 10).ran);
  CHECK(densify_and_prune(s, stats, cfg, 600, Pose{}, 10).ran);
  cfg.densify = false;
  CHECK_FALSE(densify_and_prune(s, stats, cfg, 500, Pose{}, 10).ran);
}

TEST_CASE("split places two children along the major tangent") {
  Scene s = wall_scene(10, 2);
  const Scene before = s;
  DensifyStats stats;
  stats.reset(10);
  stats.grad_sum[3] = 0.01;
  stats.hits[3] = 2;
  stats.grad_sum[4] = 0.001;  // mean below threshold
  stats.hits[4] = 1;
  TrainConfig cfg;
  const ViewAttributes a = decode_attributes(s, Pose{});
  int row = -1;
  for (int g = 0; g < a.size(); ++g)
    if (a.anchor[g] == 3) row = g;
  REQUIRE(row >= 0);
  const double max_scale = a.scales.row(row).maxCoeff();

  const DensifyResult r = densify_and_prune(s, stats, cfg, 500, Pose{}, 10);
  CHECK(r.ran);
  CHECK(r.split == 1);
  CHECK(r.pruned == 0);
  REQUIRE(s.anchor_count() == 11);
  CHECK(r.source == std::vector<int>{0, 1, 2, 3, 3, 4, 5, 6, 7, 8, 9});
  const Eigen::Vector3d parent = before.positions.row(3);
  const Eigen::Vector3d c1 = s.positions.row(3), c2 = s.positions.row(4);
  CHECK((c1 - parent).norm() == doctest::Approx(0.5 * max_scale));
  CHECK((c2 - parent).norm() == doctest::Approx(0.5 * max_scale));
  CHECK((c1 + c2 - 2 * parent).norm() < 1e-12);
  CHECK(s.tokens.row(3) == before.tokens.row(3));
  CHECK(s.tokens.row(4) == before.tokens.row(3));
  CHECK(stats.hits.size() == 11);
}

TEST_CASE("split respects the anchor cap, highest gradient first") {
  Scene s = wall_scene(10, 2);
  DensifyStats stats;
  stats.reset(10);
  for (int i = 0; i < 10; ++i) {
    stats.grad_sum[i] = 0.01 * (i + 1);
    stats.hits[i] = 1;
  }
  TrainConfig cfg;
  cfg.max_anchor_factor = 1.2;
  const DensifyResult r = densify_and_prune(s, stats, cfg, 600, Pose{}, 10);
  CHECK(r.split == 2);
  CHECK(s.anchor_count() == 12);
  CHECK(std::count(r.source.begin(), r.source.end(), 9) == 2);
  CHECK(std::count(r.source.begin(), r.source.end(), 8) == 2);
}

TEST_CASE("prune removes transparent anchors") {
  Scene s = wall_scene(10, 2);
  s.networks.opacity.layers().back().weight.setZero();
  s.networks.opacity.layers().back().bias(0) = -8.0;  // opacity ~ 3e-4
  DensifyStats stats;
  stats.reset(10);
  TrainConfig cfg;
  const DensifyResult r = densify_and_prune(s, stats, cfg, 500, Pose{}, 10);
  CHECK(r.pruned == 9);
  CHECK(s.anchor_count() == 1);
}

TEST_CASE("reconstruction runs, logs and is deterministic") {
  const BeamTable b = beams();
  const std::vector<TrainingView> views = {{Pose{}, wall_target(b)},
                                           {Pose::from_translation({0.3, 0, 0}), wall_target(b)}};
  TrainConfig cfg;
  const Scene s = wall_scene(20, 4);
  const TrainResult zero = reconstruct_single_pass(s, views, b, cfg, 0, 1);
  CHECK(zero.scene == s);
  CHECK(zero.log.empty());

  const TrainResult a = reconstruct_single_pass(s, views, b, cfg, 8, 1);
  const TrainResult c = reconstruct_single_pass(s, views, b, cfg, 8, 1);
  REQUIRE(a.log.size() == 8);
  CHECK(a.log.front().iteration == 1);
  CHECK(a.scene == c.scene);
  for (std::size_t i = 0; i < a.log.size(); ++i) CHECK(a.log[i].terms.total == c.log[i].terms.total);
  CHECK_FALSE(a.scene == s);

  const fs::path p = fs::temp_directory_path() / "lidarsplat_test_opt" / "loss.csv";
  write_loss_csv(p, a.log);
  std::ifstream in(p);
  std::string header;
  std::getline(in, header);
  CHECK(header == "iteration,total,depth,intensity,raydrop,scale");
  int lines = 0;
  for (std::string line; std::getline(in, line);) ++lines;
  CHECK(lines == 8);
  CHECK_THROWS_AS(reconstruct_single_pass(s, {}, b, cfg, 1, 1), std::invalid_argument);
}

TEST_CASE("the final step does not densify") {
  const BeamTable b = beams();
  const std::vector<TrainingView> views = {{Pose{}, wall_target(b)}};
  TrainConfig cfg;
  cfg.densify_from = 1;
  cfg.densify_interval = 1;
  cfg.split_threshold = 0.0;
  const Scene s = wall_scene(20, 4);
  CHECK(reconstruct_single_pass(s, views, b, cfg, 1, 1).scene.anchor_count() == 20);
  CHECK(reconstruct_single_pass(s, views, b, cfg, 2, 1).scene.anchor_count() > 20);
}

TEST_CASE("training lowers the loss") {
  const BeamTable b = beams();
  const std::vector<TrainingView> views = {{Pose{}, wall_target(b)}};
  TrainConfig cfg;
  const TrainResult r = reconstruct_single_pass(wall_scene(40, 5), views, b, cfg, 120, 2);
  CHECK(r.log.back().terms.total < 0.7 * r.log.front().terms.total);
}
