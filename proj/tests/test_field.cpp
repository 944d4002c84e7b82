#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <random>

#include "lidarsplat/field.hpp"
#include "lidarsplat/io.hpp"

using namespace lidarsplat;
namespace fs = std::filesystem;

namespace {

PointCloud ring_cloud(int n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  PointCloud c;
  for (int i = 0; i < n; ++i) c.push_back({{6.0 * u(rng), 6.0 * u(rng), u(rng)}, 0.5});
  return c;
}

Scene random_scene(int anchors, std::uint64_t seed) {
  Scene s = init_scene(ring_cloud(200, seed), anchors, seed);
  std::mt19937_64 rng(seed + 1);
  std::normal_distribution<double> n(0.0, 0.5);
  for (Eigen::Index i = 0; i < s.tokens.size(); ++i) s.tokens.data()[i] = n(rng);
  return s;
}

// Fixed random linear functional of every decoded attribute.
struct Probe {
  AttributeGradients w;
  explicit Probe(int n, std::uint64_t seed) : w(AttributeGradients::zeros(n)) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> d(0.0, 1.0);
    auto fill = [&](auto& m) {
      for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = d(rng);
    };
    fill(w.centers);
    fill(w.rotations);
    fill(w.scales);
    fill(w.intensity);
    fill(w.raydrop);
    fill(w.opacity);
  }
  double operator()(const ViewAttributes& a) const {
    return a.centers.cwiseProduct(w.centers).sum() + a.rotations.cwiseProduct(w.rotations).sum() +
           a.scales.cwiseProduct(w.scales).sum() + a.intensity.dot(w.intensity) +
           a.raydrop.dot(w.raydrop) + a.opacity.dot(w.opacity);
  }
};

}  // namespace

TEST_CASE("init places anchors on input points and sets head biases") {
  const PointCloud cloud = ring_cloud(50, 4);
  Scene s = init_scene(cloud, 20, 9);
  CHECK(s.anchor_count() == 20);
  CHECK(s.tokens.cols() == 32);
  CHECK(s.tokens.isZero());
  for (int i = 0; i < 20; ++i) {
    bool found = false;
    for (const auto& p : cloud) found |= p.position == Eigen::Vector3d(s.positions.row(i).transpose());
    CHECK(found);
  }
  // With the output layers' weights zeroed only the biases remain.
  s.networks.for_each([](Mlp& m) { m.layers().back().weight.setZero(); });
  const ViewAttributes a = decode_attributes(s, Pose{});
  for (int k = 0; k < a.size(); ++k) {
    CHECK(a.scales(k, 0) == doctest::Approx(FieldConfig{}.init_scale));
    CHECK(a.opacity(k) == doctest::Approx(FieldConfig{}.init_opacity));
    CHECK(a.intensity(k) == doctest::Approx(0.5));
    CHECK(a.rotations.row(k) == Eigen::RowVector4d(1, 0, 0, 0));
  }
  CHECK(init_scene(cloud, 80, 9).anchor_count() == 80);
  CHECK_THROWS_AS(init_scene({}, 5, 0), std::invalid_argument);
}

TEST_CASE("init is deterministic") {
  const PointCloud cloud = ring_cloud(50, 4);
  CHECK(init_scene(cloud, 20, 9) == init_scene(cloud, 20, 9));
  CHECK_FALSE(init_scene(cloud, 20, 9) == init_scene(cloud, 20, 10));
}

TEST_CASE("decoded attributes respect their ranges") {
  const Scene s = random_scene(64, 3);
  const ViewAttributes a = decode_attributes(s, Pose::from_translation({0.5, -0.5, 0.2}));
  REQUIRE(a.size() > 0);
  for (int k = 0; k < a.size(); ++k) {
    CHECK(a.rotations.row(k).norm() == doctest::Approx(1.0));
    CHECK(a.scales.row(k).minCoeff() > 0.0);
    CHECK(a.scales.row(k).maxCoeff() < 2.0);
    const Eigen::Vector3d off = a.centers.row(k) - s.positions.row(a.anchor[k]);
    CHECK(off.cwiseAbs().maxCoeff() <= 0.1);
    CHECK(a.opacity(k) > 0.0);
    CHECK(a.opacity(k) < 1.0);
  }
}

TEST_CASE("anchors closer than the minimum distance are not decoded") {
  Scene s = random_scene(10, 5);
  s.positions.row(3) << 0.2, 0.1, 0.0;
  const ViewAttributes a = decode_attributes(s, Pose{});
  for (int k = 0; k < a.size(); ++k) CHECK(a.anchor[k] != 3);
}

TEST_CASE("decoding depends on the viewpoint") {
  const Scene s = random_scene(16, 6);
  const ViewAttributes a = decode_attributes(s, Pose{});
  const ViewAttributes b = decode_attributes(s, Pose::from_translation({1, 0, 0}));
  CHECK_FALSE(a.opacity.isApprox(b.opacity));
}

TEST_CASE("unperturbed decode is the clean decode") {
  const Scene s = random_scene(40, 8);
  const Pose p = Pose::from_translation({0.3, 0.2, 0.1});
  const ViewAttributes clean = decode_attributes(s, p);
  const ViewAttributes same = perturbed_decode(s, p, 0.0, 0.0, 123);
  CHECK(same.centers == clean.centers);
  CHECK(same.opacity == clean.opacity);
  CHECK(same.anchor == clean.anchor);
}

TEST_CASE("perturbed decode is seeded and drops about tau") {
  const Scene s = random_scene(2000, 9);
  const ViewAttributes a = perturbed_decode(s, Pose{}, 0.2, 0.1, 77);
  const ViewAttributes b = perturbed_decode(s, Pose{}, 0.2, 0.1, 77);
  const ViewAttributes c = perturbed_decode(s, Pose{}, 0.2, 0.1, 78);
  CHECK(a.opacity == b.opacity);
  CHECK_FALSE(a.anchor == c.anchor);
  const double kept = static_cast<double>(a.size()) / decode_attributes(s, Pose{}).size();
  CHECK(kept == doctest::Approx(0.9).epsilon(0.03));
  CHECK_THROWS_AS(perturbed_decode(s, Pose{}, -0.1, 0.0, 1), std::invalid_argument);
  CHECK_THROWS_AS(perturbed_decode(s, Pose{}, 0.1, 1.0, 1), std::invalid_argument);
}

TEST_CASE("decode backward matches central differences") {
  Scene s = random_scene(6, 12);
  const Pose pose = Pose::from_translation({0.4, -0.3, 0.1});
  DecodeCache cache;
  const ViewAttributes a = decode_attributes(s, pose, &cache);
  const Probe probe(a.size(), 99);
  FieldGradients g = FieldGradients::zeros_like(s);
  decode_backward(s, cache, probe.w, g);

  const double h = 1e-6;
  auto fd = [&](double& param) {
    const double keep = param;
    param = keep + h;
    const double up = probe(decode_attributes(s, pose));
    param = keep - h;
    const double down = probe(decode_attributes(s, pose));
    param = keep;
    return (up - down) / (2 * h);
  };
  for (Eigen::Index i = 0; i < s.tokens.size(); ++i) {
    CHECK(g.tokens.data()[i] == doctest::Approx(fd(s.tokens.data()[i])).epsilon(1e-5));
  }
  auto check_net = [&](Mlp& net, const Mlp& grad) {
    for (std::size_t l = 0; l < net.layers().size(); ++l) {
      auto& W = net.layers()[l].weight;
      for (Eigen::Index i = 0; i < W.size(); i += 7) {
        CHECK(grad.layers()[l].weight.data()[i] == doctest::Approx(fd(W.data()[i])).epsilon(1e-5));
      }
      auto& b = net.layers()[l].bias;
      for (Eigen::Index i = 0; i < b.size(); ++i) {
        CHECK(grad.layers()[l].bias(i) == doctest::Approx(fd(b(i))).epsilon(1e-5));
      }
    }
  };
  check_net(s.networks.geometry, g.networks.geometry);
  check_net(s.networks.intensity, g.networks.intensity);
  check_net(s.networks.raydrop, g.networks.raydrop);
  check_net(s.networks.opacity, g.networks.opacity);
}

TEST_CASE("quaternion to matrix") {
  const Eigen::Matrix3d id = quaternion_to_matrix({1, 0, 0, 0});
  CHECK(id.isApprox(Eigen::Matrix3d::Identity()));
  const double c = std::sqrt(0.5);
  const Eigen::Matrix3d rz = quaternion_to_matrix({c, 0, 0, c});  // 90 deg about z
  CHECK((rz * Eigen::Vector3d::UnitX()).isApprox(Eigen::Vector3d::UnitY()));
  Eigen::Vector4d q(0.3, -0.5, 0.2, 0.7);
  q.normalize();
  const Eigen::Matrix3d r = quaternion_to_matrix(q);
  CHECK((r.transpose() * r).isApprox(Eigen::Matrix3d::Identity()));
  CHECK(r.determinant() == doctest::Approx(1.0));
}

TEST_CASE("checkpoint round trip") {
  const Scene s = random_scene(33, 14);
  const fs::path p = fs::temp_directory_path() / "lidarsplat_test_field" / "ck.bin";
  save_checkpoint(p, s);
  const Scene back = load_checkpoint(p);
  CHECK(back.anchor_count() == s.anchor_count());
  CHECK(back.positions.isApprox(s.positions, 1e-7));
  CHECK(back.tokens.isApprox(s.tokens, 1e-7));
  CHECK(back.networks.geometry.layers()[1].weight.isApprox(s.networks.geometry.layers()[1].weight, 1e-7));
  CHECK(back.config.max_scale == s.config.max_scale);
  // Values already in single precision survive exactly.
  save_checkpoint(p, back);
  CHECK(load_checkpoint(p) == back);

  fs::resize_file(p, fs::file_size(p) - 8);
  CHECK_THROWS_AS(load_checkpoint(p), IoError);
  {
    std::ofstream out(p);
    out << "{\"format\": \"other\"}\n";
  }
  CHECK_THROWS_AS(load_checkpoint(p), IoError);
  CHECK_THROWS_AS(load_checkpoint(p.parent_path() / "missing.bin"), IoError);
}
