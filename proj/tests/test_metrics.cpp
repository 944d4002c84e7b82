#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>

#include <Eigen/Geometry>

#include "lidarsplat/metrics.hpp"

using namespace lidarsplat;

namespace {

Points cloud_a() { return {{0.2, 0.3, 0}, {1.7, -2.2, 1}, {-3.1, 4.4, 0}, {2.5, 2.5, 2}}; }
Points cloud_b() { return {{0.4, 0.1, 0}, {-1.2, -2.9, 1}, {-3.3, 4.0, 0}}; }

BevConfig small_bev() {
  BevConfig c;
  c.bins = 10;
  c.extent = 5.0;
  return c;
}

Points random_cloud(int n, std::uint64_t seed, double spread = 20.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-spread, spread);
  Points p;
  for (int i = 0; i < n; ++i) p.push_back({u(rng), u(rng), 0.1 * u(rng)});
  return p;
}

double brute_chamfer(const Points& a, const Points& b) {
  auto one = [](const Points& x, const Points& y) {
    double s = 0.0;
    for (const auto& p : x) {
      double best = INFINITY;
      for (const auto& q : y) best = std::min(best, (p - q).norm());
      s += best;
    }
    return s / x.size();
  };
  return 0.5 * (one(a, b) + one(b, a));
}

}  // namespace

TEST_CASE("chamfer reference value and brute force agreement") {
  CHECK(chamfer({{0, 0, 0}, {1, 0, 0}, {0, 2, 0}}, {{0, 0, 1}, {3, 0, 0}}) ==
        doctest::Approx(1.525046923312147).epsilon(1e-12));
  for (std::uint64_t seed : {1, 2, 3}) {
    const Points a = random_cloud(700, seed), b = random_cloud(500, seed + 10, 5.0);
    CHECK(chamfer(a, b) == doctest::Approx(brute_chamfer(a, b)).epsilon(1e-12));
  }
  CHECK_THROWS_AS(chamfer({}, cloud_a()), std::invalid_argument);
}

TEST_CASE("chamfer on degenerate and distant clouds") {
  const Points a = random_cloud(300, 12);
  const Points same(5, Eigen::Vector3d(1, 2, 3));
  CHECK(chamfer(a, same) == doctest::Approx(brute_chamfer(a, same)).epsilon(1e-12));
  Points line;
  for (int i = 0; i < 50; ++i) line.push_back({0.1 * i, 0, 0});
  CHECK(chamfer(a, line) == doctest::Approx(brute_chamfer(a, line)).epsilon(1e-12));
  Points far = random_cloud(100, 13, 0.5);
  for (auto& p : far) p += Eigen::Vector3d(1e4, -3e3, 50);
  CHECK(chamfer(a, far) == doctest::Approx(brute_chamfer(a, far)).epsilon(1e-12));
}

TEST_CASE("chamfer identities") {
  const Points a = random_cloud(300, 4);
  CHECK(chamfer(a, a) == 0.0);
  const Points b = random_cloud(200, 5);
  CHECK(chamfer(a, b) == doctest::Approx(chamfer(b, a)).epsilon(1e-12));
  Points shifted = a;
  for (auto& p : shifted) p.x() += 0.25;
  CHECK(chamfer(a, {a.front()}) > 0.0);
  CHECK(chamfer({Eigen::Vector3d::Zero()}, {Eigen::Vector3d(0.3, 0.4, 0)}) == doctest::Approx(0.5));
}

TEST_CASE("chamfer and fscore are invariant to rigid motion") {
  const Points a = random_cloud(400, 6), b = random_cloud(400, 7);
  const Eigen::Isometry3d t = Eigen::Translation3d(3, -2, 1) *
                              Eigen::AngleAxisd(0.7, Eigen::Vector3d(1, 2, 3).normalized());
  Points ta, tb;
  for (const auto& p : a) ta.push_back(t * p);
  for (const auto& p : b) tb.push_back(t * p);
  CHECK(std::abs(chamfer(a, b) - chamfer(ta, tb)) < 1e-9);
  CHECK(fscore(a, b, 2.0) == fscore(ta, tb, 2.0));
}

TEST_CASE("fscore closed form") {
  const Points a = {{0, 0, 0}, {1, 0, 0}}, b = {{0, 0, 0.05}, {3, 0, 0}};
  CHECK(fscore(a, b) == doctest::Approx(0.5));
  CHECK(fscore(a, a) == 1.0);
  CHECK(fscore(a, {{10, 10, 10}}) == 0.0);
  // Precision 1, recall 1/3.
  CHECK(fscore({{0, 0, 0}}, {{0, 0, 0}, {5, 0, 0}, {9, 0, 0}}) == doctest::Approx(0.5));
}

TEST_CASE("psnr") {
  std::vector<double> a(50, 0.5), b(50, 0.6);
  CHECK(psnr(a, b) == doctest::Approx(20.0));
  CHECK(psnr(a, a) == 100.0);
  CHECK(psnr(a, b, 2.0) == doctest::Approx(20.0 + 20.0 * std::log10(2.0)));
}

TEST_CASE("bev histogram") {
  const auto h = bev_histogram(cloud_a(), small_bev());
  REQUIRE(h.size() == 100);
  double sum = 0.0;
  for (double v : h) sum += v;
  CHECK(sum == doctest::Approx(1.0));
  // (0.2, 0.3) sits in x bin 5, y bin 5.
  CHECK(h[5 * 10 + 5] == doctest::Approx(0.25));
  const auto h2 = bev_histogram({{0.2, 0.3, 0}, {99, 0, 0}}, small_bev());
  CHECK(h2[55] == 1.0);
  CHECK_THROWS_AS(bev_histogram({{99, 0, 0}}, small_bev()), std::invalid_argument);
}

TEST_CASE("jsd reference value and bounds") {
  CHECK(jsd_bev(cloud_a(), cloud_b(), small_bev()) == doctest::Approx(0.294784119484670).epsilon(1e-12));
  CHECK(jsd_bev(cloud_a(), cloud_a(), small_bev()) == 0.0);
  CHECK(jsd_bev({{1, 1, 0}}, {{-3, -3, 0}}, small_bev()) == doctest::Approx(std::numbers::ln2));
  const Points a = random_cloud(200, 8), b = random_cloud(200, 9);
  const double j = jsd_bev(a, b);
  CHECK(j >= 0.0);
  CHECK(j <= std::numbers::ln2);
  CHECK(j == doctest::Approx(jsd_bev(b, a)));
}

TEST_CASE("mmd reference value") {
  CHECK(mmd_bev(cloud_a(), cloud_b(), small_bev()) == doctest::Approx(24718.840937467335607).epsilon(1e-10));
  CHECK(mmd_bev(cloud_a(), cloud_a(), small_bev()) == doctest::Approx(0.0));
  CHECK(mmd_bev(cloud_a(), cloud_b(), small_bev()) > 0.0);
}

TEST_CASE("scan comparison") {
  const BeamTable beams = BeamTable::uniform(4, -0.2, 0.1, 16);
  RangeImage t(4, 16);
  for (std::size_t k = 0; k < t.size(); ++k) {
    t.depth()[k] = 5.0;
    t.intensity()[k] = 0.5;
    t.raydrop()[k] = 1.0;
  }
  const FrameMetrics same = compare_scans(t, t, beams);
  CHECK(same.chamfer == 0.0);
  CHECK(same.fscore == 1.0);
  CHECK(same.depth_l1 == 0.0);
  CHECK(same.intensity_psnr == 100.0);
  CHECK(same.jsd == 0.0);

  RangeImage p = t;
  for (double& d : p.depth()) d += 0.1;
  for (double& i : p.intensity()) i += 0.1;
  const FrameMetrics m = compare_scans(p, t, beams);
  CHECK(m.depth_l1 == doctest::Approx(0.1));
  CHECK(m.intensity_psnr == doctest::Approx(20.0));
  CHECK(m.raydrop_psnr == 100.0);

  RangeImage empty = t;
  for (double& r : empty.raydrop()) r = 0.2;
  const FrameMetrics e = compare_scans(empty, t, beams);
  CHECK(std::isinf(e.chamfer));
  CHECK(e.fscore == 0.0);
  CHECK(e.jsd == doctest::Approx(std::numbers::ln2));
}
