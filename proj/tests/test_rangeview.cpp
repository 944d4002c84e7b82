#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "lidarsplat/rangeview.hpp"

using namespace lidarsplat;

namespace {

constexpr double kDeg = std::numbers::pi / 180.0;

BeamTable small_beams() { return BeamTable::uniform(8, -20.0 * kDeg, 5.0 * kDeg, 64); }

LidarPoint pt(double x, double y, double z, double i = 0.5) { return {{x, y, z}, i}; }

}  // namespace

TEST_CASE("beam table validation") {
  CHECK_NOTHROW(small_beams().validate());
  BeamTable b = small_beams();
  b.elevations[3] = b.elevations[2];
  CHECK_THROWS_AS(b.validate(), std::invalid_argument);
  b = small_beams();
  b.width = 2;
  CHECK_THROWS_AS(b.validate(), std::invalid_argument);
  b.elevations = {0.1};
  b.width = 16;
  CHECK_THROWS_AS(b.validate(), std::invalid_argument);
}

TEST_CASE("pixel_of matches reference values") {
  const BeamTable b = small_beams();
  struct Case {
    Eigen::Vector3d p;
    int row, col;
  };
  const Case cases[] = {
      {{10, 0, 0}, 1, 32},   {{0, 5, -1}, 5, 16},        {{-3, -3, 1}, 0, 55},
      {{4, 4, -1.5}, 6, 24}, {{-7, 0.01, 0.2}, 1, 0},    {{2, -9, -3}, 6, 45},
  };
  for (const auto& c : cases) {
    const PixelIndex px = pixel_of(c.p, b);
    CHECK(px.row == c.row);
    CHECK(px.col == c.col);
  }
}

TEST_CASE("nearest beam resolves ties to the lower index") {
  BeamTable b;
  b.elevations = {-0.2, 0.0, 0.2};
  b.width = 8;
  CHECK(nearest_beam(0.1, b).index == 1);
  CHECK(nearest_beam(-0.1, b).index == 0);
  CHECK(nearest_beam(5.0, b).index == 2);
  CHECK(nearest_beam(-5.0, b).index == 0);
}

TEST_CASE("pixel_to_ray convention") {
  const BeamTable b = small_beams();
  const PixelRay top = pixel_to_ray(0, 0, b);
  CHECK(top.phi == doctest::Approx(5.0 * kDeg));
  CHECK(top.theta == doctest::Approx(std::numbers::pi));
  const PixelRay last = pixel_to_ray(7, 63, b);
  CHECK(last.phi == doctest::Approx(-20.0 * kDeg));
  CHECK(last.theta == doctest::Approx(-std::numbers::pi));
  CHECK(last.direction.norm() == doctest::Approx(1.0));
  CHECK_THROWS_AS(pixel_to_ray(8, 0, b), std::out_of_range);
  CHECK_THROWS_AS(pixel_to_ray(0, -1, b), std::out_of_range);
}

TEST_CASE("project keeps the nearest return") {
  const BeamTable b = small_beams();
  const PointCloud cloud = {pt(10, 0, 0, 0.9), pt(5, 0, 0, 0.2), pt(20, 0, 0, 0.1)};
  const RangeImage img = project_points(cloud, b);
  const std::size_t k = img.index(1, 32);
  CHECK(img.depth()[k] == 5.0);
  CHECK(img.intensity()[k] == 0.2);
  CHECK(img.raydrop()[k] == 1.0);
  std::size_t returns = 0;
  for (double r : img.raydrop()) returns += r > 0.0;
  CHECK(returns == 1);
}

TEST_CASE("projection is independent of point order") {
  const BeamTable b = small_beams();
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-10, 10);
  PointCloud cloud;
  for (int i = 0; i < 500; ++i) cloud.push_back(pt(u(rng), u(rng), 0.2 * u(rng), 0.5 + 0.04 * u(rng)));
  cloud.push_back(pt(3, 0, 0, 0.7));
  cloud.push_back(pt(3, 0, 0, 0.3));
  const RangeImage a = project_points(cloud, b);
  std::reverse(cloud.begin(), cloud.end());
  CHECK(project_points(cloud, b) == a);
  CHECK(a.intensity()[a.index(1, 32)] == 0.3);
}

TEST_CASE("project rejects bad points and empty input gives an empty image") {
  const BeamTable b = small_beams();
  CHECK_THROWS_AS(project_points({pt(0, 0, 0)}, b), std::invalid_argument);
  CHECK_THROWS_AS(project_points({pt(NAN, 0, 0)}, b), std::invalid_argument);
  const RangeImage img = project_points({}, b);
  for (double r : img.raydrop()) CHECK(r == 0.0);
}

TEST_CASE("intensity is clamped to [0, 1]") {
  const RangeImage img = project_points({pt(10, 0, 0, 1.7)}, small_beams());
  CHECK(img.intensity()[img.index(1, 32)] == 1.0);
}

TEST_CASE("unproject skips no-return pixels") {
  const BeamTable b = small_beams();
  RangeImage img(b.height(), b.width);
  img.depth()[img.index(2, 5)] = 7.0;
  img.raydrop()[img.index(2, 5)] = 1.0;
  img.depth()[img.index(3, 5)] = 7.0;  // depth without a return
  const PointCloud cloud = unproject(img, b);
  REQUIRE(cloud.size() == 1);
  CHECK(cloud[0].position.norm() == doctest::Approx(7.0));
  CHECK_THROWS_AS(unproject(RangeImage(3, 3), b), std::invalid_argument);
}

TEST_CASE("round trip on snapped points") {
  const BeamTable b = BeamTable::uniform(32, -25.0 * kDeg, 10.0 * kDeg, 512);
  std::mt19937_64 rng(11);
  std::uniform_int_distribution<int> row(0, 31), col(0, 511);
  std::uniform_real_distribution<double> range(1.0, 60.0);
  RangeImage img(32, 512);
  for (int i = 0; i < 3000; ++i) {
    const std::size_t k = img.index(row(rng), col(rng));
    img.depth()[k] = range(rng);
    img.intensity()[k] = 0.25;
    img.raydrop()[k] = 1.0;
  }
  const RangeImage back = project_points(unproject(img, b), b);
  double err = 0.0;
  for (std::size_t k = 0; k < img.size(); ++k) err = std::max(err, std::abs(back.depth()[k] - img.depth()[k]));
  CHECK(err < 1e-9);
  CHECK(back.raydrop().size() == img.raydrop().size());
  for (std::size_t k = 0; k < img.size(); ++k) CHECK(back.raydrop()[k] == img.raydrop()[k]);
}

TEST_CASE("pose helpers") {
  std::vector<double> v = {0, -1, 0, 1, 1, 0, 0, 2, 0, 0, 1, 3, 0, 0, 0, 1};
  const Pose p = Pose::from_row_major(v, 4.5);
  CHECK(p.translation() == Eigen::Vector3d(1, 2, 3));
  CHECK(p.to_row_major() == v);
  CHECK(p.timestamp == 4.5);
  v[0] = 2;
  CHECK_THROWS_AS(Pose::from_row_major(v), std::invalid_argument);
  const PointCloud moved = transform({pt(1, 0, 0)}, Pose::from_row_major(
      std::vector<double>{0, -1, 0, 1, 1, 0, 0, 2, 0, 0, 1, 3, 0, 0, 0, 1}));
  CHECK(moved[0].position.isApprox(Eigen::Vector3d(1, 3, 3)));
}
