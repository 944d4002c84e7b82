#include <doctest.h>

#include <random>

#include "lidarsplat/mlp.hpp"

using namespace lidarsplat;

namespace {

// Sum of output * fixed weights, a scalar probe for finite differences.
double probe(const Mlp& net, const Eigen::MatrixXd& x, const Eigen::MatrixXd& w) {
  return net.forward(x).cwiseProduct(w).sum();
}

}  // namespace

TEST_CASE("shapes and parameter count") {
  std::mt19937_64 rng(1);
  const Mlp net = Mlp::random({5, 7, 3}, rng);
  CHECK(net.widths() == std::vector<int>{5, 7, 3});
  CHECK(net.parameter_count() == 5 * 7 + 7 + 7 * 3 + 3);
  CHECK(net.forward(Eigen::MatrixXd::Zero(4, 5)).rows() == 4);
  CHECK(net.forward(Eigen::MatrixXd::Zero(4, 5)).cols() == 3);
}

TEST_CASE("hand evaluated forward pass") {
  Mlp net({2, 2, 1});
  auto& l = net.layers();
  l[0].weight << 1, -1, 2, 1;  // columns are hidden units
  l[0].bias << 0, -0.5;
  l[1].weight << 3, -2;
  l[1].bias << 0.25;
  Eigen::MatrixXd x(2, 2);
  x << 1, 1, -1, 0.5;
  // Row 1: hidden = relu(1+2, -1+1-0.5) = (3, 0) -> 9.25
  // Row 2: hidden = relu(-1+1, 1+0.5-0.5) = (0, 1) -> -1.75
  const Eigen::MatrixXd y = net.forward(x);
  CHECK(y(0, 0) == doctest::Approx(9.25));
  CHECK(y(1, 0) == doctest::Approx(-1.75));
}

TEST_CASE("initialization bounds") {
  std::mt19937_64 rng(2);
  const Mlp net = Mlp::random({16, 8, 1}, rng);
  CHECK(net.layers()[0].weight.cwiseAbs().maxCoeff() <= 0.25);
  CHECK(net.layers()[1].weight.cwiseAbs().maxCoeff() <= 1.0 / std::sqrt(8.0));
}

TEST_CASE("backward matches central differences") {
  std::mt19937_64 rng(7);
  Mlp net = Mlp::random({4, 6, 6, 2}, rng);
  std::normal_distribution<double> n(0.0, 1.0);
  Eigen::MatrixXd x(3, 4), w(3, 2);
  for (int i = 0; i < x.size(); ++i) x.data()[i] = n(rng);
  for (int i = 0; i < w.size(); ++i) w.data()[i] = n(rng);

  Mlp::Cache cache;
  net.forward(x, &cache);
  Mlp grads = net.zeros_like();
  const Eigen::MatrixXd gx = net.backward(cache, w, grads);

  const double h = 1e-6;
  for (std::size_t l = 0; l < net.layers().size(); ++l) {
    auto& W = net.layers()[l].weight;
    for (int i = 0; i < W.size(); ++i) {
      const double keep = W.data()[i];
      W.data()[i] = keep + h;
      const double up = probe(net, x, w);
      W.data()[i] = keep - h;
      const double down = probe(net, x, w);
      W.data()[i] = keep;
      CHECK(grads.layers()[l].weight.data()[i] == doctest::Approx((up - down) / (2 * h)).epsilon(1e-5));
    }
    auto& b = net.layers()[l].bias;
    for (int i = 0; i < b.size(); ++i) {
      const double keep = b(i);
      b(i) = keep + h;
      const double up = probe(net, x, w);
      b(i) = keep - h;
      const double down = probe(net, x, w);
      b(i) = keep;
      CHECK(grads.layers()[l].bias(i) == doctest::Approx((up - down) / (2 * h)).epsilon(1e-5));
    }
  }
  for (int i = 0; i < x.size(); ++i) {
    Eigen::MatrixXd xp = x, xm = x;
    xp.data()[i] += h;
    xm.data()[i] -= h;
    CHECK(gx.data()[i] == doctest::Approx((probe(net, xp, w) - probe(net, xm, w)) / (2 * h)).epsilon(1e-5));
  }
}

TEST_CASE("backward accumulates") {
  std::mt19937_64 rng(3);
  const Mlp net = Mlp::random({3, 4, 1}, rng);
  Eigen::MatrixXd x = Eigen::MatrixXd::Ones(2, 3);
  Mlp::Cache cache;
  net.forward(x, &cache);
  Mlp once = net.zeros_like(), twice = net.zeros_like();
  const Eigen::MatrixXd g = Eigen::MatrixXd::Ones(2, 1);
  net.backward(cache, g, once);
  net.backward(cache, g, twice);
  net.backward(cache, g, twice);
  CHECK(twice.layers()[0].weight.isApprox(2.0 * once.layers()[0].weight));
}
