#include "lidarsplat/mlp.hpp"

#include <cmath>
#include <stdexcept>

namespace lidarsplat {

Mlp::Mlp(const std::vector<int>& widths) {
  if (widths.size() < 2) throw std::invalid_argument("network needs at least two widths");
  for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
    layers_.push_back({Eigen::MatrixXd::Zero(widths[i], widths[i + 1]),
                       Eigen::RowVectorXd::Zero(widths[i + 1])});
  }
}

Mlp Mlp::random(const std::vector<int>& widths, std::mt19937_64& rng) {
  Mlp net(widths);
  for (auto& layer : net.layers_) {
    double bound = 1.0 / std::sqrt(static_cast<double>(layer.weight.rows()));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (Eigen::Index j = 0; j < layer.weight.cols(); ++j)
      for (Eigen::Index i = 0; i < layer.weight.rows(); ++i) layer.weight(i, j) = dist(rng);
    for (Eigen::Index j = 0; j < layer.bias.size(); ++j) layer.bias(j) = dist(rng);
  }
  return net;
}

Eigen::MatrixXd Mlp::forward(const Eigen::MatrixXd& input, Cache* cache) const {
  if (cache) cache->inputs.clear();
  Eigen::MatrixXd x = input;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const auto& layer = layers_[l];
    Eigen::MatrixXd y = x * layer.weight;
    y.rowwise() += layer.bias;
    if (l + 1 < layers_.size()) y = y.cwiseMax(0.0);
    if (cache) cache->inputs.push_back(std::move(x));
    x = std::move(y);
  }
  return x;
}

Eigen::MatrixXd Mlp::backward(const Cache& cache, const Eigen::MatrixXd& grad_output,
                              Mlp& grads) const {
  Eigen::MatrixXd g = grad_output;
  for (std::size_t l = layers_.size(); l-- > 0;) {
    const auto& layer = layers_[l];
    const auto& x = cache.inputs[l];
    grads.layers_[l].weight.noalias() += x.transpose() * g;
    grads.layers_[l].bias += g.colwise().sum();
    Eigen::MatrixXd gx = g * layer.weight.transpose();
    if (l > 0) {
      // x is the rectified output of the previous layer.
      gx = (x.array() > 0.0).select(gx, 0.0);
    }
    g = std::move(gx);
  }
  return g;
}

std::vector<int> Mlp::widths() const {
  std::vector<int> w;
  if (layers_.empty()) return w;
  w.push_back(static_cast<int>(layers_.front().weight.rows()));
  for (const auto& layer : layers_) w.push_back(static_cast<int>(layer.weight.cols()));
  return w;
}

std::size_t Mlp::parameter_count() const {
  std::size_t n = 0;
  for (const auto& layer : layers_) n += layer.weight.size() + layer.bias.size();
  return n;
}

void Mlp::set_zero() {
  for (auto& layer : layers_) {
    layer.weight.setZero();
    layer.bias.setZero();
  }
}

bool Mlp::operator==(const Mlp& other) const {
  if (layers_.size() != other.layers_.size()) return false;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const auto& a = layers_[l];
    const auto& b = other.layers_[l];
    if (a.weight.rows() != b.weight.rows() || a.weight.cols() != b.weight.cols()) return false;
    if (a.weight != b.weight || a.bias != b.bias) return false;
  }
  return true;
}

}  // namespace lidarsplat
