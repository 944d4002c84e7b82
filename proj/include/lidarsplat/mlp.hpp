#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <random>
#include <vector>

namespace lidarsplat {

struct DenseLayer {
  Eigen::MatrixXd weight;  // fan_in x fan_out
  Eigen::RowVectorXd bias;
};

/// Small fully connected network evaluated on row batches. Hidden layers
/// use rectifiers, the last layer is linear.
class Mlp {
 public:
  Mlp() = default;
  /// Zero-initialized network with the given layer widths (input first).
  explicit Mlp(const std::vector<int>& widths);

  /// Weights and biases uniform in +-1/sqrt(fan_in).
  static Mlp random(const std::vector<int>& widths, std::mt19937_64& rng);

  struct Cache {
    std::vector<Eigen::MatrixXd> inputs;  // input to each layer
  };

  Eigen::MatrixXd forward(const Eigen::MatrixXd& input, Cache* cache = nullptr) const;

  /// Accumulates parameter gradients into `grads` and returns the gradient
  /// with respect to the input batch.
  Eigen::MatrixXd backward(const Cache& cache, const Eigen::MatrixXd& grad_output,
                           Mlp& grads) const;

  std::vector<int> widths() const;
  std::size_t parameter_count() const;
  void set_zero();
  Mlp zeros_like() const { return Mlp(widths()); }

  std::vector<DenseLayer>& layers() { return layers_; }
  const std::vector<DenseLayer>& layers() const { return layers_; }

  bool operator==(const Mlp& other) const;

 private:
  std::vector<DenseLayer> layers_;
};

}  // namespace lidarsplat
