#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace safeadapt {

/// Adaptive-moment optimiser (bias-corrected), minimising.
class Adam {
 public:
  Adam() = default;
  Adam(std::size_t n, double lr, double eps = 1e-8, double beta1 = 0.9, double beta2 = 0.999);

  /// params -= lr * m_hat / (sqrt(v_hat) + eps)
  void step(std::span<double> params, std::span<const double> grad);

  void set_lr(double lr) { lr_ = lr; }
  double lr() const { return lr_; }
  std::size_t steps() const { return t_; }

 private:
  double lr_ = 1e-3;
  double eps_ = 1e-8;
  double beta1_ = 0.9;
  double beta2_ = 0.999;
  std::size_t t_ = 0;
  std::vector<double> m_;
  std::vector<double> v_;
};

}  // namespace safeadapt
