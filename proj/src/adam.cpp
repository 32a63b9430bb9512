#include "safeadapt/adam.hpp"

#include <cmath>

#include "safeadapt/errors.hpp"

namespace safeadapt {

Adam::Adam(std::size_t n, double lr, double eps, double beta1, double beta2)
    : lr_(lr), eps_(eps), beta1_(beta1), beta2_(beta2), m_(n, 0.0), v_(n, 0.0) {}

void Adam::step(std::span<double> params, std::span<const double> grad) {
  if (params.size() != m_.size() || grad.size() != m_.size()) {
    throw DimensionError("optimiser state does not match parameter size");
  }
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * grad[i];
    v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * grad[i] * grad[i];
    params[i] -= lr_ * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + eps_);
  }
}

}  // namespace safeadapt
