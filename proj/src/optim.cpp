#include "dasmil/optim.hpp"

#include <cmath>

#include "dasmil/errors.hpp"

namespace dasmil {

void AdamW::step(const ParameterList& params) {
  if (m_.empty()) {
    for (const Parameter* p : params) {
      m_.emplace_back(p->value.shape(), 0.0);
      v_.emplace_back(p->value.shape(), 0.0);
    }
  }
  if (params.size() != m_.size())
    throw DimensionError("AdamW: parameter list changed size between steps");
  for (std::size_t k = 0; k < params.size(); ++k) {
    const Parameter& p = *params[k];
    if (p.grad.shape() != p.value.shape() || m_[k].shape() != p.value.shape())
      throw DimensionError("AdamW: shape mismatch for '" + p.name + "': value " + shape_string(p.value.shape()) +
                           ", grad " + shape_string(p.grad.shape()) + ", state " + shape_string(m_[k].shape()));
  }

  ++t_;
  const auto& c = config_;
  const double bias1 = 1.0 - std::pow(c.beta1, static_cast<double>(t_));
  const double bias2 = 1.0 - std::pow(c.beta2, static_cast<double>(t_));
  for (std::size_t k = 0; k < params.size(); ++k) {
    Parameter& p = *params[k];
    if (!p.trainable) continue;
    auto w = p.value.data();
    auto g = p.grad.data();
    auto m = m_[k].data();
    auto v = v_[k].data();
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g[i];
      v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g[i] * g[i];
      const double m_hat = m[i] / bias1;
      const double v_hat = v[i] / bias2;
      w[i] = w[i] - c.lr * m_hat / (std::sqrt(v_hat) + c.eps) - c.lr * c.weight_decay * w[i];
    }
  }
}

}  // namespace dasmil
