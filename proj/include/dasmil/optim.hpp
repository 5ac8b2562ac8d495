#pragma once

#include <cstdint>
#include <vector>

#include "dasmil/autodiff.hpp"

namespace dasmil {

struct AdamWConfig {
  double lr = 1e-3;
  double weight_decay = 1e-2;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// AdamW with decoupled weight decay:
///   m <- b1 m + (1-b1) g,  v <- b2 v + (1-b2) g^2
///   w <- w - lr * m_hat / (sqrt(v_hat) + eps) - lr * wd * w
/// Moments are keyed by position in the parameter list, which must keep the
/// same order and shapes from step to step. Frozen parameters are skipped.
class AdamW {
 public:
  explicit AdamW(AdamWConfig config = {}) : config_(config) {}

  void step(const ParameterList& params);

  std::uint64_t steps() const { return t_; }
  const AdamWConfig& config() const { return config_; }
  const std::vector<Tensor>& first_moments() const { return m_; }
  const std::vector<Tensor>& second_moments() const { return v_; }

 private:
  AdamWConfig config_;
  std::uint64_t t_ = 0;
  std::vector<Tensor> m_;
  std::vector<Tensor> v_;
};

}  // namespace dasmil
