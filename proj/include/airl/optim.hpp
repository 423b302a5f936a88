#pragma once

#include <cstdint>
#include <vector>

#include "airl/model.hpp"

namespace airl {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.99;
  double eps = 1e-8;
  double weight_decay = 0.0;  // decoupled
};

class Adam {
 public:
  Adam() = default;
  Adam(std::size_t size, AdamConfig cfg)
      : cfg_(cfg), m_(size, 0.0f), v_(size, 0.0f) {}

  void step(ModelParams& params, const ModelParams& grad, double lr);
  std::int64_t steps() const { return t_; }

 private:
  AdamConfig cfg_;
  std::vector<float> m_, v_;
  std::int64_t t_ = 0;
};

// Scales grad in place so its global L2 norm is at most max_norm (no-op when
// max_norm <= 0). Returns the norm before clipping.
double clip_grad_norm(ModelParams& grad, double max_norm);

// Clamps every parameter to [-c, c].
void clip_weights(ModelParams& params, double c);

}  // namespace airl
