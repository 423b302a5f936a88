#include "airl/optim.hpp"

#include <algorithm>
#include <cmath>

namespace airl {

void Adam::step(ModelParams& params, const ModelParams& grad, double lr) {
  auto p = params.values();
  auto g = grad.values();
  if (p.size() != m_.size() || g.size() != m_.size()) {
    throw std::invalid_argument("optimizer state does not match parameters");
  }
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  const float b1 = static_cast<float>(cfg_.beta1);
  const float b2 = static_cast<float>(cfg_.beta2);
  const float step = static_cast<float>(lr / bc1);
  const float inv_bc2 = static_cast<float>(1.0 / bc2);
  const float eps = static_cast<float>(cfg_.eps);
  const float decay = static_cast<float>(lr * cfg_.weight_decay);
  for (std::size_t i = 0; i < p.size(); ++i) {
    m_[i] = b1 * m_[i] + (1.0f - b1) * g[i];
    v_[i] = b2 * v_[i] + (1.0f - b2) * g[i] * g[i];
    p[i] -= step * m_[i] / (std::sqrt(v_[i] * inv_bc2) + eps) + decay * p[i];
  }
}

double clip_grad_norm(ModelParams& grad, double max_norm) {
  double sq = 0.0;
  for (float g : grad.values()) sq += static_cast<double>(g) * g;
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const float s = static_cast<float>(max_norm / norm);
    for (float& g : grad.values()) g *= s;
  }
  return norm;
}

void clip_weights(ModelParams& params, double c) {
  const float lim = static_cast<float>(c);
  for (float& v : params.values()) v = std::clamp(v, -lim, lim);
}

}  // namespace airl
