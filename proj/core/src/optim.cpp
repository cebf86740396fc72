#include "bl/optim.hpp"

#include <cmath>

#include "bl/error.hpp"

namespace bl {

Adam::Adam(NamedTensors params, AdamConfig cfg) : params_(std::move(params)), cfg_(cfg) {
  if (!(cfg_.learning_rate > 0) || !(cfg_.beta1 >= 0 && cfg_.beta1 < 1) || !(cfg_.beta2 >= 0 && cfg_.beta2 < 1) ||
      !(cfg_.eps > 0) || !(cfg_.weight_decay >= 0)) {
    throw Error(ErrorCode::BadConfig, "adam: invalid hyperparameters");
  }
  for (const auto& [name, t] : params_) {
    if (!t.requires_grad() || !t.is_leaf()) throw Error(ErrorCode::BadConfig, "adam: '" + name + "' is not a trainable leaf");
    m_.emplace_back(t.numel(), 0.0);
    v_.emplace_back(t.numel(), 0.0);
  }
}

void Adam::step() {
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (std::size_t p = 0; p < params_.size(); ++p) {
    Tensor& t = params_[p].second;
    if (!t.has_grad()) continue;
    const auto g = t.grad();
    auto w = t.mutable_data();
    auto& m = m_[p];
    auto& v = v_[p];
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i];
      v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
      const double mhat = m[i] / bc1, vhat = v[i] / bc2;
      w[i] -= cfg_.learning_rate * (mhat / (std::sqrt(vhat) + cfg_.eps) + cfg_.weight_decay * w[i]);
    }
  }
}

void Adam::zero_grad() {
  for (auto& [name, t] : params_) t.zero_grad();
}

}  // namespace bl
