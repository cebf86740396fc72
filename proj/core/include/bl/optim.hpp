#pragma once

#include <cstddef>
#include <vector>

#include "bl/tensor_io.hpp"

namespace bl {

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;  // decoupled
};

/// Adam over a fixed parameter list. Tensors without an accumulated gradient
/// are left untouched on that step.
class Adam {
 public:
  Adam(NamedTensors params, AdamConfig cfg);

  void step();
  void zero_grad();
  [[nodiscard]] const NamedTensors& parameters() const { return params_; }
  [[nodiscard]] std::size_t steps() const { return t_; }

 private:
  NamedTensors params_;
  AdamConfig cfg_;
  std::vector<std::vector<double>> m_, v_;
  std::size_t t_ = 0;
};

}  // namespace bl
