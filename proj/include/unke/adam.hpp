#pragma once

#include <cstdint>
#include <vector>

#include "unke/tensor.hpp"

namespace unke {

struct AdamConfig {
    float beta1 = 0.9f;
    float beta2 = 0.999f;
    float epsilon = 1e-8f;
    float weight_decay = 0.0f;
};

// Adam with bias correction and decoupled weight decay
// (param <- param - lr*wd*param applied before the Adam delta).
class Adam {
public:
    Adam(std::vector<Tensor> params, AdamConfig cfg = {});

    void step(float lr);
    void zero_grad();
    int64_t step_count() const { return step_count_; }
    const AdamConfig& config() const { return cfg_; }

private:
    std::vector<Tensor> params_;
    std::vector<std::vector<float>> m_, v_;
    AdamConfig cfg_;
    int64_t step_count_ = 0;
};

}  // namespace unke
