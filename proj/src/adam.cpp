#include "unke/adam.hpp"

#include <cmath>

namespace unke {

Adam::Adam(std::vector<Tensor> params, AdamConfig cfg)
    : params_(std::move(params)), cfg_(cfg) {
    if (cfg_.weight_decay < 0.0f) throw ContractError("adam: negative weight decay");
    m_.reserve(params_.size());
    v_.reserve(params_.size());
    for (const Tensor& p : params_) {
        m_.emplace_back(static_cast<size_t>(p.numel()), 0.0f);
        v_.emplace_back(static_cast<size_t>(p.numel()), 0.0f);
    }
}

void Adam::step(float lr) {
    if (lr <= 0.0f) throw ContractError("adam: lr must be positive");
    for (const Tensor& p : params_)
        if (!p.has_grad()) throw ContractError("adam: parameter has no gradient");
    ++step_count_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_count_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_count_));
    for (size_t i = 0; i < params_.size(); ++i) {
        Tensor& p = params_[i];
        auto g = p.grad();
        auto d = p.data();
        for (int64_t j = 0; j < p.numel(); ++j) {
            if (cfg_.weight_decay > 0.0f)
                d[j] -= lr * cfg_.weight_decay * d[j];
            float& m = m_[i][static_cast<size_t>(j)];
            float& v = v_[i][static_cast<size_t>(j)];
            m = cfg_.beta1 * m + (1.0f - cfg_.beta1) * g[j];
            v = cfg_.beta2 * v + (1.0f - cfg_.beta2) * g[j] * g[j];
            const double mhat = m / bc1;
            const double vhat = v / bc2;
            d[j] -= static_cast<float>(lr * mhat / (std::sqrt(vhat) + cfg_.epsilon));
        }
    }
}

void Adam::zero_grad() {
    for (Tensor& p : params_) p.zero_grad();
}

}  // namespace unke
