#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "diffrec/nn.hpp"

namespace diffrec {

// Adam with decoupled weight decay: parameters are scaled by (1 - lr*wd)
// before the bias-corrected adaptive update.
template <class T>
class AdamW {
  public:
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;

    AdamW() = default;
    AdamW(double lr_, double weight_decay_) : lr(lr_), weight_decay(weight_decay_) {}

    int64_t step_count() const { return step_; }

    void step(const ParamList<T>& params) {
        if (m_.empty()) {
            for (const auto& pr : params) {
                m_.emplace_back(pr.p->w.shape);
                v_.emplace_back(pr.p->w.shape);
            }
        }
        if (m_.size() != params.size()) {
            throw std::invalid_argument("optimizer: parameter list changed size");
        }
        ++step_;
        const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step_));
        const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step_));
        const T decay = static_cast<T>(1.0 - lr * weight_decay);
        for (size_t i = 0; i < params.size(); ++i) {
            Tensor<T>& w = params[i].p->w;
            const Tensor<T>& g = params[i].p->g;
            Tensor<T>& m = m_[i];
            Tensor<T>& v = v_[i];
            if (w.size() != g.size() || w.size() != m.size()) {
                throw std::invalid_argument("optimizer: shape mismatch for " + params[i].name);
            }
            for (int64_t j = 0; j < w.size(); ++j) {
                if (weight_decay != 0.0) w[j] *= decay;
                const double gj = g[j];
                m[j] = static_cast<T>(beta1 * m[j] + (1.0 - beta1) * gj);
                v[j] = static_cast<T>(beta2 * v[j] + (1.0 - beta2) * gj * gj);
                const double mhat = m[j] / bc1;
                const double vhat = v[j] / bc2;
                w[j] -= static_cast<T>(lr * mhat / (std::sqrt(vhat) + eps));
            }
        }
    }

  private:
    int64_t step_ = 0;
    std::vector<Tensor<T>> m_, v_;
};

}  // namespace diffrec
