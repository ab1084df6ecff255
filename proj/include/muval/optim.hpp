#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "muval/autodiff.hpp"
#include "muval/errors.hpp"
#include "muval/tensor.hpp"

namespace muval {

// Exponential decay applied at each epoch boundary: lr0 * gamma^epoch.
inline double lr_schedule(double lr0, double gamma, int epoch) {
    if (epoch < 0) throw ContractError("epoch must be non-negative");
    return lr0 * std::pow(gamma, epoch);
}

struct AdamWConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
};

// Decoupled-weight-decay Adam. Moments are kept in double so the update is
// identical between the float and double model instantiations up to storage
// rounding of the parameters themselves.
template <class F>
class AdamW {
public:
    explicit AdamW(const AdamWConfig& cfg = {}) : cfg_(cfg) {}

    const AdamWConfig& config() const { return cfg_; }
    std::int64_t steps() const { return t_; }

    // theta <- theta - lr * mhat / (sqrt(vhat) + eps) - lr * lambda * theta
    void step(ParamSet<F>& params, const GradRecord<F>& grads, double lr) {
        if (t_ == 0) {
            m_.resize(params.size());
            v_.resize(params.size());
            for (std::size_t i = 0; i < params.size(); ++i) {
                m_[i].assign(static_cast<std::size_t>(params.value(i).numel()), 0.0);
                v_[i].assign(static_cast<std::size_t>(params.value(i).numel()), 0.0);
            }
        }
        ++t_;
        const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
        for (std::size_t i = 0; i < params.size(); ++i) {
            const std::string& name = params.names()[i];
            Tensor<F>& theta = params.value(i);
            const Tensor<F>& g = grads.grads.at(name);
            if (!g.same_shape(theta))
                throw DimensionError("gradient shape mismatch for parameter " + name);
            if (!g.all_finite()) throw NumericError("non-finite gradient for parameter " + name);
            auto& m = m_[i];
            auto& v = v_[i];
            for (std::int64_t j = 0; j < theta.numel(); ++j) {
                const double gj = static_cast<double>(g[j]);
                m[static_cast<std::size_t>(j)] =
                    cfg_.beta1 * m[static_cast<std::size_t>(j)] + (1.0 - cfg_.beta1) * gj;
                v[static_cast<std::size_t>(j)] =
                    cfg_.beta2 * v[static_cast<std::size_t>(j)] + (1.0 - cfg_.beta2) * gj * gj;
                const double mhat = m[static_cast<std::size_t>(j)] / bc1;
                const double vhat = v[static_cast<std::size_t>(j)] / bc2;
                const double th = static_cast<double>(theta[j]);
                theta[j] = static_cast<F>(th - lr * mhat / (std::sqrt(vhat) + cfg_.eps) -
                                          lr * cfg_.weight_decay * th);
            }
        }
    }

private:
    AdamWConfig cfg_;
    std::int64_t t_ = 0;
    std::vector<std::vector<double>> m_;
    std::vector<std::vector<double>> v_;
};

}  // namespace muval
