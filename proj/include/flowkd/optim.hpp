#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "flowkd/tensor.hpp"

namespace flowkd {

struct OptimizerConfig {
    enum class Kind { Adam, Sgd };
    Kind kind = Kind::Adam;
    double learning_rate = 0.001;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    uint64_t seed = 0;

    void validate() const {
        if (!(learning_rate > 0)) throw std::invalid_argument("optimizer: learning rate must be positive");
        if (!(beta1 > 0 && beta1 < 1) || !(beta2 > 0 && beta2 < 1))
            throw std::invalid_argument("optimizer: betas must lie in (0,1)");
    }
};

// Holds first/second moment state per parameter block; step() applies one
// update to every attached parameter from its accumulated gradient.
template <class T>
class Optimizer {
public:
    Optimizer(OptimizerConfig cfg, std::vector<TensorT<T>> params)
        : cfg_(cfg), params_(std::move(params)) {
        cfg_.validate();
        m_.resize(params_.size());
        v_.resize(params_.size());
        for (size_t i = 0; i < params_.size(); ++i) {
            m_[i].assign(params_[i].numel(), T(0));
            v_[i].assign(params_[i].numel(), T(0));
        }
    }

    int64_t step_count() const { return step_; }
    const std::vector<TensorT<T>>& params() const { return params_; }

    void zero_grad() {
        for (auto& p : params_) p.zero_grad();
    }

    void step() {
        if (params_.empty()) throw std::invalid_argument("optimizer: no parameters attached");
        for (auto& p : params_)
            if (p.grad().size() != p.numel())
                throw std::invalid_argument("optimizer: gradients not populated");
        ++step_;
        if (cfg_.kind == OptimizerConfig::Kind::Sgd) {
            const T lr = static_cast<T>(cfg_.learning_rate);
            for (auto& p : params_) {
                auto& val = p.value_mut();
                const auto& g = p.grad();
                for (size_t i = 0; i < val.size(); ++i) val[i] -= lr * g[i];
            }
            return;
        }
        const T lr = static_cast<T>(cfg_.learning_rate);
        const T b1 = static_cast<T>(cfg_.beta1);
        const T b2 = static_cast<T>(cfg_.beta2);
        const T eps = static_cast<T>(cfg_.epsilon);
        const T bc1 = T(1) - static_cast<T>(std::pow(cfg_.beta1, static_cast<double>(step_)));
        const T bc2 = T(1) - static_cast<T>(std::pow(cfg_.beta2, static_cast<double>(step_)));
        for (size_t k = 0; k < params_.size(); ++k) {
            auto& val = params_[k].value_mut();
            const auto& g = params_[k].grad();
            auto& m = m_[k];
            auto& v = v_[k];
            for (size_t i = 0; i < val.size(); ++i) {
                m[i] = b1 * m[i] + (T(1) - b1) * g[i];
                v[i] = b2 * v[i] + (T(1) - b2) * g[i] * g[i];
                const T mhat = m[i] / bc1;
                const T vhat = v[i] / bc2;
                val[i] -= lr * mhat / (std::sqrt(vhat) + eps);
            }
        }
    }

private:
    OptimizerConfig cfg_;
    std::vector<TensorT<T>> params_;
    std::vector<std::vector<T>> m_, v_;
    int64_t step_ = 0;
};

// Single Adam update applied to a parameter registry with fresh state.
template <class T>
void adam_step(const OptimizerConfig& cfg, std::vector<TensorT<T>>& params) {
    Optimizer<T> opt(cfg, params);
    opt.step();
}

// ---------------------------------------------------------------------------
// gradient checking (64-bit only)

struct GradCheckBlock {
    std::string name;
    double max_rel_error = 0.0;
};

struct GradCheckReport {
    std::vector<GradCheckBlock> blocks;
    double max_rel_error = 0.0;
    double tolerance = 1e-4;
    bool passed = true;
};

// Central finite differences against the tape, per parameter block.
// Relative error uses max(|analytic| + |numeric|, 1e-6) in the denominator
// so that near-zero gradient pairs do not blow up on difference noise.
inline GradCheckReport gradient_check(const std::function<TensorT<double>()>& lossfn,
                                      const std::vector<std::pair<std::string, TensorT<double>>>& params,
                                      double step = 1e-5, double tol = 1e-4) {
    GradCheckReport report;
    report.tolerance = tol;

    for (auto& [name, p] : params) const_cast<TensorT<double>&>(p).zero_grad();
    auto loss = lossfn();
    backward(loss);

    std::vector<std::vector<double>> analytic;
    analytic.reserve(params.size());
    for (auto& [name, p] : params) analytic.push_back(p.grad());

    for (size_t k = 0; k < params.size(); ++k) {
        auto p = params[k].second;
        GradCheckBlock block;
        block.name = params[k].first;
        auto& val = p.value_mut();
        for (size_t i = 0; i < val.size(); ++i) {
            const double orig = val[i];
            val[i] = orig + step;
            const double fp = lossfn().item();
            val[i] = orig - step;
            const double fm = lossfn().item();
            val[i] = orig;
            const double numeric = (fp - fm) / (2.0 * step);
            const double a = analytic[k][i];
            const double denom = std::max(std::abs(a) + std::abs(numeric), 1e-6);
            block.max_rel_error = std::max(block.max_rel_error, std::abs(a - numeric) / denom);
        }
        report.max_rel_error = std::max(report.max_rel_error, block.max_rel_error);
        report.blocks.push_back(std::move(block));
    }
    report.passed = report.max_rel_error < tol;
    return report;
}

}  // namespace flowkd
