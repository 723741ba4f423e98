#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "cass/common.hpp"

namespace cass {

// View over one named parameter buffer and its gradient accumulator.
template <typename T>
struct ParamView {
    std::string name;
    std::vector<T>* value = nullptr;
    std::vector<T>* grad = nullptr;
};

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

// Adam with bias correction. Moments are kept in double regardless of the
// parameter precision; parameter order must be stable across steps.
template <typename T>
class AdamT {
public:
    explicit AdamT(AdamConfig cfg = {}) : cfg_(cfg) {}

    void step(const std::vector<ParamView<T>>& params, double lr) {
        if (lr <= 0.0) throw ArgumentError("adam: learning rate must be positive");
        if (state_.empty()) {
            state_.resize(params.size());
            for (std::size_t i = 0; i < params.size(); ++i) {
                state_[i].m.assign(params[i].value->size(), 0.0);
                state_[i].v.assign(params[i].value->size(), 0.0);
            }
        } else if (state_.size() != params.size()) {
            throw ArgumentError("adam: parameter list changed between steps");
        }
        ++t_;
        const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
        for (std::size_t i = 0; i < params.size(); ++i) {
            auto& value = *params[i].value;
            const auto& grad = *params[i].grad;
            if (grad.size() != value.size()) {
                throw ArgumentError("adam: grad/value size mismatch for " + params[i].name);
            }
            auto& st = state_[i];
            for (std::size_t j = 0; j < value.size(); ++j) {
                const double g = static_cast<double>(grad[j]);
                if (!std::isfinite(g)) {
                    throw OptimizerError("non-finite gradient in parameter " + params[i].name);
                }
                st.m[j] = cfg_.beta1 * st.m[j] + (1.0 - cfg_.beta1) * g;
                st.v[j] = cfg_.beta2 * st.v[j] + (1.0 - cfg_.beta2) * g * g;
                const double mhat = st.m[j] / bc1;
                const double vhat = st.v[j] / bc2;
                value[j] = static_cast<T>(static_cast<double>(value[j]) -
                                          lr * mhat / (std::sqrt(vhat) + cfg_.epsilon));
            }
        }
    }

    std::int64_t step_count() const { return t_; }

    void reset() {
        state_.clear();
        t_ = 0;
    }

private:
    struct State {
        std::vector<double> m, v;
    };
    AdamConfig cfg_;
    std::vector<State> state_;
    std::int64_t t_ = 0;
};

using Adam = AdamT<float>;

}  // namespace cass
