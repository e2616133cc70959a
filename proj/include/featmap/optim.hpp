#pragma once

// Adam with the warm-up-then-exponential-decay learning-rate schedule:
//   eta_e = 0.33^(2 - floor(e/2))  for e < 4
//   eta_e = exp(-gamma * e)        otherwise
// The schedule is intentionally discontinuous at e = 3 -> 4
// (0.33 -> exp(-4 gamma)).

#include <cmath>
#include <set>

#include "featmap/nets.hpp"

namespace featmap {

struct OptimConfig {
    double alpha0 = 3.3e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double decay_gamma = 0.04;
    int batch = 64;

    void validate() const {
        if (alpha0 <= 0 || beta1 <= 0 || beta1 >= 1 || beta2 <= 0 || beta2 >= 1 || eps <= 0 ||
            decay_gamma <= 0 || batch <= 0)
            throw ConfigError("optimizer config: values out of range");
    }
};

inline double lr_scale(int epoch, double gamma = 0.04) {
    if (epoch < 0) throw ConfigError("lr_at: epoch must be >= 0");
    if (epoch < 4) return std::pow(0.33, 2 - epoch / 2);
    return std::exp(-gamma * epoch);
}

inline double lr_at(int epoch, const OptimConfig& cfg) {
    return cfg.alpha0 * lr_scale(epoch, cfg.decay_gamma);
}

template <typename T>
class Adam {
public:
    Adam(const OptimConfig& cfg, std::set<NetId> owners) : cfg_(cfg), owners_(std::move(owners)) {
        cfg_.validate();
    }

    uint64_t t() const { return t_; }
    void set_t(uint64_t t) { t_ = t; }

    // One update over all owned parameters using gradients accumulated on
    // the tape. Validates every gradient before mutating anything, so a
    // non-finite gradient aborts with the parameters still intact.
    void step(ParamStore<T>& store, Tape<T>& tape, double lr) {
        for (int i = 0; i < store.count(); ++i) {
            auto& e = store.entry(i);
            if (e.kind != ParamStore<T>::Kind::Param || owners_.count(e.owner) == 0) continue;
            const std::vector<T>& g = tape.grad(store.var(tape, i).id);
            for (T v : g) {
                if (!std::isfinite(double(v)))
                    throw DivergenceError("non-finite gradient in parameter '" + e.name + "'");
            }
        }

        ++t_;
        const T b1 = T(cfg_.beta1), b2 = T(cfg_.beta2);
        const T bc1 = T(1) - T(std::pow(cfg_.beta1, double(t_)));
        const T bc2 = T(1) - T(std::pow(cfg_.beta2, double(t_)));
        for (int i = 0; i < store.count(); ++i) {
            auto& e = store.entry(i);
            if (e.kind != ParamStore<T>::Kind::Param || owners_.count(e.owner) == 0) continue;
            const std::vector<T>& g = tape.grad(store.var(tape, i).id);
            if (e.adam_m.empty()) {
                e.adam_m.assign(e.value.size(), T(0));
                e.adam_v.assign(e.value.size(), T(0));
            }
            for (size_t j = 0; j < e.value.size(); ++j) {
                e.adam_m[j] = b1 * e.adam_m[j] + (T(1) - b1) * g[j];
                e.adam_v[j] = b2 * e.adam_v[j] + (T(1) - b2) * g[j] * g[j];
                const T mhat = e.adam_m[j] / bc1;
                const T vhat = e.adam_v[j] / bc2;
                e.value[j] -= T(lr) * mhat / (std::sqrt(vhat) + T(cfg_.eps));
            }
        }
    }

    void reset_state(ParamStore<T>& store) {
        t_ = 0;
        for (int i = 0; i < store.count(); ++i) {
            auto& e = store.entry(i);
            if (e.kind != ParamStore<T>::Kind::Param || owners_.count(e.owner) == 0) continue;
            e.adam_m.clear();
            e.adam_v.clear();
        }
    }

    const std::set<NetId>& owners() const { return owners_; }

private:
    OptimConfig cfg_;
    std::set<NetId> owners_;
    uint64_t t_ = 0;
};

}  // namespace featmap
