#pragma once

// The five loss terms and their weighted composite. All reductions are
// sums over the batch, matching the formulation the weights were
// calibrated for; trainers pass scale = 64 / batch when the batch size
// differs from 64.

#include "featmap/autodiff.hpp"

namespace featmap {

template <typename T>
struct LossWeights {
    T lambda_c = T(0.2);
    T lambda_g = T(1e-4);
    T lambda_m = T(1e-5);

    void validate() const {
        if (lambda_c < T(0) || lambda_g < T(0) || lambda_m < T(0))
            throw ConfigError("loss weights must be nonnegative");
    }
};

// LSGAN targets: real 1, synthetic 0.
template <typename T>
struct DiscriminatorTargets {
    static constexpr T real = T(1);
    static constexpr T synth = T(0);
};

// sum_k ||y_k - yhat_k||^2 over labeled samples
template <typename T>
Var<T> pose_loss(Var<T> pred, Var<T> target) {
    return l2_norm_sq(sub(target, pred));
}

// sum_{k in C} ||z_k - zhat_k||^2; callers pass the synthetic latent as a
// constant (detached) target unless configured otherwise
template <typename T>
Var<T> correspondence_loss(Var<T> mapped, Var<T> target) {
    return l2_norm_sq(sub(target, mapped));
}

// sum_k ||x_k - xhat_k||_1, elementwise absolute sum
template <typename T>
Var<T> view_loss(Var<T> pred, Var<T> target) {
    return sum(abs_op(sub(target, pred)));
}

// 1/2 sum_real (lhat - 1)^2 + 1/2 sum_synth (lhat - 0)^2
template <typename T>
Var<T> discriminator_loss(Var<T> lhat_real, Var<T> lhat_synth) {
    Tape<T>& t = *lhat_real.tape;
    Var<T> ones = t.constant(lhat_real.shape(),
                             std::vector<T>(size_t(numel(lhat_real.shape())),
                                            DiscriminatorTargets<T>::real));
    Var<T> real_part = l2_norm_sq(sub(lhat_real, ones));
    Var<T> synth_part = l2_norm_sq(lhat_synth);  // target is exactly 0
    return scalar_mul(add(real_part, synth_part), T(0.5));
}

// 1/2 sum_real (lhat - l_s)^2: real samples pushed toward the synthetic
// label; independent of synthetic samples entirely
template <typename T>
Var<T> mapper_adversarial_loss(Var<T> lhat_real) {
    return scalar_mul(l2_norm_sq(lhat_real), T(0.5));
}

// l = l_p + lambda_c l_c + lambda_g l_g + lambda_m l_m, scaled. l_h is
// optimized separately by the discriminator step and never enters here.
// Invalid (default-constructed) vars mark inactive terms.
template <typename T>
Var<T> composite_loss(Tape<T>& t, Var<T> lp, Var<T> lc, Var<T> lg, Var<T> lm,
                      const LossWeights<T>& w, T scale = T(1)) {
    Var<T> total = lp.valid() ? lp : t.scalar(T(0));
    if (lc.valid()) total = add(total, scalar_mul(lc, w.lambda_c));
    if (lg.valid()) total = add(total, scalar_mul(lg, w.lambda_g));
    if (lm.valid()) total = add(total, scalar_mul(lm, w.lambda_m));
    return scale == T(1) ? total : scalar_mul(total, scale);
}

}  // namespace featmap
