#pragma once

// The "real" domain: a parametric corruption of the synthetic renderer.
// Applied in order: quantize, Gaussian depth noise, pixel dropout to
// background, silhouette erosion, final clamp to [-1, 1]. Deterministic
// per (seed, params).

#include "featmap/image.hpp"

namespace featmap {

struct CorruptionParams {
    double noise_sigma_mm = 4.0;
    double quant_step_mm = 3.0;
    double dropout_prob = 0.02;
    int erode_radius_px = 1;

    void validate() const {
        if (noise_sigma_mm < 0 || quant_step_mm < 0 || dropout_prob < 0 || erode_radius_px < 0)
            throw ConfigError("corruption: parameters must be nonnegative");
        if (dropout_prob > 0.5) throw ConfigError("corruption: dropout probability must be <= 0.5");
    }
};

// depth_range_mm converts the mm-valued parameters into normalized units.
DepthImage corrupt(const DepthImage& img, const CorruptionParams& params, double depth_range_mm,
                   uint64_t seed);

}  // namespace featmap
