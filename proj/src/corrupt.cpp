#include "featmap/corrupt.hpp"

#include <algorithm>
#include <cmath>

namespace featmap {

namespace {
constexpr float kFgThreshold = 1.0f - 1e-6f;
}

DepthImage corrupt(const DepthImage& img, const CorruptionParams& params, double depth_range_mm,
                   uint64_t seed) {
    params.validate();
    Rng rng(seed);
    DepthImage out = img;
    const int res = img.res;

    std::vector<uint8_t> fg(img.px.size());
    for (size_t i = 0; i < img.px.size(); ++i) fg[i] = img.px[i] < kFgThreshold ? 1 : 0;

    if (params.quant_step_mm > 0.0) {
        const double step = params.quant_step_mm / depth_range_mm;
        for (size_t i = 0; i < out.px.size(); ++i)
            if (fg[i]) out.px[i] = float(std::round(out.px[i] / step) * step);
    }

    if (params.noise_sigma_mm > 0.0) {
        const double sigma = params.noise_sigma_mm / depth_range_mm;
        for (size_t i = 0; i < out.px.size(); ++i)
            if (fg[i]) out.px[i] += float(rng.normal(0.0, sigma));
    }

    if (params.dropout_prob > 0.0) {
        for (size_t i = 0; i < out.px.size(); ++i)
            if (fg[i] && rng.bernoulli(params.dropout_prob)) {
                out.px[i] = kBackground;
                fg[i] = 0;
            }
    }

    if (params.erode_radius_px > 0) {
        const int r = params.erode_radius_px;
        std::vector<uint8_t> keep(fg.size(), 0);
        for (int row = 0; row < res; ++row) {
            for (int col = 0; col < res; ++col) {
                if (!fg[size_t(row) * res + col]) continue;
                // survives only if the full Chebyshev-r neighborhood is solid
                bool solid = true;
                for (int dr = -r; dr <= r && solid; ++dr) {
                    for (int dc = -r; dc <= r; ++dc) {
                        const int rr = row + dr, cc = col + dc;
                        if (rr < 0 || rr >= res || cc < 0 || cc >= res ||
                            !fg[size_t(rr) * res + cc]) {
                            solid = false;
                            break;
                        }
                    }
                }
                keep[size_t(row) * res + col] = solid ? 1 : 0;
            }
        }
        for (size_t i = 0; i < out.px.size(); ++i)
            if (fg[i] && !keep[i]) out.px[i] = kBackground;
    }

    for (float& v : out.px) v = std::clamp(v, -1.0f, 1.0f);
    return out;
}

}  // namespace featmap
