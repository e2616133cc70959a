#pragma once

#include <vector>

#include "featmap/common.hpp"

namespace featmap {

// Normalized depth values in [-1, 1]; background is exactly +1.
constexpr float kBackground = 1.0f;

struct DepthImage {
    int res = 0;
    std::vector<float> px;  // row-major res*res

    DepthImage() = default;
    explicit DepthImage(int r, float fill = kBackground) : res(r), px(size_t(r) * r, fill) {}

    float& at(int row, int col) { return px[size_t(row) * res + col]; }
    float at(int row, int col) const { return px[size_t(row) * res + col]; }

    bool operator==(const DepthImage&) const = default;
};

// J joint positions, flattened [x0,y0,z0, x1,...] in millimeters.
struct Pose {
    int joints = 0;
    std::vector<float> xyz;

    Pose() = default;
    explicit Pose(int j) : joints(j), xyz(size_t(j) * 3, 0.0f) {}

    bool operator==(const Pose&) const = default;
};

}  // namespace featmap
