#pragma once

// Articulated "toy hand": a palm point with F planar-articulated finger
// chains. Every articulation rotates about the local z axis; the whole
// chain then gets a global orientation and base offset. Joint order is
// palm first, then fingers in declaration order, base to tip.

#include <Eigen/Dense>

#include <array>
#include <vector>

#include "featmap/common.hpp"
#include "featmap/image.hpp"

namespace featmap {

struct FingerSpec {
    double base_yaw_rad = 0.0;           // fixed mounting angle about z
    std::vector<double> seg_len_mm;      // one entry per segment
};

struct ChainTopology {
    std::vector<FingerSpec> fingers;
    double segment_radius_mm = 7.0;
    double palm_radius_mm = 12.0;
    double angle_min_rad = -0.35;        // articulation limits, shared
    double angle_max_rad = 1.75;

    int joint_count() const {
        int j = 1;
        for (const auto& f : fingers) j += int(f.seg_len_mm.size());
        return j;
    }
};

struct ChainState {
    std::array<double, 3> palm_base_mm{0.0, 0.0, 0.0};
    std::array<double, 3> global_euler_rad{0.0, 0.0, 0.0};  // Rz*Ry*Rx order
    std::vector<std::vector<double>> angles_rad;             // [finger][segment]
};

// Ranges for uniform pose sampling; both domains share one sampler.
struct ChainSampler {
    double base_offset_mm = 8.0;         // palm base uniform in a cube
    double euler_x_max_rad = 0.5;
    double euler_y_max_rad = 0.5;
    double euler_z_max_rad = 1.0;
};

inline Eigen::Matrix3d euler_zyx(const std::array<double, 3>& e) {
    using Eigen::AngleAxisd;
    using Eigen::Vector3d;
    return (AngleAxisd(e[2], Vector3d::UnitZ()) * AngleAxisd(e[1], Vector3d::UnitY()) *
            AngleAxisd(e[0], Vector3d::UnitX()))
        .toRotationMatrix();
}

// World joint positions in millimeters, palm first.
inline std::vector<Eigen::Vector3d> forward_kinematics(const ChainTopology& topo,
                                                       const ChainState& st) {
    if (st.angles_rad.size() != topo.fingers.size())
        throw DataError("forward_kinematics: angle row count " +
                        std::to_string(st.angles_rad.size()) + " != finger count " +
                        std::to_string(topo.fingers.size()));
    const Eigen::Matrix3d rot = euler_zyx(st.global_euler_rad);
    const Eigen::Vector3d base(st.palm_base_mm[0], st.palm_base_mm[1], st.palm_base_mm[2]);

    std::vector<Eigen::Vector3d> joints;
    joints.reserve(size_t(topo.joint_count()));
    joints.push_back(base);
    for (size_t f = 0; f < topo.fingers.size(); ++f) {
        const FingerSpec& fs = topo.fingers[f];
        if (st.angles_rad[f].size() != fs.seg_len_mm.size())
            throw DataError("forward_kinematics: finger " + std::to_string(f) +
                            " has wrong segment count");
        double theta = fs.base_yaw_rad;
        Eigen::Vector3d p(0, 0, 0);
        for (size_t s = 0; s < fs.seg_len_mm.size(); ++s) {
            const double a = st.angles_rad[f][s];
            if (a < topo.angle_min_rad || a > topo.angle_max_rad)
                throw DataError("forward_kinematics: angle out of range at finger " +
                                std::to_string(f) + " segment " + std::to_string(s) + " (" +
                                std::to_string(a) + ")");
            theta += a;
            p += fs.seg_len_mm[s] * Eigen::Vector3d(std::cos(theta), std::sin(theta), 0.0);
            joints.push_back(base + rot * p);
        }
    }
    return joints;
}

inline ChainState sample_chain(const ChainTopology& topo, const ChainSampler& sp, Rng& rng) {
    ChainState st;
    for (auto& c : st.palm_base_mm) c = rng.uniform(-sp.base_offset_mm, sp.base_offset_mm);
    st.global_euler_rad = {rng.uniform(-sp.euler_x_max_rad, sp.euler_x_max_rad),
                           rng.uniform(-sp.euler_y_max_rad, sp.euler_y_max_rad),
                           rng.uniform(-sp.euler_z_max_rad, sp.euler_z_max_rad)};
    st.angles_rad.resize(topo.fingers.size());
    for (size_t f = 0; f < topo.fingers.size(); ++f) {
        st.angles_rad[f].resize(topo.fingers[f].seg_len_mm.size());
        for (auto& a : st.angles_rad[f]) a = rng.uniform(topo.angle_min_rad, topo.angle_max_rad);
    }
    return st;
}

// Default desk-scale scene: three two-segment fingers fanned about the
// palm, J = 7.
inline ChainTopology default_topology(int fingers = 3, int segments = 2) {
    ChainTopology topo;
    topo.fingers.resize(size_t(fingers));
    for (int f = 0; f < fingers; ++f) {
        FingerSpec& fs = topo.fingers[size_t(f)];
        fs.base_yaw_rad = (fingers > 1 ? (double(f) / (fingers - 1) - 0.5) : 0.0) * 1.4;
        fs.seg_len_mm.assign(size_t(segments), 0.0);
        for (int s = 0; s < segments; ++s) fs.seg_len_mm[size_t(s)] = s == 0 ? 28.0 : 22.0;
    }
    return topo;
}

}  // namespace featmap
