#pragma once

// Orthographic capsule rasterizer for the toy scene. Depth is measured
// along the camera z axis; pixel (row, col) covers camera-plane point
// ((col - res/2 + 0.5) * s, (row - res/2 + 0.5) * s) with s the footprint
// in mm per pixel. Output images are normalized: value = clamp((depth -
// z_ref) / depth_range, -1, 1), background exactly +1.

#include <Eigen/Dense>

#include "featmap/image.hpp"
#include "featmap/kinematics.hpp"

namespace featmap {

struct CameraView {
    Eigen::Matrix3d world_to_cam = Eigen::Matrix3d::Identity();
    double z_ref_mm = 400.0;  // camera depth of the world origin

    Eigen::Vector3d to_cam(const Eigen::Vector3d& world) const {
        Eigen::Vector3d q = world_to_cam * world;
        q.z() += z_ref_mm;
        return q;
    }
};

// View i rotates about the world y axis by i * separation.
CameraView make_view(double yaw_rad, double z_ref_mm = 400.0);

struct SceneGeometry {
    int res = 32;
    double footprint_mm = 160.0;   // full image width
    double depth_range_mm = 100.0; // normalization half-range
    double mm_per_px() const { return footprint_mm / res; }
};

struct Capsule {
    Eigen::Vector3d a, b;  // camera-space endpoints
    double r;
};

std::vector<Capsule> chain_capsules(const ChainTopology& topo, const ChainState& st,
                                    const CameraView& view);

// Minimum camera depth of the capsule surface along the +z ray through
// (x, y); returns false when the ray misses.
bool capsule_ray_depth(const Capsule& c, double x, double y, double* depth);

// Rasterize an arbitrary capsule list (raw mm depth, far sentinel
// z_ref + depth_range). An empty list renders pure background.
DepthImage render_capsules_raw(const std::vector<Capsule>& caps, const SceneGeometry& geom,
                               double z_ref_mm);

// Pixel (col, row) of a world point; fractional.
Eigen::Vector2d project_px(const Eigen::Vector3d& world, const CameraView& view,
                           const SceneGeometry& geom);

// Raw depth in mm; pixels with no surface hold the far sentinel
// z_ref + depth_range. Throws RenderError when the chain leaves the
// camera footprint.
DepthImage render_raw(const ChainTopology& topo, const ChainState& st, const CameraView& view,
                      const SceneGeometry& geom);

// Normalized rendering (the dataset currency).
DepthImage render_depth(const ChainTopology& topo, const ChainState& st, const CameraView& view,
                        const SceneGeometry& geom);

}  // namespace featmap
