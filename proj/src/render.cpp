#include "featmap/render.hpp"

#include <algorithm>
#include <cmath>

namespace featmap {

CameraView make_view(double yaw_rad, double z_ref_mm) {
    CameraView v;
    v.world_to_cam =
        Eigen::AngleAxisd(yaw_rad, Eigen::Vector3d::UnitY()).toRotationMatrix().transpose();
    v.z_ref_mm = z_ref_mm;
    return v;
}

std::vector<Capsule> chain_capsules(const ChainTopology& topo, const ChainState& st,
                                    const CameraView& view) {
    const std::vector<Eigen::Vector3d> joints = forward_kinematics(topo, st);
    std::vector<Capsule> caps;
    caps.reserve(joints.size());
    const Eigen::Vector3d palm = view.to_cam(joints[0]);
    caps.push_back({palm, palm, topo.palm_radius_mm});
    size_t j = 1;
    for (const FingerSpec& f : topo.fingers) {
        Eigen::Vector3d prev = palm;
        for (size_t s = 0; s < f.seg_len_mm.size(); ++s, ++j) {
            const Eigen::Vector3d cur = view.to_cam(joints[j]);
            caps.push_back({prev, cur, topo.segment_radius_mm});
            prev = cur;
        }
    }
    return caps;
}

bool capsule_ray_depth(const Capsule& c, double x, double y, double* depth) {
    // The capsule is the union of spheres centered on segment ab. For the
    // ray (x, y, t) the sphere at parameter u contributes depth
    //   f(u) = cz(u) - sqrt(r^2 - rho^2(u)),   rho^2(u) <= r^2,
    // with rho the planar distance to the center. f is minimized over a
    // finite candidate set: segment ends, the closest-approach point,
    // stationary points of f, and the silhouette roots of rho^2 = r^2.
    const double dx = c.b.x() - c.a.x();
    const double dy = c.b.y() - c.a.y();
    const double dz = c.b.z() - c.a.z();
    const double ex = c.a.x() - x;
    const double ey = c.a.y() - y;
    const double qa = dx * dx + dy * dy;
    const double qb = 2.0 * (ex * dx + ey * dy);
    const double qc = ex * ex + ey * ey;
    const double r2 = c.r * c.r;

    double cand[8];
    int nc = 0;
    cand[nc++] = 0.0;
    cand[nc++] = 1.0;
    if (qa > 1e-12) {
        cand[nc++] = -qb / (2.0 * qa);
        // stationary: 4*qa*(qa+dz^2) u^2 + 4*qb*(qa+dz^2) u + qb^2 + 4 dz^2 (qc - r2) = 0
        const double sa = 4.0 * qa * (qa + dz * dz);
        const double sb = 4.0 * qb * (qa + dz * dz);
        const double sc = qb * qb + 4.0 * dz * dz * (qc - r2);
        const double sdisc = sb * sb - 4.0 * sa * sc;
        if (sdisc >= 0.0) {
            const double sq = std::sqrt(sdisc);
            cand[nc++] = (-sb + sq) / (2.0 * sa);
            cand[nc++] = (-sb - sq) / (2.0 * sa);
        }
        // silhouette: qa u^2 + qb u + qc - r2 = 0
        const double gdisc = qb * qb - 4.0 * qa * (qc - r2);
        if (gdisc >= 0.0) {
            const double sq = std::sqrt(gdisc);
            cand[nc++] = (-qb + sq) / (2.0 * qa);
            cand[nc++] = (-qb - sq) / (2.0 * qa);
        }
    }

    bool hit = false;
    double best = 0.0;
    for (int i = 0; i < nc; ++i) {
        const double u = std::clamp(cand[i], 0.0, 1.0);
        const double rho2 = qa * u * u + qb * u + qc;
        if (rho2 > r2 + 1e-9) continue;
        const double d = c.a.z() + u * dz - std::sqrt(std::max(0.0, r2 - rho2));
        if (!hit || d < best) {
            best = d;
            hit = true;
        }
    }
    if (hit) *depth = best;
    return hit;
}

Eigen::Vector2d project_px(const Eigen::Vector3d& world, const CameraView& view,
                           const SceneGeometry& geom) {
    const Eigen::Vector3d q = view.to_cam(world);
    const double s = geom.mm_per_px();
    return {q.x() / s + geom.res / 2.0 - 0.5, q.y() / s + geom.res / 2.0 - 0.5};
}

DepthImage render_capsules_raw(const std::vector<Capsule>& caps, const SceneGeometry& geom,
                               double z_ref_mm) {
    if (geom.res < 16 || (geom.res & (geom.res - 1)) != 0)
        throw DataError("render: resolution must be a power of two >= 16, got " +
                        std::to_string(geom.res));
    const double half = geom.footprint_mm / 2.0;
    const double s = geom.mm_per_px();
    const double far = z_ref_mm + geom.depth_range_mm;
    DepthImage img(geom.res, float(far));
    for (const Capsule& c : caps) {
        // conservative pixel bounding box of the capsule
        const double xmin = std::min(c.a.x(), c.b.x()) - c.r;
        const double xmax = std::max(c.a.x(), c.b.x()) + c.r;
        const double ymin = std::min(c.a.y(), c.b.y()) - c.r;
        const double ymax = std::max(c.a.y(), c.b.y()) + c.r;
        const int c0 = std::max(0, int(std::floor((xmin + half) / s)));
        const int c1 = std::min(geom.res - 1, int(std::ceil((xmax + half) / s)));
        const int r0 = std::max(0, int(std::floor((ymin + half) / s)));
        const int r1 = std::min(geom.res - 1, int(std::ceil((ymax + half) / s)));
        for (int row = r0; row <= r1; ++row) {
            const double y = (row - geom.res / 2.0 + 0.5) * s;
            for (int col = c0; col <= c1; ++col) {
                const double x = (col - geom.res / 2.0 + 0.5) * s;
                double d;
                if (capsule_ray_depth(c, x, y, &d) && d < img.at(row, col))
                    img.at(row, col) = float(d);
            }
        }
    }
    return img;
}

DepthImage render_raw(const ChainTopology& topo, const ChainState& st, const CameraView& view,
                      const SceneGeometry& geom) {
    const std::vector<Eigen::Vector3d> joints = forward_kinematics(topo, st);
    const double half = geom.footprint_mm / 2.0;
    const double reach = std::max(topo.segment_radius_mm, topo.palm_radius_mm);
    for (size_t j = 0; j < joints.size(); ++j) {
        const Eigen::Vector3d q = view.to_cam(joints[j]);
        if (std::abs(q.x()) + reach > half || std::abs(q.y()) + reach > half ||
            std::abs(q.z() - view.z_ref_mm) + reach > geom.depth_range_mm)
            throw RenderError("render: joint " + std::to_string(j) +
                              " outside camera footprint (cam position " + std::to_string(q.x()) +
                              "," + std::to_string(q.y()) + "," + std::to_string(q.z()) + ")");
    }
    return render_capsules_raw(chain_capsules(topo, st, view), geom, view.z_ref_mm);
}

DepthImage render_depth(const ChainTopology& topo, const ChainState& st, const CameraView& view,
                        const SceneGeometry& geom) {
    DepthImage raw = render_raw(topo, st, view, geom);
    const double far = view.z_ref_mm + geom.depth_range_mm;
    DepthImage out(geom.res);
    for (size_t i = 0; i < raw.px.size(); ++i) {
        const double d = raw.px[i];
        out.px[i] = d >= far ? kBackground
                             : float(std::clamp((d - view.z_ref_mm) / geom.depth_range_mm, -1.0, 1.0));
    }
    return out;
}

}  // namespace featmap
