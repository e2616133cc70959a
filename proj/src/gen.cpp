#include "featmap/gen.hpp"

#include <cmath>

namespace featmap {

Dataset generate_dataset(const GenConfig& cfg) {
    cfg.validate();
    const ChainTopology topo = default_topology(cfg.fingers, cfg.segments);
    const double sep = cfg.view_separation_deg * M_PI / 180.0;

    std::vector<CameraView> views;
    for (int v = 0; v < cfg.views; ++v) views.push_back(make_view(v * sep, cfg.z_ref_mm));

    Dataset ds;
    ds.meta.sample_count = uint32_t(cfg.count);
    ds.meta.train_count = uint32_t(std::lround(cfg.count * cfg.train_fraction));
    ds.meta.resolution = uint32_t(cfg.geom.res);
    ds.meta.joint_count = uint32_t(topo.joint_count());
    ds.meta.view_count = uint32_t(cfg.views);
    ds.meta.domain_flags = 3;
    ds.meta.seed = cfg.seed;
    ds.meta.footprint_mm = float(cfg.geom.footprint_mm);
    ds.meta.depth_range_mm = float(cfg.geom.depth_range_mm);
    ds.meta.z_ref_mm = float(cfg.z_ref_mm);
    ds.meta.view_separation_rad = float(sep);

    ds.samples.resize(size_t(cfg.count));
    for (int id = 0; id < cfg.count; ++id) {
        Rng rng(mix_seed(cfg.seed, uint64_t(id)));
        const ChainState st = sample_chain(topo, cfg.sampler, rng);
        SampleRec& rec = ds.samples[size_t(id)];
        rec.id = uint32_t(id);
        rec.flags = 0;

        const std::vector<Eigen::Vector3d> joints = forward_kinematics(topo, st);
        rec.pose = Pose(topo.joint_count());
        for (size_t j = 0; j < joints.size(); ++j) {
            const Eigen::Vector3d q = views[0].to_cam(joints[j]);
            rec.pose.xyz[3 * j + 0] = float(q.x());
            rec.pose.xyz[3 * j + 1] = float(q.y());
            rec.pose.xyz[3 * j + 2] = float(q.z() - cfg.z_ref_mm);
        }

        rec.synth.resize(size_t(cfg.views));
        rec.real.resize(size_t(cfg.views));
        for (int v = 0; v < cfg.views; ++v) {
            rec.synth[size_t(v)] = render_depth(topo, st, views[size_t(v)], cfg.geom);
            rec.real[size_t(v)] = corrupt(rec.synth[size_t(v)], cfg.corruption,
                                          cfg.geom.depth_range_mm,
                                          mix_seed(cfg.seed, uint64_t(id), uint64_t(v) + 0x7e41));
        }
    }

    // seeded shuffle fixed at creation; labeled subsets are prefixes of the
    // resulting train-split order
    Rng shuffle_rng(mix_seed(cfg.seed, 0x5f5f));
    shuffle_rng.shuffle(ds.samples);
    return ds;
}

void generate_dataset_file(const GenConfig& cfg, const std::string& path) {
    generate_dataset(cfg).write_file(path);
}

}  // namespace featmap
