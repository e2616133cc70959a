#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <fstream>

#include "featmap/dataset.hpp"
#include "featmap/gen.hpp"

using namespace featmap;

namespace {

Dataset random_dataset(Rng& rng, int count = 0) {
    Dataset ds;
    ds.meta.sample_count = uint32_t(count > 0 ? count : 2 + rng.uniform_int(6));
    ds.meta.train_count = uint32_t(1 + rng.uniform_int(int(ds.meta.sample_count)));
    ds.meta.resolution = 1u << (2 + rng.uniform_int(3));
    ds.meta.joint_count = uint32_t(1 + rng.uniform_int(8));
    ds.meta.view_count = uint32_t(1 + rng.uniform_int(3));
    ds.meta.seed = rng.next_u64();
    ds.meta.footprint_mm = float(rng.uniform(50, 300));
    ds.meta.depth_range_mm = float(rng.uniform(50, 300));
    ds.meta.z_ref_mm = float(rng.uniform(200, 800));
    ds.meta.view_separation_rad = float(rng.uniform(0, 2));
    ds.samples.resize(ds.meta.sample_count);
    uint32_t id = 0;
    for (SampleRec& rec : ds.samples) {
        rec.id = id++;
        rec.pose.joints = int(ds.meta.joint_count);
        rec.pose.xyz.resize(size_t(ds.meta.joint_count) * 3);
        for (auto& v : rec.pose.xyz) v = float(rng.uniform(-80, 80));
        rec.synth.resize(ds.meta.view_count);
        rec.real.resize(ds.meta.view_count);
        for (auto* imgs : {&rec.synth, &rec.real})
            for (auto& img : *imgs) {
                img = DepthImage(int(ds.meta.resolution));
                for (auto& v : img.px) v = float(rng.uniform(-1, 1));
            }
    }
    return ds;
}

std::vector<char> slurp(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    REQUIRE(bool(is));
    return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST_CASE("container: write-read-write round trip is byte exact (property)") {
    const std::string a = "/tmp/fm_rt_a.mrds", b = "/tmp/fm_rt_b.mrds";
    for (uint64_t trial = 0; trial < 25; ++trial) {
        Rng rng(mix_seed(0xC0, trial));
        Dataset ds = random_dataset(rng);
        ds.write_file(a);
        Dataset back = Dataset::read_file(a);
        back.write_file(b);
        CHECK(slurp(a) == slurp(b));
        CHECK(back.samples.size() == ds.samples.size());
        CHECK(back.samples[0].pose.xyz == ds.samples[0].pose.xyz);
    }
    std::remove(a.c_str());
    std::remove(b.c_str());
}

TEST_CASE("container: reader rejects header/length mismatches") {
    Rng rng(1);
    Dataset ds = random_dataset(rng);
    const std::string path = "/tmp/fm_bad.mrds";
    ds.write_file(path);

    auto bytes = slurp(path);
    {
        std::ofstream os(path, std::ios::binary | std::ios::trunc);
        os.write(bytes.data(), std::streamsize(bytes.size() - 5));  // truncate
    }
    CHECK_THROWS_AS((void)Dataset::read_file(path), DataError);
    {
        bytes[0] = 'X';  // bad magic
        std::ofstream os(path, std::ios::binary | std::ios::trunc);
        os.write(bytes.data(), std::streamsize(bytes.size()));
    }
    CHECK_THROWS_AS((void)Dataset::read_file(path), DataError);
    std::remove(path.c_str());
}

TEST_CASE("preprocess: constant patch at center depth becomes all zeros") {
    DepthImage raw(32, 350.0f);
    const DepthImage out = preprocess(raw, 15.5, 15.5, 16, 16, 100.0, 500.0);
    for (float v : out.px) CHECK(v == 0.0f);
}

TEST_CASE("preprocess: range endpoints map to +-1") {
    DepthImage raw(32, 350.0f);
    raw.at(10, 20) = 450.0f;  // center + range
    raw.at(20, 10) = 250.0f;  // center - range
    const DepthImage out = preprocess(raw, 15.5, 15.5, 32, 32, 100.0, 500.0);
    CHECK(out.at(10, 20) == 1.0f);
    CHECK(out.at(20, 10) == -1.0f);
}

TEST_CASE("preprocess: all-background crop is an error, locations clamp to frame") {
    DepthImage raw(32, 500.0f);  // everything at the far plane
    CHECK_THROWS_AS((void)preprocess(raw, 16, 16, 16, 16, 100.0, 500.0), DataError);
    CHECK_THROWS_AS((void)preprocess(raw, -3, 16, 16, 16, 100.0, 500.0), DataError);
}

TEST_CASE("preprocess: deterministic") {
    Rng rng(4);
    DepthImage raw(64, 500.0f);
    for (auto& v : raw.px) v = float(rng.uniform(300, 480));
    const DepthImage a = preprocess(raw, 30.2, 33.8, 40, 16, 100.0, 500.0);
    const DepthImage b = preprocess(raw, 30.2, 33.8, 40, 16, 100.0, 500.0);
    CHECK(a == b);
}

TEST_CASE("augment: zero draw is the identity") {
    SceneGeometry geom;
    ChainState st;
    st.angles_rad = {{0.1, 0.3}, {0.6, 0.2}, {0.9, 1.1}};
    const DepthImage img = render_depth(default_topology(), st, make_view(0.0), geom);
    AugmentDraw d;  // all zero
    CHECK(augment_image(img, d, geom.mm_per_px(), geom.depth_range_mm) == img);

    Pose pose(3);
    pose.xyz = {1, 2, 3, 4, 5, 6, 7, 8, 9};
    Pose copy = pose;
    augment_pose(copy.xyz.data(), copy.joints, d);
    CHECK(copy == pose);
}

TEST_CASE("augment: +60 then -60 degrees returns near the original on smooth regions") {
    SceneGeometry geom;
    ChainState st;
    st.angles_rad = {{0.2, 0.5}, {0.4, 0.8}, {0.7, 0.3}};
    const DepthImage img = render_depth(default_topology(), st, make_view(0.0), geom);

    AugmentDraw fwd, bwd;
    fwd.rot_rad = M_PI / 3;
    bwd.rot_rad = -M_PI / 3;
    const DepthImage round =
        augment_image(augment_image(img, fwd, geom.mm_per_px(), geom.depth_range_mm), bwd,
                      geom.mm_per_px(), geom.depth_range_mm);

    // smooth region: interior pixels whose 3x3 neighborhood has small range
    const double tol = 2.0 * 3.0 / geom.depth_range_mm;  // two 3mm quantization steps
    int checked = 0;
    for (int r = 2; r < geom.res - 2; ++r) {
        for (int c = 2; c < geom.res - 2; ++c) {
            float lo = 1e9f, hi = -1e9f;
            for (int dr = -1; dr <= 1; ++dr)
                for (int dc = -1; dc <= 1; ++dc) {
                    lo = std::min(lo, img.at(r + dr, c + dc));
                    hi = std::max(hi, img.at(r + dr, c + dc));
                }
            if (hi - lo < 0.02f) {
                CHECK(std::abs(round.at(r, c) - img.at(r, c)) < tol);
                ++checked;
            }
        }
    }
    CHECK(checked > 100);
}

TEST_CASE("augment: rotation and label transform agree (joints stay in silhouette)") {
    SceneGeometry geom;
    const ChainTopology topo = default_topology();
    ChainSampler sampler;
    for (uint64_t seed = 0; seed < 10; ++seed) {
        Rng rng(mix_seed(0xA6, seed));
        const ChainState st = sample_chain(topo, sampler, rng);
        const CameraView view = make_view(0.0);
        const DepthImage img = render_depth(topo, st, view, geom);
        const auto joints = forward_kinematics(topo, st);

        AugmentDraw d;
        d.rot_rad = rng.uniform(-M_PI / 3, M_PI / 3);
        d.dx_mm = rng.normal(0.0, 5.0);
        d.dy_mm = rng.normal(0.0, 5.0);
        const DepthImage aug = augment_image(img, d, geom.mm_per_px(), geom.depth_range_mm);

        for (const auto& jw : joints) {
            Eigen::Vector3d q = view.to_cam(jw);
            float xyz[3] = {float(q.x()), float(q.y()), float(q.z() - view.z_ref_mm)};
            augment_pose(xyz, 1, d);
            const int col = int(std::lround(xyz[0] / geom.mm_per_px() + geom.res / 2.0 - 0.5));
            const int row = int(std::lround(xyz[1] / geom.mm_per_px() + geom.res / 2.0 - 0.5));
            if (col < 1 || row < 1 || col >= geom.res - 1 || row >= geom.res - 1) continue;
            // allow one pixel of slack at the silhouette boundary
            bool inside = false;
            for (int dr = -1; dr <= 1 && !inside; ++dr)
                for (int dc = -1; dc <= 1; ++dc)
                    if (aug.at(row + dr, col + dc) < kBackground) {
                        inside = true;
                        break;
                    }
            CHECK(inside);
        }
    }
}

TEST_CASE("augment: rotation draws are uniform within [-60, 60] (KS oracle)") {
    AugmentParams p;
    Rng rng(31337);
    const int n = 10000;
    std::vector<double> draws(n);
    for (auto& v : draws) v = draw_augment(p, rng).rot_rad * 180.0 / M_PI;
    std::sort(draws.begin(), draws.end());
    CHECK(draws.front() >= -60.0);
    CHECK(draws.back() <= 60.0);

    // Kolmogorov-Smirnov against U(-60, 60)
    double dstat = 0.0;
    for (int i = 0; i < n; ++i) {
        const double cdf = (draws[size_t(i)] + 60.0) / 120.0;
        dstat = std::max(dstat, std::abs(cdf - double(i + 1) / n));
        dstat = std::max(dstat, std::abs(cdf - double(i) / n));
    }
    const double lambda = (std::sqrt(double(n)) + 0.12 + 0.11 / std::sqrt(double(n))) * dstat;
    double p_value = 0.0;
    for (int k = 1; k <= 100; ++k)
        p_value += 2.0 * ((k % 2 == 1) ? 1.0 : -1.0) * std::exp(-2.0 * k * k * lambda * lambda);
    CHECK(p_value > 0.01);
}

TEST_CASE("augment: noise is drawn independently per pixel") {
    DepthImage img(16, 0.0f);
    AugmentDraw d;
    d.noise_sigma_mm = 5.0;
    d.noise_seed = 99;
    const DepthImage out = augment_image(img, d, 5.0, 100.0);
    // no two adjacent pixels should be equal for continuous noise
    int equal = 0;
    for (size_t i = 1; i < out.px.size(); ++i) equal += out.px[i] == out.px[i - 1];
    CHECK(equal == 0);
}

TEST_CASE("compose: batch 64 gives 16 per set") {
    Rng rng(5);
    const BatchComposition bc = compose_batch(2000, 100, 64, rng);
    CHECK(bc.corr.size() == 16);
    CHECK(bc.real.size() == 16);
    CHECK(bc.synth.size() == 16);
    CHECK(bc.unlabeled.size() == 16);
}

TEST_CASE("compose: labeled sets draw only from the labeled pool") {
    Rng rng(6);
    for (int iter = 0; iter < 200; ++iter) {
        const BatchComposition bc = compose_batch(500, 10, 64, rng);
        for (int i : bc.corr) CHECK(i < 10);
        for (int i : bc.real) CHECK(i < 10);
        bool synth_beyond = false, unlab_beyond = false;
        for (int i : bc.synth) synth_beyond |= i >= 10;
        for (int i : bc.unlabeled) unlab_beyond |= i >= 10;
        // over 200 iterations the full pool is effectively certain to appear
        static bool seen_s = false, seen_u = false;
        seen_s |= synth_beyond;
        seen_u |= unlab_beyond;
        if (iter == 199) {
            CHECK(seen_s);
            CHECK(seen_u);
        }
    }
}

TEST_CASE("compose: insufficient pools are rejected") {
    Rng rng(7);
    CHECK_THROWS_AS((void)compose_batch(10, 5, 64, rng), DataError);   // train < 16
    CHECK_THROWS_AS((void)compose_batch(100, 0, 64, rng), DataError);  // no labels
    CHECK_THROWS_AS((void)compose_batch(100, 10, 62, rng), ConfigError);
}

TEST_CASE("epoch accounting is based on the real train count only") {
    CHECK(iterations_per_epoch(2000, 64) == 32);
    CHECK(iterations_per_epoch(72757, 64) == 1137);  // paper-scale sanity
    CHECK(iterations_per_epoch(64, 64) == 1);
    CHECK(iterations_per_epoch(65, 64) == 2);
}

TEST_CASE("label guard: unlabeled reads trip, labeled reads are counted") {
    GenConfig cfg;
    cfg.count = 40;
    const Dataset ds = generate_dataset(cfg);
    TrainView view(ds, 10);
    (void)view.real_pose(3);
    (void)view.real_pose(3);
    (void)view.real_pose(7);
    CHECK(view.guard().distinct_labeled_ids_read() == 2);
    CHECK_THROWS_AS((void)view.real_pose(10), GuardError);
    CHECK_THROWS_AS(TrainView(ds, 0), DataError);
    CHECK_THROWS_AS(TrainView(ds, 1000), DataError);
}

TEST_CASE("label guard: one simulated epoch touches at most n labeled ids") {
    GenConfig cfg;
    cfg.count = 250;
    const Dataset ds = generate_dataset(cfg);
    const int n_labeled = 10;
    TrainView view(ds, n_labeled);
    Rng rng(17);
    const int iters = iterations_per_epoch(ds.train_count(), 64);
    for (int it = 0; it < iters; ++it) {
        const BatchComposition bc = compose_batch(ds.train_count(), n_labeled, 64, rng);
        for (int i : bc.corr) (void)view.real_pose(i);
        for (int i : bc.real) (void)view.real_pose(i);
        for (int i : bc.synth) (void)view.synth_pose(i);
    }
    CHECK(view.guard().distinct_labeled_ids_read() <= n_labeled);
}
