#include "featmap/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

namespace featmap {

namespace {

constexpr char kMagic[4] = {'M', 'R', 'D', 'S'};
constexpr uint32_t kVersion = 1;

int64_t record_bytes(const DatasetMeta& m) {
    const int64_t img = int64_t(m.resolution) * m.resolution * 4;
    return 8 + int64_t(m.joint_count) * 12 + 2 * int64_t(m.view_count) * img;
}

constexpr int64_t kHeaderBytes = 4 + 4 + 6 * 4 + 8 + 4 * 4;  // magic, version, u32 x6, u64, f32 x4

void read_image(std::istream& is, DepthImage& img, int res) {
    img.res = res;
    img.px.resize(size_t(res) * res);
    get_bytes(is, img.px.data(), img.px.size() * 4);
}

}  // namespace

Dataset Dataset::read_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open dataset '" + path + "'");
    is.seekg(0, std::ios::end);
    const int64_t file_size = is.tellg();
    is.seekg(0);

    char magic[4];
    get_bytes(is, magic, 4);
    if (std::memcmp(magic, kMagic, 4) != 0) throw DataError("'" + path + "' is not an MRDS container");
    const uint32_t version = get_u32(is);
    if (version != kVersion)
        throw DataError("unsupported MRDS version " + std::to_string(version));

    Dataset ds;
    DatasetMeta& m = ds.meta;
    m.sample_count = get_u32(is);
    m.train_count = get_u32(is);
    m.resolution = get_u32(is);
    m.joint_count = get_u32(is);
    m.view_count = get_u32(is);
    m.domain_flags = get_u32(is);
    m.seed = get_u64(is);
    m.footprint_mm = get_f32(is);
    m.depth_range_mm = get_f32(is);
    m.z_ref_mm = get_f32(is);
    m.view_separation_rad = get_f32(is);

    if (m.train_count > m.sample_count) throw DataError("MRDS header: train count exceeds sample count");
    if (m.resolution == 0 || m.joint_count == 0 || m.view_count == 0)
        throw DataError("MRDS header: zero dimension");
    const int64_t expect = kHeaderBytes + int64_t(m.sample_count) * record_bytes(m);
    if (file_size != expect)
        throw DataError("MRDS length mismatch: header implies " + std::to_string(expect) +
                        " bytes, file has " + std::to_string(file_size));

    ds.samples.resize(m.sample_count);
    for (SampleRec& rec : ds.samples) {
        rec.id = get_u32(is);
        rec.flags = get_u32(is);
        rec.pose.joints = int(m.joint_count);
        rec.pose.xyz.resize(size_t(m.joint_count) * 3);
        get_bytes(is, rec.pose.xyz.data(), rec.pose.xyz.size() * 4);
        rec.synth.resize(m.view_count);
        rec.real.resize(m.view_count);
        for (auto& img : rec.synth) read_image(is, img, int(m.resolution));
        for (auto& img : rec.real) read_image(is, img, int(m.resolution));
    }
    return ds;
}

void Dataset::write_file(const std::string& path) const {
    if (samples.size() != meta.sample_count)
        throw DataError("dataset write: header count " + std::to_string(meta.sample_count) +
                        " != record count " + std::to_string(samples.size()));
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw DataError("cannot write dataset '" + path + "'");
    put_bytes(os, kMagic, 4);
    put_u32(os, kVersion);
    put_u32(os, meta.sample_count);
    put_u32(os, meta.train_count);
    put_u32(os, meta.resolution);
    put_u32(os, meta.joint_count);
    put_u32(os, meta.view_count);
    put_u32(os, meta.domain_flags);
    put_u64(os, meta.seed);
    put_f32(os, meta.footprint_mm);
    put_f32(os, meta.depth_range_mm);
    put_f32(os, meta.z_ref_mm);
    put_f32(os, meta.view_separation_rad);
    for (const SampleRec& rec : samples) {
        if (rec.pose.xyz.size() != size_t(meta.joint_count) * 3 ||
            rec.synth.size() != meta.view_count || rec.real.size() != meta.view_count)
            throw DataError("dataset write: record shape mismatch at id " + std::to_string(rec.id));
        put_u32(os, rec.id);
        put_u32(os, rec.flags);
        put_bytes(os, rec.pose.xyz.data(), rec.pose.xyz.size() * 4);
        for (const auto& img : rec.synth) put_bytes(os, img.px.data(), img.px.size() * 4);
        for (const auto& img : rec.real) put_bytes(os, img.px.data(), img.px.size() * 4);
    }
    if (!os) throw DataError("write failed for '" + path + "'");
}

uint64_t file_content_hash(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open '" + path + "' for hashing");
    uint64_t h = 0xcbf29ce484222325ull;
    char buf[1 << 16];
    while (is) {
        is.read(buf, sizeof(buf));
        h = fnv1a64(buf, size_t(is.gcount()), h);
    }
    return h;
}

// --------------------------------------------------------------- preprocess

DepthImage preprocess(const DepthImage& raw_mm, double hand_col, double hand_row, int crop_px,
                      int out_res, double depth_range_mm, double far_mm) {
    if (hand_col < 0 || hand_col > raw_mm.res - 1 || hand_row < 0 || hand_row > raw_mm.res - 1)
        throw DataError("preprocess: hand location outside frame");

    auto sample_mm = [&](double col, double row) -> double {
        // bilinear with far-clamped borders
        if (col < 0 || row < 0 || col > raw_mm.res - 1 || row > raw_mm.res - 1) return far_mm;
        const int c0 = int(std::floor(col)), r0 = int(std::floor(row));
        const int c1 = std::min(c0 + 1, raw_mm.res - 1), r1 = std::min(r0 + 1, raw_mm.res - 1);
        const double fc = col - c0, fr = row - r0;
        const double v00 = raw_mm.at(r0, c0), v01 = raw_mm.at(r0, c1);
        const double v10 = raw_mm.at(r1, c0), v11 = raw_mm.at(r1, c1);
        return (1 - fr) * ((1 - fc) * v00 + fc * v01) + fr * ((1 - fc) * v10 + fc * v11);
    };

    const double scale = double(crop_px) / out_res;
    DepthImage out(out_res);
    bool any_fg = false;
    double min_fg = far_mm;
    std::vector<double> depths(size_t(out_res) * out_res);
    for (int r = 0; r < out_res; ++r) {
        for (int c = 0; c < out_res; ++c) {
            const double src_c = hand_col + (c - out_res / 2.0 + 0.5) * scale;
            const double src_r = hand_row + (r - out_res / 2.0 + 0.5) * scale;
            const double d = sample_mm(src_c, src_r);
            depths[size_t(r) * out_res + c] = d;
            if (d < far_mm) {
                any_fg = true;
                min_fg = std::min(min_fg, d);
            }
        }
    }
    if (!any_fg) throw DataError("preprocess: empty crop (all background)");

    double center = sample_mm(hand_col, hand_row);
    if (center >= far_mm) center = min_fg;  // background under the hand location
    for (size_t i = 0; i < depths.size(); ++i) {
        out.px[i] = depths[i] >= far_mm
                        ? kBackground
                        : float(std::clamp((depths[i] - center) / depth_range_mm, -1.0, 1.0));
    }
    return out;
}

// ------------------------------------------------------------- augmentation

AugmentDraw draw_augment(const AugmentParams& p, Rng& rng) {
    p.validate();
    AugmentDraw d;
    d.rot_rad = rng.uniform(-p.rot_max_deg, p.rot_max_deg) * M_PI / 180.0;
    d.dx_mm = rng.normal(0.0, p.offset_sigma_mm);
    d.dy_mm = rng.normal(0.0, p.offset_sigma_mm);
    d.noise_seed = rng.next_u64();
    d.noise_sigma_mm = p.noise_sigma_mm;
    return d;
}

DepthImage augment_image(const DepthImage& img, const AugmentDraw& d, double mm_per_px,
                         double depth_range_mm) {
    const bool geometric = d.rot_rad != 0.0 || d.dx_mm != 0.0 || d.dy_mm != 0.0;
    DepthImage out = img;
    if (geometric) {
        const int res = img.res;
        const double ctr = res / 2.0 - 0.5;
        const double cs = std::cos(-d.rot_rad), sn = std::sin(-d.rot_rad);
        const double tx = d.dx_mm / mm_per_px, ty = d.dy_mm / mm_per_px;
        for (int r = 0; r < res; ++r) {
            for (int c = 0; c < res; ++c) {
                const double pc = c - ctr - tx;
                const double pr = r - ctr - ty;
                const double sc = cs * pc - sn * pr + ctr;
                const double sr = sn * pc + cs * pr + ctr;
                float v = kBackground;
                if (sc >= 0 && sr >= 0 && sc <= res - 1 && sr <= res - 1) {
                    const int c0 = int(std::floor(sc)), r0 = int(std::floor(sr));
                    const int c1 = std::min(c0 + 1, res - 1), r1 = std::min(r0 + 1, res - 1);
                    const double fc = sc - c0, fr = sr - r0;
                    v = float((1 - fr) * ((1 - fc) * img.at(r0, c0) + fc * img.at(r0, c1)) +
                              fr * ((1 - fc) * img.at(r1, c0) + fc * img.at(r1, c1)));
                }
                out.at(r, c) = v;
            }
        }
    }
    if (d.noise_sigma_mm > 0.0) {
        Rng noise(d.noise_seed);
        const double sigma = d.noise_sigma_mm / depth_range_mm;
        for (float& v : out.px) {
            if (v < 1.0f - 1e-6f)
                v = std::clamp(v + float(noise.normal(0.0, sigma)), -1.0f, 1.0f);
        }
    }
    return out;
}

void augment_pose(float* xyz, int joints, const AugmentDraw& d) {
    const double cs = std::cos(d.rot_rad), sn = std::sin(d.rot_rad);
    for (int j = 0; j < joints; ++j) {
        const double x = xyz[3 * j + 0], y = xyz[3 * j + 1];
        xyz[3 * j + 0] = float(cs * x - sn * y + d.dx_mm);
        xyz[3 * j + 1] = float(sn * x + cs * y + d.dy_mm);
    }
}

// -------------------------------------------------------- batch composition

BatchComposition compose_batch(int train_count, int n_labeled, int batch, Rng& rng) {
    if (batch < 4 || batch % 4 != 0)
        throw ConfigError("batch size must be a positive multiple of 4, got " + std::to_string(batch));
    const int per_set = batch / 4;
    if (train_count < per_set)
        throw DataError("insufficient pool: train count " + std::to_string(train_count) +
                        " < per-set size " + std::to_string(per_set));
    if (n_labeled < 1 || n_labeled > train_count)
        throw DataError("insufficient pool: n-labeled " + std::to_string(n_labeled) +
                        " outside [1, " + std::to_string(train_count) + "]");

    BatchComposition bc;
    auto draw = [&](std::vector<int>& dst, int pool) {
        dst.resize(size_t(per_set));
        for (int& v : dst) v = rng.uniform_int(pool);
    };
    draw(bc.corr, n_labeled);
    draw(bc.real, n_labeled);
    draw(bc.synth, train_count);
    draw(bc.unlabeled, train_count);
    return bc;
}

}  // namespace featmap
