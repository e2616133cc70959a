#pragma once

// Dataset container and the training-side data plumbing: preprocessing,
// online augmentation, four-set mini-batch composition, and the label
// access guard.
//
// MRDS container v1, all integers unsigned 32-bit little-endian, floats
// IEEE-754 32-bit little-endian:
//
//   magic   "MRDS"
//   u32     version (1)
//   u32     sample_count
//   u32     train_count        first train_count records form the train
//                              split; record order is a seeded shuffle
//                              fixed at creation, so "the first n train
//                              records" is the labeled subset for any n
//   u32     resolution         H = W
//   u32     joint_count        J
//   u32     view_count         V
//   u32     domain_flags       bit0 synthetic present, bit1 real present
//   u64     seed               generator seed
//   f32     footprint_mm       full image width in mm
//   f32     depth_range_mm     normalization half-range
//   f32     z_ref_mm           camera depth of the world origin
//   f32     view_separation_rad
//   then sample_count records:
//     u32   correspondence_id
//     u32   flags (reserved, written 0)
//     f32   pose[3*J]          view-0 camera frame, crop-relative, mm
//     f32   synth[V][res*res]  row-major normalized depth
//     f32   real[V][res*res]
//
// The reader rejects any header/length mismatch.

#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "featmap/image.hpp"

namespace featmap {

struct DatasetMeta {
    uint32_t sample_count = 0;
    uint32_t train_count = 0;
    uint32_t resolution = 0;
    uint32_t joint_count = 0;
    uint32_t view_count = 0;
    uint32_t domain_flags = 3;
    uint64_t seed = 0;
    float footprint_mm = 160.0f;
    float depth_range_mm = 100.0f;
    float z_ref_mm = 400.0f;
    float view_separation_rad = 0.0f;

    double mm_per_px() const { return double(footprint_mm) / double(resolution); }
};

struct SampleRec {
    uint32_t id = 0;
    uint32_t flags = 0;
    Pose pose;                      // present even for unlabeled samples
    std::vector<DepthImage> synth;  // one per view
    std::vector<DepthImage> real;
};

class Dataset {
public:
    DatasetMeta meta;
    std::vector<SampleRec> samples;

    static Dataset read_file(const std::string& path);
    void write_file(const std::string& path) const;

    int train_count() const { return int(meta.train_count); }
    int test_count() const { return int(meta.sample_count - meta.train_count); }
    const SampleRec& train(int i) const { return samples[size_t(i)]; }
    const SampleRec& test(int i) const { return samples[size_t(meta.train_count) + i]; }
};

uint64_t file_content_hash(const std::string& path);

// ------------------------------------------------------------ label guard

// Counts distinct correspondence ids whose *real* pose label was read by a
// training path and refuses reads outside the labeled subset. Synthetic
// labels are exact by construction (they drive the renderer) and are not
// restricted; the guard enforces the "unlabeled real" contract.
class LabelGuard {
public:
    explicit LabelGuard(int n_labeled) : n_labeled_(n_labeled) {}

    void note_real_label_read(int train_idx, uint32_t id) {
        if (train_idx >= n_labeled_)
            throw GuardError("label guard: pose of unlabeled real sample read (train index " +
                             std::to_string(train_idx) + ", id " + std::to_string(id) + ")");
        ids_read_.insert(id);
    }

    int n_labeled() const { return n_labeled_; }
    int distinct_labeled_ids_read() const { return int(ids_read_.size()); }

private:
    int n_labeled_;
    std::set<uint32_t> ids_read_;
};

// Training-path facade: all label access goes through here.
class TrainView {
public:
    TrainView(const Dataset& ds, int n_labeled) : ds_(&ds), guard_(n_labeled) {
        if (n_labeled < 1 || n_labeled > ds.train_count())
            throw DataError("n-labeled " + std::to_string(n_labeled) +
                            " outside [1, " + std::to_string(ds.train_count()) + "]");
    }

    int train_count() const { return ds_->train_count(); }
    const SampleRec& sample(int train_idx) const { return ds_->train(train_idx); }

    const float* real_pose(int train_idx) {
        guard_.note_real_label_read(train_idx, ds_->train(train_idx).id);
        return ds_->train(train_idx).pose.xyz.data();
    }
    const float* synth_pose(int train_idx) const { return ds_->train(train_idx).pose.xyz.data(); }

    LabelGuard& guard() { return guard_; }

private:
    const Dataset* ds_;
    LabelGuard guard_;
};

// ------------------------------------------------------------- preprocess

// Crop a square (side crop_px) around the hand location out of a raw
// mm-valued depth frame, resize to out_res, and map depth affinely to
// [-1,1] relative to the crop center depth. Pixels at or beyond far_mm are
// background.
DepthImage preprocess(const DepthImage& raw_mm, double hand_col, double hand_row, int crop_px,
                      int out_res, double depth_range_mm, double far_mm);

// ------------------------------------------------------------ augmentation

struct AugmentParams {
    double rot_max_deg = 60.0;
    double offset_sigma_mm = 5.0;
    double noise_sigma_mm = 5.0;

    void validate() const {
        if (rot_max_deg < 0 || offset_sigma_mm < 0 || noise_sigma_mm < 0)
            throw ConfigError("augment: parameters must be nonnegative");
    }
};

struct AugmentDraw {
    double rot_rad = 0.0;
    double dx_mm = 0.0;
    double dy_mm = 0.0;
    uint64_t noise_seed = 0;
    double noise_sigma_mm = 0.0;
};

// Resampled independently per load ("online" augmentation).
AugmentDraw draw_augment(const AugmentParams& p, Rng& rng);

// In-plane rotate about the image center, then translate; bilinear
// resampling with background fill. Depth noise on foreground pixels.
DepthImage augment_image(const DepthImage& img, const AugmentDraw& d, double mm_per_px,
                         double depth_range_mm);

// The matching label transform (only applied when the label is readable):
// camera-frame xy rotate + translate, z unchanged.
void augment_pose(float* xyz, int joints, const AugmentDraw& d);

// ------------------------------------------------------- batch composition

// Four independently drawn sets over train indices: C and R from the
// labeled pool [0, n_labeled), S and U from the full train pool. Draws are
// independent with replacement; an id may appear in several roles.
struct BatchComposition {
    std::vector<int> corr;       // C: corresponding labeled real+synth pairs
    std::vector<int> real;       // R: labeled real
    std::vector<int> synth;      // S: labeled synthetic
    std::vector<int> unlabeled;  // U: unlabeled real
};

BatchComposition compose_batch(int train_count, int n_labeled, int batch, Rng& rng);

// Epoch accounting is always based on the real train count, independent of
// the labeled subset size.
inline int iterations_per_epoch(int train_count, int batch) {
    return (train_count + batch - 1) / batch;
}

}  // namespace featmap
