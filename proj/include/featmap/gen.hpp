#pragma once

// Procedural paired two-domain dataset generation. One sampled chain per
// correspondence id drives both the synthetic renders and their corrupted
// "real" counterparts, so cross-domain correspondences and the matched
// pose distribution hold by construction.

#include "featmap/corrupt.hpp"
#include "featmap/dataset.hpp"
#include "featmap/render.hpp"

namespace featmap {

struct GenConfig {
    int count = 2500;
    double train_fraction = 0.8;
    uint64_t seed = 1;
    int fingers = 3;
    int segments = 2;
    int views = 2;
    double view_separation_deg = 60.0;
    SceneGeometry geom;  // res 32, footprint 160mm, range 100mm
    double z_ref_mm = 400.0;
    CorruptionParams corruption;
    ChainSampler sampler;

    void validate() const {
        if (count < 10) throw ConfigError("gen: count must be >= 10");
        if (!(train_fraction > 0.0 && train_fraction < 1.0))
            throw ConfigError("gen: invalid fractions, train fraction must lie in (0,1)");
        if (views < 2) throw ConfigError("gen: at least 2 views required");
        corruption.validate();
    }
};

Dataset generate_dataset(const GenConfig& cfg);
void generate_dataset_file(const GenConfig& cfg, const std::string& path);

}  // namespace featmap
