#pragma once

// Two-phase training: synthetic pretraining of f and p, then joint
// training of the whole model with 1:1 GAN alternation (discriminator step
// first, on latents with gradients blocked toward f and m).
//
// All per-iteration randomness (batch composition, augmentation draws) is
// derived from (run seed, phase, iteration), so a run resumed from a
// checkpoint continues the exact trajectory of an uninterrupted one.

#include <cstdio>
#include <filesystem>
#include <functional>

#include "featmap/dataset.hpp"
#include "featmap/losses.hpp"
#include "featmap/optim.hpp"

namespace featmap {

enum class Variant { Baseline, ViewPred, DistrMatch, Full, RealOnly, SynthOnly };

inline const char* variant_name(Variant v) {
    switch (v) {
        case Variant::Baseline: return "baseline";
        case Variant::ViewPred: return "view-pred";
        case Variant::DistrMatch: return "distr-match";
        case Variant::Full: return "full";
        case Variant::RealOnly: return "real-only";
        case Variant::SynthOnly: return "synth-only";
    }
    return "?";
}

inline Variant variant_from_name(const std::string& s) {
    for (Variant v : {Variant::Baseline, Variant::ViewPred, Variant::DistrMatch, Variant::Full,
                      Variant::RealOnly, Variant::SynthOnly})
        if (s == variant_name(v)) return v;
    throw ConfigError("unknown variant '" + s + "'");
}

// Which phases run and which loss terms are active, per the ablation
// definitions: the baseline trains on labeled real+synthetic but cannot
// exploit unlabeled data; the two single-auxiliary variants enable exactly
// one of the view-prediction / distribution-matching terms.
struct VariantMask {
    bool pretrain;
    bool joint;
    bool pose;
    bool corr;
    bool view;
    bool adv;
    bool unlabeled;
    bool synth;
};

inline VariantMask variant_mask(Variant v) {
    switch (v) {
        case Variant::Baseline: return {true, true, true, true, false, false, false, true};
        case Variant::ViewPred: return {true, true, true, true, true, false, true, true};
        case Variant::DistrMatch: return {true, true, true, true, false, true, true, true};
        case Variant::Full: return {true, true, true, true, true, true, true, true};
        case Variant::RealOnly: return {false, true, true, false, false, false, false, false};
        case Variant::SynthOnly: return {true, false, false, false, false, false, false, true};
    }
    throw ConfigError("unknown variant");
}

struct RunConfig {
    std::string out_dir;  // empty: write no files
    Variant variant = Variant::Full;
    int n_labeled = 100;
    int pretrain_iters = 4000;
    int joint_iters = 4000;
    uint64_t seed = 1;
    int precision_bits = 32;
    OptimConfig optim;
    LossWeights<double> weights;
    NetConfig net;  // res is overwritten from the dataset header
    AugmentParams augment;
    bool augment_enable = true;
    bool corr_target_constant = true;  // l_c: synthetic latent as constant target
    bool adv_into_encoder = true;      // l_m gradient reaches f, not only m
    bool freeze_pose_head = false;
    int checkpoint_every = 0;
    int eval_every = 0;

    void validate() const {
        optim.validate();
        LossWeights<double> w{weights.lambda_c, weights.lambda_g, weights.lambda_m};
        w.validate();
        if (n_labeled < 1) throw ConfigError("n-labeled must be >= 1");
        if (pretrain_iters < 0 || joint_iters < 0) throw ConfigError("iteration counts must be >= 0");
        if (precision_bits != 32 && precision_bits != 64)
            throw ConfigError("precision must be 32 or 64");
        augment.validate();
    }
};

inline std::string format_g9(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return buf;
}

template <typename T>
class Trainer {
public:
    Trainer(const RunConfig& cfg, const Dataset& ds)
        : cfg_(cfg),
          mask_(variant_mask(cfg.variant)),
          ds_(&ds),
          view_(ds, cfg.n_labeled),
          nets_(net_config_for(cfg, ds), cfg.seed) {
        cfg_.validate();
        res_ = int(ds.meta.resolution);
        img_px_ = size_t(res_) * res_;
        joints_ = int(ds.meta.joint_count);
        pose_scale_mm_ = double(ds.meta.footprint_mm) / 2.0;
        if (int(ds.meta.view_count) < 2) throw DataError("training needs at least 2 views");
        if (!cfg_.out_dir.empty()) std::filesystem::create_directories(cfg_.out_dir);
        weights_.lambda_c = T(cfg_.weights.lambda_c);
        weights_.lambda_g = T(cfg_.weights.lambda_g);
        weights_.lambda_m = T(cfg_.weights.lambda_m);
    }

    Networks<T>& networks() { return nets_; }
    TrainView& train_view() { return view_; }
    const TrainProgress& progress() const { return progress_; }
    const RunConfig& config() const { return cfg_; }
    void set_route_trace(RouteTrace* trace) { trace_ = trace; }

    // stages: "joint:start", "joint:post-disc", "joint:post-gen"
    using StepObserver = std::function<void(int iter, const char* stage)>;
    void set_step_observer(StepObserver obs) { observer_ = std::move(obs); }

    void restore(const std::string& checkpoint_path) {
        progress_ = load_checkpoint(checkpoint_path, nets_.store);
    }

    // Load a finished pretraining checkpoint and position the run at the
    // start of the joint phase.
    void adopt_pretrain(const std::string& checkpoint_path) {
        TrainProgress p = load_checkpoint(checkpoint_path, nets_.store);
        if (p.phase != 0) throw DataError("'" + checkpoint_path + "' is not a pretrain checkpoint");
        progress_ = TrainProgress{};
        progress_.phase = 0;
        progress_.iteration = uint64_t(cfg_.pretrain_iters);
    }

    void save(const std::string& path, bool with_optimizer = true) const {
        save_checkpoint(path, nets_.store, progress_, with_optimizer);
    }

    // Runs (or finishes) the pretraining phase: f and p on the pose loss
    // over synthetic data only; m, g, h untouched.
    void run_pretrain() {
        if (!mask_.pretrain || progress_.phase > 0) return;
        Adam<T> adam(cfg_.optim, {NetId::F, NetId::P});
        adam.set_t(progress_.adam_t_main);
        try {
            for (int iter = int(progress_.iteration); iter < cfg_.pretrain_iters; ++iter) {
                pretrain_step(iter, adam);
                progress_.iteration = uint64_t(iter) + 1;
                progress_.adam_t_main = adam.t();
                maybe_checkpoint(iter + 1);
                maybe_eval(iter + 1, /*synth=*/true);
            }
        } catch (const DivergenceError&) {
            save_final();  // parameters are still the last finite ones
            throw;
        }
        save_final();
    }

    void run_joint() {
        if (!mask_.joint) return;
        if (progress_.phase == 0) {
            // fresh optimizer state and schedule for the joint objective
            progress_.phase = 1;
            progress_.iteration = 0;
            progress_.adam_t_main = 0;
            progress_.adam_t_disc = 0;
            for (int i = 0; i < nets_.store.count(); ++i) {
                nets_.store.entry(i).adam_m.clear();
                nets_.store.entry(i).adam_v.clear();
            }
        }
        std::set<NetId> owners{NetId::F, NetId::M};
        if (!cfg_.freeze_pose_head) owners.insert(NetId::P);
        if (mask_.view) owners.insert(NetId::G);
        Adam<T> adam_main(cfg_.optim, owners);
        adam_main.set_t(progress_.adam_t_main);
        Adam<T> adam_disc(cfg_.optim, {NetId::H});
        adam_disc.set_t(progress_.adam_t_disc);
        try {
            for (int iter = int(progress_.iteration); iter < cfg_.joint_iters; ++iter) {
                joint_step(iter, adam_main, adam_disc);
                progress_.iteration = uint64_t(iter) + 1;
                progress_.adam_t_main = adam_main.t();
                progress_.adam_t_disc = adam_disc.t();
                maybe_checkpoint(iter + 1);
                maybe_eval(iter + 1, /*synth=*/false);
            }
        } catch (const DivergenceError&) {
            save_final();
            throw;
        }
        save_final();
    }

    // Mean joint error in millimeters on a dataset split, evaluation mode.
    double eval_me(bool test_split, Domain domain) {
        const int count = test_split ? ds_->test_count() : ds_->train_count();
        double err_sum = 0.0;
        int64_t terms = 0;
        for (int start = 0; start < count; start += cfg_.optim.batch) {
            const int n = std::min(cfg_.optim.batch, count - start);
            std::vector<T> x;
            x.reserve(size_t(n) * img_px_);
            for (int i = 0; i < n; ++i) {
                const SampleRec& rec = test_split ? ds_->test(start + i) : ds_->train(start + i);
                const DepthImage& img = domain == Domain::Real ? rec.real[0] : rec.synth[0];
                x.insert(x.end(), img.px.begin(), img.px.end());
            }
            Tape<T> t;
            nets_.store.bind(t, {});
            Var<T> xv = t.constant({n, 1, res_, res_}, std::move(x));
            Var<T> z = domain == Domain::Real ? nets_.latent_real(t, xv, false)
                                              : nets_.latent_synth(t, xv, false);
            Var<T> yhat = nets_.p.forward(nets_.store, t, z, domain);
            const std::vector<T>& pred = yhat.val();
            for (int i = 0; i < n; ++i) {
                const SampleRec& rec = test_split ? ds_->test(start + i) : ds_->train(start + i);
                for (int j = 0; j < joints_; ++j) {
                    double d2 = 0.0;
                    for (int a = 0; a < 3; ++a) {
                        const double p_mm =
                            double(pred[size_t(i) * joints_ * 3 + j * 3 + a]) * pose_scale_mm_;
                        const double diff = p_mm - double(rec.pose.xyz[size_t(j) * 3 + a]);
                        d2 += diff * diff;
                    }
                    err_sum += std::sqrt(d2);
                    ++terms;
                }
            }
        }
        return err_sum / double(terms);
    }

    double eval_real_test_me() { return eval_me(true, Domain::Real); }
    double eval_synth_test_me() { return eval_me(true, Domain::Synthetic); }

private:
    static NetConfig net_config_for(const RunConfig& cfg, const Dataset& ds) {
        NetConfig net = cfg.net;
        net.res = int(ds.meta.resolution);
        net.joints = int(ds.meta.joint_count);
        return net;
    }

    // one loaded input view: augmented image, optional label transform
    void load_view(const DepthImage& img, const AugmentDraw& d, std::vector<T>& dst) const {
        const DepthImage aug =
            augment_image(img, d, ds_->meta.mm_per_px(), double(ds_->meta.depth_range_mm));
        dst.insert(dst.end(), aug.px.begin(), aug.px.end());
    }
    void load_plain(const DepthImage& img, std::vector<T>& dst) const {
        dst.insert(dst.end(), img.px.begin(), img.px.end());
    }
    void load_label(const float* pose, const AugmentDraw& d, std::vector<T>& dst) const {
        std::vector<float> mm(pose, pose + size_t(joints_) * 3);
        augment_pose(mm.data(), joints_, d);
        for (float v : mm) dst.push_back(T(double(v) / pose_scale_mm_));
    }

    AugmentDraw next_draw(Rng& rng) const {
        if (!cfg_.augment_enable) return AugmentDraw{};
        return draw_augment(cfg_.augment, rng);
    }

    struct JointBatch {
        int n_set = 0;
        int n_real = 0;  // C + R (+ U)
        std::vector<T> real_x, real_tgt;
        std::vector<T> y_cr;          // labels for the C and R rows
        std::vector<T> corr_synth_x;  // C synthetic twins, coherent transforms
        std::vector<T> synth_x, synth_tgt, y_s;
    };

    JointBatch materialize_joint(const BatchComposition& comp, Rng& rng) {
        JointBatch jb;
        jb.n_set = int(comp.corr.size());
        jb.n_real = jb.n_set * (mask_.unlabeled ? 3 : 2);

        for (int idx : comp.corr) {
            const SampleRec& rec = view_.sample(idx);
            AugmentDraw d = next_draw(rng);
            load_view(rec.real[0], d, jb.real_x);
            load_plain(rec.real[1], jb.real_tgt);
            load_label(view_.real_pose(idx), d, jb.y_cr);
            AugmentDraw twin = d;  // same geometry, independent noise
            twin.noise_seed = rng.next_u64();
            load_view(rec.synth[0], twin, jb.corr_synth_x);
        }
        for (int idx : comp.real) {
            const SampleRec& rec = view_.sample(idx);
            AugmentDraw d = next_draw(rng);
            load_view(rec.real[0], d, jb.real_x);
            load_plain(rec.real[1], jb.real_tgt);
            load_label(view_.real_pose(idx), d, jb.y_cr);
        }
        if (mask_.unlabeled) {
            for (int idx : comp.unlabeled) {
                const SampleRec& rec = view_.sample(idx);
                AugmentDraw d = next_draw(rng);
                load_view(rec.real[0], d, jb.real_x);
                load_plain(rec.real[1], jb.real_tgt);
                // no label access: the guard would trip
            }
        }
        if (mask_.synth) {
            for (int idx : comp.synth) {
                const SampleRec& rec = view_.sample(idx);
                AugmentDraw d = next_draw(rng);
                load_view(rec.synth[0], d, jb.synth_x);
                load_plain(rec.synth[1], jb.synth_tgt);
                load_label(view_.synth_pose(idx), d, jb.y_s);
            }
        }
        return jb;
    }

    // [rows x n_real] selection matrix picking rows [first, first+rows)
    Var<T> selection(Tape<T>& t, int rows, int first, int n_total) const {
        std::vector<T> sel(size_t(rows) * n_total, T(0));
        for (int i = 0; i < rows; ++i) sel[size_t(i) * n_total + first + i] = T(1);
        return t.constant({rows, n_total}, std::move(sel));
    }

    void pretrain_step(int iter, Adam<T>& adam) {
        const int batch = cfg_.optim.batch;
        Rng rng(mix_seed(cfg_.seed, 0x90e7, uint64_t(iter)));
        std::vector<T> x, y;
        for (int k = 0; k < batch; ++k) {
            const int idx = rng.uniform_int(ds_->train_count());
            const SampleRec& rec = view_.sample(idx);
            AugmentDraw d = next_draw(rng);
            load_view(rec.synth[0], d, x);
            load_label(view_.synth_pose(idx), d, y);
        }
        const int epoch = iter / iterations_per_epoch(ds_->train_count(), batch);
        const double lr = lr_at(epoch, cfg_.optim);
        const T scale = T(64.0 / batch);

        Tape<T> t;
        nets_.store.bind(t, {NetId::F, NetId::P});
        Var<T> xv = t.constant({batch, 1, res_, res_}, std::move(x));
        Var<T> z = nets_.latent_synth(t, xv, true, trace_);
        Var<T> yhat = nets_.p.forward(nets_.store, t, z, Domain::Synthetic, trace_);
        Var<T> lp = pose_loss(yhat, t.constant({batch, joints_ * 3}, std::move(y)));
        Var<T> total = scalar_mul(lp, scale);
        const double total_v = double(total.val()[0]);
        if (!std::isfinite(total_v)) throw DivergenceError("non-finite pretraining loss");
        t.backward(total);
        adam.step(nets_.store, t, lr);
        log_csv(0, iter, double(lp.val()[0]), 0, 0, 0, 0, total_v);
    }

    void joint_step(int iter, Adam<T>& adam_main, Adam<T>& adam_disc) {
        const int batch = cfg_.optim.batch;
        Rng rng(mix_seed(cfg_.seed, 0x701A7, uint64_t(iter)));
        const int epoch = iter / iterations_per_epoch(ds_->train_count(), batch);
        const double lr = lr_at(epoch, cfg_.optim);
        const T scale = T(64.0 / batch);
        const int n_set = batch / 4;

        if (observer_) observer_(iter, "joint:start");

        JointBatch jb;
        if (cfg_.variant == Variant::RealOnly) {
            // plain labeled-real batches; the four-set structure belongs to
            // the feature-mapping variants
            jb.n_set = 0;
            jb.n_real = batch;
            for (int k = 0; k < batch; ++k) {
                const int idx = rng.uniform_int(view_.guard().n_labeled());
                const SampleRec& rec = view_.sample(idx);
                AugmentDraw d = next_draw(rng);
                load_view(rec.real[0], d, jb.real_x);
                load_plain(rec.real[1], jb.real_tgt);
                load_label(view_.real_pose(idx), d, jb.y_cr);
            }
        } else {
            const BatchComposition comp =
                compose_batch(ds_->train_count(), view_.guard().n_labeled(), batch, rng);
            jb = materialize_joint(comp, rng);
        }
        const int n_labeled_rows = cfg_.variant == Variant::RealOnly ? batch : 2 * n_set;

        double lh_value = 0.0;
        if (mask_.adv) {
            // discriminator step first: h only, latents in evaluation mode
            // with gradients blocked toward f and m
            Tape<T> td;
            nets_.store.bind(td, {NetId::H});
            Var<T> xr = td.constant({jb.n_real, 1, res_, res_}, jb.real_x);
            Var<T> zr = nets_.latent_real(td, xr, false);
            Var<T> xs = td.constant({n_set, 1, res_, res_}, jb.synth_x);
            Var<T> zs = nets_.latent_synth(td, xs, false);
            Var<T> lh = discriminator_loss(nets_.h.forward(nets_.store, td, zr, Domain::Real),
                                           nets_.h.forward(nets_.store, td, zs, Domain::Synthetic));
            lh_value = double(lh.val()[0]);
            Var<T> lh_scaled = scalar_mul(lh, scale);
            if (!std::isfinite(lh_value)) throw DivergenceError("non-finite discriminator loss");
            td.backward(lh_scaled);
            adam_disc.step(nets_.store, td, lr);
            if (observer_) observer_(iter, "joint:post-disc");
        }

        // constant correspondence targets, evaluated before the tracked pass
        std::vector<T> corr_target;
        if (mask_.corr && cfg_.corr_target_constant) {
            Tape<T> ts;
            nets_.store.bind(ts, {});
            Var<T> xc = ts.constant({n_set, 1, res_, res_}, jb.corr_synth_x);
            corr_target = nets_.latent_synth(ts, xc, false, trace_).val();
        }

        // generator-side step: everything except h
        Tape<T> tg;
        std::set<NetId> trainable{NetId::F, NetId::M};
        if (!cfg_.freeze_pose_head) trainable.insert(NetId::P);
        if (mask_.view) trainable.insert(NetId::G);
        nets_.store.bind(tg, trainable);

        Var<T> xr = tg.constant({jb.n_real, 1, res_, res_}, jb.real_x);
        Var<T> zfr = nets_.f.forward(nets_.store, tg, xr, true, Domain::Real, trace_);
        Var<T> zr = nets_.m.forward(nets_.store, tg, zfr, Domain::Real, trace_);

        Var<T> zs{}, lp{}, lc{}, lg{}, lm{};
        if (mask_.synth) {
            Var<T> xs = tg.constant({n_set, 1, res_, res_}, jb.synth_x);
            zs = nets_.latent_synth(tg, xs, true, trace_);
        }

        if (mask_.pose) {
            Var<T> yr = nets_.p.forward(nets_.store, tg, zr, Domain::Real, trace_);
            Var<T> yr_labeled =
                jb.n_real == n_labeled_rows ? yr : matmul(selection(tg, n_labeled_rows, 0, jb.n_real), yr);
            lp = pose_loss(yr_labeled, tg.constant({n_labeled_rows, joints_ * 3}, jb.y_cr));
            if (mask_.synth) {
                Var<T> ys = nets_.p.forward(nets_.store, tg, zs, Domain::Synthetic, trace_);
                lp = add(lp, pose_loss(ys, tg.constant({n_set, joints_ * 3}, jb.y_s)));
            }
        }

        if (mask_.corr) {
            Var<T> z_c = matmul(selection(tg, n_set, 0, jb.n_real), zr);
            Var<T> target = cfg_.corr_target_constant
                                ? tg.constant({n_set, nets_.cfg.latent_dim}, corr_target)
                                : nets_.latent_synth(
                                      tg, tg.constant({n_set, 1, res_, res_}, jb.corr_synth_x),
                                      true, trace_);
            lc = correspondence_loss(z_c, target);
        }

        if (mask_.view) {
            Var<T> xhat_r = nets_.g.forward(nets_.store, tg, zr, true, Domain::Real, trace_);
            lg = view_loss(xhat_r, tg.constant({jb.n_real, 1, res_, res_}, jb.real_tgt));
            if (mask_.synth) {
                Var<T> xhat_s = nets_.g.forward(nets_.store, tg, zs, true, Domain::Synthetic, trace_);
                lg = add(lg, view_loss(xhat_s, tg.constant({n_set, 1, res_, res_}, jb.synth_tgt)));
            }
        }

        if (mask_.adv) {
            Var<T> z_adv = zr;
            if (!cfg_.adv_into_encoder) z_adv = nets_.m.forward(nets_.store, tg, tg.detach(zfr), Domain::Real);
            lm = mapper_adversarial_loss(nets_.h.forward(nets_.store, tg, z_adv, Domain::Real, trace_));
        }

        Var<T> total = composite_loss(tg, lp, lc, lg, lm, weights_, scale);
        const double total_v = double(total.val()[0]);
        if (!std::isfinite(total_v)) throw DivergenceError("non-finite joint loss");
        tg.backward(total);
        adam_main.step(nets_.store, tg, lr);
        if (observer_) observer_(iter, "joint:post-gen");

        log_csv(1, iter, lp.valid() ? double(lp.val()[0]) : 0.0,
                lc.valid() ? double(lc.val()[0]) : 0.0, lg.valid() ? double(lg.val()[0]) : 0.0,
                lm.valid() ? double(lm.val()[0]) : 0.0, lh_value, total_v);
    }

    void log_csv(int phase, int iter, double lp, double lc, double lg, double lm, double lh,
                 double total) {
        if (cfg_.out_dir.empty()) return;
        const std::string path =
            cfg_.out_dir + (phase == 0 ? "/pretrain_metrics.csv" : "/metrics.csv");
        const bool fresh = !std::filesystem::exists(path);
        std::ofstream os(path, std::ios::app);
        if (fresh) os << "iter,l_p,l_c,l_g,l_m,l_h,total\n";
        os << iter << ',' << format_g9(lp) << ',' << format_g9(lc) << ',' << format_g9(lg) << ','
           << format_g9(lm) << ',' << format_g9(lh) << ',' << format_g9(total) << '\n';
    }

    void maybe_checkpoint(int iter_done) {
        if (cfg_.out_dir.empty() || cfg_.checkpoint_every <= 0) return;
        if (iter_done % cfg_.checkpoint_every != 0) return;
        save(cfg_.out_dir + "/ckpt_phase" + std::to_string(progress_.phase) + "_iter" +
             std::to_string(iter_done) + ".mrck");
    }

    void maybe_eval(int iter_done, bool synth) {
        if (cfg_.out_dir.empty() || cfg_.eval_every <= 0) return;
        if (iter_done % cfg_.eval_every != 0) return;
        const double me = synth ? eval_synth_test_me() : eval_real_test_me();
        const std::string path = cfg_.out_dir + "/eval_trace.csv";
        const bool fresh = !std::filesystem::exists(path);
        std::ofstream os(path, std::ios::app);
        if (fresh) os << "phase,iter,me_mm\n";
        os << progress_.phase << ',' << iter_done << ',' << format_g9(me) << '\n';
    }

    void save_final() {
        if (cfg_.out_dir.empty()) return;
        save(cfg_.out_dir + "/ckpt_final.mrck");
    }

    RunConfig cfg_;
    VariantMask mask_;
    const Dataset* ds_;
    TrainView view_;
    Networks<T> nets_;
    LossWeights<T> weights_;
    TrainProgress progress_;
    RouteTrace* trace_ = nullptr;
    StepObserver observer_;
    int res_ = 0;
    size_t img_px_ = 0;
    int joints_ = 0;
    double pose_scale_mm_ = 0.0;
};

}  // namespace featmap
