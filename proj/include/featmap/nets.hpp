#pragma once

// The five parametric functions: encoder f, mapper m, pose head p, view
// decoder g and discriminator h, plus the flat named parameter store they
// live in and the checkpoint format.
//
// Routing contract: synthetic latents are f(x); real latents are m(f(x)).
// Synthetic data never passes through m. Callers declare the domain so the
// route tracer can assert this.

#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>

#include "featmap/nn_ops.hpp"

namespace featmap {

enum class NetId : uint8_t { F, M, P, G, H };

inline const char* net_name(NetId id) {
    switch (id) {
        case NetId::F: return "f";
        case NetId::M: return "m";
        case NetId::P: return "p";
        case NetId::G: return "g";
        case NetId::H: return "h";
    }
    return "?";
}

inline NetId net_from_name(const std::string& s) {
    for (NetId id : {NetId::F, NetId::M, NetId::P, NetId::G, NetId::H})
        if (s == net_name(id)) return id;
    throw DataError("unknown network name '" + s + "'");
}

enum class Domain : uint8_t { Synthetic, Real };

struct RouteTrace {
    struct Entry {
        NetId net;
        Domain domain;
    };
    std::vector<Entry> entries;
    void note(NetId n, Domain d) { entries.push_back({n, d}); }
    bool saw(NetId n, Domain d) const {
        for (const Entry& e : entries)
            if (e.net == n && e.domain == d) return true;
        return false;
    }
};

// ------------------------------------------------------------- param store

template <typename T>
class ParamStore {
public:
    enum class Kind : uint8_t { Param = 0, Stat = 1 };

    struct Entry {
        std::string name;
        NetId owner;
        Kind kind;
        Shape shape;
        std::vector<T> value;
        std::vector<T> adam_m, adam_v;  // sized on first optimizer step
        int tape_id = -1;
    };

    int add_param(NetId owner, std::string name, Shape shape, std::vector<T> init) {
        return add(owner, std::move(name), std::move(shape), std::move(init), Kind::Param);
    }
    int add_stat(NetId owner, std::string name, Shape shape, std::vector<T> init) {
        return add(owner, std::move(name), std::move(shape), std::move(init), Kind::Stat);
    }

    void bind(Tape<T>& tape, const std::set<NetId>& trainable) {
        bound_ = &tape;
        for (Entry& e : entries_) {
            if (e.kind != Kind::Param) continue;
            e.tape_id = tape.leaf(e.shape, e.value, trainable.count(e.owner) > 0).id;
        }
    }

    Var<T> var(Tape<T>& tape, int idx) const {
        const Entry& e = entries_[size_t(idx)];
        if (bound_ != &tape || e.tape_id < 0)
            throw Error("param store: entry '" + e.name + "' not bound to this tape");
        return {&tape, e.tape_id};
    }

    std::vector<T>& stat(int idx) { return entries_[size_t(idx)].value; }
    const std::vector<T>& stat(int idx) const { return entries_[size_t(idx)].value; }

    Entry& entry(int idx) { return entries_[size_t(idx)]; }
    const Entry& entry(int idx) const { return entries_[size_t(idx)]; }
    int count() const { return int(entries_.size()); }

    std::map<NetId, int64_t> partition() const {
        std::map<NetId, int64_t> counts;
        for (const Entry& e : entries_)
            if (e.kind == Kind::Param) counts[e.owner] += int64_t(e.value.size());
        return counts;
    }

    int64_t total_params() const {
        int64_t total = 0;
        for (const auto& [owner, n] : partition()) total += n;
        return total;
    }

    uint64_t value_hash(std::optional<NetId> owner = {}) const {
        uint64_t h = 0xcbf29ce484222325ull;
        for (const Entry& e : entries_) {
            if (e.kind != Kind::Param) continue;
            if (owner && e.owner != *owner) continue;
            h = fnv1a64(e.value.data(), e.value.size() * sizeof(T), h);
        }
        return h;
    }

private:
    int add(NetId owner, std::string name, Shape shape, std::vector<T> init, Kind kind) {
        if (int64_t(init.size()) != numel(shape))
            throw ShapeError("param '" + name + "': init size does not match " + shape_str(shape));
        for (const Entry& e : entries_)
            if (e.name == name) throw Error("duplicate parameter name '" + name + "'");
        entries_.push_back(Entry{std::move(name), owner, kind, std::move(shape), std::move(init),
                                 {}, {}, -1});
        return int(entries_.size()) - 1;
    }

    std::vector<Entry> entries_;
    Tape<T>* bound_ = nullptr;
};

// ------------------------------------------------------------ layer pieces

namespace layers {

template <typename T>
std::vector<T> he_normal(Rng& rng, int64_t n, int64_t fan_in) {
    std::vector<T> v(static_cast<size_t>(n));
    const double stddev = std::sqrt(2.0 / double(fan_in));
    for (auto& x : v) x = T(rng.normal(0.0, stddev));
    return v;
}

template <typename T>
struct Linear {
    int w = -1, b = -1;

    Linear() = default;
    Linear(ParamStore<T>& ps, NetId owner, const std::string& name, int in, int out, Rng& rng,
           bool zero_init = false) {
        std::vector<T> init = zero_init ? std::vector<T>(size_t(in) * out, T(0))
                                        : he_normal<T>(rng, int64_t(in) * out, in);
        w = ps.add_param(owner, name + ".w", {in, out}, std::move(init));
        b = ps.add_param(owner, name + ".b", {out}, std::vector<T>(size_t(out), T(0)));
    }

    Var<T> operator()(ParamStore<T>& ps, Tape<T>& t, Var<T> x) const {
        return add(matmul(x, ps.var(t, w)), ps.var(t, b));
    }
};

template <typename T>
struct Conv {
    int w = -1, b = -1;
    int stride = 1, pad = 0;

    Conv() = default;
    Conv(ParamStore<T>& ps, NetId owner, const std::string& name, int cin, int cout, int k,
         int stride_, int pad_, Rng& rng)
        : stride(stride_), pad(pad_) {
        w = ps.add_param(owner, name + ".w", {cout, cin, k, k},
                         he_normal<T>(rng, int64_t(cout) * cin * k * k, int64_t(cin) * k * k));
        b = ps.add_param(owner, name + ".b", {cout}, std::vector<T>(size_t(cout), T(0)));
    }

    Var<T> operator()(ParamStore<T>& ps, Tape<T>& t, Var<T> x) const {
        return add(conv2d(x, ps.var(t, w), stride, pad), ps.var(t, b));
    }
};

template <typename T>
struct TConv {
    int w = -1, b = -1;
    int stride = 1, pad = 0;

    TConv() = default;
    TConv(ParamStore<T>& ps, NetId owner, const std::string& name, int cin, int cout, int k,
          int stride_, int pad_, Rng& rng)
        : stride(stride_), pad(pad_) {
        w = ps.add_param(owner, name + ".w", {cin, cout, k, k},
                         he_normal<T>(rng, int64_t(cin) * cout * k * k, int64_t(cin) * k * k));
        b = ps.add_param(owner, name + ".b", {cout}, std::vector<T>(size_t(cout), T(0)));
    }

    Var<T> operator()(ParamStore<T>& ps, Tape<T>& t, Var<T> x) const {
        return add(transposed_conv2d(x, ps.var(t, w), stride, pad), ps.var(t, b));
    }
};

template <typename T>
struct BatchNorm {
    int gamma = -1, beta = -1, rmean = -1, rvar = -1;

    BatchNorm() = default;
    BatchNorm(ParamStore<T>& ps, NetId owner, const std::string& name, int c) {
        gamma = ps.add_param(owner, name + ".gamma", {c}, std::vector<T>(size_t(c), T(1)));
        beta = ps.add_param(owner, name + ".beta", {c}, std::vector<T>(size_t(c), T(0)));
        rmean = ps.add_stat(owner, name + ".running_mean", {c}, std::vector<T>(size_t(c), T(0)));
        rvar = ps.add_stat(owner, name + ".running_var", {c}, std::vector<T>(size_t(c), T(1)));
    }

    Var<T> operator()(ParamStore<T>& ps, Tape<T>& t, Var<T> x, bool training) const {
        BatchNormState<T> st;
        st.running_mean = &ps.stat(rmean);
        st.running_var = &ps.stat(rvar);
        return batch_norm(x, ps.var(t, gamma), ps.var(t, beta), st, training);
    }
};

// conv residual block: relu(bn2(conv2(relu(bn1(conv1(x))))) + shortcut)
template <typename T>
struct ConvBlock {
    Conv<T> conv1, conv2;
    BatchNorm<T> bn1, bn2;
    std::optional<Conv<T>> proj;
    std::optional<BatchNorm<T>> bnp;

    ConvBlock() = default;
    ConvBlock(ParamStore<T>& ps, NetId owner, const std::string& name, int cin, int cout,
              int stride, Rng& rng) {
        conv1 = Conv<T>(ps, owner, name + ".conv1", cin, cout, 3, stride, 1, rng);
        bn1 = BatchNorm<T>(ps, owner, name + ".bn1", cout);
        conv2 = Conv<T>(ps, owner, name + ".conv2", cout, cout, 3, 1, 1, rng);
        bn2 = BatchNorm<T>(ps, owner, name + ".bn2", cout);
        if (cin != cout || stride != 1) {
            proj = Conv<T>(ps, owner, name + ".proj", cin, cout, 1, stride, 0, rng);
            bnp = BatchNorm<T>(ps, owner, name + ".bnp", cout);
        }
    }

    Var<T> operator()(ParamStore<T>& ps, Tape<T>& t, Var<T> x, bool training) const {
        Var<T> h = relu(bn1(ps, t, conv1(ps, t, x), training));
        h = bn2(ps, t, conv2(ps, t, h), training);
        Var<T> sc = proj ? (*bnp)(ps, t, (*proj)(ps, t, x), training) : x;
        return relu(add(h, sc));
    }
};

// fully connected residual block: x + fc2(relu(fc1(x)))
template <typename T>
struct FcResBlock {
    Linear<T> fc1, fc2;

    FcResBlock() = default;
    FcResBlock(ParamStore<T>& ps, NetId owner, const std::string& name, int width, Rng& rng,
               bool zero_branch) {
        fc1 = Linear<T>(ps, owner, name + ".fc1", width, width, rng);
        fc2 = Linear<T>(ps, owner, name + ".fc2", width, width, rng, zero_branch);
    }

    Var<T> operator()(ParamStore<T>& ps, Tape<T>& t, Var<T> x) const {
        return add(x, fc2(ps, t, relu(fc1(ps, t, x))));
    }
};

}  // namespace layers

// ---------------------------------------------------------------- networks

struct NetConfig {
    int res = 32;
    int latent_dim = 64;
    int stem_filters = 32;
    std::vector<int> stage_widths = {16, 32, 64, 64};
    int joints = 7;

    void validate() const {
        if (res < 32 || (res & (res - 1)) != 0)
            throw ConfigError("net config: resolution must be a power of two >= 32");
        if (latent_dim < 1 || joints < 1 || stem_filters < 1 || stage_widths.empty())
            throw ConfigError("net config: dimensions must be positive");
    }

    int encoder_out_res() const { return res / 2 / (1 << (int(stage_widths.size()) - 1)); }
};

template <typename T>
class EncoderF {
public:
    EncoderF() = default;
    EncoderF(ParamStore<T>& ps, const NetConfig& cfg, Rng& rng) {
        stem_ = layers::Conv<T>(ps, NetId::F, "f.stem", 1, cfg.stem_filters, 5, 1, 2, rng);
        stem_bn_ = layers::BatchNorm<T>(ps, NetId::F, "f.stem_bn", cfg.stem_filters);
        int cin = cfg.stem_filters;
        for (size_t i = 0; i < cfg.stage_widths.size(); ++i) {
            const int cout = cfg.stage_widths[i];
            stages_.emplace_back(ps, NetId::F, "f.stage" + std::to_string(i + 1), cin, cout,
                                 i == 0 ? 1 : 2, rng);
            cin = cout;
        }
        const int out_res = cfg.encoder_out_res();
        flat_dim_ = cin * out_res * out_res;
        fc_ = layers::Linear<T>(ps, NetId::F, "f.fc", flat_dim_, cfg.latent_dim, rng);
    }

    // x [N,1,res,res] in [-1,1]  ->  z [N,D]
    Var<T> forward(ParamStore<T>& ps, Tape<T>& t, Var<T> x, bool training, Domain domain,
                   RouteTrace* trace = nullptr) const {
        if (trace) trace->note(NetId::F, domain);
        Var<T> h = relu(stem_bn_(ps, t, stem_(ps, t, x), training));
        h = max_pool2x2(h);
        for (const auto& stage : stages_) h = stage(ps, t, h, training);
        const int n = h.shape()[0];
        return fc_(ps, t, reshape(h, {n, flat_dim_}));
    }

private:
    layers::Conv<T> stem_;
    layers::BatchNorm<T> stem_bn_;
    std::vector<layers::ConvBlock<T>> stages_;
    layers::Linear<T> fc_;
    int flat_dim_ = 0;
};

template <typename T>
class MapperM {
public:
    MapperM() = default;
    MapperM(ParamStore<T>& ps, const NetConfig& cfg, Rng& rng) {
        // zero-initialized residual branches: m(z) = z at step 0, so the
        // pretrained synthetic pipeline is preserved for real inputs when
        // joint training starts
        block1_ = layers::FcResBlock<T>(ps, NetId::M, "m.block1", cfg.latent_dim, rng, true);
        block2_ = layers::FcResBlock<T>(ps, NetId::M, "m.block2", cfg.latent_dim, rng, true);
    }

    Var<T> forward(ParamStore<T>& ps, Tape<T>& t, Var<T> z, Domain domain,
                   RouteTrace* trace = nullptr) const {
        if (trace) trace->note(NetId::M, domain);
        return block2_(ps, t, block1_(ps, t, z));
    }

private:
    layers::FcResBlock<T> block1_, block2_;
};

template <typename T>
class PoseHeadP {
public:
    PoseHeadP() = default;
    PoseHeadP(ParamStore<T>& ps, const NetConfig& cfg, Rng& rng) {
        fc1_ = layers::Linear<T>(ps, NetId::P, "p.fc1", cfg.latent_dim, cfg.latent_dim, rng);
        fc2_ = layers::Linear<T>(ps, NetId::P, "p.fc2", cfg.latent_dim, 3 * cfg.joints, rng);
    }

    // z [N,D] -> yhat [N,3J]
    Var<T> forward(ParamStore<T>& ps, Tape<T>& t, Var<T> z, Domain domain,
                   RouteTrace* trace = nullptr) const {
        if (trace) trace->note(NetId::P, domain);
        return fc2_(ps, t, relu(fc1_(ps, t, z)));
    }

private:
    layers::Linear<T> fc1_, fc2_;
};

template <typename T>
class DecoderG {
public:
    DecoderG() = default;
    DecoderG(ParamStore<T>& ps, const NetConfig& cfg, Rng& rng) {
        base_res_ = cfg.res / 32;  // four stride-2 tconvs then bilinear 2x
        base_ch_ = 128;
        fc_ = layers::Linear<T>(ps, NetId::G, "g.fc", cfg.latent_dim,
                                base_ch_ * base_res_ * base_res_, rng);
        const int chans[5] = {base_ch_, 64, 32, 16, 1};
        for (int i = 0; i < 4; ++i) {
            tconvs_[i] = layers::TConv<T>(ps, NetId::G, "g.tconv" + std::to_string(i + 1),
                                          chans[i], chans[i + 1], 4, 2, 1, rng);
            bns_[i] = layers::BatchNorm<T>(ps, NetId::G, "g.bn" + std::to_string(i + 1),
                                           chans[i + 1]);
        }
    }

    // z [N,D] -> xhat [N,1,res,res] in (-1,1)
    Var<T> forward(ParamStore<T>& ps, Tape<T>& t, Var<T> z, bool training, Domain domain,
                   RouteTrace* trace = nullptr) const {
        if (trace) trace->note(NetId::G, domain);
        const int n = z.shape()[0];
        Var<T> h = reshape(fc_(ps, t, z), {n, base_ch_, base_res_, base_res_});
        for (int i = 0; i < 4; ++i)
            h = leaky_relu(bns_[i](ps, t, tconvs_[i](ps, t, h), training), T(0.2));
        return tanh_op(bilinear_upsample2x(h));
    }

private:
    layers::Linear<T> fc_;
    layers::TConv<T> tconvs_[4];
    layers::BatchNorm<T> bns_[4];
    int base_res_ = 1;
    int base_ch_ = 128;
};

template <typename T>
class DiscriminatorH {
public:
    DiscriminatorH() = default;
    DiscriminatorH(ParamStore<T>& ps, const NetConfig& cfg, Rng& rng) {
        block1_ = layers::FcResBlock<T>(ps, NetId::H, "h.block1", cfg.latent_dim, rng, false);
        block2_ = layers::FcResBlock<T>(ps, NetId::H, "h.block2", cfg.latent_dim, rng, false);
        out_ = layers::Linear<T>(ps, NetId::H, "h.out", cfg.latent_dim, 1, rng);
    }

    // z [N,D] -> real-valued label [N,1], no output nonlinearity
    Var<T> forward(ParamStore<T>& ps, Tape<T>& t, Var<T> z, Domain domain,
                   RouteTrace* trace = nullptr) const {
        if (trace) trace->note(NetId::H, domain);
        return out_(ps, t, block2_(ps, t, block1_(ps, t, z)));
    }

private:
    layers::FcResBlock<T> block1_, block2_;
    layers::Linear<T> out_;
};

// ------------------------------------------------------------------ bundle

template <typename T>
struct Networks {
    NetConfig cfg;
    ParamStore<T> store;
    EncoderF<T> f;
    MapperM<T> m;
    PoseHeadP<T> p;
    DecoderG<T> g;
    DiscriminatorH<T> h;

    Networks(const NetConfig& config, uint64_t seed) : cfg(config) {
        cfg.validate();
        Rng rng(mix_seed(seed, 0x1417));
        f = EncoderF<T>(store, cfg, rng);
        m = MapperM<T>(store, cfg, rng);
        p = PoseHeadP<T>(store, cfg, rng);
        g = DecoderG<T>(store, cfg, rng);
        h = DiscriminatorH<T>(store, cfg, rng);
    }

    Var<T> latent_synth(Tape<T>& t, Var<T> x, bool training, RouteTrace* trace = nullptr) {
        return f.forward(store, t, x, training, Domain::Synthetic, trace);
    }
    Var<T> latent_real(Tape<T>& t, Var<T> x, bool training, RouteTrace* trace = nullptr) {
        return m.forward(store, t, f.forward(store, t, x, training, Domain::Real, trace),
                         Domain::Real, trace);
    }
};

// -------------------------------------------------------------- checkpoint
//
// MRCK v1: magic "MRCK", u32 version, u32 entry count, per entry the
// manifest (owner, name, kind, dims), u8 has-optimizer-state, named u64
// counters, then flat f32 little-endian data in manifest order (values,
// then adam m and v for every parameter when present). The reader
// validates the total length implied by the manifest.

struct TrainProgress {
    uint32_t phase = 0;  // 0 pretrain, 1 joint
    uint64_t iteration = 0;
    uint64_t adam_t_main = 0;
    uint64_t adam_t_disc = 0;
};

template <typename T>
void save_checkpoint(const std::string& path, const ParamStore<T>& store,
                     const TrainProgress& progress, bool with_optimizer) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw DataError("cannot write checkpoint '" + path + "'");
    put_bytes(os, "MRCK", 4);
    put_u32(os, 1u);
    put_u32(os, uint32_t(store.count()));
    for (int i = 0; i < store.count(); ++i) {
        const auto& e = store.entry(i);
        put_str(os, net_name(e.owner));
        put_str(os, e.name);
        put_bytes(os, &e.kind, 1);
        put_u32(os, uint32_t(e.shape.size()));
        for (int d : e.shape) put_u32(os, uint32_t(d));
    }
    const uint8_t has_opt = with_optimizer ? 1 : 0;
    put_bytes(os, &has_opt, 1);
    put_u32(os, 4u);
    for (const auto& [name, value] :
         std::initializer_list<std::pair<const char*, uint64_t>>{
             {"phase", progress.phase},
             {"iteration", progress.iteration},
             {"adam_t_main", progress.adam_t_main},
             {"adam_t_disc", progress.adam_t_disc}}) {
        put_str(os, name);
        put_u64(os, value);
    }
    auto put_f32_span = [&os](const std::vector<T>& v) {
        for (T x : v) put_f32(os, float(x));
    };
    for (int i = 0; i < store.count(); ++i) put_f32_span(store.entry(i).value);
    if (with_optimizer) {
        for (int i = 0; i < store.count(); ++i) {
            const auto& e = store.entry(i);
            if (e.kind != ParamStore<T>::Kind::Param) continue;
            std::vector<T> m = e.adam_m, v = e.adam_v;
            m.resize(e.value.size(), T(0));
            v.resize(e.value.size(), T(0));
            put_f32_span(m);
            put_f32_span(v);
        }
    }
    if (!os) throw DataError("write failed for checkpoint '" + path + "'");
}

template <typename T>
TrainProgress load_checkpoint(const std::string& path, ParamStore<T>& store) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open checkpoint '" + path + "'");
    is.seekg(0, std::ios::end);
    const int64_t file_size = is.tellg();
    is.seekg(0);

    char magic[4];
    get_bytes(is, magic, 4);
    if (std::memcmp(magic, "MRCK", 4) != 0)
        throw DataError("'" + path + "' is not an MRCK checkpoint");
    if (get_u32(is) != 1u) throw DataError("unsupported checkpoint version");
    const uint32_t n_entries = get_u32(is);
    if (int(n_entries) != store.count())
        throw DataError("checkpoint entry count " + std::to_string(n_entries) +
                        " does not match model (" + std::to_string(store.count()) + ")");

    int64_t value_floats = 0, param_floats = 0;
    for (uint32_t i = 0; i < n_entries; ++i) {
        auto& e = store.entry(int(i));
        const std::string owner = get_str(is);
        const std::string name = get_str(is);
        uint8_t kind;
        get_bytes(is, &kind, 1);
        const uint32_t ndim = get_u32(is);
        Shape shape(ndim);
        for (auto& d : shape) d = int(get_u32(is));
        if (owner != net_name(e.owner) || name != e.name || shape != e.shape ||
            kind != uint8_t(e.kind))
            throw DataError("checkpoint manifest mismatch at entry '" + name +
                            "' (model has '" + e.name + "' " + shape_str(e.shape) + ")");
        value_floats += numel(shape);
        if (e.kind == ParamStore<T>::Kind::Param) param_floats += numel(shape);
    }

    uint8_t has_opt;
    get_bytes(is, &has_opt, 1);
    TrainProgress progress;
    const uint32_t n_counters = get_u32(is);
    for (uint32_t i = 0; i < n_counters; ++i) {
        const std::string name = get_str(is);
        const uint64_t value = get_u64(is);
        if (name == "phase") progress.phase = uint32_t(value);
        else if (name == "iteration") progress.iteration = value;
        else if (name == "adam_t_main") progress.adam_t_main = value;
        else if (name == "adam_t_disc") progress.adam_t_disc = value;
    }

    const int64_t expect = int64_t(is.tellg()) +
                           4 * (value_floats + (has_opt ? 2 * param_floats : 0));
    if (file_size != expect)
        throw DataError("checkpoint length mismatch: manifest implies " + std::to_string(expect) +
                        " bytes, file has " + std::to_string(file_size));

    auto get_f32_span = [&is](std::vector<T>& v) {
        for (T& x : v) x = T(get_f32(is));
    };
    for (int i = 0; i < store.count(); ++i) get_f32_span(store.entry(i).value);
    if (has_opt) {
        for (int i = 0; i < store.count(); ++i) {
            auto& e = store.entry(i);
            if (e.kind != ParamStore<T>::Kind::Param) continue;
            e.adam_m.resize(e.value.size());
            e.adam_v.resize(e.value.size());
            get_f32_span(e.adam_m);
            get_f32_span(e.adam_v);
        }
    }
    return progress;
}

}  // namespace featmap
