#pragma once
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "rng.hpp"
#include "sparse_grid.hpp"
#include "tensor.hpp"

// Transformer building blocks shared by the VAEs and the flow generators:
// sinusoidal positional encoding, QK-RMSNorm attention over 3D shifted
// windows, cross attention, adaLN-modulated blocks, and feed-forward layers.
// Forward pass only; weights are seeded-random or loaded from an archive.

namespace slat {

inline double silu(double x) { return x / (1.0 + std::exp(-x)); }
inline double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / 1.4142135623730951)); }
inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }
inline double softplus(double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); }

// ---------------------------------------------------------------------------
// Positional encodings

// Per axis dim/3 channels: sin ladder then cos ladder, base 10000; axes
// concatenated in (x, y, z) order.
inline std::vector<double> sinusoidal_pe(const VoxelCoord& p, int dim) {
    if (dim <= 0 || dim % 6 != 0) throw std::invalid_argument("sinusoidal_pe: dim must divide 6");
    const int m = dim / 6;
    std::vector<double> pe(static_cast<std::size_t>(dim));
    const double axes[3] = {static_cast<double>(p.x), static_cast<double>(p.y),
                            static_cast<double>(p.z)};
    for (int axis = 0; axis < 3; ++axis) {
        double* out = pe.data() + static_cast<std::size_t>(axis) * 2 * m;
        for (int k = 0; k < m; ++k) {
            const double omega = std::pow(10000.0, -static_cast<double>(k) / m);
            out[k] = std::sin(axes[axis] * omega);
            out[m + k] = std::cos(axes[axis] * omega);
        }
    }
    return pe;
}

// PE padded with zeros when the model width is not a multiple of 6.
inline void add_positional_encoding(Tensor& tokens, const std::vector<VoxelCoord>& coords) {
    const int dim = static_cast<int>(tokens.dim(1));
    const int pe_dim = (dim / 6) * 6;
    if (pe_dim == 0) return;
    for (std::size_t i = 0; i < coords.size(); ++i) {
        const auto pe = sinusoidal_pe(coords[i], pe_dim);
        double* row = tokens.data() + i * static_cast<std::size_t>(dim);
        for (int k = 0; k < pe_dim; ++k) row[k] += pe[static_cast<std::size_t>(k)];
    }
}

// Sinusoidal embedding of a scalar timestep in [0, 1].
inline std::vector<double> timestep_embedding(double t, int dim = 256) {
    if (dim % 2 != 0) throw std::invalid_argument("timestep_embedding: dim must be even");
    const int half = dim / 2;
    std::vector<double> e(static_cast<std::size_t>(dim));
    for (int k = 0; k < half; ++k) {
        const double freq = std::exp(-std::log(10000.0) * static_cast<double>(k) / half);
        const double arg = 1000.0 * t * freq;
        e[static_cast<std::size_t>(k)] = std::cos(arg);
        e[static_cast<std::size_t>(half + k)] = std::sin(arg);
    }
    return e;
}

// ---------------------------------------------------------------------------
// Primitive layers

struct Linear {
    Tensor w;               // (out, in)
    std::vector<double> b;  // (out)

    static Linear init(int out, int in, Rng& rng, double gain = 1.0) {
        Linear l;
        l.w = Tensor({static_cast<std::size_t>(out), static_cast<std::size_t>(in)});
        const double std_dev = gain / std::sqrt(static_cast<double>(in));
        for (std::size_t i = 0; i < l.w.size(); ++i) l.w[i] = rng.normal(0.0, std_dev);
        l.b.assign(static_cast<std::size_t>(out), 0.0);
        return l;
    }

    int out_dim() const { return static_cast<int>(w.dim(0)); }
    int in_dim() const { return static_cast<int>(w.dim(1)); }

    void apply_row(const double* x, double* y) const {
        const std::size_t out = w.dim(0), in = w.dim(1);
        for (std::size_t o = 0; o < out; ++o) {
            double acc = b[o];
            const double* wr = w.data() + o * in;
            for (std::size_t i = 0; i < in; ++i) acc += wr[i] * x[i];
            y[o] = acc;
        }
    }

    Tensor apply(const Tensor& x) const {
        if (x.ndim() != 2 || x.dim(1) != w.dim(1))
            throw std::invalid_argument("linear: input width mismatch");
        Tensor y({x.dim(0), w.dim(0)});
        for (std::size_t r = 0; r < x.dim(0); ++r)
            apply_row(x.data() + r * x.dim(1), y.data() + r * y.dim(1));
        return y;
    }
};

struct LayerNormParams {
    std::vector<double> gamma, beta;

    static LayerNormParams init(int dim) {
        return {std::vector<double>(static_cast<std::size_t>(dim), 1.0),
                std::vector<double>(static_cast<std::size_t>(dim), 0.0)};
    }
};

inline constexpr double kLayerNormEps = 1e-5;

inline void layer_norm_row(const double* x, std::size_t dim, double* y,
                           const LayerNormParams* params = nullptr) {
    double mean = 0.0;
    for (std::size_t i = 0; i < dim; ++i) mean += x[i];
    mean /= static_cast<double>(dim);
    double var = 0.0;
    for (std::size_t i = 0; i < dim; ++i) var += (x[i] - mean) * (x[i] - mean);
    var /= static_cast<double>(dim);
    const double inv = 1.0 / std::sqrt(var + kLayerNormEps);
    for (std::size_t i = 0; i < dim; ++i) {
        double v = (x[i] - mean) * inv;
        if (params) v = v * params->gamma[i] + params->beta[i];
        y[i] = v;
    }
}

inline Tensor layer_norm(const Tensor& x, const LayerNormParams* params = nullptr) {
    Tensor y(x.shape());
    const std::size_t dim = x.dim(x.ndim() - 1);
    for (std::size_t r = 0; r < x.size() / dim; ++r)
        layer_norm_row(x.data() + r * dim, dim, y.data() + r * dim, params);
    return y;
}

inline constexpr double kRmsNormEps = 1e-6;

// RMS normalization of one head vector with a per-dim gain.
inline void qk_rmsnorm(const double* x, std::size_t dim, const std::vector<double>& gain,
                       double* y) {
    if (gain.size() != dim) throw std::invalid_argument("qk_rmsnorm: gain size mismatch");
    double ms = 0.0;
    for (std::size_t i = 0; i < dim; ++i) ms += x[i] * x[i];
    ms /= static_cast<double>(dim);
    const double inv = 1.0 / std::sqrt(ms + kRmsNormEps);
    for (std::size_t i = 0; i < dim; ++i) y[i] = x[i] * inv * gain[i];
}

inline std::vector<double> qk_rmsnorm(const std::vector<double>& x,
                                      const std::vector<double>& gain) {
    std::vector<double> y(x.size());
    qk_rmsnorm(x.data(), x.size(), gain, y.data());
    return y;
}

inline void softmax_inplace(std::vector<double>& v) {
    double mx = v[0];
    for (double x : v) mx = std::max(mx, x);
    double sum = 0.0;
    for (double& x : v) {
        x = std::exp(x - mx);
        sum += x;
    }
    for (double& x : v) x /= sum;
}

// ---------------------------------------------------------------------------
// Attention

struct AttentionWeights {
    int dim = 0;
    int heads = 1;
    bool qk_norm = true;
    Linear q, k, v, o;
    std::vector<double> q_gain, k_gain;  // per head-dim

    static AttentionWeights init(int dim, int heads, Rng& rng, int kv_dim = 0,
                                 bool qk_norm = true) {
        if (dim % heads != 0) throw std::invalid_argument("attention: dim must divide heads");
        if (kv_dim == 0) kv_dim = dim;
        AttentionWeights w;
        w.dim = dim;
        w.heads = heads;
        w.qk_norm = qk_norm;
        w.q = Linear::init(dim, dim, rng);
        w.k = Linear::init(dim, kv_dim, rng);
        w.v = Linear::init(dim, kv_dim, rng);
        w.o = Linear::init(dim, dim, rng);
        w.q_gain.assign(static_cast<std::size_t>(dim / heads), 1.0);
        w.k_gain.assign(static_cast<std::size_t>(dim / heads), 1.0);
        return w;
    }

    int head_dim() const { return dim / heads; }
};

struct WindowConfig {
    int window_size = 8;
    std::array<int, 3> shift{0, 0, 0};

    void validate() const {
        if (window_size < 1) throw std::invalid_argument("window: size must be >= 1");
        for (int s : shift)
            if (s < 0 || s >= window_size)
                throw std::invalid_argument("window: shift must be in [0, window_size)");
    }
};

// Token (x,y,z) belongs to window floor(((x,y,z)+shift)/window_size); no
// wrap-around, boundary windows may be partial. Groups are ordered by window
// coordinate, members keep their original order.
inline std::vector<std::vector<std::size_t>> window_partition(
    const std::vector<VoxelCoord>& coords, const WindowConfig& cfg) {
    cfg.validate();
    std::map<std::uint64_t, std::vector<std::size_t>> groups;
    for (std::size_t i = 0; i < coords.size(); ++i) {
        const VoxelCoord w{(coords[i].x + cfg.shift[0]) / cfg.window_size,
                           (coords[i].y + cfg.shift[1]) / cfg.window_size,
                           (coords[i].z + cfg.shift[2]) / cfg.window_size};
        groups[pack_coord(w)].push_back(i);
    }
    std::vector<std::vector<std::size_t>> out;
    out.reserve(groups.size());
    for (auto& [key, members] : groups) out.push_back(std::move(members));
    return out;
}

namespace detail {

// Softmax attention of query rows against key/value rows, one head at a time.
// Indices select rows from the projected matrices.
inline void attend_group(const Tensor& qm, const Tensor& km, const Tensor& vm,
                         const std::vector<std::size_t>& q_idx,
                         const std::vector<std::size_t>& kv_idx, const AttentionWeights& w,
                         Tensor& out) {
    const int hd = w.head_dim();
    const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
    const std::size_t dim = static_cast<std::size_t>(w.dim);
    std::vector<double> qh(static_cast<std::size_t>(hd)), kh(static_cast<std::size_t>(hd));
    std::vector<std::vector<double>> khat(kv_idx.size(),
                                          std::vector<double>(static_cast<std::size_t>(hd)));
    std::vector<double> scores(kv_idx.size());
    for (int h = 0; h < w.heads; ++h) {
        const std::size_t off = static_cast<std::size_t>(h) * static_cast<std::size_t>(hd);
        for (std::size_t j = 0; j < kv_idx.size(); ++j) {
            const double* kr = km.data() + kv_idx[j] * dim + off;
            if (w.qk_norm)
                qk_rmsnorm(kr, static_cast<std::size_t>(hd), w.k_gain, khat[j].data());
            else
                std::copy(kr, kr + hd, khat[j].data());
        }
        for (std::size_t qi = 0; qi < q_idx.size(); ++qi) {
            const double* qr = qm.data() + q_idx[qi] * dim + off;
            if (w.qk_norm)
                qk_rmsnorm(qr, static_cast<std::size_t>(hd), w.q_gain, qh.data());
            else
                std::copy(qr, qr + hd, qh.data());
            for (std::size_t j = 0; j < kv_idx.size(); ++j) {
                double s = 0.0;
                for (int d = 0; d < hd; ++d)
                    s += qh[static_cast<std::size_t>(d)] * khat[j][static_cast<std::size_t>(d)];
                scores[j] = s * scale;
            }
            softmax_inplace(scores);
            double* orow = out.data() + q_idx[qi] * dim + off;
            for (int d = 0; d < hd; ++d) orow[d] = 0.0;
            for (std::size_t j = 0; j < kv_idx.size(); ++j) {
                const double* vr = vm.data() + kv_idx[j] * dim + off;
                for (int d = 0; d < hd; ++d) orow[d] += scores[j] * vr[d];
            }
        }
    }
}

}  // namespace detail

// Multi-head self-attention restricted to 3D windows; tokens outside a group
// contribute nothing, outputs keep the input order.
inline Tensor windowed_mhsa(const Tensor& tokens, const std::vector<VoxelCoord>& coords,
                            const AttentionWeights& w, const WindowConfig& cfg) {
    if (tokens.ndim() != 2 || tokens.dim(0) != coords.size())
        throw std::invalid_argument("windowed_mhsa: token/coord count mismatch");
    if (static_cast<int>(tokens.dim(1)) != w.dim)
        throw std::invalid_argument("windowed_mhsa: token width mismatch");
    const Tensor qm = w.q.apply(tokens);
    const Tensor km = w.k.apply(tokens);
    const Tensor vm = w.v.apply(tokens);
    Tensor mixed({tokens.dim(0), tokens.dim(1)});
    for (const auto& group : window_partition(coords, cfg))
        detail::attend_group(qm, km, vm, group, group, w, mixed);
    return w.o.apply(mixed);
}

// Full self-attention (single window spanning the whole sequence).
inline Tensor dense_mhsa(const Tensor& tokens, const AttentionWeights& w) {
    const Tensor qm = w.q.apply(tokens);
    const Tensor km = w.k.apply(tokens);
    const Tensor vm = w.v.apply(tokens);
    std::vector<std::size_t> all(tokens.dim(0));
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    Tensor mixed({tokens.dim(0), tokens.dim(1)});
    detail::attend_group(qm, km, vm, all, all, w, mixed);
    return w.o.apply(mixed);
}

// Queries from tokens, keys/values from the condition sequence.
inline Tensor cross_attention(const Tensor& tokens, const Tensor& cond_tokens,
                              const AttentionWeights& w) {
    if (cond_tokens.ndim() != 2 || cond_tokens.dim(0) == 0)
        throw std::invalid_argument("cross_attention: empty condition sequence");
    const Tensor qm = w.q.apply(tokens);
    const Tensor km = w.k.apply(cond_tokens);
    const Tensor vm = w.v.apply(cond_tokens);
    std::vector<std::size_t> q_idx(tokens.dim(0)), kv_idx(cond_tokens.dim(0));
    for (std::size_t i = 0; i < q_idx.size(); ++i) q_idx[i] = i;
    for (std::size_t i = 0; i < kv_idx.size(); ++i) kv_idx[i] = i;
    Tensor mixed({tokens.dim(0), static_cast<std::size_t>(w.dim)});
    detail::attend_group(qm, km, vm, q_idx, kv_idx, w, mixed);
    return w.o.apply(mixed);
}

// ---------------------------------------------------------------------------
// Feed-forward and blocks

struct FeedForward {
    Linear fc1, fc2;

    static FeedForward init(int dim, Rng& rng, int hidden = 0) {
        if (hidden == 0) hidden = 4 * dim;
        return {Linear::init(hidden, dim, rng), Linear::init(dim, hidden, rng)};
    }

    Tensor apply(const Tensor& x) const {
        Tensor h = fc1.apply(x);
        for (std::size_t i = 0; i < h.size(); ++i) h[i] = gelu(h[i]);
        return fc2.apply(h);
    }
};

// Plain pre-norm block used by the SLat VAE: shifted-window attention + FFN.
struct SwinBlockWeights {
    LayerNormParams ln1, ln2;
    AttentionWeights attn;
    FeedForward ffn;

    static SwinBlockWeights init(int dim, int heads, Rng& rng) {
        return {LayerNormParams::init(dim), LayerNormParams::init(dim),
                AttentionWeights::init(dim, heads, rng, 0, false), FeedForward::init(dim, rng)};
    }

    Tensor apply(const Tensor& x, const std::vector<VoxelCoord>& coords,
                 const WindowConfig& cfg) const {
        Tensor h = windowed_mhsa(layer_norm(x, &ln1), coords, attn, cfg);
        Tensor y = x;
        for (std::size_t i = 0; i < y.size(); ++i) y[i] += h[i];
        Tensor f = ffn.apply(layer_norm(y, &ln2));
        for (std::size_t i = 0; i < y.size(); ++i) y[i] += f[i];
        return y;
    }
};

// Timestep-modulated transformer block. Per sub-layer (self-attention,
// optional cross-attention, FFN):
//   x <- x + gate * sublayer(scale * LN(x) + shift)
// with (scale, shift, gate) produced from the timestep embedding. Gate rows
// initialize to zero so an untrained block is the identity.
struct AdaLnBlockWeights {
    int dim = 0;
    AttentionWeights self_attn;
    std::optional<AttentionWeights> cross_attn;
    FeedForward ffn;
    Linear modulation;  // (3 * n_sublayers * dim, temb_dim); order: scale, shift, gate

    static AdaLnBlockWeights init(int dim, int heads, int temb_dim, Rng& rng, int cond_dim = 0,
                                  bool qk_norm = true) {
        AdaLnBlockWeights b;
        b.dim = dim;
        b.self_attn = AttentionWeights::init(dim, heads, rng, 0, qk_norm);
        if (cond_dim > 0) b.cross_attn = AttentionWeights::init(dim, heads, rng, cond_dim, qk_norm);
        b.ffn = FeedForward::init(dim, rng);
        const int subs = b.n_sublayers();
        b.modulation = Linear::init(3 * subs * dim, temb_dim, rng, 0.02);
        for (int s = 0; s < subs; ++s) {
            for (int d = 0; d < dim; ++d) {
                // scale bias 1, shift bias 0, gate rows zeroed entirely
                b.modulation.b[static_cast<std::size_t>((3 * s + 0) * dim + d)] = 1.0;
                const std::size_t gate_row = static_cast<std::size_t>((3 * s + 2) * dim + d);
                b.modulation.b[gate_row] = 0.0;
                for (int t = 0; t < temb_dim; ++t)
                    b.modulation.w.at(gate_row, static_cast<std::size_t>(t)) = 0.0;
            }
        }
        return b;
    }

    int n_sublayers() const { return cross_attn ? 3 : 2; }
};

inline Tensor adaln_block(const Tensor& tokens, const std::vector<VoxelCoord>& coords,
                          const std::vector<double>& t_embed, const Tensor* cond_tokens,
                          const AdaLnBlockWeights& w,
                          const std::optional<WindowConfig>& window = std::nullopt) {
    const std::size_t dim = static_cast<std::size_t>(w.dim);
    std::vector<double> act(t_embed.size());
    for (std::size_t i = 0; i < act.size(); ++i) act[i] = silu(t_embed[i]);
    std::vector<double> mod(w.modulation.w.dim(0));
    w.modulation.apply_row(act.data(), mod.data());

    Tensor x = tokens;
    int sub = 0;
    const auto apply_sublayer = [&](auto&& fn) {
        const double* scale = mod.data() + static_cast<std::size_t>(3 * sub) * dim;
        const double* shift = scale + dim;
        const double* gate = shift + dim;
        Tensor pre = layer_norm(x);
        for (std::size_t r = 0; r < pre.dim(0); ++r) {
            double* row = pre.data() + r * dim;
            for (std::size_t d = 0; d < dim; ++d) row[d] = scale[d] * row[d] + shift[d];
        }
        Tensor h = fn(pre);
        for (std::size_t r = 0; r < x.dim(0); ++r) {
            double* xr = x.data() + r * dim;
            const double* hr = h.data() + r * dim;
            for (std::size_t d = 0; d < dim; ++d) xr[d] += gate[d] * hr[d];
        }
        ++sub;
    };

    apply_sublayer([&](const Tensor& t) {
        return window ? windowed_mhsa(t, coords, w.self_attn, *window)
                      : dense_mhsa(t, w.self_attn);
    });
    if (w.cross_attn) {
        if (cond_tokens == nullptr)
            throw std::invalid_argument("adaln_block: block expects condition tokens");
        apply_sublayer([&](const Tensor& t) { return cross_attention(t, *cond_tokens, *w.cross_attn); });
    }
    apply_sublayer([&](const Tensor& t) { return w.ffn.apply(t); });
    return x;
}

// ---------------------------------------------------------------------------
// Timestep embedder: 256-dim sinusoidal features through a 2-layer MLP.

struct TimestepEmbedder {
    Linear fc1, fc2;
    int sin_dim = 256;

    static TimestepEmbedder init(int model_dim, Rng& rng, int sin_dim = 256) {
        TimestepEmbedder e;
        e.sin_dim = sin_dim;
        e.fc1 = Linear::init(model_dim, sin_dim, rng);
        e.fc2 = Linear::init(model_dim, model_dim, rng);
        return e;
    }

    std::vector<double> embed(double t) const {
        const auto sins = timestep_embedding(t, sin_dim);
        std::vector<double> h(fc1.w.dim(0));
        fc1.apply_row(sins.data(), h.data());
        for (double& v : h) v = silu(v);
        std::vector<double> out(fc2.w.dim(0));
        fc2.apply_row(h.data(), out.data());
        return out;
    }
};

// ---------------------------------------------------------------------------
// KL penalty: mean over elements of 0.5*(exp(logvar) + mean^2 - 1 - logvar).

inline double kl_penalty(const Tensor& mean, const Tensor& logvar) {
    if (!mean.same_shape(logvar)) throw std::invalid_argument("kl_penalty: shape mismatch");
    double acc = 0.0;
    for (std::size_t i = 0; i < mean.size(); ++i)
        acc += 0.5 * (std::exp(logvar[i]) + mean[i] * mean[i] - 1.0 - logvar[i]);
    return acc / static_cast<double>(mean.size());
}

inline std::pair<Tensor, Tensor> kl_penalty_grad(const Tensor& mean, const Tensor& logvar) {
    if (!mean.same_shape(logvar)) throw std::invalid_argument("kl_penalty_grad: shape mismatch");
    Tensor gm(mean.shape()), gl(logvar.shape());
    const double n = static_cast<double>(mean.size());
    for (std::size_t i = 0; i < mean.size(); ++i) {
        gm[i] = mean[i] / n;
        gl[i] = 0.5 * (std::exp(logvar[i]) - 1.0) / n;
    }
    return {std::move(gm), std::move(gl)};
}

}  // namespace slat
