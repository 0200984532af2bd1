#pragma once
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <vector>

#include "flow.hpp"
#include "nn.hpp"
#include "sparse_grid.hpp"
#include "tensor.hpp"

// Assembled networks: the shifted-window VAE encoder/decoder backbone for
// structured latents, the dense-grid flow transformer for structure latents,
// and the sparse flow transformer with conv down/upsampling for local latents.
// Forward pass only; weight archives make them loadable.

namespace slat {

inline constexpr int kDefaultWindowSize = 8;
inline constexpr std::array<int, 3> kDefaultWindowShift{4, 4, 4};

// ---------------------------------------------------------------------------
// SLat VAE: serialize sparse tokens + PE, alternate plain/shifted window
// attention blocks.

struct SlatVaeConfig {
    int layers = 12;
    int dim = 768;
    int heads = 12;
    int window_size = kDefaultWindowSize;
    int in_channels = 8;
    int latent_channels = 8;
};

namespace detail {

inline WindowConfig block_window(int layer, int window_size) {
    WindowConfig w;
    w.window_size = window_size;
    w.shift = layer % 2 == 0 ? std::array<int, 3>{0, 0, 0}
                             : std::array<int, 3>{window_size / 2, window_size / 2,
                                                  window_size / 2};
    return w;
}

}  // namespace detail

struct SlatEncoder {
    SlatVaeConfig config;
    Linear in_proj;
    std::vector<SwinBlockWeights> blocks;
    LayerNormParams ln_out;
    Linear mean_head, logvar_head;

    static SlatEncoder init(const SlatVaeConfig& cfg, Rng& rng) {
        SlatEncoder e;
        e.config = cfg;
        e.in_proj = Linear::init(cfg.dim, cfg.in_channels, rng);
        for (int l = 0; l < cfg.layers; ++l)
            e.blocks.push_back(SwinBlockWeights::init(cfg.dim, cfg.heads, rng));
        e.ln_out = LayerNormParams::init(cfg.dim);
        e.mean_head = Linear::init(cfg.latent_channels, cfg.dim, rng);
        e.logvar_head = Linear::init(cfg.latent_channels, cfg.dim, rng);
        return e;
    }

    std::pair<SparseGrid, SparseGrid> forward(const SparseGrid& features) const {
        Tensor tokens = in_proj.apply(features.features());
        add_positional_encoding(tokens, features.coords());
        for (std::size_t l = 0; l < blocks.size(); ++l)
            tokens = blocks[l].apply(tokens, features.coords(),
                                     detail::block_window(static_cast<int>(l), config.window_size));
        tokens = layer_norm(tokens, &ln_out);
        return {features.with_features(mean_head.apply(tokens)),
                features.with_features(logvar_head.apply(tokens))};
    }
};

// Shared decoder backbone; the per-format output heads live with the decoders.
struct SlatDecoderBackbone {
    SlatVaeConfig config;
    Linear in_proj;
    std::vector<SwinBlockWeights> blocks;
    LayerNormParams ln_out;

    static SlatDecoderBackbone init(const SlatVaeConfig& cfg, Rng& rng) {
        SlatDecoderBackbone d;
        d.config = cfg;
        d.in_proj = Linear::init(cfg.dim, cfg.latent_channels, rng);
        for (int l = 0; l < cfg.layers; ++l)
            d.blocks.push_back(SwinBlockWeights::init(cfg.dim, cfg.heads, rng));
        d.ln_out = LayerNormParams::init(cfg.dim);
        return d;
    }

    SparseGrid forward(const SparseGrid& latents) const {
        Tensor tokens = in_proj.apply(latents.features());
        add_positional_encoding(tokens, latents.coords());
        for (std::size_t l = 0; l < blocks.size(); ++l)
            tokens = blocks[l].apply(tokens, latents.coords(),
                                     detail::block_window(static_cast<int>(l), config.window_size));
        tokens = layer_norm(tokens, &ln_out);
        return latents.with_features(std::move(tokens));
    }
};

// ---------------------------------------------------------------------------
// Dense flow transformer (structure stage): tokens are the cells of the
// D^3 x C latent grid, full self-attention, adaLN timestep modulation,
// cross-attention conditioning with a learned null token for CFG.

struct FlowTransformerConfig {
    int layers = 12;
    int dim = 768;
    int heads = 12;
    int channels = 8;       // per-token input/output width
    int cond_dim = 0;       // 0 = unconditional model
    int temb_dim = 256;
    int grid_resolution = 16;  // token grid side
};

struct DenseFlowTransformer {
    FlowTransformerConfig config;
    Linear in_proj;
    TimestepEmbedder temb;
    std::vector<AdaLnBlockWeights> blocks;
    LayerNormParams ln_out;
    Linear out_proj;
    Tensor null_cond;  // (1, cond_dim)

    static DenseFlowTransformer init(const FlowTransformerConfig& cfg, Rng& rng) {
        DenseFlowTransformer m;
        m.config = cfg;
        m.in_proj = Linear::init(cfg.dim, cfg.channels, rng);
        m.temb = TimestepEmbedder::init(cfg.dim, rng, cfg.temb_dim);
        for (int l = 0; l < cfg.layers; ++l)
            m.blocks.push_back(AdaLnBlockWeights::init(cfg.dim, cfg.heads, cfg.dim, rng,
                                                       cfg.cond_dim, true));
        m.ln_out = LayerNormParams::init(cfg.dim);
        m.out_proj = Linear::init(cfg.channels, cfg.dim, rng);
        if (cfg.cond_dim > 0) {
            m.null_cond = Tensor({1, static_cast<std::size_t>(cfg.cond_dim)});
            for (std::size_t i = 0; i < m.null_cond.size(); ++i)
                m.null_cond[i] = rng.normal(0.0, 0.1);
        }
        return m;
    }

    static std::vector<VoxelCoord> grid_coords(int d) {
        std::vector<VoxelCoord> coords;
        coords.reserve(static_cast<std::size_t>(d) * d * d);
        for (int x = 0; x < d; ++x)
            for (int y = 0; y < d; ++y)
                for (int z = 0; z < d; ++z) coords.push_back({x, y, z});
        return coords;
    }

    // x: flattened (D^3 * channels) state in lexicographic voxel order.
    std::vector<double> forward(const std::vector<double>& x, double t, const Tensor* cond) const {
        const int d = config.grid_resolution;
        const std::size_t n_tokens = static_cast<std::size_t>(d) * d * d;
        if (x.size() != n_tokens * static_cast<std::size_t>(config.channels))
            throw std::invalid_argument("dense flow transformer: state size mismatch");
        Tensor tok({n_tokens, static_cast<std::size_t>(config.channels)});
        std::copy(x.begin(), x.end(), tok.data());
        Tensor h = in_proj.apply(tok);
        const auto coords = grid_coords(d);
        add_positional_encoding(h, coords);
        const auto te = temb.embed(t);
        const Tensor* c = cond;
        if (config.cond_dim > 0 && c == nullptr) c = &null_cond;
        for (const auto& blk : blocks) h = adaln_block(h, coords, te, c, blk, std::nullopt);
        h = layer_norm(h, &ln_out);
        const Tensor v = out_proj.apply(h);
        return std::vector<double>(v.data(), v.data() + v.size());
    }

    VelocityFn velocity_fn() const {
        return [this](const std::vector<double>& x, double t, const Tensor* cond) {
            return forward(x, t, cond);
        };
    }
};

// ---------------------------------------------------------------------------
// Sparse flow transformer (latent stage): residual sparse-conv downsampler
// packs 2^3 regions, adaLN transformer blocks over the packed tokens, then
// unpooling and a residual upsampler with an additive skip connection.

struct SparseResBlockWeights {
    Tensor conv1_w;  // (3,3,3,Cin,Cmid)
    std::vector<double> conv1_b;
    Tensor conv2_w;  // (3,3,3,Cmid,Cout)
    std::vector<double> conv2_b;
    bool has_skip_proj = false;
    Linear skip_proj;

    static SparseResBlockWeights init(int cin, int cout, Rng& rng) {
        SparseResBlockWeights r;
        auto make_kernel = [&rng](int ci, int co) {
            Tensor w({3, 3, 3, static_cast<std::size_t>(ci), static_cast<std::size_t>(co)});
            const double std_dev = 1.0 / std::sqrt(27.0 * ci);
            for (std::size_t i = 0; i < w.size(); ++i) w[i] = rng.normal(0.0, std_dev);
            return w;
        };
        r.conv1_w = make_kernel(cin, cout);
        r.conv1_b.assign(static_cast<std::size_t>(cout), 0.0);
        r.conv2_w = make_kernel(cout, cout);
        r.conv2_b.assign(static_cast<std::size_t>(cout), 0.0);
        if (cin != cout) {
            r.has_skip_proj = true;
            r.skip_proj = Linear::init(cout, cin, rng);
        }
        return r;
    }

    SparseGrid apply(const SparseGrid& x) const {
        SparseGrid h = sparse_conv3(x, conv1_w, conv1_b);
        Tensor& f = h.features();
        for (std::size_t i = 0; i < f.size(); ++i) f[i] = silu(f[i]);
        h = sparse_conv3(h, conv2_w, conv2_b);
        const Tensor skip = has_skip_proj ? skip_proj.apply(x.features()) : x.features();
        Tensor& out = h.features();
        for (std::size_t i = 0; i < out.size(); ++i) out[i] += skip[i];
        return h;
    }
};

struct SparseFlowTransformer {
    FlowTransformerConfig config;  // channels = latent C; grid_resolution = fine N
    SparseResBlockWeights down;    // C -> dim, applied before pooling
    TimestepEmbedder temb;
    std::vector<AdaLnBlockWeights> blocks;
    LayerNormParams ln_out;
    SparseResBlockWeights up;      // dim -> dim, applied after unpooling
    Linear out_proj;               // dim -> C
    Tensor null_cond;

    static SparseFlowTransformer init(const FlowTransformerConfig& cfg, Rng& rng) {
        SparseFlowTransformer m;
        m.config = cfg;
        m.down = SparseResBlockWeights::init(cfg.channels, cfg.dim, rng);
        m.temb = TimestepEmbedder::init(cfg.dim, rng, cfg.temb_dim);
        for (int l = 0; l < cfg.layers; ++l)
            m.blocks.push_back(AdaLnBlockWeights::init(cfg.dim, cfg.heads, cfg.dim, rng,
                                                       cfg.cond_dim, true));
        m.ln_out = LayerNormParams::init(cfg.dim);
        m.up = SparseResBlockWeights::init(cfg.dim, cfg.dim, rng);
        m.out_proj = Linear::init(cfg.channels, cfg.dim, rng);
        if (cfg.cond_dim > 0) {
            m.null_cond = Tensor({1, static_cast<std::size_t>(cfg.cond_dim)});
            for (std::size_t i = 0; i < m.null_cond.size(); ++i)
                m.null_cond[i] = rng.normal(0.0, 0.1);
        }
        return m;
    }

    SparseGrid forward(const SparseGrid& state, double t, const Tensor* cond) const {
        if (state.channels() != config.channels)
            throw std::invalid_argument("sparse flow transformer: channel mismatch");
        const SparseGrid pre_pool = down.apply(state);
        SparseGrid packed = avg_pool2(pre_pool);

        Tensor tokens = packed.features();
        add_positional_encoding(tokens, packed.coords());
        const auto te = temb.embed(t);
        const Tensor* c = cond;
        if (config.cond_dim > 0 && c == nullptr) c = &null_cond;
        for (const auto& blk : blocks)
            tokens = adaln_block(tokens, packed.coords(), te, c, blk, std::nullopt);
        tokens = layer_norm(tokens, &ln_out);
        packed = packed.with_features(std::move(tokens));

        SparseGrid fine = nearest_unpool2(packed, state);
        // Additive skip from the pre-pool features.
        Tensor& f = fine.features();
        const Tensor& s = pre_pool.features();
        for (std::size_t i = 0; i < f.size(); ++i) f[i] += s[i];
        fine = up.apply(fine);
        return fine.with_features(out_proj.apply(fine.features()));
    }
};

// Velocity over the features of a fixed sparse structure.
using SparseVelocityFn =
    std::function<Tensor(const SparseGrid& state, double t, const Tensor* cond)>;

inline SparseVelocityFn sparse_velocity_fn(const SparseFlowTransformer& m) {
    return [&m](const SparseGrid& state, double t, const Tensor* cond) {
        return m.forward(state, t, cond).features();
    };
}

}  // namespace slat
