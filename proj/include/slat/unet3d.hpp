#pragma once
#include <cmath>
#include <stdexcept>
#include <vector>

#include "nn.hpp"
#include "rng.hpp"
#include "sparse_grid.hpp"
#include "tensor.hpp"

// Dense 3D convolutional VAE that compresses the binary occupancy grid into a
// low-resolution feature grid and decodes it back to occupancy logits.
// Channel-last layout (X, Y, Z, C); downsampling via stride-2 convolution,
// upsampling via 3D pixel shuffle; layer normalization over channels.

namespace slat {

struct Conv3dWeights {
    Tensor w;               // (kx, ky, kz, Cin, Cout)
    std::vector<double> b;  // (Cout)
    int stride = 1;

    static Conv3dWeights init(int k, int cin, int cout, Rng& rng, int stride = 1) {
        Conv3dWeights c;
        c.w = Tensor({static_cast<std::size_t>(k), static_cast<std::size_t>(k),
                      static_cast<std::size_t>(k), static_cast<std::size_t>(cin),
                      static_cast<std::size_t>(cout)});
        const double std_dev = 1.0 / std::sqrt(static_cast<double>(k * k * k * cin));
        for (std::size_t i = 0; i < c.w.size(); ++i) c.w[i] = rng.normal(0.0, std_dev);
        c.b.assign(static_cast<std::size_t>(cout), 0.0);
        c.stride = stride;
        return c;
    }
};

// Zero-padded cross-correlation with odd kernels; output spatial size D/stride.
inline Tensor conv3d(const Tensor& x, const Conv3dWeights& conv) {
    if (x.ndim() != 4) throw std::invalid_argument("conv3d: input must be (X,Y,Z,C)");
    const int d = static_cast<int>(x.dim(0));
    const int cin = static_cast<int>(x.dim(3));
    const int k = static_cast<int>(conv.w.dim(0));
    if (static_cast<int>(conv.w.dim(3)) != cin) throw std::invalid_argument("conv3d: Cin mismatch");
    if (k % 2 != 1) throw std::invalid_argument("conv3d: kernel must be odd");
    const int cout = static_cast<int>(conv.w.dim(4));
    const int s = conv.stride;
    if (d % s != 0) throw std::invalid_argument("conv3d: size not divisible by stride");
    const int od = d / s;
    const int r = k / 2;
    Tensor y({static_cast<std::size_t>(od), static_cast<std::size_t>(od),
              static_cast<std::size_t>(od), static_cast<std::size_t>(cout)});
    for (int ox = 0; ox < od; ++ox)
        for (int oy = 0; oy < od; ++oy)
            for (int oz = 0; oz < od; ++oz) {
                double* out = y.data() +
                    (((static_cast<std::size_t>(ox) * od + oy) * od + oz) * cout);
                for (int co = 0; co < cout; ++co) out[co] = conv.b[static_cast<std::size_t>(co)];
                for (int kx = 0; kx < k; ++kx) {
                    const int ix = ox * s + kx - r;
                    if (ix < 0 || ix >= d) continue;
                    for (int ky = 0; ky < k; ++ky) {
                        const int iy = oy * s + ky - r;
                        if (iy < 0 || iy >= d) continue;
                        for (int kz = 0; kz < k; ++kz) {
                            const int iz = oz * s + kz - r;
                            if (iz < 0 || iz >= d) continue;
                            const double* in = x.data() +
                                (((static_cast<std::size_t>(ix) * d + iy) * d + iz) * cin);
                            const double* w = conv.w.data() +
                                (((static_cast<std::size_t>(kx) * k + ky) * k + kz) * cin) * cout;
                            for (int ci = 0; ci < cin; ++ci) {
                                const double v = in[ci];
                                const double* wc = w + static_cast<std::size_t>(ci) * cout;
                                for (int co = 0; co < cout; ++co) out[co] += wc[co] * v;
                            }
                        }
                    }
                }
            }
    return y;
}

// (D,D,D,C*f^3) -> (fD,fD,fD,C); channel sub-index bits are read as (z,y,x):
// sub = f^2*dz + f*dy + dx for factor f = 2.
inline Tensor pixel_shuffle3d(const Tensor& x, int factor) {
    if (x.ndim() != 4) throw std::invalid_argument("pixel_shuffle3d: input must be (X,Y,Z,C)");
    const int d = static_cast<int>(x.dim(0));
    const int c_in = static_cast<int>(x.dim(3));
    const int f3 = factor * factor * factor;
    if (c_in % f3 != 0) throw std::invalid_argument("pixel_shuffle3d: channels not divisible");
    const int c = c_in / f3;
    const int od = d * factor;
    Tensor y({static_cast<std::size_t>(od), static_cast<std::size_t>(od),
              static_cast<std::size_t>(od), static_cast<std::size_t>(c)});
    for (int x0 = 0; x0 < d; ++x0)
        for (int y0 = 0; y0 < d; ++y0)
            for (int z0 = 0; z0 < d; ++z0)
                for (int dz = 0; dz < factor; ++dz)
                    for (int dy = 0; dy < factor; ++dy)
                        for (int dx = 0; dx < factor; ++dx) {
                            const int sub = (dz * factor + dy) * factor + dx;
                            for (int ch = 0; ch < c; ++ch)
                                y.at(static_cast<std::size_t>(x0 * factor + dx),
                                     static_cast<std::size_t>(y0 * factor + dy),
                                     static_cast<std::size_t>(z0 * factor + dz),
                                     static_cast<std::size_t>(ch)) =
                                    x.at(static_cast<std::size_t>(x0),
                                         static_cast<std::size_t>(y0),
                                         static_cast<std::size_t>(z0),
                                         static_cast<std::size_t>(ch * f3 + sub));
                        }
    return y;
}

// Layer norm across the channel dimension at every voxel.
inline Tensor layer_norm_channels(const Tensor& x, const LayerNormParams& p) {
    Tensor y(x.shape());
    const std::size_t c = x.dim(3);
    for (std::size_t v = 0; v < x.size() / c; ++v)
        layer_norm_row(x.data() + v * c, c, y.data() + v * c, &p);
    return y;
}

struct ResBlock3dWeights {
    LayerNormParams ln1, ln2;
    Conv3dWeights conv1, conv2;
    bool has_proj = false;
    Conv3dWeights proj;  // 1x1x1 when channel count changes

    static ResBlock3dWeights init(int cin, int cout, Rng& rng) {
        ResBlock3dWeights r;
        r.ln1 = LayerNormParams::init(cin);
        r.conv1 = Conv3dWeights::init(3, cin, cout, rng);
        r.ln2 = LayerNormParams::init(cout);
        r.conv2 = Conv3dWeights::init(3, cout, cout, rng);
        if (cin != cout) {
            r.has_proj = true;
            r.proj = Conv3dWeights::init(1, cin, cout, rng);
        }
        return r;
    }

    Tensor apply(const Tensor& x) const {
        Tensor h = layer_norm_channels(x, ln1);
        for (std::size_t i = 0; i < h.size(); ++i) h[i] = silu(h[i]);
        h = conv3d(h, conv1);
        Tensor h2 = layer_norm_channels(h, ln2);
        for (std::size_t i = 0; i < h2.size(); ++i) h2[i] = silu(h2[i]);
        h2 = conv3d(h2, conv2);
        const Tensor skip = has_proj ? conv3d(x, proj) : x;
        for (std::size_t i = 0; i < h2.size(); ++i) h2[i] += skip[i];
        return h2;
    }
};

struct StructureVaeConfig {
    int grid_resolution = 64;
    std::vector<int> stage_channels{32, 128, 512};  // at sizes 64, 32, 16
    int latent_channels = 8;
    int res_blocks_per_stage = 2;

    int latent_resolution() const {
        return grid_resolution >> (static_cast<int>(stage_channels.size()) - 1);
    }
};

struct StructureVaeEncoder {
    StructureVaeConfig config;
    Conv3dWeights conv_in;
    std::vector<std::vector<ResBlock3dWeights>> res_stages;
    std::vector<Conv3dWeights> down;  // stride-2 between stages
    LayerNormParams ln_out;
    Conv3dWeights mean_head, logvar_head;  // 1x1x1

    static StructureVaeEncoder init(const StructureVaeConfig& cfg, Rng& rng) {
        StructureVaeEncoder e;
        e.config = cfg;
        const auto& ch = cfg.stage_channels;
        e.conv_in = Conv3dWeights::init(3, 1, ch[0], rng);
        for (std::size_t s = 0; s < ch.size(); ++s) {
            std::vector<ResBlock3dWeights> blocks;
            for (int b = 0; b < cfg.res_blocks_per_stage; ++b)
                blocks.push_back(ResBlock3dWeights::init(ch[s], ch[s], rng));
            e.res_stages.push_back(std::move(blocks));
            if (s + 1 < ch.size())
                e.down.push_back(Conv3dWeights::init(3, ch[s], ch[s + 1], rng, 2));
        }
        e.ln_out = LayerNormParams::init(ch.back());
        e.mean_head = Conv3dWeights::init(1, ch.back(), cfg.latent_channels, rng);
        e.logvar_head = Conv3dWeights::init(1, ch.back(), cfg.latent_channels, rng);
        return e;
    }

    // occupancy (N,N,N,1) -> {mean, logvar} at (N/2^(stages-1))^3 x latent_channels
    std::pair<Tensor, Tensor> forward(const Tensor& occupancy) const {
        Tensor h = conv3d(occupancy, conv_in);
        for (std::size_t s = 0; s < res_stages.size(); ++s) {
            for (const auto& blk : res_stages[s]) h = blk.apply(h);
            if (s < down.size()) h = conv3d(h, down[s]);
        }
        h = layer_norm_channels(h, ln_out);
        for (std::size_t i = 0; i < h.size(); ++i) h[i] = silu(h[i]);
        return {conv3d(h, mean_head), conv3d(h, logvar_head)};
    }
};

struct StructureVaeDecoder {
    StructureVaeConfig config;
    Conv3dWeights conv_in;
    std::vector<std::vector<ResBlock3dWeights>> res_stages;  // bottom-up order
    std::vector<Conv3dWeights> up;  // conv to C*8 channels, then pixel shuffle
    LayerNormParams ln_out;
    Conv3dWeights head;  // 1x1x1 to occupancy logit

    static StructureVaeDecoder init(const StructureVaeConfig& cfg, Rng& rng) {
        StructureVaeDecoder d;
        d.config = cfg;
        const auto& ch = cfg.stage_channels;
        const int n_stages = static_cast<int>(ch.size());
        d.conv_in = Conv3dWeights::init(3, cfg.latent_channels, ch.back(), rng);
        for (int s = n_stages - 1; s >= 0; --s) {
            std::vector<ResBlock3dWeights> blocks;
            for (int b = 0; b < cfg.res_blocks_per_stage; ++b)
                blocks.push_back(ResBlock3dWeights::init(ch[static_cast<std::size_t>(s)],
                                                         ch[static_cast<std::size_t>(s)], rng));
            d.res_stages.push_back(std::move(blocks));
            if (s > 0)
                d.up.push_back(Conv3dWeights::init(
                    3, ch[static_cast<std::size_t>(s)], ch[static_cast<std::size_t>(s - 1)] * 8,
                    rng));
        }
        d.ln_out = LayerNormParams::init(ch[0]);
        d.head = Conv3dWeights::init(1, ch[0], 1, rng);
        return d;
    }

    // latent (D,D,D,latent_channels) -> occupancy logits (N,N,N,1)
    Tensor forward(const Tensor& latent) const {
        Tensor h = conv3d(latent, conv_in);
        for (std::size_t s = 0; s < res_stages.size(); ++s) {
            for (const auto& blk : res_stages[s]) h = blk.apply(h);
            if (s < up.size()) h = pixel_shuffle3d(conv3d(h, up[s]), 2);
        }
        h = layer_norm_channels(h, ln_out);
        for (std::size_t i = 0; i < h.size(); ++i) h[i] = silu(h[i]);
        return conv3d(h, head);
    }
};

// Logits > threshold become active voxels.
inline DenseBinaryGrid threshold_occupancy(const Tensor& logits, double threshold = 0.0) {
    if (logits.ndim() != 4 || logits.dim(3) != 1)
        throw std::invalid_argument("threshold_occupancy: logits must be (N,N,N,1)");
    const int n = static_cast<int>(logits.dim(0));
    DenseBinaryGrid g(n);
    for (std::size_t i = 0; i < logits.size(); ++i) g.values[i] = logits[i] > threshold ? 1 : 0;
    return g;
}

}  // namespace slat
