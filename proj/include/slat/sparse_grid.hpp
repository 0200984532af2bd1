#pragma once
#include <algorithm>
#include <cmath>
#include <compare>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "tensor.hpp"

// Sparse voxel grid: active integer coordinates in {0..N-1}^3, each carrying a
// fixed-width feature row. Coordinates are kept strictly sorted in (x,y,z)
// lexicographic order, which fixes the token order for serialization and makes
// every operation deterministic.

namespace slat {

inline constexpr int kMaxGridResolution = 1024;  // coords fit u16 in the file format

struct VoxelCoord {
    int x = 0, y = 0, z = 0;
    auto operator<=>(const VoxelCoord&) const = default;
};

inline std::uint64_t pack_coord(const VoxelCoord& c) {
    return (std::uint64_t(std::uint16_t(c.x)) << 32) |
           (std::uint64_t(std::uint16_t(c.y)) << 16) |
           std::uint64_t(std::uint16_t(c.z));
}

struct DenseBinaryGrid {
    int resolution = 0;
    std::vector<std::uint8_t> values;  // (x*N + y)*N + z

    DenseBinaryGrid() = default;
    explicit DenseBinaryGrid(int n)
        : resolution(n), values(static_cast<std::size_t>(n) * n * n, 0) {}

    bool at(int x, int y, int z) const {
        return values[(static_cast<std::size_t>(x) * resolution + y) * resolution + z] != 0;
    }
    void set(int x, int y, int z, bool v) {
        values[(static_cast<std::size_t>(x) * resolution + y) * resolution + z] = v ? 1 : 0;
    }
    std::size_t count() const {
        return static_cast<std::size_t>(std::count_if(values.begin(), values.end(),
                                                      [](std::uint8_t v) { return v != 0; }));
    }
    bool operator==(const DenseBinaryGrid&) const = default;
};

class SparseGrid {
public:
    SparseGrid() = default;

    SparseGrid(int resolution, int channels) : resolution_(resolution), channels_(channels) {
        check_resolution(resolution);
        if (channels < 1) throw std::invalid_argument("sparse grid: channels must be >= 1");
        features_ = Tensor({0, static_cast<std::size_t>(channels)});
    }

    // Takes unordered rows, sorts them, and validates the invariants.
    static SparseGrid from_rows(int resolution, int channels, std::vector<VoxelCoord> coords,
                                Tensor features) {
        SparseGrid g(resolution, channels);
        const std::size_t L = coords.size();
        if (features.ndim() != 2 || features.dim(0) != L ||
            features.dim(1) != static_cast<std::size_t>(channels))
            throw std::invalid_argument("sparse grid: feature matrix shape mismatch");
        std::vector<std::size_t> order(L);
        std::iota(order.begin(), order.end(), 0);
        std::sort(order.begin(), order.end(),
                  [&](std::size_t a, std::size_t b) { return coords[a] < coords[b]; });
        g.coords_.resize(L);
        g.features_ = Tensor({L, static_cast<std::size_t>(channels)});
        for (std::size_t i = 0; i < L; ++i) {
            const VoxelCoord& c = coords[order[i]];
            if (c.x < 0 || c.y < 0 || c.z < 0 || c.x >= resolution || c.y >= resolution ||
                c.z >= resolution)
                throw std::invalid_argument("sparse grid: coordinate out of range");
            if (i > 0 && !(g.coords_[i - 1] < c))
                throw std::invalid_argument("sparse grid: duplicate coordinate");
            g.coords_[i] = c;
            for (int ch = 0; ch < channels; ++ch) {
                const double v = features.at(order[i], static_cast<std::size_t>(ch));
                if (!std::isfinite(v)) throw std::invalid_argument("sparse grid: non-finite feature");
                g.features_.at(i, static_cast<std::size_t>(ch)) = v;
            }
        }
        return g;
    }

    int resolution() const { return resolution_; }
    int channels() const { return channels_; }
    std::size_t size() const { return coords_.size(); }
    bool empty() const { return coords_.empty(); }

    const std::vector<VoxelCoord>& coords() const { return coords_; }
    const Tensor& features() const { return features_; }
    Tensor& features() { return features_; }

    double feature(std::size_t row, int channel) const {
        return features_.at(row, static_cast<std::size_t>(channel));
    }

    std::optional<std::size_t> find(const VoxelCoord& c) const {
        const auto it = std::lower_bound(coords_.begin(), coords_.end(), c);
        if (it == coords_.end() || *it != c) return std::nullopt;
        return static_cast<std::size_t>(it - coords_.begin());
    }

    // Same active set, different feature matrix.
    SparseGrid with_features(Tensor features) const {
        if (features.ndim() != 2 || features.dim(0) != size())
            throw std::invalid_argument("sparse grid: replacement feature rows mismatch");
        SparseGrid g;
        g.resolution_ = resolution_;
        g.channels_ = static_cast<int>(features.dim(1));
        g.coords_ = coords_;
        g.features_ = std::move(features);
        if (!g.features_.all_finite())
            throw std::invalid_argument("sparse grid: non-finite feature");
        return g;
    }

    bool operator==(const SparseGrid& o) const {
        return resolution_ == o.resolution_ && channels_ == o.channels_ && coords_ == o.coords_ &&
               features_.values() == o.features_.values();
    }

private:
    static void check_resolution(int n) {
        if (n < 1 || n > kMaxGridResolution)
            throw std::invalid_argument("sparse grid: resolution out of [1, 1024]");
    }

    int resolution_ = 0;
    int channels_ = 0;
    std::vector<VoxelCoord> coords_;
    Tensor features_;  // (L, C)
};

inline SparseGrid from_dense(const DenseBinaryGrid& grid, double fill) {
    const int n = grid.resolution;
    std::vector<VoxelCoord> coords;
    for (int x = 0; x < n; ++x)
        for (int y = 0; y < n; ++y)
            for (int z = 0; z < n; ++z)
                if (grid.at(x, y, z)) coords.push_back({x, y, z});
    Tensor f({coords.size(), 1}, fill);
    return SparseGrid::from_rows(n, 1, std::move(coords), std::move(f));
}

inline DenseBinaryGrid to_dense(const SparseGrid& grid) {
    DenseBinaryGrid d(grid.resolution());
    for (const VoxelCoord& c : grid.coords()) d.set(c.x, c.y, c.z, true);
    return d;
}

// Token view of a sparse grid: rows in stored (lexicographic) order plus the
// coordinate map making token <-> voxel a bijection.
struct SerializedTokens {
    Tensor tokens;                   // (L, C)
    std::vector<VoxelCoord> coords;  // coords[i] owns tokens row i
    int resolution = 0;
};

inline SerializedTokens serialize(const SparseGrid& grid) {
    return SerializedTokens{grid.features(), grid.coords(), grid.resolution()};
}

inline SparseGrid deserialize(const SerializedTokens& tokens) {
    return SparseGrid::from_rows(tokens.resolution, static_cast<int>(tokens.tokens.dim(1)),
                                 tokens.coords, tokens.tokens);
}

// Coarse voxel is active iff any of its 2^3 children is; its feature is the
// mean over active children only.
inline SparseGrid avg_pool2(const SparseGrid& grid) {
    if (grid.resolution() % 2 != 0)
        throw std::invalid_argument("avg_pool2: resolution must be even");
    const int c = grid.channels();
    std::unordered_map<std::uint64_t, std::size_t> slot;
    std::vector<VoxelCoord> parents;
    std::vector<std::vector<double>> sums;
    std::vector<int> counts;
    for (std::size_t i = 0; i < grid.size(); ++i) {
        const VoxelCoord& v = grid.coords()[i];
        const VoxelCoord p{v.x / 2, v.y / 2, v.z / 2};
        const std::uint64_t key = pack_coord(p);
        auto [it, inserted] = slot.try_emplace(key, parents.size());
        if (inserted) {
            parents.push_back(p);
            sums.emplace_back(static_cast<std::size_t>(c), 0.0);
            counts.push_back(0);
        }
        auto& acc = sums[it->second];
        for (int ch = 0; ch < c; ++ch) acc[static_cast<std::size_t>(ch)] += grid.feature(i, ch);
        ++counts[it->second];
    }
    Tensor f({parents.size(), static_cast<std::size_t>(c)});
    for (std::size_t i = 0; i < parents.size(); ++i)
        for (int ch = 0; ch < c; ++ch)
            f.at(i, static_cast<std::size_t>(ch)) = sums[i][static_cast<std::size_t>(ch)] / counts[i];
    return SparseGrid::from_rows(grid.resolution() / 2, c, std::move(parents), std::move(f));
}

// Every fine active voxel receives its parent's feature unchanged.
inline SparseGrid nearest_unpool2(const SparseGrid& coarse, const SparseGrid& fine_structure) {
    if (fine_structure.resolution() != coarse.resolution() * 2)
        throw std::invalid_argument("nearest_unpool2: fine resolution must be 2x coarse");
    const int c = coarse.channels();
    Tensor f({fine_structure.size(), static_cast<std::size_t>(c)});
    for (std::size_t i = 0; i < fine_structure.size(); ++i) {
        const VoxelCoord& v = fine_structure.coords()[i];
        const auto parent = coarse.find({v.x / 2, v.y / 2, v.z / 2});
        if (!parent)
            throw std::invalid_argument("nearest_unpool2: fine voxel has no active parent");
        for (int ch = 0; ch < c; ++ch)
            f.at(i, static_cast<std::size_t>(ch)) = coarse.feature(*parent, ch);
    }
    return fine_structure.with_features(std::move(f));
}

// Submanifold 3x3x3 convolution: output active set equals the input's, inactive
// neighbors contribute zero. Weights are (3,3,3,Cin,Cout) in cross-correlation
// orientation: out[p] += w[d+1] * in[p+d].
inline SparseGrid sparse_conv3(const SparseGrid& grid, const Tensor& weights,
                               const std::vector<double>& bias) {
    const int cin = grid.channels();
    if (weights.ndim() != 5 || weights.dim(0) != 3 || weights.dim(1) != 3 || weights.dim(2) != 3 ||
        weights.dim(3) != static_cast<std::size_t>(cin))
        throw std::invalid_argument("sparse_conv3: kernel shape mismatch");
    const int cout = static_cast<int>(weights.dim(4));
    if (bias.size() != static_cast<std::size_t>(cout))
        throw std::invalid_argument("sparse_conv3: bias size mismatch");

    Tensor out({grid.size(), static_cast<std::size_t>(cout)});
    for (std::size_t i = 0; i < grid.size(); ++i) {
        const VoxelCoord& p = grid.coords()[i];
        double* row = out.data() + i * static_cast<std::size_t>(cout);
        for (int co = 0; co < cout; ++co) row[co] = bias[static_cast<std::size_t>(co)];
        for (int dx = -1; dx <= 1; ++dx)
            for (int dy = -1; dy <= 1; ++dy)
                for (int dz = -1; dz <= 1; ++dz) {
                    const auto nb = grid.find({p.x + dx, p.y + dy, p.z + dz});
                    if (!nb) continue;
                    const double* nf = grid.features().data() + *nb * static_cast<std::size_t>(cin);
                    const double* w = weights.data() +
                        (((static_cast<std::size_t>(dx + 1) * 3 + (dy + 1)) * 3 + (dz + 1)) *
                         static_cast<std::size_t>(cin)) * static_cast<std::size_t>(cout);
                    for (int ci = 0; ci < cin; ++ci) {
                        const double v = nf[ci];
                        const double* wc = w + static_cast<std::size_t>(ci) * cout;
                        for (int co = 0; co < cout; ++co) row[co] += wc[co] * v;
                    }
                }
    }
    return grid.with_features(std::move(out));
}

// Each active voxel becomes its 2^3 children, all carrying the parent feature.
inline SparseGrid subdivide(const SparseGrid& grid) {
    if (grid.resolution() * 2 > kMaxGridResolution)
        throw std::invalid_argument("subdivide: resolution limit exceeded");
    const int c = grid.channels();
    std::vector<VoxelCoord> coords;
    coords.reserve(grid.size() * 8);
    Tensor f({grid.size() * 8, static_cast<std::size_t>(c)});
    std::size_t row = 0;
    for (std::size_t i = 0; i < grid.size(); ++i) {
        const VoxelCoord& p = grid.coords()[i];
        for (int dx = 0; dx < 2; ++dx)
            for (int dy = 0; dy < 2; ++dy)
                for (int dz = 0; dz < 2; ++dz) {
                    coords.push_back({2 * p.x + dx, 2 * p.y + dy, 2 * p.z + dz});
                    for (int ch = 0; ch < c; ++ch)
                        f.at(row, static_cast<std::size_t>(ch)) = grid.feature(i, ch);
                    ++row;
                }
    }
    return SparseGrid::from_rows(grid.resolution() * 2, c, std::move(coords), std::move(f));
}

// Smoothed Dice loss, 1 - (2*intersection + eps) / (mass_p + mass_t + eps).
// The eps in the numerator makes the all-empty case return 0.
inline constexpr double kDiceEps = 1e-8;

inline double dice_loss(const Tensor& pred_prob, const DenseBinaryGrid& target) {
    const std::size_t n = static_cast<std::size_t>(target.resolution) * target.resolution *
                          target.resolution;
    if (pred_prob.size() != n) throw std::invalid_argument("dice_loss: shape mismatch");
    double inter = 0.0, mass = 0.0, tmass = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double p = pred_prob[i];
        if (!(p >= 0.0 && p <= 1.0)) throw std::invalid_argument("dice_loss: probability out of [0,1]");
        const double t = target.values[i] ? 1.0 : 0.0;
        inter += p * t;
        mass += p;
        tmass += t;
    }
    return 1.0 - (2.0 * inter + kDiceEps) / (mass + tmass + kDiceEps);
}

inline Tensor dice_loss_grad(const Tensor& pred_prob, const DenseBinaryGrid& target) {
    const std::size_t n = static_cast<std::size_t>(target.resolution) * target.resolution *
                          target.resolution;
    if (pred_prob.size() != n) throw std::invalid_argument("dice_loss_grad: shape mismatch");
    double inter = 0.0, mass = 0.0, tmass = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double t = target.values[i] ? 1.0 : 0.0;
        inter += pred_prob[i] * t;
        mass += pred_prob[i];
        tmass += t;
    }
    const double denom = mass + tmass + kDiceEps;
    const double num = 2.0 * inter + kDiceEps;
    Tensor g(pred_prob.shape());
    for (std::size_t i = 0; i < n; ++i) {
        const double t = target.values[i] ? 1.0 : 0.0;
        g[i] = -(2.0 * t * denom - num) / (denom * denom);
    }
    return g;
}

// "SLAT" file: magic, version u32, N u32, C u32, L u64, coords as u16 triples,
// then L*C f32 features; everything little-endian, coords pre-sorted.
inline void save_slat(const std::string& path, const SparseGrid& grid) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("slat: cannot open for write: " + path);
    os.write("SLAT", 4);
    detail::write_le<std::uint32_t>(os, 1u);
    detail::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(grid.resolution()));
    detail::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(grid.channels()));
    detail::write_le<std::uint64_t>(os, grid.size());
    for (const VoxelCoord& c : grid.coords()) {
        detail::write_le<std::uint16_t>(os, static_cast<std::uint16_t>(c.x));
        detail::write_le<std::uint16_t>(os, static_cast<std::uint16_t>(c.y));
        detail::write_le<std::uint16_t>(os, static_cast<std::uint16_t>(c.z));
    }
    for (std::size_t i = 0; i < grid.features().size(); ++i)
        detail::write_le<float>(os, static_cast<float>(grid.features()[i]));
    if (!os) throw std::runtime_error("slat: write failed: " + path);
}

inline SparseGrid load_slat(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("slat: cannot open: " + path);
    char magic[4];
    detail::read_bytes(is, magic, 4);
    if (std::memcmp(magic, "SLAT", 4) != 0) throw std::runtime_error("slat: bad magic in " + path);
    if (detail::read_le<std::uint32_t>(is) != 1u)
        throw std::runtime_error("slat: unsupported version in " + path);
    const auto n = detail::read_le<std::uint32_t>(is);
    const auto c = detail::read_le<std::uint32_t>(is);
    const auto L = detail::read_le<std::uint64_t>(is);
    std::vector<VoxelCoord> coords(L);
    for (auto& v : coords) {
        v.x = detail::read_le<std::uint16_t>(is);
        v.y = detail::read_le<std::uint16_t>(is);
        v.z = detail::read_le<std::uint16_t>(is);
    }
    Tensor f({static_cast<std::size_t>(L), static_cast<std::size_t>(c)});
    for (std::size_t i = 0; i < f.size(); ++i)
        f[i] = static_cast<double>(detail::read_le<float>(is));
    return SparseGrid::from_rows(static_cast<int>(n), static_cast<int>(c), std::move(coords),
                                 std::move(f));
}

}  // namespace slat
