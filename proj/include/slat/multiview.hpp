#pragma once
#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

#include "camera.hpp"
#include "sparse_grid.hpp"
#include "tensor.hpp"

// Voxel feature aggregation: project each active voxel into a set of feature
// views and average the retrieved samples. Stands in for any D-channel
// multiview encoder output.

namespace slat {

struct FeatureView {
    Camera camera;
    Tensor feature_map;  // (H, W, D)

    void validate() const {
        camera.validate();
        if (feature_map.ndim() != 3) throw std::invalid_argument("feature view: map must be HxWxD");
        if (feature_map.dim(0) != static_cast<std::size_t>(camera.height) ||
            feature_map.dim(1) != static_cast<std::size_t>(camera.width))
            throw std::invalid_argument("feature view: map dimensions do not match camera");
        if (!feature_map.all_finite()) throw std::invalid_argument("feature view: non-finite map");
    }
};

enum class Interpolation { kNearest, kBilinear };

namespace detail {

inline void sample_feature_map(const Tensor& map, double u, double v, Interpolation interp,
                               std::vector<double>& out) {
    const int h = static_cast<int>(map.dim(0));
    const int w = static_cast<int>(map.dim(1));
    const int d = static_cast<int>(map.dim(2));
    const auto texel = [&](int r, int c, int ch) {
        r = std::clamp(r, 0, h - 1);
        c = std::clamp(c, 0, w - 1);
        return map.at(static_cast<std::size_t>(r), static_cast<std::size_t>(c),
                      static_cast<std::size_t>(ch));
    };
    if (interp == Interpolation::kNearest) {
        const int c = std::clamp(static_cast<int>(std::floor(u)), 0, w - 1);
        const int r = std::clamp(static_cast<int>(std::floor(v)), 0, h - 1);
        for (int ch = 0; ch < d; ++ch) out[static_cast<std::size_t>(ch)] = texel(r, c, ch);
        return;
    }
    // Bilinear over pixel centers at integer+0.5 locations, clamped at borders.
    const double x = u - 0.5, y = v - 0.5;
    const int c0 = static_cast<int>(std::floor(x));
    const int r0 = static_cast<int>(std::floor(y));
    const double fx = x - c0, fy = y - r0;
    for (int ch = 0; ch < d; ++ch) {
        const double v00 = texel(r0, c0, ch), v01 = texel(r0, c0 + 1, ch);
        const double v10 = texel(r0 + 1, c0, ch), v11 = texel(r0 + 1, c0 + 1, ch);
        out[static_cast<std::size_t>(ch)] =
            (1 - fy) * ((1 - fx) * v00 + fx * v01) + fy * ((1 - fx) * v10 + fx * v11);
    }
}

}  // namespace detail

struct AggregatedFeatures {
    SparseGrid grid;                     // structure coords with D-channel features
    std::vector<std::uint8_t> visible;   // per voxel: seen by at least one view
};

// Per voxel: sample every view where the voxel center projects inside the
// image with positive depth, then average. Contributions are accumulated in a
// canonical (value-sorted) order so the result is invariant to view order.
inline AggregatedFeatures aggregate_features(const SparseGrid& structure,
                                             const std::vector<FeatureView>& views,
                                             Interpolation interp = Interpolation::kBilinear) {
    if (views.empty()) throw std::invalid_argument("aggregate_features: empty view list");
    const int d = static_cast<int>(views.front().feature_map.dim(2));
    std::vector<CameraFrame> frames;
    frames.reserve(views.size());
    for (const FeatureView& v : views) {
        v.validate();
        if (static_cast<int>(v.feature_map.dim(2)) != d)
            throw std::invalid_argument("aggregate_features: channel mismatch across views");
        frames.push_back(make_frame(v.camera));
    }

    const int n = structure.resolution();
    Tensor feats({structure.size(), static_cast<std::size_t>(d)});
    std::vector<std::uint8_t> visible(structure.size(), 0);
    std::vector<double> sample(static_cast<std::size_t>(d));
    std::vector<std::vector<double>> hits;
    for (std::size_t i = 0; i < structure.size(); ++i) {
        const Vec3 center = voxel_center(structure.coords()[i], n);
        hits.clear();
        for (std::size_t vi = 0; vi < views.size(); ++vi) {
            const Projection p = project(center, frames[vi]);
            if (!p.visible) continue;
            detail::sample_feature_map(views[vi].feature_map, p.u, p.v, interp, sample);
            hits.push_back(sample);
        }
        if (hits.empty()) continue;
        std::sort(hits.begin(), hits.end());
        visible[i] = 1;
        double* row = feats.data() + i * static_cast<std::size_t>(d);
        for (const auto& h : hits)
            for (int ch = 0; ch < d; ++ch) row[ch] += h[static_cast<std::size_t>(ch)];
        for (int ch = 0; ch < d; ++ch) row[ch] /= static_cast<double>(hits.size());
    }
    return {structure.with_features(std::move(feats)), std::move(visible)};
}

// One world-space point per finite positive-depth pixel, sampled at pixel
// centers; inverse of project up to pixel-center quantization.
inline std::vector<Vec3> unproject_depth(const Tensor& depth_map, const Camera& camera) {
    if (depth_map.ndim() != 2) throw std::invalid_argument("unproject_depth: map must be HxW");
    const CameraFrame f = make_frame(camera);
    if (depth_map.dim(0) != static_cast<std::size_t>(camera.height) ||
        depth_map.dim(1) != static_cast<std::size_t>(camera.width))
        throw std::invalid_argument("unproject_depth: map does not match camera");
    std::vector<Vec3> points;
    for (std::size_t r = 0; r < depth_map.dim(0); ++r)
        for (std::size_t c = 0; c < depth_map.dim(1); ++c) {
            const double z = depth_map.at(r, c);
            if (!std::isfinite(z) || z <= 0.0) continue;
            points.push_back(unproject(c + 0.5, r + 0.5, z, f));
        }
    return points;
}

}  // namespace slat
