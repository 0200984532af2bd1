#pragma once
#include <cmath>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "errors.hpp"
#include "nn.hpp"
#include "rng.hpp"
#include "tensor.hpp"

// Rectified flow: linear interpolation forward process x(t) = (1-t)x0 + t*eps,
// velocity target eps - x0 (pointing data -> noise), samplers integrate the
// learned field backwards from t=1 to t=0.

namespace slat {

// Condition tokens are an opaque (Lc, D) matrix; nullptr means unconditional.
using VelocityFn =
    std::function<std::vector<double>(const std::vector<double>&, double, const Tensor*)>;

enum class OdeMethod { kEuler, kHeun };

inline constexpr int kDefaultSamplingSteps = 50;
inline constexpr double kDefaultCfgStrength = 3.0;
inline constexpr double kDefaultTimestepMu = 1.0;
inline constexpr double kDefaultTimestepSigma = 1.0;
inline constexpr double kDefaultCondDropRate = 0.1;

inline std::vector<double> interpolate(const std::vector<double>& x0,
                                       const std::vector<double>& eps, double t) {
    if (x0.size() != eps.size()) throw std::invalid_argument("interpolate: shape mismatch");
    if (!(t >= 0.0 && t <= 1.0)) throw std::invalid_argument("interpolate: t out of [0,1]");
    std::vector<double> x(x0.size());
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = (1.0 - t) * x0[i] + t * eps[i];
    return x;
}

inline double cfm_loss(const VelocityFn& model, const std::vector<double>& x0,
                       const std::vector<double>& eps, double t, const Tensor* cond = nullptr) {
    if (x0.size() != eps.size()) throw std::invalid_argument("cfm_loss: shape mismatch");
    const auto xt = interpolate(x0, eps, t);
    const auto v = model(xt, t, cond);
    if (v.size() != x0.size()) throw std::invalid_argument("cfm_loss: model output shape mismatch");
    double acc = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) {
        const double d = v[i] - (eps[i] - x0[i]);
        acc += d * d;
    }
    return acc / static_cast<double>(v.size());
}

// logitNorm(mu, sigma): t = sigmoid(mu + sigma * z), z ~ N(0, 1).
inline double sample_timestep(Rng& rng, double mu = kDefaultTimestepMu,
                              double sigma = kDefaultTimestepSigma) {
    if (!(sigma > 0.0)) throw std::invalid_argument("sample_timestep: sigma must be > 0");
    return sigmoid(mu + sigma * rng.normal());
}

inline std::vector<double> cfg_velocity(const std::vector<double>& v_cond,
                                        const std::vector<double>& v_uncond, double strength) {
    if (v_cond.size() != v_uncond.size()) throw std::invalid_argument("cfg_velocity: shape mismatch");
    std::vector<double> v(v_cond.size());
    for (std::size_t i = 0; i < v.size(); ++i)
        v[i] = v_uncond[i] + strength * (v_cond[i] - v_uncond[i]);
    return v;
}

namespace detail {

inline std::vector<double> guided_velocity(const VelocityFn& model, const std::vector<double>& x,
                                           double t, const Tensor* cond, double strength) {
    if (cond == nullptr || strength == 1.0) return model(x, t, cond);
    return cfg_velocity(model(x, t, cond), model(x, t, nullptr), strength);
}

inline void check_finite(const std::vector<double>& x, double t, const char* where) {
    for (double v : x)
        if (!std::isfinite(v))
            throw NumericError(std::string(where) + ": non-finite state at t=" + std::to_string(t));
}

// One integration step from t to t - h along dx/dt = v (integrated backwards).
inline std::vector<double> ode_step(const VelocityFn& model, std::vector<double> x, double t,
                                    double h, const Tensor* cond, double strength,
                                    OdeMethod method) {
    const auto v1 = guided_velocity(model, x, t, cond, strength);
    if (method == OdeMethod::kEuler) {
        for (std::size_t i = 0; i < x.size(); ++i) x[i] -= h * v1[i];
        return x;
    }
    std::vector<double> xp(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) xp[i] = x[i] - h * v1[i];
    const auto v2 = guided_velocity(model, xp, t - h, cond, strength);
    for (std::size_t i = 0; i < x.size(); ++i) x[i] -= 0.5 * h * (v1[i] + v2[i]);
    return x;
}

}  // namespace detail

// Integrate from t=1 (noise) to t=0 (data) on a uniform grid.
inline std::vector<double> ode_sample(const VelocityFn& model, std::vector<double> x_init,
                                      int steps, const Tensor* cond = nullptr,
                                      double strength = kDefaultCfgStrength,
                                      OdeMethod method = OdeMethod::kHeun) {
    if (steps < 1) throw std::invalid_argument("ode_sample: steps must be >= 1");
    const double h = 1.0 / steps;
    std::vector<double> x = std::move(x_init);
    for (int k = 0; k < steps; ++k) {
        const double t = 1.0 - k * h;
        x = detail::ode_step(model, std::move(x), t, h, cond, strength, method);
        detail::check_finite(x, t - h, "ode_sample");
    }
    return x;
}

using EditMask = std::vector<std::uint8_t>;  // true = regenerate

// Repaint-style masked sampling: masked entries follow the model ODE, unmasked
// entries are pinned to the forward interpolation of the known data with one
// fixed noise draw, so at t=0 they equal x0_known exactly. resample_r > 1
// re-noises each step back to t and repeats it, letting the regenerated region
// re-harmonize with the known one.
inline std::vector<double> repaint_sample(const VelocityFn& model,
                                          const std::vector<double>& x0_known,
                                          const EditMask& mask, int steps, int resample_r,
                                          const Tensor* cond, double strength, std::uint64_t seed,
                                          OdeMethod method = OdeMethod::kHeun) {
    if (mask.size() != x0_known.size()) throw std::invalid_argument("repaint_sample: mask mismatch");
    if (steps < 1) throw std::invalid_argument("repaint_sample: steps must be >= 1");
    if (resample_r < 1) throw std::invalid_argument("repaint_sample: resample_r must be >= 1");
    Rng rng(seed);
    const auto eps_fixed = rng.normal_vector(x0_known.size());
    std::vector<double> x = rng.normal_vector(x0_known.size());
    for (std::size_t i = 0; i < x.size(); ++i)
        if (!mask[i]) x[i] = eps_fixed[i];  // interpolate(x0, eps, 1) == eps

    const double h = 1.0 / steps;
    for (int k = 0; k < steps; ++k) {
        const double t = 1.0 - k * h;
        const double t_next = t - h;
        for (int r = 0; r < resample_r; ++r) {
            x = detail::ode_step(model, std::move(x), t, h, cond, strength, method);
            for (std::size_t i = 0; i < x.size(); ++i)
                if (!mask[i]) x[i] = (1.0 - t_next) * x0_known[i] + t_next * eps_fixed[i];
            detail::check_finite(x, t_next, "repaint_sample");
            if (r + 1 < resample_r) {
                // Re-noise from t_next back to t preserving Gaussian marginals,
                // then pin the known region at time t again.
                const double a = (1.0 - t) / (1.0 - t_next);
                const double b = std::sqrt(std::max(0.0, t * t - a * a * t_next * t_next));
                for (std::size_t i = 0; i < x.size(); ++i) {
                    x[i] = a * x[i] + b * rng.normal();
                    if (!mask[i]) x[i] = (1.0 - t) * x0_known[i] + t * eps_fixed[i];
                }
            }
        }
    }
    for (std::size_t i = 0; i < x.size(); ++i)
        if (!mask[i]) x[i] = x0_known[i];
    return x;
}

}  // namespace slat
