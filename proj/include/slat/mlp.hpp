#pragma once
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "errors.hpp"
#include "flow.hpp"
#include "rng.hpp"
#include "tensor.hpp"

// Small fully-connected velocity model with hand-derived gradients, plus an
// Adam loop for the toy rectified-flow training tasks. tanh activations keep
// the backward pass simple and smooth for finite-difference checks.

namespace slat {

struct TinyMlpConfig {
    int in_dim = 2;
    int out_dim = 2;
    int hidden = 64;
    int hidden_layers = 3;  // 2..4 typical
    int cond_dim = 0;       // 0 = unconditional

    static constexpr int kTimeFeatures = 5;

    int input_width() const { return in_dim + kTimeFeatures + cond_dim; }
};

inline void time_features(double t, double* out) {
    const double tau = 2.0 * 3.14159265358979323846 * t;
    out[0] = t;
    out[1] = std::sin(tau);
    out[2] = std::cos(tau);
    out[3] = std::sin(2.0 * tau);
    out[4] = std::cos(2.0 * tau);
}

class TinyMlp {
public:
    static TinyMlp init(const TinyMlpConfig& cfg, Rng& rng) {
        TinyMlp m;
        m.cfg_ = cfg;
        if (cfg.hidden_layers < 1) throw std::invalid_argument("tiny mlp: needs >= 1 hidden layer");
        int in = cfg.input_width();
        for (int l = 0; l < cfg.hidden_layers + 1; ++l) {
            const int out = l == cfg.hidden_layers ? cfg.out_dim : cfg.hidden;
            m.layer_in_.push_back(in);
            m.layer_out_.push_back(out);
            m.layer_off_.push_back(m.params_.size());
            const double std_dev = 1.0 / std::sqrt(static_cast<double>(in));
            for (int i = 0; i < out * in; ++i) m.params_.push_back(rng.normal(0.0, std_dev));
            for (int i = 0; i < out; ++i) m.params_.push_back(0.0);
            in = out;
        }
        m.null_token_off_ = m.params_.size();
        for (int i = 0; i < cfg.cond_dim; ++i) m.params_.push_back(rng.normal(0.0, 0.1));
        return m;
    }

    const TinyMlpConfig& config() const { return cfg_; }
    std::vector<double>& params() { return params_; }
    const std::vector<double>& params() const { return params_; }
    std::size_t param_count() const { return params_.size(); }

    // cond empty => learned null token (or nothing when cond_dim == 0).
    std::vector<double> forward(const std::vector<double>& x, double t,
                                const std::vector<double>& cond = {}) const {
        std::vector<std::vector<double>> acts;
        return forward_impl(x, t, cond, &acts);
    }

    // CFM objective for one (x0, eps, t) draw; accumulates parameter gradients
    // scaled by `weight` into grad (same layout as params) and returns the loss.
    double cfm_loss_accumulate_grad(const std::vector<double>& x0, const std::vector<double>& eps,
                                    double t, const std::vector<double>& cond,
                                    std::vector<double>& grad, double weight = 1.0) const {
        if (grad.size() != params_.size())
            throw std::invalid_argument("tiny mlp: gradient buffer size mismatch");
        if (x0.size() != static_cast<std::size_t>(cfg_.in_dim) || eps.size() != x0.size())
            throw std::invalid_argument("tiny mlp: sample dimension mismatch");
        const auto xt = interpolate(x0, eps, t);

        std::vector<std::vector<double>> acts;  // acts[0] = input, then post-activation per layer
        const auto v = forward_impl(xt, t, cond, &acts);

        double loss = 0.0;
        std::vector<double> delta(v.size());
        for (std::size_t i = 0; i < v.size(); ++i) {
            const double d = v[i] - (eps[i] - x0[i]);
            loss += d * d;
            delta[i] = 2.0 * d / static_cast<double>(v.size());
        }
        loss /= static_cast<double>(v.size());

        // Backward through the stack.
        const int n_layers = static_cast<int>(layer_off_.size());
        for (int l = n_layers - 1; l >= 0; --l) {
            const int in = layer_in_[static_cast<std::size_t>(l)];
            const int out = layer_out_[static_cast<std::size_t>(l)];
            const std::size_t off = layer_off_[static_cast<std::size_t>(l)];
            const std::vector<double>& input = acts[static_cast<std::size_t>(l)];
            // delta currently holds dL/d(pre-activation output of layer l)
            std::vector<double> dinput(static_cast<std::size_t>(in), 0.0);
            for (int o = 0; o < out; ++o) {
                const double g = delta[static_cast<std::size_t>(o)];
                const std::size_t wrow = off + static_cast<std::size_t>(o) * in;
                for (int i = 0; i < in; ++i) {
                    grad[wrow + static_cast<std::size_t>(i)] +=
                        weight * g * input[static_cast<std::size_t>(i)];
                    dinput[static_cast<std::size_t>(i)] +=
                        g * params_[wrow + static_cast<std::size_t>(i)];
                }
                grad[off + static_cast<std::size_t>(out) * in + static_cast<std::size_t>(o)] +=
                    weight * g;
            }
            if (l > 0) {
                // input of layer l is tanh(pre-activation of layer l-1)
                delta.assign(dinput.begin(), dinput.end());
                for (std::size_t i = 0; i < delta.size(); ++i)
                    delta[i] *= 1.0 - input[i] * input[i];  // tanh'
            } else if (cfg_.cond_dim > 0 && cond.empty()) {
                // gradient flows into the learned null token
                const int base = cfg_.in_dim + TinyMlpConfig::kTimeFeatures;
                for (int i = 0; i < cfg_.cond_dim; ++i)
                    grad[null_token_off_ + static_cast<std::size_t>(i)] +=
                        weight * dinput[static_cast<std::size_t>(base + i)];
            }
        }
        return loss;
    }

    VelocityFn velocity_fn() const {
        return [this](const std::vector<double>& x, double t, const Tensor* cond) {
            std::vector<double> c;
            if (cond != nullptr && cfg_.cond_dim > 0) {
                if (cond->ndim() != 2 || static_cast<int>(cond->dim(1)) != cfg_.cond_dim)
                    throw std::invalid_argument("tiny mlp: condition width mismatch");
                c.assign(cond->data(), cond->data() + cfg_.cond_dim);  // first row
            }
            return forward(x, t, c);
        };
    }

private:
    std::vector<double> forward_impl(const std::vector<double>& x, double t,
                                     const std::vector<double>& cond,
                                     std::vector<std::vector<double>>* acts) const {
        if (x.size() != static_cast<std::size_t>(cfg_.in_dim))
            throw std::invalid_argument("tiny mlp: input dimension mismatch");
        std::vector<double> cur(static_cast<std::size_t>(cfg_.input_width()));
        std::copy(x.begin(), x.end(), cur.begin());
        time_features(t, cur.data() + cfg_.in_dim);
        if (cfg_.cond_dim > 0) {
            const double* c = cond.empty() ? params_.data() + null_token_off_ : cond.data();
            if (!cond.empty() && cond.size() != static_cast<std::size_t>(cfg_.cond_dim))
                throw std::invalid_argument("tiny mlp: condition dimension mismatch");
            std::copy(c, c + cfg_.cond_dim,
                      cur.begin() + cfg_.in_dim + TinyMlpConfig::kTimeFeatures);
        }
        acts->push_back(cur);
        const int n_layers = static_cast<int>(layer_off_.size());
        for (int l = 0; l < n_layers; ++l) {
            const int in = layer_in_[static_cast<std::size_t>(l)];
            const int out = layer_out_[static_cast<std::size_t>(l)];
            const std::size_t off = layer_off_[static_cast<std::size_t>(l)];
            std::vector<double> next(static_cast<std::size_t>(out));
            for (int o = 0; o < out; ++o) {
                double acc = params_[off + static_cast<std::size_t>(out) * in +
                                     static_cast<std::size_t>(o)];
                const std::size_t wrow = off + static_cast<std::size_t>(o) * in;
                for (int i = 0; i < in; ++i)
                    acc += params_[wrow + static_cast<std::size_t>(i)] *
                           cur[static_cast<std::size_t>(i)];
                next[static_cast<std::size_t>(o)] = acc;
            }
            if (l < n_layers - 1)
                for (double& v : next) v = std::tanh(v);
            cur = std::move(next);
            if (l < n_layers - 1) acts->push_back(cur);
        }
        return cur;
    }

    TinyMlpConfig cfg_;
    std::vector<double> params_;
    std::vector<int> layer_in_, layer_out_;
    std::vector<std::size_t> layer_off_;
    std::size_t null_token_off_ = 0;
};

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

class AdamOptimizer {
public:
    AdamOptimizer(std::size_t n, AdamConfig cfg) : cfg_(cfg), m_(n, 0.0), v_(n, 0.0) {}

    void step(std::vector<double>& params, const std::vector<double>& grad) {
        ++t_;
        const double bc1 = 1.0 - std::pow(cfg_.beta1, t_);
        const double bc2 = 1.0 - std::pow(cfg_.beta2, t_);
        for (std::size_t i = 0; i < params.size(); ++i) {
            m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * grad[i];
            v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * grad[i] * grad[i];
            params[i] -= cfg_.lr * (m_[i] / bc1) / (std::sqrt(v_[i] / bc2) + cfg_.eps);
        }
    }

private:
    AdamConfig cfg_;
    std::vector<double> m_, v_;
    int t_ = 0;
};

struct TrainConfig {
    AdamConfig adam;
    int iterations = 4000;
    int batch = 64;
    std::uint64_t seed = 0;
    double cond_drop = kDefaultCondDropRate;
    double timestep_mu = kDefaultTimestepMu;
    double timestep_sigma = kDefaultTimestepSigma;
    double divergence_threshold = 1e6;
};

struct TrainResult {
    std::vector<double> loss_trace;  // one entry per iteration
};

// Adam on manually derived CFM gradients. `conditions`, when provided, is an
// (n, cond_dim) matrix aligned with the dataset rows; rows are dropped to the
// learned null token at the configured rate.
inline TrainResult train_toy_flow(const Tensor& dataset, TinyMlp& model, const TrainConfig& cfg,
                                  const Tensor* conditions = nullptr) {
    if (dataset.ndim() != 2 || dataset.dim(0) == 0)
        throw std::invalid_argument("train_toy_flow: dataset must be a non-empty (n, d) matrix");
    const std::size_t n = dataset.dim(0);
    const int d = static_cast<int>(dataset.dim(1));
    if (d != model.config().in_dim || d != model.config().out_dim)
        throw std::invalid_argument("train_toy_flow: dataset width must match model dims");
    if (conditions != nullptr &&
        (conditions->ndim() != 2 || conditions->dim(0) != n ||
         static_cast<int>(conditions->dim(1)) != model.config().cond_dim))
        throw std::invalid_argument("train_toy_flow: condition matrix mismatch");

    Rng rng(cfg.seed);
    AdamOptimizer opt(model.param_count(), cfg.adam);
    std::vector<double> grad(model.param_count());
    std::vector<double> x0(static_cast<std::size_t>(d)), eps(static_cast<std::size_t>(d));
    TrainResult result;
    result.loss_trace.reserve(static_cast<std::size_t>(cfg.iterations));
    for (int it = 0; it < cfg.iterations; ++it) {
        std::fill(grad.begin(), grad.end(), 0.0);
        double loss = 0.0;
        for (int b = 0; b < cfg.batch; ++b) {
            const std::size_t row = rng.uniform_index(n);
            for (int i = 0; i < d; ++i)
                x0[static_cast<std::size_t>(i)] = dataset.at(row, static_cast<std::size_t>(i));
            for (double& e : eps) e = rng.normal();
            const double t = sample_timestep(rng, cfg.timestep_mu, cfg.timestep_sigma);
            std::vector<double> cond;
            if (conditions != nullptr && rng.uniform() >= cfg.cond_drop) {
                cond.resize(conditions->dim(1));
                for (std::size_t i = 0; i < cond.size(); ++i) cond[i] = conditions->at(row, i);
            }
            loss += model.cfm_loss_accumulate_grad(x0, eps, t, cond, grad, 1.0 / cfg.batch);
        }
        loss /= cfg.batch;
        if (!(loss < cfg.divergence_threshold))
            throw NumericError("train_toy_flow: loss diverged at iteration " + std::to_string(it));
        opt.step(model.params(), grad);
        result.loss_trace.push_back(loss);
    }
    return result;
}

// ---------------------------------------------------------------------------
// Toy datasets

inline Tensor make_single_point_dataset(const std::vector<double>& p, std::size_t n) {
    Tensor t({n, p.size()});
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < p.size(); ++c) t.at(r, c) = p[c];
    return t;
}

inline Tensor make_gaussian_dataset(const std::vector<double>& mean, double stddev, std::size_t n,
                                    Rng& rng) {
    Tensor t({n, mean.size()});
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < mean.size(); ++c) t.at(r, c) = mean[c] + stddev * rng.normal();
    return t;
}

// Classic interleaved half circles in 2D.
inline Tensor make_two_moons_dataset(std::size_t n, double noise, Rng& rng) {
    Tensor t({n, 2});
    for (std::size_t r = 0; r < n; ++r) {
        const double a = rng.uniform(0.0, 3.14159265358979323846);
        double x, y;
        if (rng.uniform() < 0.5) {
            x = std::cos(a);
            y = std::sin(a);
        } else {
            x = 1.0 - std::cos(a);
            y = 0.5 - std::sin(a);
        }
        t.at(r, std::size_t(0)) = x + noise * rng.normal();
        t.at(r, std::size_t(1)) = y + noise * rng.normal();
    }
    return t;
}

// Noiseless manifold reference for nearest-distance checks.
inline Tensor two_moons_manifold(std::size_t n_per_moon) {
    Tensor t({2 * n_per_moon, 2});
    for (std::size_t i = 0; i < n_per_moon; ++i) {
        const double a = 3.14159265358979323846 * static_cast<double>(i) /
                         static_cast<double>(n_per_moon - 1);
        t.at(i, std::size_t(0)) = std::cos(a);
        t.at(i, std::size_t(1)) = std::sin(a);
        t.at(n_per_moon + i, std::size_t(0)) = 1.0 - std::cos(a);
        t.at(n_per_moon + i, std::size_t(1)) = 0.5 - std::sin(a);
    }
    return t;
}

}  // namespace slat
