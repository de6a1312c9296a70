#pragma once

// Per-pixel plane decoder: features (C) -> tanh hidden layer -> p (3).

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "planekit/error.hpp"
#include "planekit/image.hpp"
#include "planekit/parallel.hpp"
#include "planekit/rng.hpp"

namespace planekit {

/// Parameters are stored flat: W1 (hidden x in, row-major), b1 (hidden),
/// W2 (3 x hidden, row-major), b2 (3).
struct PlaneHead {
    int in_channels = 0;
    int hidden = 0;
    std::vector<double> params;

    static std::size_t parameter_count(int in_channels, int hidden) {
        return static_cast<std::size_t>(in_channels) * hidden + hidden + static_cast<std::size_t>(hidden) * 3 + 3;
    }

    static PlaneHead zeros(int in_channels, int hidden) {
        require(in_channels > 0 && hidden > 0, Errc::invalid_input, "plane head needs positive sizes");
        return {in_channels, hidden, std::vector<double>(parameter_count(in_channels, hidden), 0.0)};
    }

    /// Scaled Gaussian init; output bias set to `bias`.
    static PlaneHead random(int in_channels, int hidden, std::uint64_t seed, const double (&bias)[3] = {0, 0, 0}) {
        PlaneHead head = zeros(in_channels, hidden);
        Rng rng(seed);
        const double s1 = 1.0 / std::sqrt(static_cast<double>(in_channels));
        const double s2 = 1.0 / std::sqrt(static_cast<double>(hidden));
        for (int j = 0; j < hidden; ++j) {
            for (int c = 0; c < in_channels; ++c) {
                head.w1(j, c) = s1 * rng.normal();
            }
        }
        for (int o = 0; o < 3; ++o) {
            for (int j = 0; j < hidden; ++j) {
                head.w2(o, j) = s2 * rng.normal();
            }
            head.b2(o) = bias[o];
        }
        return head;
    }

    std::size_t w1_offset() const { return 0; }
    std::size_t b1_offset() const { return static_cast<std::size_t>(in_channels) * hidden; }
    std::size_t w2_offset() const { return b1_offset() + hidden; }
    std::size_t b2_offset() const { return w2_offset() + static_cast<std::size_t>(hidden) * 3; }

    double& w1(int j, int c) { return params[w1_offset() + static_cast<std::size_t>(j) * in_channels + c]; }
    double w1(int j, int c) const { return params[w1_offset() + static_cast<std::size_t>(j) * in_channels + c]; }
    double& b1(int j) { return params[b1_offset() + j]; }
    double b1(int j) const { return params[b1_offset() + j]; }
    double& w2(int o, int j) { return params[w2_offset() + static_cast<std::size_t>(o) * hidden + j]; }
    double w2(int o, int j) const { return params[w2_offset() + static_cast<std::size_t>(o) * hidden + j]; }
    double& b2(int o) { return params[b2_offset() + o]; }
    double b2(int o) const { return params[b2_offset() + o]; }

    void validate() const {
        require(in_channels > 0 && hidden > 0 && params.size() == parameter_count(in_channels, hidden),
                Errc::invalid_input, "plane head parameter count mismatch");
    }
};

namespace detail {

inline void head_hidden(const PlaneHead& head, std::span<const double> x, std::vector<double>& act) {
    for (int j = 0; j < head.hidden; ++j) {
        double z = head.b1(j);
        for (int c = 0; c < head.in_channels; ++c) {
            z += head.w1(j, c) * x[c];
        }
        act[j] = std::tanh(z);
    }
}

} // namespace detail

inline VectorMap head_forward(const PlaneHead& head, const VectorMap& features) {
    head.validate();
    require(features.channels() == head.in_channels, Errc::invalid_input, "feature channels do not match the head");
    VectorMap out(features.height(), features.width(), 3);
    parallel_rows(features.height(), [&](int row) {
        std::vector<double> act(head.hidden);
        for (int col = 0; col < features.width(); ++col) {
            detail::head_hidden(head, features.pixel(row, col), act);
            auto y = out.pixel(row, col);
            for (int o = 0; o < 3; ++o) {
                double v = head.b2(o);
                for (int j = 0; j < head.hidden; ++j) {
                    v += head.w2(o, j) * act[j];
                }
                y[o] = v;
            }
        }
    });
    return out;
}

struct HeadGradients {
    std::vector<double> params;
    VectorMap features;
};

/// Reverse pass for an upstream dL/dp map. Per-row partial sums are reduced in
/// row order, so the result is independent of the worker count.
inline HeadGradients head_backward(const PlaneHead& head, const VectorMap& features, const VectorMap& upstream) {
    head.validate();
    require(features.channels() == head.in_channels, Errc::invalid_input, "feature channels do not match the head");
    require(upstream.channels() == 3 && upstream.same_shape(features), Errc::invalid_input,
            "upstream gradient shape mismatch");
    const int h = features.height();
    const int w = features.width();
    HeadGradients out{std::vector<double>(head.params.size(), 0.0), VectorMap(h, w, head.in_channels)};
    std::vector<std::vector<double>> row_partials(h, std::vector<double>(head.params.size(), 0.0));
    parallel_rows(h, [&](int row) {
        auto& g = row_partials[row];
        std::vector<double> act(head.hidden);
        std::vector<double> d_pre(head.hidden);
        for (int col = 0; col < w; ++col) {
            const auto up = upstream.pixel(row, col);
            if (up[0] == 0.0 && up[1] == 0.0 && up[2] == 0.0) {
                continue;
            }
            const auto x = features.pixel(row, col);
            detail::head_hidden(head, x, act);
            for (int o = 0; o < 3; ++o) {
                g[head.b2_offset() + o] += up[o];
                for (int j = 0; j < head.hidden; ++j) {
                    g[head.w2_offset() + static_cast<std::size_t>(o) * head.hidden + j] += up[o] * act[j];
                }
            }
            auto dx = out.features.pixel(row, col);
            for (int j = 0; j < head.hidden; ++j) {
                double d_act = 0;
                for (int o = 0; o < 3; ++o) {
                    d_act += up[o] * head.w2(o, j);
                }
                d_pre[j] = d_act * (1.0 - act[j] * act[j]);
                g[head.b1_offset() + j] += d_pre[j];
                for (int c = 0; c < head.in_channels; ++c) {
                    g[head.w1_offset() + static_cast<std::size_t>(j) * head.in_channels + c] += d_pre[j] * x[c];
                    dx[c] += d_pre[j] * head.w1(j, c);
                }
            }
        }
    });
    for (const auto& partial : row_partials) {
        for (std::size_t k = 0; k < partial.size(); ++k) {
            out.params[k] += partial[k];
        }
    }
    return out;
}

struct AdamState {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    std::vector<double> first_moment;
    std::vector<double> second_moment;
    std::int64_t step = 0;

    static AdamState for_head(const PlaneHead& head, double learning_rate) {
        AdamState s;
        s.learning_rate = learning_rate;
        s.first_moment.assign(head.params.size(), 0.0);
        s.second_moment.assign(head.params.size(), 0.0);
        return s;
    }
};

inline void optimizer_step(PlaneHead& head, std::span<const double> grads, AdamState& state) {
    require(grads.size() == head.params.size() && state.first_moment.size() == head.params.size() &&
                state.second_moment.size() == head.params.size(),
            Errc::invalid_input, "optimizer state does not match the head");
    ++state.step;
    const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
    const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
    for (std::size_t i = 0; i < grads.size(); ++i) {
        auto& m = state.first_moment[i];
        auto& v = state.second_moment[i];
        m = state.beta1 * m + (1.0 - state.beta1) * grads[i];
        v = state.beta2 * v + (1.0 - state.beta2) * grads[i] * grads[i];
        head.params[i] -= state.learning_rate * (m / c1) / (std::sqrt(v / c2) + state.epsilon);
    }
}

} // namespace planekit
