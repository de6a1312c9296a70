#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "planekit/rng.hpp"

namespace planekit {

/// A scalar function of a flat parameter vector with its analytic gradient.
struct GradCheckProblem {
    std::string name;
    std::function<std::vector<double>(Rng&)> sample;
    std::function<double(std::span<const double>)> value;
    std::function<std::vector<double>(std::span<const double>)> gradient;
    /// Distance of the closest non-differentiable argument from its kink (e.g.
    /// the smallest |x| under an abs()). Optional; if set, points closer than
    /// kink_factor * h are resampled.
    std::function<double(std::span<const double>)> kink_margin;
};

struct GradCheckOptions {
    double step = 1e-5;
    /// Denominator floor so coordinates with (near-)zero gradient compare absolutely.
    double abs_floor = 1e-6;
    double kink_factor = 10.0;
    int max_resamples = 100;
};

struct GradCheckReport {
    double max_rel_error = 0;
    std::size_t worst_coordinate = 0;
    int resamples = 0;
    std::size_t coordinates = 0;
};

inline double relative_error(double analytic, double numeric, double abs_floor) {
    return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), abs_floor});
}

/// Central differences on every coordinate against the analytic gradient.
inline GradCheckReport finite_diff_check(const GradCheckProblem& problem, Rng& rng, const GradCheckOptions& opt = {}) {
    GradCheckReport report;
    std::vector<double> x = problem.sample(rng);
    if (problem.kink_margin) {
        while (problem.kink_margin(x) < opt.kink_factor * opt.step && report.resamples < opt.max_resamples) {
            x = problem.sample(rng);
            ++report.resamples;
        }
    }
    const std::vector<double> analytic = problem.gradient(x);
    report.coordinates = x.size();
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double saved = x[i];
        x[i] = saved + opt.step;
        const double plus = problem.value(x);
        x[i] = saved - opt.step;
        const double minus = problem.value(x);
        x[i] = saved;
        const double numeric = (plus - minus) / (2.0 * opt.step);
        const double err = relative_error(analytic[i], numeric, opt.abs_floor);
        if (err > report.max_rel_error) {
            report.max_rel_error = err;
            report.worst_coordinate = i;
        }
    }
    return report;
}

} // namespace planekit
