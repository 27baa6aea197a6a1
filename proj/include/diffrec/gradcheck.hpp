#pragma once

#include <cmath>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace diffrec {

// A differentiable operation reduced to a scalar objective over a flat
// coordinate vector, paired with its analytic gradient. check_gradient
// compares the analytic gradient against central finite differences.
struct GradCheckCase {
    std::string name;
    std::function<double(std::span<const double>)> value;
    std::function<std::vector<double>(std::span<const double>)> gradient;
    std::vector<double> point;
};

inline double relative_error(double analytic, double numeric) {
    const double denom = std::max({std::fabs(analytic), std::fabs(numeric), 1e-8});
    return std::fabs(analytic - numeric) / denom;
}

inline double check_gradient(const GradCheckCase& c, double eps = 1e-4) {
    if (eps <= 0) throw std::invalid_argument("check_gradient: eps must be > 0");
    std::vector<double> x = c.point;
    const std::vector<double> analytic = c.gradient(x);
    if (analytic.size() != x.size()) {
        throw std::runtime_error("check_gradient: gradient size mismatch for " + c.name);
    }
    double max_err = 0;
    for (size_t i = 0; i < x.size(); ++i) {
        const double orig = x[i];
        x[i] = orig + eps;
        const double up = c.value(x);
        x[i] = orig - eps;
        const double down = c.value(x);
        x[i] = orig;
        if (!std::isfinite(up) || !std::isfinite(down) || !std::isfinite(analytic[i])) {
            throw std::runtime_error("check_gradient: non-finite value in " + c.name);
        }
        const double numeric = (up - down) / (2.0 * eps);
        max_err = std::max(max_err, relative_error(analytic[i], numeric));
    }
    return max_err;
}

}  // namespace diffrec
