#include "thor/schedule.hpp"

#include <cstdio>

namespace thor {

NoiseSchedule NoiseSchedule::from_betas(const Eigen::VectorXd& betas, bool allow_boundary) {
    if (betas.size() < 1) {
        throw ConfigError("noise schedule needs at least one step");
    }
    for (Eigen::Index i = 0; i < betas.size(); ++i) {
        const double b = betas[i];
        const bool ok = allow_boundary ? (b >= 0.0 && b < 1.0) : (b > 0.0 && b < 1.0);
        if (!ok || !std::isfinite(b)) {
            throw ConfigError("beta_" + std::to_string(i + 1) + " = " + std::to_string(b) + " outside (0, 1)");
        }
    }
    NoiseSchedule s;
    s.betas_ = betas;
    s.alphas_ = (1.0 - betas.array()).matrix();
    s.alpha_bars_.resize(betas.size());
    double prod = 1.0;
    for (Eigen::Index i = 0; i < betas.size(); ++i) {
        prod *= s.alphas_[i];
        s.alpha_bars_[i] = prod;
    }
    return s;
}

NoiseSchedule make_linear_schedule(int steps, double beta_min, double beta_max) {
    if (steps < 1) {
        throw ConfigError("schedule length must be >= 1, got " + std::to_string(steps));
    }
    if (!(beta_min > 0.0) || !(beta_min <= beta_max) || !(beta_max < 1.0)) {
        throw ConfigError("linear schedule requires 0 < beta_min <= beta_max < 1");
    }
    Eigen::VectorXd betas(steps);
    if (steps == 1) {
        betas[0] = beta_min;
    } else {
        for (int i = 0; i < steps; ++i) {
            betas[i] = beta_min + (beta_max - beta_min) * static_cast<double>(i) / static_cast<double>(steps - 1);
        }
        betas[steps - 1] = beta_max;
    }
    return NoiseSchedule::from_betas(betas);
}

std::string NoiseSchedule::canonical() const {
    std::string out = "betas:" + std::to_string(betas_.size());
    char buf[40];
    for (Eigen::Index i = 0; i < betas_.size(); ++i) {
        std::snprintf(buf, sizeof(buf), ",%.17g", betas_[i]);
        out += buf;
    }
    return out;
}

} // namespace thor
