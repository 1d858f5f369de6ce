#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <string>

#include "thor/errors.hpp"
#include "thor/image.hpp"

namespace thor {

/// Beta/alpha/alpha-bar tables of a T-step diffusion. Timesteps are 1-indexed.
class NoiseSchedule {
public:
    NoiseSchedule() = default;

    /// Builds the tables from explicit betas. With `allow_boundary`, beta = 0 is
    /// accepted (identity step); only test harnesses should ask for that.
    static NoiseSchedule from_betas(const Eigen::VectorXd& betas, bool allow_boundary = false);

    [[nodiscard]] int steps() const { return static_cast<int>(betas_.size()); }
    [[nodiscard]] double beta(int t) const { return betas_[index(t)]; }
    [[nodiscard]] double alpha(int t) const { return alphas_[index(t)]; }
    [[nodiscard]] double alpha_bar(int t) const { return alpha_bars_[index(t)]; }

    [[nodiscard]] const Eigen::VectorXd& betas() const { return betas_; }
    [[nodiscard]] const Eigen::VectorXd& alphas() const { return alphas_; }
    [[nodiscard]] const Eigen::VectorXd& alpha_bars() const { return alpha_bars_; }

    [[nodiscard]] double beta_min() const { return betas_.size() ? betas_[0] : 0.0; }
    [[nodiscard]] double beta_max() const { return betas_.size() ? betas_[betas_.size() - 1] : 0.0; }

    /// Stable text form of the table, used for checkpoint fingerprints.
    [[nodiscard]] std::string canonical() const;

    void check_step(int t) const {
        if (t < 1 || t > steps()) {
            throw ConfigError("timestep " + std::to_string(t) + " outside [1, " + std::to_string(steps()) + "]");
        }
    }

private:
    [[nodiscard]] Eigen::Index index(int t) const {
        check_step(t);
        return t - 1;
    }

    Eigen::VectorXd betas_;
    Eigen::VectorXd alphas_;
    Eigen::VectorXd alpha_bars_;
};

/// Betas linearly spaced from beta_min to beta_max inclusive.
NoiseSchedule make_linear_schedule(int steps, double beta_min, double beta_max);

/// One Markov noising step: sqrt(a_t) x_{t-1} + sqrt(1 - a_t) eps.
template <typename Scalar>
ImageGrid<Scalar> forward_step(const ImageGrid<Scalar>& x_prev, int t, const NoiseSchedule& schedule,
                               const ImageGrid<Scalar>& eps) {
    require_same_shape(x_prev, eps, "forward_step");
    const double a = schedule.alpha(t);
    return (Scalar(std::sqrt(a)) * x_prev.array() + Scalar(std::sqrt(1.0 - a)) * eps.array()).matrix();
}

/// Jump from x_0 straight to level t: sqrt(abar_t) x_0 + sqrt(1 - abar_t) eps.
template <typename Scalar>
ImageGrid<Scalar> forward_closed(const ImageGrid<Scalar>& x0, int t, const NoiseSchedule& schedule,
                                 const ImageGrid<Scalar>& eps) {
    require_same_shape(x0, eps, "forward_closed");
    const double ab = schedule.alpha_bar(t);
    return (Scalar(std::sqrt(ab)) * x0.array() + Scalar(std::sqrt(1.0 - ab)) * eps.array()).matrix();
}

} // namespace thor
