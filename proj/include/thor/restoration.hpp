#pragma once

#include <cstdint>
#include <optional>
#include <utility>
#include <vector>

#include "thor/anomaly_maps.hpp"
#include "thor/denoiser.hpp"
#include "thor/image.hpp"
#include "thor/noise.hpp"
#include "thor/schedule.hpp"

namespace thor {

/// One reverse step: (x_t - sqrt(1 - a_t) eps_hat) / sqrt(a_t). When
/// `stochastic` and t > 1, sqrt(beta_t) * noise is added.
template <typename Scalar>
ImageGrid<Scalar> reverse_step(const ImageGrid<Scalar>& x_t, int t, const ImageGrid<Scalar>& eps_hat,
                               const NoiseSchedule& schedule, bool stochastic = false,
                               const ImageGrid<Scalar>* noise = nullptr) {
    require_same_shape(x_t, eps_hat, "reverse_step");
    const double a = schedule.alpha(t);
    ImageGrid<Scalar> out =
        ((x_t.array() - Scalar(std::sqrt(1.0 - a)) * eps_hat.array()) / Scalar(std::sqrt(a))).matrix();
    if (stochastic && t > 1) {
        if (noise == nullptr) throw ConfigError("reverse_step: stochastic step needs a noise field");
        require_same_shape(x_t, *noise, "reverse_step");
        out += Scalar(std::sqrt(schedule.beta(t))) * *noise;
    }
    return out;
}

/// x_0 estimate (x_t - sqrt(1 - abar_t) eps_hat) / sqrt(abar_t), unclamped.
template <typename Scalar>
ImageGrid<Scalar> predict_x0_raw(const ImageGrid<Scalar>& x_t, int t, const ImageGrid<Scalar>& eps_hat,
                                 const NoiseSchedule& schedule) {
    require_same_shape(x_t, eps_hat, "predict_x0");
    const double ab = schedule.alpha_bar(t);
    return ((x_t.array() - Scalar(std::sqrt(1.0 - ab)) * eps_hat.array()) / Scalar(std::sqrt(ab))).matrix();
}

/// x_0 estimate clamped to [0, 1], the form used for anomaly maps.
template <typename Scalar>
ImageGrid<Scalar> predict_x0(const ImageGrid<Scalar>& x_t, int t, const ImageGrid<Scalar>& eps_hat,
                             const NoiseSchedule& schedule) {
    return clamp01(predict_x0_raw(x_t, t, eps_hat, schedule));
}

/// Start level plus the descending timesteps at which the chain is harmonized.
struct HarmonizationPlan {
    int t_start = 350;
    std::vector<int> harmonization_steps;
    MorphConfig morph;
    bool stochastic_reverse = false;

    void validate(const NoiseSchedule& schedule) const;
};

/// n steps evenly spaced inside (0, t_start]: ceil(k / (n + 1) * t_start), k = n..1.
std::vector<int> evenly_spaced_steps(int t_start, int n);

/// Conventional start level for a noise family, scaled to the schedule length
/// (0.35 T for Gaussian, 0.25 T for simplex).
int default_t_start(NoiseKind kind, int schedule_steps);

HarmonizationPlan default_plan(NoiseKind kind, int schedule_steps, int n_steps = 3);

struct RestorationTrace {
    Image final;
    /// (t, raw anomaly map m) per executed harmonization step, in execution order.
    std::vector<std::pair<int, Image>> per_step_maps;
    std::vector<std::pair<int, Image>> per_step_x0;
};

/// Inference knobs that do not belong to the plan.
struct RestoreOptions {
    /// Replaces cd(normalize01(m)) with a constant mask. Test hook.
    std::optional<double> forced_mask;
    bool allow_noise_mismatch = false;
    bool keep_x0 = false;
};

/// Partial diffusion baseline: noise to t_start in one jump, then apply reverse_step
/// down to t = 1. t_start = 0 returns the input.
Image restore_plain(const DenoiserModel& model, const Image& x_input, int t_start, const NoiseSchedule& schedule,
                    const NoiseSpec& noise_spec, bool stochastic, std::uint64_t seed,
                    const RestoreOptions& options = {});

/// Partial diffusion with temporal harmonization. At each planned step t the
/// reverse-step output is blended with the input noised to level t - 1,
/// weighted by the morphologically conditioned anomaly mask of the step's x_0
/// estimate. Without harmonization steps this is `restore_plain` plus one
/// final map.
RestorationTrace restore_thor(const DenoiserModel& model, const Image& x_input, const HarmonizationPlan& plan,
                              const NoiseSchedule& schedule, const NoiseSpec& noise_spec,
                              const PerceptualMetric& perceptual, std::uint64_t seed,
                              const RestoreOptions& options = {});

/// Anomaly score of a trace: harmonic mean of its per-step maps.
Image thor_score(const RestorationTrace& trace, double eps_floor = 1e-8);

} // namespace thor
