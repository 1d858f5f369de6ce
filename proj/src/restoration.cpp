#include "thor/restoration.hpp"

#include <algorithm>
#include <cmath>

namespace thor {

namespace {

// Disjoint draw-index streams per restoration run.
constexpr std::uint64_t kInitialDraw = 0;
constexpr std::uint64_t kAncestralBase = 1'000'000;
constexpr std::uint64_t kHarmonizeBase = 2'000'000;

struct Chain {
    const DenoiserModel& model;
    const NoiseSchedule& schedule;
    NoiseSpec noise;
    bool stochastic;
    Shape shape;

    Image draw(std::uint64_t index) const { return sample_noise(noise, shape, index); }

    // One plain reverse transition; returns the new state and the noise estimate used.
    std::pair<Image, Image> step(const Image& x, int t) const {
        Image eps_hat = model.predict_noise(x, t);
        Image next;
        if (stochastic && t > 1) {
            const Image z = draw(kAncestralBase + static_cast<std::uint64_t>(t));
            next = reverse_step(x, t, eps_hat, schedule, true, &z);
        } else {
            next = reverse_step(x, t, eps_hat, schedule, false);
        }
        return {std::move(next), std::move(eps_hat)};
    }
};

void check_inputs(const DenoiserModel& model, const Image& x_input, int t_start, const NoiseSchedule& schedule,
                  const NoiseSpec& noise_spec, const RestoreOptions& options) {
    model.check_compatible(schedule, noise_spec, options.allow_noise_mismatch);
    if (t_start < 0 || t_start > schedule.steps()) {
        throw ConfigError("t_start " + std::to_string(t_start) + " outside [0, " + std::to_string(schedule.steps()) +
                          "]");
    }
    if (!all_finite(x_input)) throw ConfigError("restoration input contains non-finite values");
}

} // namespace

void HarmonizationPlan::validate(const NoiseSchedule& schedule) const {
    if (t_start < 0 || t_start > schedule.steps()) {
        throw ConfigError("plan t_start " + std::to_string(t_start) + " outside [0, " +
                          std::to_string(schedule.steps()) + "]");
    }
    for (std::size_t i = 0; i < harmonization_steps.size(); ++i) {
        const int s = harmonization_steps[i];
        if (s <= 0 || s > t_start) {
            throw ConfigError("harmonization step " + std::to_string(s) + " outside (0, t_start]");
        }
        if (i > 0 && s >= harmonization_steps[i - 1]) {
            throw ConfigError("harmonization steps must be strictly descending");
        }
    }
    morph.validate();
}

std::vector<int> evenly_spaced_steps(int t_start, int n) {
    if (n < 0) throw ConfigError("number of harmonization steps must be non-negative");
    std::vector<int> steps;
    for (int k = n; k >= 1; --k) {
        const int s = static_cast<int>(std::ceil(static_cast<double>(k) * t_start / static_cast<double>(n + 1) - 1e-9));
        if (s >= 1 && s <= t_start && (steps.empty() || s < steps.back())) steps.push_back(s);
    }
    return steps;
}

int default_t_start(NoiseKind kind, int schedule_steps) {
    const double fraction = kind == NoiseKind::gaussian ? 0.35 : 0.25;
    return std::max(1, static_cast<int>(std::lround(fraction * schedule_steps)));
}

HarmonizationPlan default_plan(NoiseKind kind, int schedule_steps, int n_steps) {
    HarmonizationPlan plan;
    plan.t_start = default_t_start(kind, schedule_steps);
    plan.harmonization_steps = evenly_spaced_steps(plan.t_start, n_steps);
    return plan;
}

Image restore_plain(const DenoiserModel& model, const Image& x_input, int t_start, const NoiseSchedule& schedule,
                    const NoiseSpec& noise_spec, bool stochastic, std::uint64_t seed, const RestoreOptions& options) {
    check_inputs(model, x_input, t_start, schedule, noise_spec, options);
    if (t_start == 0) return x_input;
    const Chain chain{model, schedule, noise_spec.with_seed(seed), stochastic, shape_of(x_input)};
    Image x = forward_closed(x_input, t_start, schedule, chain.draw(kInitialDraw));
    for (int t = t_start; t >= 1; --t) x = chain.step(x, t).first;
    return clamp01(x);
}

RestorationTrace restore_thor(const DenoiserModel& model, const Image& x_input, const HarmonizationPlan& plan,
                              const NoiseSchedule& schedule, const NoiseSpec& noise_spec,
                              const PerceptualMetric& perceptual, std::uint64_t seed, const RestoreOptions& options) {
    check_inputs(model, x_input, plan.t_start, schedule, noise_spec, options);
    plan.validate(schedule);

    RestorationTrace trace;
    if (plan.harmonization_steps.empty() || plan.t_start == 0) {
        trace.final = restore_plain(model, x_input, plan.t_start, schedule, noise_spec, plan.stochastic_reverse,
                                    seed, options);
        trace.per_step_maps.emplace_back(0, anomaly_map(trace.final, x_input, perceptual));
        return trace;
    }

    const Chain chain{model, schedule, noise_spec.with_seed(seed), plan.stochastic_reverse, shape_of(x_input)};
    auto next_step = plan.harmonization_steps.begin();
    Image x = forward_closed(x_input, plan.t_start, schedule, chain.draw(kInitialDraw));
    for (int t = plan.t_start; t >= 1; --t) {
        auto [x_prev, eps_hat] = chain.step(x, t);
        if (next_step != plan.harmonization_steps.end() && *next_step == t) {
            ++next_step;
            Image x0 = predict_x0(x, t, eps_hat, schedule);
            Image m = anomaly_map(x0, x_input, perceptual);
            const Image w = options.forced_mask
                                ? Image::Constant(x.rows(), x.cols(), *options.forced_mask)
                                : close_dilate(normalize01(m), plan.morph);
            const Image anchor =
                t == 1 ? x_input
                       : forward_closed(x_input, t - 1, schedule,
                                        chain.draw(kHarmonizeBase + static_cast<std::uint64_t>(t)));
            x_prev = (w.array() * x_prev.array() + (1.0 - w.array()) * anchor.array()).matrix();
            trace.per_step_maps.emplace_back(t, std::move(m));
            if (options.keep_x0) trace.per_step_x0.emplace_back(t, std::move(x0));
        }
        x = std::move(x_prev);
    }
    trace.final = clamp01(x);
    return trace;
}

Image thor_score(const RestorationTrace& trace, double eps_floor) {
    std::vector<Image> maps;
    maps.reserve(trace.per_step_maps.size());
    for (const auto& [t, m] : trace.per_step_maps) maps.push_back(m);
    return harmonic_score<double>(maps, eps_floor);
}

} // namespace thor
