#pragma once

#include <optional>
#include <string>

#include "json.hpp"
#include "thor/data.hpp"
#include "thor/denoiser.hpp"
#include "thor/evaluation.hpp"
#include "thor/noise.hpp"
#include "thor/restoration.hpp"
#include "thor/schedule.hpp"

namespace thor {

inline constexpr const char* kVersion = "1.0.0";

struct ScheduleConfig {
    int steps = 1000;
    double beta_min = 1e-4;
    double beta_max = 0.02;

    [[nodiscard]] NoiseSchedule build() const;
};

struct PlanConfig {
    std::optional<int> t_start;                 // default: per noise family
    std::optional<std::vector<int>> steps;      // explicit harmonization steps
    int n_steps = 3;                            // evenly spaced when `steps` is unset
    MorphConfig morph;
    bool stochastic_reverse = false;

    [[nodiscard]] HarmonizationPlan build(NoiseKind kind, int schedule_steps) const;
};

struct EvalSettings {
    Method method = Method::thor;
    std::uint64_t seed = 0;
    int n_thresholds = 256;
    DetectionRule detection;
    bool per_image_sweep = false;
};

/// Declarative description of a complete run. Missing keys take defaults;
/// unknown keys are rejected.
struct RunConfig {
    DatasetConfig dataset;
    ScheduleConfig schedule;
    NoiseSpec noise;
    DenoiserConfig denoiser;
    TrainConfig train;
    PlanConfig plan;
    EvalSettings eval;

    void validate() const;

    [[nodiscard]] nlohmann::json to_json() const;
    static RunConfig from_json(const nlohmann::json& doc);
    static RunConfig load(const std::string& path);

    /// SHA-256 over the canonical JSON and the code version.
    [[nodiscard]] std::string hash() const;

    [[nodiscard]] ExperimentConfig experiment() const;
};

nlohmann::json to_json(const NoiseSpec& spec);
NoiseSpec noise_spec_from_json(const nlohmann::json& doc);

} // namespace thor
