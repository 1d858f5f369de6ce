#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "thor/image.hpp"
#include "thor/noise.hpp"
#include "thor/schedule.hpp"
#include "thor/unet.hpp"

namespace thor {

struct DenoiserConfig {
    int base_channels = 32;
    int depth = 3;
    int time_embed_dim = 64;
    Shape image_size{64, 64};

    void validate() const;
    [[nodiscard]] nn::Architecture architecture() const;
};

struct TrainConfig {
    int epochs = 50;
    int batch_size = 8;
    double learning_rate = 2e-4;
    std::uint64_t seed = 0;
    NoiseSpec noise_spec;
    double grad_clip = 1.0;

    void validate() const;
};

/// Fingerprint tying a model to the schedule and noise family it was trained with.
std::string schedule_fingerprint(const NoiseSchedule& schedule, const NoiseSpec& noise);

/// Provenance stored next to the parameters.
struct TrainingInfo {
    int steps = 0; // T of the training schedule
    double beta_min = 0.0;
    double beta_max = 0.0;
    NoiseSpec noise;
    std::uint64_t seed = 0;
    int epochs = 0;
    int batch_size = 0;
    double learning_rate = 0.0;
    double final_loss = 0.0;
    std::string fingerprint;
    std::string schedule_hash;
};

/// Trained epsilon predictor. Read-only after construction, so one instance
/// may serve concurrent restorations.
class DenoiserModel {
public:
    DenoiserModel(const DenoiserConfig& config, std::vector<float> params, TrainingInfo info);

    /// Freshly initialised, untrained model bound to `schedule`/`noise`.
    static DenoiserModel untrained(const DenoiserConfig& config, const NoiseSchedule& schedule,
                                   const NoiseSpec& noise, std::uint64_t seed);

    [[nodiscard]] const DenoiserConfig& config() const { return config_; }
    [[nodiscard]] const TrainingInfo& info() const { return info_; }
    [[nodiscard]] const std::string& schedule_fingerprint() const { return info_.fingerprint; }
    [[nodiscard]] const std::vector<float>& parameters() const { return params_; }
    [[nodiscard]] const nn::UNet& network() const { return *net_; }

    /// Throws CompatibilityError unless the model was trained with this schedule
    /// and (unless `allow_noise_mismatch`) this noise family.
    void check_compatible(const NoiseSchedule& schedule, const NoiseSpec& noise,
                          bool allow_noise_mismatch = false) const;

    [[nodiscard]] Image predict_noise(const Image& x_t, int t) const;

private:
    DenoiserConfig config_;
    std::shared_ptr<const nn::UNet> net_;
    std::vector<float> params_;
    TrainingInfo info_;
};

/// eps_theta(x_t, t).
inline Image predict_noise(const DenoiserModel& model, const Image& x_t, int t) {
    return model.predict_noise(x_t, t);
}

struct EpochStats {
    int epoch = 0;
    double mean_loss = 0.0;
};

struct TrainResult {
    DenoiserModel model;
    std::vector<EpochStats> curve;
};

using EpochCallback = std::function<void(const EpochStats&)>;

/// Epsilon-prediction MSE training on healthy images with Adam. Timesteps are
/// uniform on [1, T] and noise comes from `tcfg.noise_spec`.
TrainResult train(const std::vector<Image>& dataset, const NoiseSchedule& schedule, const TrainConfig& tcfg,
                  const DenoiserConfig& dcfg, const EpochCallback& on_epoch = {});

/// Writes `path` (parameters) and `path + ".json"` (metadata).
void save_checkpoint(const DenoiserModel& model, const std::string& path);
DenoiserModel load_checkpoint(const std::string& path);

void write_training_curve(const std::vector<EpochStats>& curve, const std::string& path);

} // namespace thor
