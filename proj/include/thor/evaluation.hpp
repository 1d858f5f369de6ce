#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "thor/anomaly_maps.hpp"
#include "thor/data.hpp"
#include "thor/denoiser.hpp"
#include "thor/image.hpp"
#include "thor/noise.hpp"
#include "thor/restoration.hpp"
#include "thor/schedule.hpp"

namespace thor {

// ---- segmentation --------------------------------------------------------

/// 2|A∩B| / (|A| + |B|); two empty masks score 1.
double dice(const Mask& pred, const Mask& gt);

struct DiceSweep {
    double dice = 0.0;
    double threshold = 0.0;
};

/// Candidate thresholds: n nearest-rank quantiles of the distinct pooled score
/// values, ascending. With n >= the number of distinct values every value is used.
std::vector<double> quantile_thresholds(const std::vector<Image>& scores, int n_thresholds);

/// Every distinct pooled score value, ascending.
std::vector<double> distinct_scores(const std::vector<Image>& scores);

/// Mean over images of dice(score > threshold, gt).
double mean_dice_at(const std::vector<Image>& scores, const std::vector<Mask>& gts, double threshold);

/// Best dataset-level threshold among `thresholds` (first wins on ties).
DiceSweep sweep_thresholds(const std::vector<Image>& scores, const std::vector<Mask>& gts,
                           const std::vector<double>& thresholds);

/// Maximum achievable Dice with one threshold shared by all images.
DiceSweep max_dice(const std::vector<Image>& scores, const std::vector<Mask>& gts, int n_thresholds = 256);
DiceSweep max_dice_exhaustive(const std::vector<Image>& scores, const std::vector<Mask>& gts);

/// Mean of each image's own best Dice (exhaustive per-image sweep).
double per_image_max_dice(const std::vector<Image>& scores, const std::vector<Mask>& gts);

/// Size stratum of a lesion mask, with thresholds rescaled to the mask's area.
SizeClass stratify(const Mask& gt);

/// Area under the ROC curve of pooled pixel scores against pooled labels
/// (ties count one half). NaN when one class is absent.
double pixel_auroc(const std::vector<Image>& scores, const std::vector<Mask>& gts);

// ---- detection -----------------------------------------------------------

struct DetectionRule {
    int min_component_area = 4;
    double min_overlap = 0.25; // intersection over ground-truth box area

    void validate() const;
};

/// Tight boxes of the 8-connected components of (score > threshold) with at
/// least `min_component_area` pixels, by descending score mass.
std::vector<Box> detect_components(const Image& score, double threshold, const DetectionRule& rule = {});

struct DetectionCounts {
    long long hits = 0;
    long long ground_truth = 0;
    long long matched_predictions = 0;
    long long predictions = 0;

    DetectionCounts& operator+=(const DetectionCounts& o);
};

struct DetectionScores {
    double recall = 0.0;
    double precision = 0.0;
    double f1 = 0.0;
};

/// Fraction of `gt` covered by `pred`.
double overlap_fraction(const Box& pred, const Box& gt);

/// Greedy one-to-one matching, largest overlap first.
DetectionCounts match_boxes(const std::vector<Box>& pred, const std::vector<Box>& gt, const DetectionRule& rule = {});
DetectionScores detection_scores(const DetectionCounts& counts);
DetectionScores recall_f1(const std::vector<Box>& pred, const std::vector<Box>& gt, const DetectionRule& rule = {});

// ---- experiments ---------------------------------------------------------

enum class Method { ddpm, thor };

std::string to_string(Method m);
Method parse_method(const std::string& name);

struct ClassDice {
    std::optional<double> dice; // empty when the class has no images
    double threshold = 0.0;
    int images = 0;
};

struct EvalReport {
    std::string method;
    std::string noise;
    int t_start = 0;
    std::vector<int> harmonization_steps;
    int images = 0;
    double dice_average = 0.0;
    double threshold = 0.0;
    ClassDice small;
    ClassDice medium;
    ClassDice large;
    std::optional<double> per_image_dice;
    double auroc = 0.0; // auxiliary
    double recall = 0.0;
    double precision = 0.0;
    double f1 = 0.0;
    double healthy_mae = 0.0; // auxiliary: mean |restoration - input| on ground-truth healthy pixels
    std::string config_hash;
    double runtime_seconds = 0.0;

    [[nodiscard]] nlohmann::json to_json(bool include_runtime = true) const;
    /// SHA-256 of the canonical JSON without the runtime.
    [[nodiscard]] std::string hash() const;
};

struct ExperimentConfig {
    Method method = Method::thor;
    HarmonizationPlan plan;
    NoiseSpec noise;
    std::uint64_t seed = 0;
    int n_thresholds = 256;
    DetectionRule detection;
    bool per_image_sweep = false;
    std::string config_hash;
};

struct ImageResult {
    std::string id;
    Image input;
    Image restoration;
    Image score;
    Mask gt;
    SizeClass size_class = SizeClass::medium;
};

struct ExperimentResult {
    EvalReport report;
    std::vector<ImageResult> images;
};

/// Restores and scores every sample, then evaluates all metrics. Image i uses
/// seed mix_seed(config.seed, i). DDPM scores are the anomaly map of the final
/// restoration; THOR scores are the harmonic mean of the per-step maps.
ExperimentResult run_experiment(const std::vector<Sample>& anomalous, const DenoiserModel& model,
                                const NoiseSchedule& schedule, const ExperimentConfig& config,
                                const PerceptualMetric& perceptual);

/// Metrics of already computed score maps.
EvalReport evaluate_scores(const std::vector<ImageResult>& results, const ExperimentConfig& config);

std::string results_csv_header();
/// One row per size class plus the average.
std::vector<std::string> results_csv_rows(const EvalReport& report);
void write_results_csv(const std::vector<EvalReport>& reports, const std::string& path);

struct AblationConfig {
    std::vector<int> t_levels;
    std::vector<NoiseKind> noise_kinds{NoiseKind::gaussian};
    std::vector<Method> methods{Method::ddpm, Method::thor};
    int harmonization_steps = 3;
    ExperimentConfig base;
};

struct AblationModel {
    NoiseKind kind;
    const DenoiserModel* model;
};

/// Grid of reports over methods x noise kinds x t_levels, in that nesting order.
std::vector<EvalReport> ablate(const std::vector<Sample>& anomalous, const std::vector<AblationModel>& models,
                               const NoiseSchedule& schedule, const AblationConfig& config,
                               const PerceptualMetric& perceptual);

/// Columns t_level, method, noise, dice_avg, dice_small, dice_medium, dice_large.
void write_plot_data(const std::vector<EvalReport>& reports, const std::string& path);

} // namespace thor
