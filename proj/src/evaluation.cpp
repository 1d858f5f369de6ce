#include "thor/evaluation.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include "thor/errors.hpp"
#include "thor/hashing.hpp"

namespace thor {

using nlohmann::json;

double dice(const Mask& pred, const Mask& gt) {
    require_same_shape(pred, gt, "dice");
    long long inter = 0;
    long long sum = 0;
    for (Index k = 0; k < pred.size(); ++k) {
        const bool p = pred.data()[k] != 0;
        const bool g = gt.data()[k] != 0;
        inter += p && g;
        sum += static_cast<long long>(p) + static_cast<long long>(g);
    }
    if (sum == 0) return 1.0;
    return 2.0 * static_cast<double>(inter) / static_cast<double>(sum);
}

namespace {

void check_aligned(const std::vector<Image>& scores, const std::vector<Mask>& gts) {
    if (scores.empty()) throw ConfigError("max_dice: no score maps");
    if (scores.size() != gts.size()) throw ConfigError("max_dice: score maps and masks are not aligned");
    for (std::size_t i = 0; i < scores.size(); ++i) {
        require_same_shape(scores[i], gts[i], "max_dice");
        if (!all_finite(scores[i])) throw ConfigError("max_dice: score map has non-finite values");
        if ((scores[i].array() < 0.0).any()) throw ConfigError("max_dice: score maps must be non-negative");
    }
}

template <typename T>
std::vector<T> subset(const std::vector<T>& v, const std::vector<std::size_t>& idx) {
    std::vector<T> out;
    out.reserve(idx.size());
    for (auto i : idx) out.push_back(v[i]);
    return out;
}

} // namespace

std::vector<double> distinct_scores(const std::vector<Image>& scores) {
    std::vector<double> values;
    for (const auto& s : scores) values.insert(values.end(), s.data(), s.data() + s.size());
    std::sort(values.begin(), values.end());
    values.erase(std::unique(values.begin(), values.end()), values.end());
    return values;
}

std::vector<double> quantile_thresholds(const std::vector<Image>& scores, int n_thresholds) {
    if (n_thresholds < 1) throw ConfigError("n_thresholds must be at least 1");
    const std::vector<double> values = distinct_scores(scores);
    if (values.empty()) return {};
    const auto d = values.size();
    const auto n = static_cast<std::size_t>(n_thresholds);
    if (n >= d) return values;
    std::vector<double> out;
    for (std::size_t k = 0; k < n; ++k) {
        const std::size_t i = n == 1 ? d - 1 : static_cast<std::size_t>(std::llround(static_cast<double>(k) *
                                                                                     static_cast<double>(d - 1) /
                                                                                     static_cast<double>(n - 1)));
        if (out.empty() || values[i] != out.back()) out.push_back(values[i]);
    }
    return out;
}

double mean_dice_at(const std::vector<Image>& scores, const std::vector<Mask>& gts, double threshold) {
    double total = 0.0;
    for (std::size_t i = 0; i < scores.size(); ++i) total += dice(binarize(scores[i], threshold), gts[i]);
    return total / static_cast<double>(scores.size());
}

DiceSweep sweep_thresholds(const std::vector<Image>& scores, const std::vector<Mask>& gts,
                           const std::vector<double>& thresholds) {
    check_aligned(scores, gts);
    DiceSweep best{-1.0, 0.0};
    for (double t : thresholds) {
        const double d = mean_dice_at(scores, gts, t);
        if (d > best.dice) best = {d, t};
    }
    if (best.dice < 0.0) best = {mean_dice_at(scores, gts, 0.0), 0.0};
    return best;
}

DiceSweep max_dice(const std::vector<Image>& scores, const std::vector<Mask>& gts, int n_thresholds) {
    check_aligned(scores, gts);
    return sweep_thresholds(scores, gts, quantile_thresholds(scores, n_thresholds));
}

DiceSweep max_dice_exhaustive(const std::vector<Image>& scores, const std::vector<Mask>& gts) {
    check_aligned(scores, gts);
    return sweep_thresholds(scores, gts, distinct_scores(scores));
}

double per_image_max_dice(const std::vector<Image>& scores, const std::vector<Mask>& gts) {
    check_aligned(scores, gts);
    double total = 0.0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        total += max_dice_exhaustive({scores[i]}, {gts[i]}).dice;
    }
    return total / static_cast<double>(scores.size());
}

SizeClass stratify(const Mask& gt) {
    const Index n = popcount(gt);
    if (n == 0) throw DataError("stratify: empty mask has no lesion");
    const SizeThresholds t = size_thresholds(shape_of(gt));
    const auto count = static_cast<double>(n);
    if (count < t.small_below) return SizeClass::small;
    if (count < t.large_from) return SizeClass::medium;
    return SizeClass::large;
}

double pixel_auroc(const std::vector<Image>& scores, const std::vector<Mask>& gts) {
    check_aligned(scores, gts);
    std::vector<std::pair<double, bool>> px;
    for (std::size_t i = 0; i < scores.size(); ++i)
        for (Index k = 0; k < scores[i].size(); ++k) px.emplace_back(scores[i].data()[k], gts[i].data()[k] != 0);
    std::sort(px.begin(), px.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
    // Mann-Whitney U with average ranks over ties
    double rank_sum = 0.0;
    long long pos = 0;
    std::size_t i = 0;
    while (i < px.size()) {
        std::size_t j = i;
        while (j < px.size() && px[j].first == px[i].first) ++j;
        const double avg_rank = 0.5 * static_cast<double>(i + 1 + j);
        for (std::size_t k = i; k < j; ++k) {
            if (px[k].second) {
                rank_sum += avg_rank;
                ++pos;
            }
        }
        i = j;
    }
    const auto neg = static_cast<long long>(px.size()) - pos;
    if (pos == 0 || neg == 0) return std::numeric_limits<double>::quiet_NaN();
    const double p = static_cast<double>(pos);
    return (rank_sum - p * (p + 1.0) / 2.0) / (p * static_cast<double>(neg));
}

// ---- detection -----------------------------------------------------------

void DetectionRule::validate() const {
    if (min_component_area < 1) throw ConfigError("min_component_area must be at least 1");
    if (!(min_overlap > 0.0 && min_overlap <= 1.0)) throw ConfigError("detection overlap must lie in (0, 1]");
}

std::vector<Box> detect_components(const Image& score, double threshold, const DetectionRule& rule) {
    rule.validate();
    if (!(threshold >= 0.0)) throw ConfigError("detection threshold must be non-negative");
    std::vector<std::pair<double, Box>> found;
    for (const auto& c : connected_components(binarize(score, threshold))) {
        if (static_cast<Index>(c.pixels.size()) < rule.min_component_area) continue;
        double mass = 0.0;
        for (Index p : c.pixels) mass += score.data()[p];
        found.emplace_back(mass, c.box);
    }
    std::stable_sort(found.begin(), found.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
    std::vector<Box> boxes;
    for (const auto& f : found) boxes.push_back(f.second);
    return boxes;
}

DetectionCounts& DetectionCounts::operator+=(const DetectionCounts& o) {
    hits += o.hits;
    ground_truth += o.ground_truth;
    matched_predictions += o.matched_predictions;
    predictions += o.predictions;
    return *this;
}

double overlap_fraction(const Box& pred, const Box& gt) {
    const int w = std::min(pred.x1, gt.x1) - std::max(pred.x0, gt.x0) + 1;
    const int h = std::min(pred.y1, gt.y1) - std::max(pred.y0, gt.y0) + 1;
    if (w <= 0 || h <= 0) return 0.0;
    return static_cast<double>(w) * static_cast<double>(h) / static_cast<double>(gt.area());
}

DetectionCounts match_boxes(const std::vector<Box>& pred, const std::vector<Box>& gt, const DetectionRule& rule) {
    rule.validate();
    struct Pair {
        double overlap;
        std::size_t p, g;
    };
    std::vector<Pair> pairs;
    for (std::size_t p = 0; p < pred.size(); ++p) {
        for (std::size_t g = 0; g < gt.size(); ++g) {
            const double o = overlap_fraction(pred[p], gt[g]);
            if (o >= rule.min_overlap) pairs.push_back({o, p, g});
        }
    }
    std::stable_sort(pairs.begin(), pairs.end(), [](const Pair& a, const Pair& b) { return a.overlap > b.overlap; });
    std::vector<bool> used_p(pred.size()), used_g(gt.size());
    DetectionCounts c;
    for (const auto& pr : pairs) {
        if (used_p[pr.p] || used_g[pr.g]) continue;
        used_p[pr.p] = used_g[pr.g] = true;
        ++c.hits;
        ++c.matched_predictions;
    }
    c.ground_truth = static_cast<long long>(gt.size());
    c.predictions = static_cast<long long>(pred.size());
    return c;
}

DetectionScores detection_scores(const DetectionCounts& c) {
    DetectionScores s;
    s.recall = c.ground_truth ? static_cast<double>(c.hits) / static_cast<double>(c.ground_truth) : 0.0;
    s.precision =
        c.predictions ? static_cast<double>(c.matched_predictions) / static_cast<double>(c.predictions) : 0.0;
    s.f1 = s.recall + s.precision > 0.0 ? 2.0 * s.precision * s.recall / (s.precision + s.recall) : 0.0;
    return s;
}

DetectionScores recall_f1(const std::vector<Box>& pred, const std::vector<Box>& gt, const DetectionRule& rule) {
    return detection_scores(match_boxes(pred, gt, rule));
}

// ---- experiments ---------------------------------------------------------

std::string to_string(Method m) { return m == Method::ddpm ? "ddpm" : "thor"; }

Method parse_method(const std::string& name) {
    if (name == "ddpm") return Method::ddpm;
    if (name == "thor") return Method::thor;
    throw ConfigError("unknown method '" + name + "' (expected ddpm or thor)");
}

namespace {

json optional_number(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

json class_json(const ClassDice& c) {
    return {{"max_dice", optional_number(c.dice)}, {"threshold", c.threshold}, {"images", c.images}};
}

std::string fmt(double v) {
    std::ostringstream s;
    s.precision(6);
    s << v;
    return s.str();
}

} // namespace

json EvalReport::to_json(bool include_runtime) const {
    json doc = {
        {"method", method},
        {"noise", noise},
        {"t_start", t_start},
        {"harmonization_steps", harmonization_steps},
        {"images", images},
        {"max_dice",
         {{"average", dice_average},
          {"small", optional_number(small.dice)},
          {"medium", optional_number(medium.dice)},
          {"large", optional_number(large.dice)}}},
        {"threshold", threshold},
        {"size_classes", {{"small", class_json(small)}, {"medium", class_json(medium)}, {"large", class_json(large)}}},
        {"per_image_max_dice", optional_number(per_image_dice)},
        {"detection", {{"recall", recall}, {"precision", precision}, {"f1", f1}}},
        {"auxiliary", {{"pixel_auroc", std::isnan(auroc) ? json(nullptr) : json(auroc)}, {"healthy_mae", healthy_mae}}},
        {"config_hash", config_hash},
    };
    if (include_runtime) doc["runtime_seconds"] = runtime_seconds;
    return doc;
}

std::string EvalReport::hash() const { return sha256_hex(to_json(false).dump()); }

EvalReport evaluate_scores(const std::vector<ImageResult>& results, const ExperimentConfig& config) {
    if (results.empty()) throw DataError("evaluation needs at least one anomalous image");
    config.detection.validate();
    std::vector<Image> scores;
    std::vector<Mask> gts;
    for (const auto& r : results) {
        scores.push_back(r.score);
        gts.push_back(r.gt);
    }

    EvalReport rep;
    rep.method = to_string(config.method);
    rep.noise = to_string(config.noise.kind);
    rep.t_start = config.plan.t_start;
    if (config.method == Method::thor) rep.harmonization_steps = config.plan.harmonization_steps;
    rep.images = static_cast<int>(results.size());
    rep.config_hash = config.config_hash;

    const DiceSweep all = max_dice(scores, gts, config.n_thresholds);
    rep.dice_average = all.dice;
    rep.threshold = all.threshold;

    for (SizeClass c : {SizeClass::small, SizeClass::medium, SizeClass::large}) {
        std::vector<std::size_t> idx;
        for (std::size_t i = 0; i < results.size(); ++i)
            if (results[i].size_class == c) idx.push_back(i);
        ClassDice cd;
        cd.images = static_cast<int>(idx.size());
        if (!idx.empty()) {
            const DiceSweep s = max_dice(subset(scores, idx), subset(gts, idx), config.n_thresholds);
            cd.dice = s.dice;
            cd.threshold = s.threshold;
        }
        (c == SizeClass::small ? rep.small : c == SizeClass::medium ? rep.medium : rep.large) = cd;
    }
    if (config.per_image_sweep) rep.per_image_dice = per_image_max_dice(scores, gts);
    rep.auroc = pixel_auroc(scores, gts);

    DetectionCounts counts;
    double mae_total = 0.0;
    for (const auto& r : results) {
        counts += match_boxes(detect_components(r.score, all.threshold, config.detection), component_boxes(r.gt),
                              config.detection);
        const Image healthy = (r.gt.array() == 0).cast<double>();
        const double n = healthy.sum();
        if (n > 0) mae_total += ((r.restoration - r.input).array().abs() * healthy.array()).sum() / n;
    }
    const DetectionScores det = detection_scores(counts);
    rep.recall = det.recall;
    rep.precision = det.precision;
    rep.f1 = det.f1;
    rep.healthy_mae = mae_total / static_cast<double>(results.size());
    return rep;
}

ExperimentResult run_experiment(const std::vector<Sample>& anomalous, const DenoiserModel& model,
                                const NoiseSchedule& schedule, const ExperimentConfig& config,
                                const PerceptualMetric& perceptual) {
    const auto start = std::chrono::steady_clock::now();
    if (anomalous.empty()) throw DataError("run_experiment: no anomalous images");
    config.plan.validate(schedule);
    model.check_compatible(schedule, config.noise, false);

    ExperimentResult out;
    for (std::size_t i = 0; i < anomalous.size(); ++i) {
        const Sample& s = anomalous[i];
        if (s.mask.size() == 0) throw DataError("run_experiment: image " + s.id + " has no mask");
        const std::uint64_t seed = mix_seed(config.seed, i);
        ImageResult r;
        r.id = s.id;
        r.input = s.image;
        r.gt = s.mask;
        r.size_class = s.size_class ? *s.size_class : stratify(s.mask);
        if (config.method == Method::ddpm) {
            r.restoration = restore_plain(model, s.image, config.plan.t_start, schedule, config.noise,
                                          config.plan.stochastic_reverse, seed);
            r.score = anomaly_map(s.image, r.restoration, perceptual);
        } else {
            RestorationTrace trace = restore_thor(model, s.image, config.plan, schedule, config.noise, perceptual, seed);
            r.score = thor_score(trace);
            r.restoration = std::move(trace.final);
        }
        out.images.push_back(std::move(r));
    }
    out.report = evaluate_scores(out.images, config);
    out.report.runtime_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return out;
}

std::string results_csv_header() { return "method,noise,t_start,size_class,images,max_dice,threshold"; }

std::vector<std::string> results_csv_rows(const EvalReport& r) {
    const std::string prefix = r.method + "," + r.noise + "," + std::to_string(r.t_start) + ",";
    std::vector<std::string> rows;
    rows.push_back(prefix + "average," + std::to_string(r.images) + "," + fmt(r.dice_average) + "," +
                   fmt(r.threshold));
    for (const auto& [name, c] : {std::pair{"small", r.small}, std::pair{"medium", r.medium},
                                  std::pair{"large", r.large}}) {
        rows.push_back(prefix + name + "," + std::to_string(c.images) + "," + (c.dice ? fmt(*c.dice) : "") + "," +
                       fmt(c.threshold));
    }
    return rows;
}

void write_results_csv(const std::vector<EvalReport>& reports, const std::string& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot write " + path);
    out << results_csv_header() << "\n";
    for (const auto& r : reports)
        for (const auto& row : results_csv_rows(r)) out << row << "\n";
    if (!out) throw IoError("short write " + path);
}

std::vector<EvalReport> ablate(const std::vector<Sample>& anomalous, const std::vector<AblationModel>& models,
                               const NoiseSchedule& schedule, const AblationConfig& config,
                               const PerceptualMetric& perceptual) {
    if (config.t_levels.size() < 2) throw ConfigError("ablation needs at least two t levels");
    if (config.noise_kinds.empty() || config.methods.empty()) throw ConfigError("ablation grid is empty");
    std::vector<EvalReport> reports;
    for (Method method : config.methods) {
        for (NoiseKind kind : config.noise_kinds) {
            const auto it = std::find_if(models.begin(), models.end(), [&](const auto& m) { return m.kind == kind; });
            if (it == models.end() || it->model == nullptr) {
                throw ConfigError("ablation has no model for noise kind " + to_string(kind));
            }
            for (int t : config.t_levels) {
                ExperimentConfig ec = config.base;
                ec.method = method;
                ec.noise = it->model->info().noise;
                ec.plan.t_start = t;
                ec.plan.harmonization_steps = evenly_spaced_steps(t, config.harmonization_steps);
                reports.push_back(run_experiment(anomalous, *it->model, schedule, ec, perceptual).report);
            }
        }
    }
    return reports;
}

void write_plot_data(const std::vector<EvalReport>& reports, const std::string& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot write " + path);
    out << "t_level,method,noise,dice_avg,dice_small,dice_medium,dice_large\n";
    auto opt = [](const ClassDice& c) { return c.dice ? fmt(*c.dice) : std::string(); };
    for (const auto& r : reports) {
        out << r.t_start << "," << r.method << "," << r.noise << "," << fmt(r.dice_average) << "," << opt(r.small)
            << "," << opt(r.medium) << "," << opt(r.large) << "\n";
    }
    if (!out) throw IoError("short write " + path);
}

} // namespace thor
