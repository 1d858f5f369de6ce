#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "thor/anomaly_maps.hpp"
#include "thor/data.hpp"
#include "thor/denoiser.hpp"
#include "thor/evaluation.hpp"
#include "thor/hashing.hpp"
#include "thor/io.hpp"
#include "thor/noise.hpp"
#include "thor/restoration.hpp"
#include "thor/run_config.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace thor;

namespace {

using Clock = std::chrono::steady_clock;

struct Globals {
    bool json_summary = false;
    bool quiet = false;
};

std::string default_out(const std::string& command) {
    const char* root = std::getenv("THOR_OUT_ROOT");
    return (fs::path(root && *root ? root : "thor_runs") / command).string();
}

std::string resolve_out(const std::string& out, const std::string& command) {
    const std::string dir = out.empty() ? default_out(command) : out;
    io::ensure_directory(dir);
    const fs::path probe = fs::path(dir) / ".write_probe";
    {
        std::ofstream f(probe);
        if (!f) throw IoError("output directory is not writable: " + dir);
    }
    fs::remove(probe);
    return dir;
}

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream in(s);
    std::string item;
    while (std::getline(in, item, ',')) {
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

int parse_int(const std::string& s, const std::string& what) {
    try {
        std::size_t used = 0;
        const int v = std::stoi(s, &used);
        if (used != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw ConfigError(what + ": '" + s + "' is not an integer");
    }
}

// "3" is a count of evenly spaced steps; "27,18,9" is an explicit list.
std::vector<int> parse_steps(const std::string& spec, int t_start) {
    if (spec.find(',') == std::string::npos) return evenly_spaced_steps(t_start, parse_int(spec, "--steps"));
    std::vector<int> steps;
    for (const auto& s : split_list(spec)) steps.push_back(parse_int(s, "--steps"));
    return steps;
}

// Values given either as absolute timesteps or as fractions of T.
int parse_level(const std::string& s, int T) {
    if (s.find('.') != std::string::npos) {
        const double f = std::stod(s);
        if (!(f > 0.0 && f <= 1.0)) throw ConfigError("t level fraction must lie in (0, 1]: " + s);
        return std::max(1, static_cast<int>(std::lround(f * T)));
    }
    return parse_int(s, "t level");
}

std::string file_digest(const std::string& path) {
    if (!fs::exists(path)) throw IoError("file not found: " + path);
    return sha256_file(path);
}

json morph_json(const MorphConfig& m) {
    return {{"element", to_string(m.element)},
            {"disk_radius", m.disk_radius},
            {"closing_iterations", m.closing_iterations},
            {"dilation_iterations", m.dilation_iterations}};
}

json plan_json(const HarmonizationPlan& p) {
    return {{"t_start", p.t_start},
            {"harmonization_steps", p.harmonization_steps},
            {"morph", morph_json(p.morph)},
            {"stochastic_reverse", p.stochastic_reverse}};
}

NoiseSchedule schedule_of(const DenoiserModel& model) {
    const auto& i = model.info();
    return make_linear_schedule(i.steps, i.beta_min, i.beta_max);
}

DenoiserModel load_model(const std::string& path) {
    if (path.empty()) throw ConfigError("--checkpoint is required");
    if (!fs::exists(path)) throw IoError("checkpoint not found: " + path);
    return load_checkpoint(path);
}

// The model's own noise spec unless a different family is requested.
NoiseSpec noise_for(const DenoiserModel& model, const std::string& requested) {
    NoiseSpec spec = model.info().noise;
    if (!requested.empty() && parse_noise_kind(requested) != spec.kind) {
        NoiseSpec other;
        other.kind = parse_noise_kind(requested);
        return other;
    }
    return spec;
}

void write_run_record(const std::string& out, const std::string& command, const std::string& config_hash,
                      const json& seeds, const json& settings, const json& inputs, const json& outputs,
                      double seconds) {
    json record = {{"command", command},
                   {"version", kVersion},
                   {"config_hash", config_hash},
                   {"seeds", seeds},
                   {"settings", settings},
                   {"inputs", inputs},
                   {"outputs", outputs},
                   {"wall_time_seconds", seconds}};
    io::write_json(record, (fs::path(out) / "run_record.json").string());
}

void summarize(const Globals& g, const std::string& text, const json& summary) {
    if (g.json_summary) {
        std::cout << summary.dump() << "\n";
    } else {
        std::cout << text << "\n";
    }
}

double seconds_since(Clock::time_point start) {
    return std::chrono::duration<double>(Clock::now() - start).count();
}

io::RgbImage mask_panel(const Mask& m) { return io::grayscale(m.cast<double>()); }

void write_panel(const Image& input, const Image& restoration, const Image& score, const Mask* gt,
                 const std::string& path) {
    const double hi = std::max(score.maxCoeff(), 1e-12);
    std::vector<io::RgbImage> panels{io::grayscale(input), io::grayscale(restoration), io::heatmap(score, 0.0, hi)};
    if (gt != nullptr) panels.push_back(mask_panel(*gt));
    io::write_rgb_png(io::side_by_side(panels), path);
}

// ---------------------------------------------------------------- synth

struct SynthArgs {
    std::uint64_t seed = 0;
    std::string out;
    std::string counts;
    int size = 64;
    std::string config;
    bool write_float = false;
};

int cmd_synth(const SynthArgs& a, const Globals& g) {
    const auto start = Clock::now();
    DatasetConfig cfg;
    std::string config_hash;
    if (!a.config.empty()) {
        const RunConfig rc = RunConfig::load(a.config);
        cfg = rc.dataset;
        config_hash = rc.hash();
    }
    cfg.seed = a.seed;
    cfg.size = {a.size, a.size};
    if (!a.counts.empty()) {
        const auto parts = split_list(a.counts);
        if (parts.size() != 3) throw ConfigError("--counts expects train,test_healthy,test_anomalous");
        cfg.counts = {parse_int(parts[0], "--counts"), parse_int(parts[1], "--counts"), parse_int(parts[2], "--counts")};
    }
    cfg.write_float = a.write_float;
    cfg.out_dir = resolve_out(a.out, "synth");
    const json settings = {{"seed", cfg.seed},
                           {"size", {cfg.size.height, cfg.size.width}},
                           {"counts", {cfg.counts.train, cfg.counts.test_healthy, cfg.counts.test_anomalous}},
                           {"write_float", cfg.write_float}};
    if (config_hash.empty()) config_hash = sha256_hex(settings.dump() + "|" + kVersion);

    const DatasetManifest m = build_dataset(cfg);
    const std::string manifest = (fs::path(cfg.out_dir) / "manifest.json").string();
    const double secs = seconds_since(start);
    write_run_record(cfg.out_dir, "synth", config_hash, {{"dataset", cfg.seed}}, settings, json::object(),
                     {{"manifest", manifest}}, secs);
    summarize(g,
              "synth: " + std::to_string(m.records.size()) + " images -> " + manifest,
              {{"command", "synth"}, {"manifest", manifest}, {"images", m.records.size()},
               {"manifest_sha256", sha256_file(manifest)}, {"seconds", secs}});
    return 0;
}

// ---------------------------------------------------------------- train

struct TrainArgs {
    std::string manifest;
    std::string config;
    std::string out;
    std::string noise;
    std::optional<int> epochs;
    std::optional<std::uint64_t> seed;
    std::optional<double> lr;
    std::optional<int> batch_size;
    std::optional<int> base_channels;
    std::optional<int> depth;
    std::optional<int> schedule_steps;
    std::optional<double> beta_min;
    std::optional<double> beta_max;
};

int cmd_train(const TrainArgs& a, const Globals& g) {
    const auto start = Clock::now();
    if (a.manifest.empty()) throw ConfigError("--manifest is required");
    RunConfig rc = a.config.empty() ? RunConfig{} : RunConfig::load(a.config);
    const DatasetManifest manifest = load_manifest(a.manifest);
    if (!a.noise.empty()) rc.noise.kind = parse_noise_kind(a.noise);
    rc.train.noise_spec = rc.noise;
    if (a.epochs) rc.train.epochs = *a.epochs;
    if (a.seed) rc.train.seed = *a.seed;
    if (a.lr) rc.train.learning_rate = *a.lr;
    if (a.batch_size) rc.train.batch_size = *a.batch_size;
    if (a.base_channels) rc.denoiser.base_channels = *a.base_channels;
    if (a.depth) rc.denoiser.depth = *a.depth;
    if (a.schedule_steps) rc.schedule.steps = *a.schedule_steps;
    if (a.beta_min) rc.schedule.beta_min = *a.beta_min;
    if (a.beta_max) rc.schedule.beta_max = *a.beta_max;
    rc.denoiser.image_size = manifest.image_size;
    rc.dataset.size = manifest.image_size;
    rc.validate();

    std::vector<Image> images;
    for (auto& s : load_split(manifest, Split::train)) images.push_back(std::move(s.image));
    if (images.empty()) throw DataError("manifest has no training images: " + a.manifest);
    const std::string out = resolve_out(a.out, "train");
    const NoiseSchedule schedule = rc.schedule.build();
    const auto result = train(images, schedule, rc.train, rc.denoiser, [&](const EpochStats& e) {
        if (!g.quiet) std::cerr << "epoch " << e.epoch << " loss " << e.mean_loss << "\n";
    });
    const std::string ckpt = (fs::path(out) / "model.ckpt").string();
    const std::string curve = (fs::path(out) / "training_curve.csv").string();
    save_checkpoint(result.model, ckpt);
    write_training_curve(result.curve, curve);
    const double secs = seconds_since(start);
    write_run_record(out, "train", rc.hash(), {{"train", rc.train.seed}, {"noise", rc.noise.seed}}, rc.to_json(),
                     {{"manifest", a.manifest}, {"manifest_sha256", sha256_file(a.manifest)}},
                     {{"checkpoint", ckpt}, {"training_curve", curve}}, secs);
    const double loss = result.curve.back().mean_loss;
    summarize(g, "train: " + std::to_string(result.curve.size()) + " epochs, final loss " + std::to_string(loss) +
                     " -> " + ckpt,
              {{"command", "train"}, {"checkpoint", ckpt}, {"epochs", result.curve.size()}, {"final_loss", loss},
               {"seconds", secs}});
    return 0;
}

// ---------------------------------------------------------------- restore

struct RestoreArgs {
    std::string input;
    std::string checkpoint;
    std::string method = "thor";
    std::string noise;
    std::optional<int> t_start;
    std::string steps = "3";
    std::uint64_t seed = 0;
    std::string out;
    bool stochastic = false;
    bool allow_noise_mismatch = false;
    bool preprocess_input = false;
};

int cmd_restore(const RestoreArgs& a, const Globals& g) {
    const auto start = Clock::now();
    if (a.input.empty()) throw ConfigError("--input is required");
    const DenoiserModel model = load_model(a.checkpoint);
    const NoiseSchedule schedule = schedule_of(model);
    const NoiseSpec noise = noise_for(model, a.noise);
    Image x = io::read_image(a.input);
    if (a.preprocess_input) x = preprocess(x, model.config().image_size);
    const Method method = parse_method(a.method);
    HarmonizationPlan plan;
    plan.t_start = a.t_start ? *a.t_start : default_t_start(noise.kind, schedule.steps());
    if (method == Method::thor) plan.harmonization_steps = parse_steps(a.steps, plan.t_start);
    plan.stochastic_reverse = a.stochastic;
    plan.validate(schedule);
    RestoreOptions opt;
    opt.allow_noise_mismatch = a.allow_noise_mismatch;

    const std::string out = resolve_out(a.out, "restore");
    Image final_image;
    Image score;
    json outputs = json::object();
    if (method == Method::thor) {
        const auto trace = restore_thor(model, x, plan, schedule, noise, default_perceptual_metric(), a.seed, opt);
        final_image = trace.final;
        score = thor_score(trace);
        const fs::path maps = fs::path(out) / "maps";
        io::ensure_directory(maps.string());
        json files = json::array();
        for (const auto& [t, m] : trace.per_step_maps) {
            char name[32];
            std::snprintf(name, sizeof name, "step_%04d", t);
            const std::string f = (maps / (std::string(name) + ".f32")).string();
            io::write_float_grid(m, f, {{"t", t}});
            io::write_rgb_png(io::heatmap(m, 0.0, std::max(m.maxCoeff(), 1e-12)), (maps / (std::string(name) + ".png")).string());
            files.push_back(f);
        }
        outputs["per_step_maps"] = files;
    } else {
        final_image = restore_plain(model, x, plan.t_start, schedule, noise, a.stochastic, a.seed, opt);
        score = anomaly_map(x, final_image);
    }
    const std::string final_path = (fs::path(out) / "restoration.png").string();
    const std::string score_path = (fs::path(out) / "score.f32").string();
    io::write_png16(final_image, final_path);
    io::write_float_grid(final_image, (fs::path(out) / "restoration.f32").string());
    io::write_float_grid(score, score_path);
    io::write_rgb_png(io::heatmap(score, 0.0, std::max(score.maxCoeff(), 1e-12)),
                      (fs::path(out) / "score.png").string());
    write_panel(x, final_image, score, nullptr, (fs::path(out) / "panel.png").string());
    outputs["restoration"] = final_path;
    outputs["score"] = score_path;

    const json settings = {{"method", to_string(method)}, {"noise", noise.canonical()}, {"plan", plan_json(plan)},
                           {"checkpoint_sha256", file_digest(a.checkpoint)}, {"input_sha256", file_digest(a.input)},
                           {"preprocess", a.preprocess_input}};
    const std::string config_hash = sha256_hex(settings.dump() + "|" + std::to_string(a.seed) + "|" + kVersion);
    const double secs = seconds_since(start);
    write_run_record(out, "restore", config_hash, {{"restore", a.seed}}, settings,
                     {{"input", a.input}, {"checkpoint", a.checkpoint}}, outputs, secs);
    summarize(g,
              "restore: " + to_string(method) + " t_start " + std::to_string(plan.t_start) + ", " +
                  std::to_string(plan.harmonization_steps.size()) + " maps -> " + out,
              {{"command", "restore"}, {"out", out}, {"t_start", plan.t_start}, {"noise", to_string(noise.kind)},
               {"maps", plan.harmonization_steps.size()}, {"seconds", secs}});
    return 0;
}

// ---------------------------------------------------------------- score

struct ScoreArgs {
    std::string input;
    std::string restoration;
    std::vector<std::string> maps;
    std::string gt;
    std::string out;
};

int cmd_score(const ScoreArgs& a, const Globals& g) {
    const auto start = Clock::now();
    Image score;
    Image input;
    Image restoration;
    json inputs = json::object();
    if (!a.maps.empty()) {
        std::vector<Image> maps;
        for (const auto& p : a.maps) maps.push_back(io::read_image(p));
        score = harmonic_score(maps);
        inputs["maps"] = a.maps;
    }
    if (!a.input.empty() && !a.restoration.empty()) {
        input = io::read_image(a.input);
        restoration = io::read_image(a.restoration);
        if (score.size() == 0) score = anomaly_map(input, restoration);
        inputs["input"] = a.input;
        inputs["restoration"] = a.restoration;
    }
    if (score.size() == 0) throw ConfigError("score needs --input with --restoration, or --maps");

    const std::string out = resolve_out(a.out, "score");
    const std::string score_path = (fs::path(out) / "score.f32").string();
    io::write_float_grid(score, score_path);
    io::write_rgb_png(io::heatmap(score, 0.0, std::max(score.maxCoeff(), 1e-12)), (fs::path(out) / "score.png").string());
    json summary = {{"command", "score"}, {"score", score_path}, {"max", score.maxCoeff()}};
    std::string text = "score: max " + std::to_string(score.maxCoeff());
    if (!a.gt.empty()) {
        const Mask gt = io::read_mask_png(a.gt);
        const DiceSweep best = max_dice_exhaustive({score}, {gt});
        summary["max_dice"] = best.dice;
        summary["threshold"] = best.threshold;
        text += ", max dice " + std::to_string(best.dice);
        inputs["gt"] = a.gt;
        if (input.size() > 0) write_panel(input, restoration, score, &gt, (fs::path(out) / "panel.png").string());
    }
    const json settings = {{"metric", default_perceptual_metric().name()}, {"harmonic_maps", a.maps.size()}};
    const double secs = seconds_since(start);
    write_run_record(out, "score", sha256_hex(settings.dump() + "|" + inputs.dump() + "|" + kVersion), json::object(),
                     settings, inputs, {{"score", score_path}}, secs);
    summary["seconds"] = secs;
    summarize(g, text + " -> " + score_path, summary);
    return 0;
}

// ---------------------------------------------------------------- eval

struct EvalArgs {
    std::string manifest;
    std::string checkpoint;
    std::string config;
    std::string method;
    std::string noise;
    std::optional<int> t_start;
    std::string steps;
    std::optional<std::uint64_t> seed;
    std::string out;
    std::optional<int> n_thresholds;
    bool per_image = false;
    int figures = 4;
    bool save_maps = false;
};

int cmd_eval(const EvalArgs& a, const Globals& g) {
    const auto start = Clock::now();
    if (a.manifest.empty()) throw ConfigError("--manifest is required");
    const DenoiserModel model = load_model(a.checkpoint);
    const NoiseSchedule schedule = schedule_of(model);
    const DatasetManifest manifest = load_manifest(a.manifest);

    ExperimentConfig ec;
    std::string run_config_hash;
    if (!a.config.empty()) {
        const RunConfig rc = RunConfig::load(a.config);
        ec = rc.experiment();
        run_config_hash = rc.hash();
    }
    ec.noise = noise_for(model, a.noise);
    if (!a.method.empty()) ec.method = parse_method(a.method);
    if (a.config.empty() || a.t_start) {
        ec.plan.t_start = a.t_start ? *a.t_start : default_t_start(ec.noise.kind, schedule.steps());
    }
    if (!a.steps.empty()) {
        ec.plan.harmonization_steps = parse_steps(a.steps, ec.plan.t_start);
    } else if (a.config.empty() || a.t_start) {
        ec.plan.harmonization_steps = evenly_spaced_steps(ec.plan.t_start, 3);
    }
    if (ec.method == Method::ddpm) ec.plan.harmonization_steps.clear();
    if (a.seed) ec.seed = *a.seed;
    if (a.n_thresholds) ec.n_thresholds = *a.n_thresholds;
    if (a.per_image) ec.per_image_sweep = true;
    ec.plan.validate(schedule);

    const json settings = {{"method", to_string(ec.method)},
                           {"noise", ec.noise.canonical()},
                           {"plan", plan_json(ec.plan)},
                           {"seed", ec.seed},
                           {"n_thresholds", ec.n_thresholds},
                           {"min_component_area", ec.detection.min_component_area},
                           {"min_overlap", ec.detection.min_overlap},
                           {"per_image_sweep", ec.per_image_sweep},
                           {"run_config_hash", run_config_hash},
                           {"manifest_sha256", file_digest(a.manifest)},
                           {"checkpoint_sha256", file_digest(a.checkpoint)}};
    ec.config_hash = sha256_hex(settings.dump() + "|" + kVersion);

    const std::string out = resolve_out(a.out, "eval");
    const auto samples = load_split(manifest, Split::test_anomalous);
    const auto result = run_experiment(samples, model, schedule, ec, default_perceptual_metric());
    const EvalReport& r = result.report;

    const std::string report_path = (fs::path(out) / "report.json").string();
    const std::string csv_path = (fs::path(out) / "results.csv").string();
    io::write_json(r.to_json(), report_path);
    write_results_csv({r}, csv_path);
    if (a.figures > 0) io::ensure_directory((fs::path(out) / "figures").string());
    for (std::size_t i = 0; i < result.images.size() && static_cast<int>(i) < a.figures; ++i) {
        const auto& im = result.images[i];
        write_panel(im.input, im.restoration, im.score, &im.gt, (fs::path(out) / "figures" / (im.id + ".png")).string());
    }
    if (a.save_maps) {
        io::ensure_directory((fs::path(out) / "maps").string());
        for (const auto& im : result.images) io::write_float_grid(im.score, (fs::path(out) / "maps" / (im.id + ".f32")).string());
    }
    const double secs = seconds_since(start);
    const std::string report_hash = r.hash();
    write_run_record(out, "eval", ec.config_hash, {{"eval", ec.seed}, {"noise", ec.noise.seed}}, settings,
                     {{"manifest", a.manifest}, {"checkpoint", a.checkpoint}},
                     {{"report", report_path}, {"results", csv_path}, {"report_hash", report_hash}}, secs);
    std::ostringstream text;
    text << "eval: " << r.method << " t_start " << r.t_start << " dice " << r.dice_average << " (small "
         << r.small.dice.value_or(0.0) << ", medium " << r.medium.dice.value_or(0.0) << ", large "
         << r.large.dice.value_or(0.0) << ") f1 " << r.f1 << " hash " << report_hash;
    summarize(g, text.str(),
              {{"command", "eval"}, {"report", report_path}, {"report_hash", report_hash}, {"dice", r.dice_average},
               {"f1", r.f1}, {"healthy_mae", r.healthy_mae}, {"seconds", secs}});
    return 0;
}

// ---------------------------------------------------------------- ablate

struct AblateArgs {
    std::string manifest;
    std::vector<std::string> checkpoints;
    std::string methods = "ddpm,thor";
    std::string noise;
    std::string t_levels = "0.25,0.35,0.5";
    std::string steps = "3";
    std::uint64_t seed = 0;
    std::string out;
    int n_thresholds = 256;
};

int cmd_ablate(const AblateArgs& a, const Globals& g) {
    const auto start = Clock::now();
    if (a.manifest.empty()) throw ConfigError("--manifest is required");
    if (a.checkpoints.empty()) throw ConfigError("--checkpoint is required");
    std::vector<DenoiserModel> models;
    for (const auto& c : a.checkpoints) models.push_back(load_model(c));
    const NoiseSchedule schedule = schedule_of(models.front());
    for (const auto& m : models) m.check_compatible(schedule, m.info().noise);

    AblationConfig cfg;
    cfg.base.seed = a.seed;
    cfg.base.n_thresholds = a.n_thresholds;
    cfg.methods.clear();
    for (const auto& m : split_list(a.methods)) cfg.methods.push_back(parse_method(m));
    cfg.noise_kinds.clear();
    if (a.noise.empty()) {
        for (const auto& m : models) cfg.noise_kinds.push_back(m.info().noise.kind);
    } else {
        for (const auto& k : split_list(a.noise)) cfg.noise_kinds.push_back(parse_noise_kind(k));
    }
    for (const auto& t : split_list(a.t_levels)) cfg.t_levels.push_back(parse_level(t, schedule.steps()));
    if (a.steps.find(',') != std::string::npos) throw ConfigError("ablate --steps takes a count");
    cfg.harmonization_steps = parse_int(a.steps, "--steps");
    std::vector<AblationModel> handles;
    for (const auto& m : models) handles.push_back({m.info().noise.kind, &m});

    const json settings = {{"methods", a.methods},
                           {"noise", a.noise},
                           {"t_levels", cfg.t_levels},
                           {"steps", cfg.harmonization_steps},
                           {"seed", a.seed},
                           {"n_thresholds", a.n_thresholds},
                           {"manifest_sha256", file_digest(a.manifest)},
                           {"checkpoints", [&] {
                                json j = json::array();
                                for (const auto& c : a.checkpoints) j.push_back(file_digest(c));
                                return j;
                            }()}};
    cfg.base.config_hash = sha256_hex(settings.dump() + "|" + kVersion);

    const std::string out = resolve_out(a.out, "ablate");
    const auto samples = load_split(load_manifest(a.manifest), Split::test_anomalous);
    const auto reports = ablate(samples, handles, schedule, cfg, default_perceptual_metric());
    json all = json::array();
    for (const auto& r : reports) all.push_back(r.to_json());
    const std::string reports_path = (fs::path(out) / "reports.json").string();
    const std::string csv_path = (fs::path(out) / "results.csv").string();
    const std::string plot_path = (fs::path(out) / "plot_data.csv").string();
    io::write_json(all, reports_path);
    write_results_csv(reports, csv_path);
    write_plot_data(reports, plot_path);
    const double secs = seconds_since(start);
    write_run_record(out, "ablate", cfg.base.config_hash, {{"eval", a.seed}}, settings,
                     {{"manifest", a.manifest}, {"checkpoints", a.checkpoints}},
                     {{"reports", reports_path}, {"results", csv_path}, {"plot_data", plot_path}}, secs);
    summarize(g, "ablate: " + std::to_string(reports.size()) + " runs -> " + plot_path,
              {{"command", "ablate"}, {"runs", reports.size()}, {"plot_data", plot_path}, {"seconds", secs}});
    return 0;
}

// ---------------------------------------------------------------- noise

struct NoiseArgs {
    std::string kind = "simplex";
    std::uint64_t seed = 0;
    int size = 64;
    int draw = 0;
    std::optional<int> octaves;
    std::optional<double> persistence;
    std::optional<double> period;
    std::string out;
};

int cmd_noise(const NoiseArgs& a, const Globals& g) {
    const auto start = Clock::now();
    NoiseSpec spec;
    spec.kind = parse_noise_kind(a.kind);
    spec.seed = a.seed;
    if (a.octaves) spec.simplex_octaves = *a.octaves;
    if (a.persistence) spec.simplex_persistence = *a.persistence;
    if (a.period) spec.simplex_base_period = *a.period;
    spec.validate();
    const Image field = sample_noise(spec, {a.size, a.size}, static_cast<std::uint64_t>(a.draw));
    const std::string out = resolve_out(a.out, "noise");
    const std::string path = (fs::path(out) / "noise.f32").string();
    io::write_float_grid(field, path, {{"spec", thor::to_json(spec)}, {"seed", a.seed}, {"draw", a.draw}});
    io::write_rgb_png(io::heatmap(field, field.minCoeff(), field.maxCoeff()), (fs::path(out) / "noise.png").string());
    const double secs = seconds_since(start);
    write_run_record(out, "noise", sha256_hex(spec.canonical() + "|" + std::to_string(a.draw) + "|" + kVersion),
                     {{"noise", a.seed}}, thor::to_json(spec), json::object(), {{"field", path}}, secs);
    summarize(g, "noise: " + spec.canonical() + " -> " + path,
              {{"command", "noise"}, {"field", path}, {"mean", field.mean()}, {"seconds", secs}});
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"THOR anomaly detection toolkit"};
    app.require_subcommand(1);
    app.fallthrough();
    Globals g;
    app.add_flag("--json", g.json_summary, "Print a machine-readable JSON summary");
    app.add_flag("--quiet", g.quiet, "Suppress progress output");
    app.set_version_flag("--version", std::string(kVersion));

    SynthArgs synth;
    auto* s = app.add_subcommand("synth", "Generate a synthetic phantom dataset");
    s->add_option("--seed", synth.seed, "Dataset seed");
    s->add_option("--out", synth.out, "Output directory");
    s->add_option("--counts", synth.counts, "train,test_healthy,test_anomalous");
    s->add_option("--size", synth.size, "Image side length")->check(CLI::Range(16, 1024));
    s->add_option("--config", synth.config, "Run config JSON");
    s->add_flag("--float", synth.write_float, "Also write float32 grids");

    TrainArgs tr;
    auto* t = app.add_subcommand("train", "Train a denoiser on the healthy training split");
    t->add_option("--manifest", tr.manifest, "Dataset manifest")->required();
    t->add_option("--config", tr.config, "Run config JSON");
    t->add_option("--out", tr.out, "Output directory");
    t->add_option("--noise", tr.noise, "gaussian or simplex");
    t->add_option("--epochs", tr.epochs);
    t->add_option("--seed", tr.seed);
    t->add_option("--lr", tr.lr);
    t->add_option("--batch-size", tr.batch_size);
    t->add_option("--base-channels", tr.base_channels);
    t->add_option("--depth", tr.depth);
    t->add_option("--schedule-steps", tr.schedule_steps, "Diffusion steps T");
    t->add_option("--beta-min", tr.beta_min);
    t->add_option("--beta-max", tr.beta_max);

    RestoreArgs rs;
    auto* r = app.add_subcommand("restore", "Restore one image and write its anomaly maps");
    r->add_option("--input", rs.input, "Image (.png or .f32)")->required();
    r->add_option("--checkpoint", rs.checkpoint, "Model checkpoint")->required();
    r->add_option("--method", rs.method, "ddpm or thor");
    r->add_option("--noise", rs.noise, "gaussian or simplex (default: the model's)");
    r->add_option("--t-start", rs.t_start);
    r->add_option("--steps", rs.steps, "Harmonization step count, or a comma list of timesteps");
    r->add_option("--seed", rs.seed);
    r->add_option("--out", rs.out, "Output directory");
    r->add_flag("--stochastic", rs.stochastic, "Ancestral sampling in the reverse process");
    r->add_flag("--allow-noise-mismatch", rs.allow_noise_mismatch);
    r->add_flag("--preprocess", rs.preprocess_input, "Normalize and resize the input to the model size");

    ScoreArgs sc;
    auto* c = app.add_subcommand("score", "Anomaly map from an input and its restoration, or harmonic mean of maps");
    c->add_option("--input", sc.input);
    c->add_option("--restoration", sc.restoration);
    c->add_option("--maps", sc.maps, "Per-step maps to combine");
    c->add_option("--gt", sc.gt, "Ground-truth mask PNG");
    c->add_option("--out", sc.out, "Output directory");

    EvalArgs ev;
    auto* e = app.add_subcommand("eval", "Evaluate a method on the anomalous test split");
    e->add_option("--manifest", ev.manifest, "Dataset manifest")->required();
    e->add_option("--checkpoint", ev.checkpoint, "Model checkpoint")->required();
    e->add_option("--config", ev.config, "Run config JSON");
    e->add_option("--method", ev.method, "ddpm or thor");
    e->add_option("--noise", ev.noise, "gaussian or simplex (default: the model's)");
    e->add_option("--t-start", ev.t_start);
    e->add_option("--steps", ev.steps, "Harmonization step count, or a comma list of timesteps");
    e->add_option("--seed", ev.seed);
    e->add_option("--out", ev.out, "Output directory");
    e->add_option("--n-thresholds", ev.n_thresholds);
    e->add_flag("--per-image", ev.per_image, "Also report the per-image threshold sweep");
    e->add_option("--figures", ev.figures, "Number of panel figures to write");
    e->add_flag("--save-maps", ev.save_maps, "Write every score map");

    AblateArgs ab;
    auto* b = app.add_subcommand("ablate", "Sweep t_start levels, methods and noise kinds");
    b->add_option("--manifest", ab.manifest, "Dataset manifest")->required();
    b->add_option("--checkpoint", ab.checkpoints, "Checkpoint per noise kind (repeatable)")->required();
    b->add_option("--method", ab.methods, "Comma list of methods");
    b->add_option("--noise", ab.noise, "Comma list of noise kinds (default: one per checkpoint)");
    b->add_option("--t-start", ab.t_levels, "Comma list of levels, absolute or fractions of T");
    b->add_option("--steps", ab.steps, "Harmonization step count");
    b->add_option("--seed", ab.seed);
    b->add_option("--out", ab.out, "Output directory");
    b->add_option("--n-thresholds", ab.n_thresholds);

    NoiseArgs nz;
    auto* n = app.add_subcommand("noise", "Export a noise field for inspection");
    n->add_option("--noise", nz.kind, "gaussian or simplex");
    n->add_option("--seed", nz.seed);
    n->add_option("--size", nz.size)->check(CLI::Range(4, 4096));
    n->add_option("--draw", nz.draw);
    n->add_option("--octaves", nz.octaves);
    n->add_option("--persistence", nz.persistence);
    n->add_option("--period", nz.period);
    n->add_option("--out", nz.out, "Output directory");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& err) {
        return app.exit(err);
    }

    try {
        if (s->parsed()) return cmd_synth(synth, g);
        if (t->parsed()) return cmd_train(tr, g);
        if (r->parsed()) return cmd_restore(rs, g);
        if (c->parsed()) return cmd_score(sc, g);
        if (e->parsed()) return cmd_eval(ev, g);
        if (b->parsed()) return cmd_ablate(ab, g);
        if (n->parsed()) return cmd_noise(nz, g);
    } catch (const ConfigError& err) {
        std::cerr << "error: invalid configuration: " << err.what() << "\n";
        return 2;
    } catch (const ShapeError& err) {
        std::cerr << "error: shape mismatch: " << err.what() << "\n";
        return 2;
    } catch (const IoError& err) {
        std::cerr << "error: " << err.what() << "\n";
        return 3;
    } catch (const CompatibilityError& err) {
        std::cerr << "error: incompatible checkpoint: " << err.what() << "\n";
        return 4;
    } catch (const DataError& err) {
        std::cerr << "error: data: " << err.what() << "\n";
        return 5;
    } catch (const std::exception& err) {
        std::cerr << "error: " << err.what() << "\n";
        return 1;
    }
    return 1;
}
