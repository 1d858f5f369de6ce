#include "thor/run_config.hpp"

#include <set>

#include "thor/errors.hpp"
#include "thor/hashing.hpp"
#include "thor/io.hpp"

namespace thor {

using nlohmann::json;

namespace {

// Reads optional fields from one JSON object and rejects keys nobody asked for.
class Section {
public:
    Section(const json& doc, std::string name) : doc_(doc), name_(std::move(name)) {
        if (!doc_.is_object()) throw ConfigError("config section '" + name_ + "' must be an object");
    }

    template <typename T>
    void get(const char* key, T& out) {
        seen_.insert(key);
        if (!doc_.contains(key)) return;
        try {
            out = doc_.at(key).get<T>();
        } catch (const json::exception& e) {
            throw ConfigError("config " + name_ + "." + key + ": " + e.what());
        }
    }

    const json* child(const char* key) {
        seen_.insert(key);
        return doc_.contains(key) ? &doc_.at(key) : nullptr;
    }

    void finish() const {
        for (const auto& [key, value] : doc_.items()) {
            if (!seen_.count(key)) throw ConfigError("unknown config key '" + name_ + "." + key + "'");
        }
    }

private:
    const json& doc_;
    std::string name_;
    std::set<std::string> seen_;
};

json shape_json(Shape s) { return json::array({s.height, s.width}); }

Shape shape_from(const json& j, const std::string& what) {
    if (!j.is_array() || j.size() != 2) throw ConfigError(what + " must be [height, width]");
    return {j.at(0).get<Index>(), j.at(1).get<Index>()};
}

} // namespace

NoiseSchedule ScheduleConfig::build() const { return make_linear_schedule(steps, beta_min, beta_max); }

HarmonizationPlan PlanConfig::build(NoiseKind kind, int schedule_steps) const {
    HarmonizationPlan plan;
    plan.t_start = t_start ? *t_start : default_t_start(kind, schedule_steps);
    plan.harmonization_steps = steps ? *steps : evenly_spaced_steps(plan.t_start, n_steps);
    plan.morph = morph;
    plan.stochastic_reverse = stochastic_reverse;
    return plan;
}

json to_json(const NoiseSpec& spec) {
    return {{"kind", to_string(spec.kind)},
            {"seed", spec.seed},
            {"simplex_octaves", spec.simplex_octaves},
            {"simplex_persistence", spec.simplex_persistence},
            {"simplex_base_period", spec.simplex_base_period}};
}

NoiseSpec noise_spec_from_json(const json& doc) {
    NoiseSpec spec;
    Section s(doc, "noise");
    std::string kind = to_string(spec.kind);
    s.get("kind", kind);
    spec.kind = parse_noise_kind(kind);
    s.get("seed", spec.seed);
    s.get("simplex_octaves", spec.simplex_octaves);
    s.get("simplex_persistence", spec.simplex_persistence);
    s.get("simplex_base_period", spec.simplex_base_period);
    s.finish();
    spec.validate();
    return spec;
}

void RunConfig::validate() const {
    (void)schedule.build();
    noise.validate();
    denoiser.validate();
    train.validate();
    if (train.noise_spec.canonical() != noise.canonical()) {
        throw ConfigError("train.noise must describe the same noise family as noise");
    }
    if (dataset.size != denoiser.image_size) {
        throw ConfigError("dataset size " + to_string(dataset.size) + " differs from denoiser size " +
                          to_string(denoiser.image_size));
    }
    plan.build(noise.kind, schedule.steps).validate(schedule.build());
    eval.detection.validate();
    if (eval.n_thresholds < 1) throw ConfigError("eval.n_thresholds must be at least 1");
}

json RunConfig::to_json() const {
    json plan_json = {{"n_steps", plan.n_steps},
                      {"morph",
                       {{"element", to_string(plan.morph.element)},
                        {"disk_radius", plan.morph.disk_radius},
                        {"closing_iterations", plan.morph.closing_iterations},
                        {"dilation_iterations", plan.morph.dilation_iterations}}},
                      {"stochastic_reverse", plan.stochastic_reverse}};
    plan_json["t_start"] = plan.t_start ? json(*plan.t_start) : json(nullptr);
    plan_json["steps"] = plan.steps ? json(*plan.steps) : json(nullptr);
    return {
        {"dataset",
         {{"seed", dataset.seed},
          {"size", shape_json(dataset.size)},
          {"counts",
           {{"train", dataset.counts.train},
            {"test_healthy", dataset.counts.test_healthy},
            {"test_anomalous", dataset.counts.test_anomalous}}}}},
        {"schedule", {{"steps", schedule.steps}, {"beta_min", schedule.beta_min}, {"beta_max", schedule.beta_max}}},
        {"noise", thor::to_json(noise)},
        {"denoiser",
         {{"base_channels", denoiser.base_channels},
          {"depth", denoiser.depth},
          {"time_embed_dim", denoiser.time_embed_dim},
          {"image_size", shape_json(denoiser.image_size)}}},
        {"train",
         {{"epochs", train.epochs},
          {"batch_size", train.batch_size},
          {"learning_rate", train.learning_rate},
          {"seed", train.seed},
          {"grad_clip", train.grad_clip}}},
        {"plan", plan_json},
        {"eval",
         {{"method", to_string(eval.method)},
          {"seed", eval.seed},
          {"n_thresholds", eval.n_thresholds},
          {"min_component_area", eval.detection.min_component_area},
          {"min_overlap", eval.detection.min_overlap},
          {"per_image_sweep", eval.per_image_sweep}}},
    };
}

namespace {

RunConfig parse_run_config(const json& doc) {
    RunConfig cfg;
    Section root(doc, "config");
    if (const json* d = root.child("dataset")) {
        Section s(*d, "dataset");
        s.get("seed", cfg.dataset.seed);
        if (const json* size = s.child("size")) cfg.dataset.size = shape_from(*size, "dataset.size");
        if (const json* c = s.child("counts")) {
            Section cs(*c, "dataset.counts");
            cs.get("train", cfg.dataset.counts.train);
            cs.get("test_healthy", cfg.dataset.counts.test_healthy);
            cs.get("test_anomalous", cfg.dataset.counts.test_anomalous);
            cs.finish();
        }
        s.finish();
    }
    if (const json* d = root.child("schedule")) {
        Section s(*d, "schedule");
        s.get("steps", cfg.schedule.steps);
        s.get("beta_min", cfg.schedule.beta_min);
        s.get("beta_max", cfg.schedule.beta_max);
        s.finish();
    }
    if (const json* d = root.child("noise")) cfg.noise = noise_spec_from_json(*d);
    cfg.denoiser.image_size = cfg.dataset.size;
    if (const json* d = root.child("denoiser")) {
        Section s(*d, "denoiser");
        s.get("base_channels", cfg.denoiser.base_channels);
        s.get("depth", cfg.denoiser.depth);
        s.get("time_embed_dim", cfg.denoiser.time_embed_dim);
        if (const json* size = s.child("image_size")) cfg.denoiser.image_size = shape_from(*size, "denoiser.image_size");
        s.finish();
    }
    if (const json* d = root.child("train")) {
        Section s(*d, "train");
        s.get("epochs", cfg.train.epochs);
        s.get("batch_size", cfg.train.batch_size);
        s.get("learning_rate", cfg.train.learning_rate);
        s.get("seed", cfg.train.seed);
        s.get("grad_clip", cfg.train.grad_clip);
        s.finish();
    }
    cfg.train.noise_spec = cfg.noise;
    if (const json* d = root.child("plan")) {
        Section s(*d, "plan");
        if (const json* t = s.child("t_start"); t && !t->is_null()) cfg.plan.t_start = t->get<int>();
        if (const json* t = s.child("steps"); t && !t->is_null()) cfg.plan.steps = t->get<std::vector<int>>();
        s.get("n_steps", cfg.plan.n_steps);
        s.get("stochastic_reverse", cfg.plan.stochastic_reverse);
        if (const json* m = s.child("morph")) {
            Section ms(*m, "plan.morph");
            std::string element = to_string(cfg.plan.morph.element);
            ms.get("element", element);
            cfg.plan.morph.element = parse_structuring_shape(element);
            ms.get("disk_radius", cfg.plan.morph.disk_radius);
            ms.get("closing_iterations", cfg.plan.morph.closing_iterations);
            ms.get("dilation_iterations", cfg.plan.morph.dilation_iterations);
            ms.finish();
        }
        s.finish();
    }
    if (const json* d = root.child("eval")) {
        Section s(*d, "eval");
        std::string method = to_string(cfg.eval.method);
        s.get("method", method);
        cfg.eval.method = parse_method(method);
        s.get("seed", cfg.eval.seed);
        s.get("n_thresholds", cfg.eval.n_thresholds);
        s.get("min_component_area", cfg.eval.detection.min_component_area);
        s.get("min_overlap", cfg.eval.detection.min_overlap);
        s.get("per_image_sweep", cfg.eval.per_image_sweep);
        s.finish();
    }
    root.finish();
    cfg.validate();
    return cfg;
}

} // namespace

RunConfig RunConfig::from_json(const json& doc) {
    try {
        return parse_run_config(doc);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("malformed config: ") + e.what());
    }
}

RunConfig RunConfig::load(const std::string& path) {
    try {
        return from_json(io::read_json(path));
    } catch (const IoError& e) {
        throw ConfigError(std::string("cannot load config: ") + e.what());
    }
}

std::string RunConfig::hash() const { return sha256_hex(to_json().dump() + "|" + kVersion); }

ExperimentConfig RunConfig::experiment() const {
    ExperimentConfig ec;
    ec.method = eval.method;
    ec.plan = plan.build(noise.kind, schedule.steps);
    ec.noise = noise;
    ec.seed = eval.seed;
    ec.n_thresholds = eval.n_thresholds;
    ec.detection = eval.detection;
    ec.per_image_sweep = eval.per_image_sweep;
    ec.config_hash = hash();
    return ec;
}

} // namespace thor
