#include "thor/denoiser.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <random>

#include "json.hpp"
#include "thor/hashing.hpp"

namespace thor {

using nlohmann::json;

namespace {

constexpr char kMagic[8] = {'T', 'H', 'O', 'R', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kFormatVersion = 1;

nn::Tensor to_tensor(const Image& img) {
    nn::Tensor t(1, img.size());
    for (Index k = 0; k < img.size(); ++k) t(0, k) = static_cast<float>(img.data()[k]);
    return t;
}

std::string payload_hash(const std::vector<float>& params) {
    return sha256_hex(std::span<const unsigned char>(reinterpret_cast<const unsigned char*>(params.data()),
                                                     params.size() * sizeof(float)));
}

} // namespace

void DenoiserConfig::validate() const {
    if (base_channels < 1) throw ConfigError("base_channels must be positive");
    if (depth < 0 || depth > 6) throw ConfigError("depth must lie in [0, 6]");
    if (time_embed_dim < 2) throw ConfigError("time_embed_dim must be >= 2");
    if (image_size.height < 1 || image_size.width < 1) throw ConfigError("image_size must be positive");
    const Index div = Index{1} << depth;
    if (image_size.height % div != 0 || image_size.width % div != 0) {
        throw ConfigError("image_size " + to_string(image_size) + " not divisible by 2^depth = " + std::to_string(div));
    }
}

nn::Architecture DenoiserConfig::architecture() const {
    return {static_cast<int>(image_size.height), static_cast<int>(image_size.width), base_channels, depth,
            time_embed_dim};
}

void TrainConfig::validate() const {
    if (epochs < 1) throw ConfigError("epochs must be positive");
    if (batch_size < 1) throw ConfigError("batch_size must be positive");
    if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
    noise_spec.validate();
}

std::string schedule_fingerprint(const NoiseSchedule& schedule, const NoiseSpec& noise) {
    return sha256_hex(schedule.canonical() + "|" + noise.canonical());
}

DenoiserModel::DenoiserModel(const DenoiserConfig& config, std::vector<float> params, TrainingInfo info)
    : config_(config), params_(std::move(params)), info_(std::move(info)) {
    config_.validate();
    net_ = std::make_shared<const nn::UNet>(config_.architecture());
    if (params_.size() != net_->parameter_count()) {
        throw ConfigError("parameter count " + std::to_string(params_.size()) + " does not match architecture (" +
                          std::to_string(net_->parameter_count()) + ")");
    }
}

DenoiserModel DenoiserModel::untrained(const DenoiserConfig& config, const NoiseSchedule& schedule,
                                       const NoiseSpec& noise, std::uint64_t seed) {
    config.validate();
    nn::UNet net(config.architecture());
    TrainingInfo info;
    info.steps = schedule.steps();
    info.beta_min = schedule.beta_min();
    info.beta_max = schedule.beta_max();
    info.noise = noise;
    info.seed = seed;
    info.fingerprint = thor::schedule_fingerprint(schedule, noise);
    info.schedule_hash = sha256_hex(schedule.canonical());
    return DenoiserModel(config, net.initial_parameters(seed), info);
}

void DenoiserModel::check_compatible(const NoiseSchedule& schedule, const NoiseSpec& noise,
                                     bool allow_noise_mismatch) const {
    if (thor::schedule_fingerprint(schedule, noise) == info_.fingerprint) return;
    if (allow_noise_mismatch && sha256_hex(schedule.canonical()) == info_.schedule_hash) return;
    throw CompatibilityError("checkpoint was trained with a different schedule/noise (fingerprint " +
                             info_.fingerprint.substr(0, 12) + ", trained with T=" + std::to_string(info_.steps) +
                             ", noise=" + to_string(info_.noise.kind) + "; requested T=" +
                             std::to_string(schedule.steps()) + ", noise=" + to_string(noise.kind) + ")");
}

Image DenoiserModel::predict_noise(const Image& x_t, int t) const {
    if (x_t.rows() != config_.image_size.height || x_t.cols() != config_.image_size.width) {
        throw ShapeError("predict_noise: input " + to_string(shape_of(x_t)) + " but model expects " +
                         to_string(config_.image_size));
    }
    if (t < 1 || t > info_.steps) {
        throw ConfigError("predict_noise: timestep " + std::to_string(t) + " outside [1, " +
                          std::to_string(info_.steps) + "]");
    }
    const nn::Tensor out = net_->forward(params_, to_tensor(x_t), t, nullptr);
    Image eps(x_t.rows(), x_t.cols());
    for (Index k = 0; k < eps.size(); ++k) eps.data()[k] = static_cast<double>(out(0, k));
    return eps;
}

TrainResult train(const std::vector<Image>& dataset, const NoiseSchedule& schedule, const TrainConfig& tcfg,
                  const DenoiserConfig& dcfg, const EpochCallback& on_epoch) {
    if (dataset.empty()) throw ConfigError("train: empty dataset");
    tcfg.validate();
    dcfg.validate();
    for (const auto& img : dataset) {
        if (shape_of(img) != dcfg.image_size) {
            throw ShapeError("train: image " + to_string(shape_of(img)) + " does not match configured size " +
                             to_string(dcfg.image_size));
        }
    }

    const nn::UNet net(dcfg.architecture());
    std::vector<float> params = net.initial_parameters(mix_seed(tcfg.seed, 0x1417));
    std::vector<float> grads(params.size());
    std::vector<float> m1(params.size(), 0.0f);
    std::vector<float> m2(params.size(), 0.0f);
    constexpr double beta1 = 0.9;
    constexpr double beta2 = 0.999;
    constexpr double adam_eps = 1e-8;

    const NoiseSpec noise = tcfg.noise_spec.with_seed(mix_seed(tcfg.seed, 0xe95));
    std::mt19937_64 rng(mix_seed(tcfg.seed, 0xda7a));
    std::uniform_int_distribution<int> pick_t(1, schedule.steps());
    std::vector<std::size_t> order(dataset.size());
    std::iota(order.begin(), order.end(), 0);

    std::vector<nn::Tensor> inputs;
    inputs.reserve(dataset.size());
    for (const auto& img : dataset) inputs.push_back(to_tensor(img));

    std::vector<EpochStats> curve;
    std::uint64_t draw = 0;
    long long step = 0;
    nn::Tape tape;
    const double n_pixels = static_cast<double>(dcfg.image_size.area());

    for (int epoch = 1; epoch <= tcfg.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        double epoch_loss = 0.0;
        for (std::size_t start = 0; start < order.size(); start += tcfg.batch_size) {
            const std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(tcfg.batch_size));
            const double batch = static_cast<double>(stop - start);
            std::fill(grads.begin(), grads.end(), 0.0f);
            for (std::size_t k = start; k < stop; ++k) {
                const Image& x0 = dataset[order[k]];
                const int t = pick_t(rng);
                const Image eps = sample_noise(noise, dcfg.image_size, draw++);
                const Image x_t = forward_closed(x0, t, schedule, eps);
                const nn::Tensor target = to_tensor(eps);
                const nn::Tensor pred = net.forward(params, to_tensor(x_t), t, &tape);
                const nn::Tensor diff = pred - target;
                epoch_loss += static_cast<double>(diff.squaredNorm()) / n_pixels;
                const nn::Tensor grad_out = diff * static_cast<float>(2.0 / (n_pixels * batch));
                net.backward(params, tape, grad_out, grads);
            }

            double norm2 = 0.0;
            for (float g : grads) norm2 += static_cast<double>(g) * g;
            const double norm = std::sqrt(norm2);
            const double scale = (tcfg.grad_clip > 0.0 && norm > tcfg.grad_clip) ? tcfg.grad_clip / norm : 1.0;

            ++step;
            const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step));
            const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step));
            const auto lr = static_cast<float>(tcfg.learning_rate * std::sqrt(bc2) / bc1);
            for (std::size_t i = 0; i < params.size(); ++i) {
                const float g = static_cast<float>(grads[i] * scale);
                m1[i] = static_cast<float>(beta1) * m1[i] + static_cast<float>(1.0 - beta1) * g;
                m2[i] = static_cast<float>(beta2) * m2[i] + static_cast<float>(1.0 - beta2) * g * g;
                params[i] -= lr * m1[i] / (std::sqrt(m2[i]) + static_cast<float>(adam_eps));
            }
        }
        const EpochStats stats{epoch, epoch_loss / static_cast<double>(dataset.size())};
        curve.push_back(stats);
        if (on_epoch) on_epoch(stats);
    }

    TrainingInfo info;
    info.steps = schedule.steps();
    info.beta_min = schedule.beta_min();
    info.beta_max = schedule.beta_max();
    info.noise = tcfg.noise_spec;
    info.seed = tcfg.seed;
    info.epochs = tcfg.epochs;
    info.batch_size = tcfg.batch_size;
    info.learning_rate = tcfg.learning_rate;
    info.final_loss = curve.back().mean_loss;
    info.fingerprint = schedule_fingerprint(schedule, tcfg.noise_spec);
    info.schedule_hash = sha256_hex(schedule.canonical());
    return {DenoiserModel(dcfg, std::move(params), info), std::move(curve)};
}

void save_checkpoint(const DenoiserModel& model, const std::string& path) {
    const auto& params = model.parameters();
    {
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot write checkpoint " + path);
        const std::uint64_t count = params.size();
        out.write(kMagic, sizeof(kMagic));
        out.write(reinterpret_cast<const char*>(&kFormatVersion), sizeof(kFormatVersion));
        out.write(reinterpret_cast<const char*>(&count), sizeof(count));
        out.write(reinterpret_cast<const char*>(params.data()), static_cast<std::streamsize>(count * sizeof(float)));
        if (!out) throw IoError("short write to checkpoint " + path);
    }
    const auto& info = model.info();
    const auto& cfg = model.config();
    json meta = {
        {"format_version", kFormatVersion},
        {"T", info.steps},
        {"beta_min", info.beta_min},
        {"beta_max", info.beta_max},
        {"noise_kind", to_string(info.noise.kind)},
        {"noise",
         {{"kind", to_string(info.noise.kind)},
          {"simplex_octaves", info.noise.simplex_octaves},
          {"simplex_persistence", info.noise.simplex_persistence},
          {"simplex_base_period", info.noise.simplex_base_period}}},
        {"seed", info.seed},
        {"config",
         {{"base_channels", cfg.base_channels},
          {"depth", cfg.depth},
          {"time_embed_dim", cfg.time_embed_dim},
          {"image_size", {cfg.image_size.height, cfg.image_size.width}}}},
        {"train",
         {{"epochs", info.epochs},
          {"batch_size", info.batch_size},
          {"learning_rate", info.learning_rate},
          {"final_loss", info.final_loss}}},
        {"schedule_fingerprint", info.fingerprint},
        {"schedule_hash", info.schedule_hash},
        {"parameter_count", params.size()},
        {"payload_sha256", payload_hash(params)},
    };
    std::ofstream side(path + ".json", std::ios::trunc);
    if (!side) throw IoError("cannot write checkpoint metadata " + path + ".json");
    side << meta.dump(2) << "\n";
}

DenoiserModel load_checkpoint(const std::string& path) {
    std::ifstream side(path + ".json");
    if (!side) throw IoError("missing checkpoint metadata " + path + ".json");
    json meta;
    try {
        side >> meta;
    } catch (const json::exception& e) {
        throw IoError("corrupt checkpoint metadata " + path + ".json: " + e.what());
    }

    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("missing checkpoint " + path);
    char magic[8] = {};
    std::uint32_t version = 0;
    std::uint64_t count = 0;
    in.read(magic, sizeof(magic));
    in.read(reinterpret_cast<char*>(&version), sizeof(version));
    in.read(reinterpret_cast<char*>(&count), sizeof(count));
    if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0 || version != kFormatVersion) {
        throw IoError("corrupt checkpoint " + path + ": bad header");
    }
    std::vector<float> params(count);
    in.read(reinterpret_cast<char*>(params.data()), static_cast<std::streamsize>(count * sizeof(float)));
    if (!in || in.peek() != std::char_traits<char>::eof()) {
        throw IoError("corrupt checkpoint " + path + ": payload size mismatch");
    }

    try {
        if (meta.at("payload_sha256").get<std::string>() != payload_hash(params)) {
            throw IoError("corrupt checkpoint " + path + ": payload hash mismatch");
        }
        DenoiserConfig cfg;
        const auto& c = meta.at("config");
        cfg.base_channels = c.at("base_channels").get<int>();
        cfg.depth = c.at("depth").get<int>();
        cfg.time_embed_dim = c.at("time_embed_dim").get<int>();
        cfg.image_size = {c.at("image_size").at(0).get<Index>(), c.at("image_size").at(1).get<Index>()};

        TrainingInfo info;
        info.steps = meta.at("T").get<int>();
        info.beta_min = meta.at("beta_min").get<double>();
        info.beta_max = meta.at("beta_max").get<double>();
        const auto& n = meta.at("noise");
        info.noise.kind = parse_noise_kind(n.at("kind").get<std::string>());
        info.noise.simplex_octaves = n.at("simplex_octaves").get<int>();
        info.noise.simplex_persistence = n.at("simplex_persistence").get<double>();
        info.noise.simplex_base_period = n.at("simplex_base_period").get<double>();
        info.seed = meta.at("seed").get<std::uint64_t>();
        const auto& tr = meta.at("train");
        info.epochs = tr.at("epochs").get<int>();
        info.batch_size = tr.at("batch_size").get<int>();
        info.learning_rate = tr.at("learning_rate").get<double>();
        info.final_loss = tr.at("final_loss").get<double>();
        info.fingerprint = meta.at("schedule_fingerprint").get<std::string>();
        info.schedule_hash = meta.at("schedule_hash").get<std::string>();
        return DenoiserModel(cfg, std::move(params), info);
    } catch (const json::exception& e) {
        throw IoError("corrupt checkpoint metadata " + path + ".json: " + e.what());
    } catch (const ConfigError& e) {
        throw IoError("corrupt checkpoint " + path + ": " + e.what());
    }
}

void write_training_curve(const std::vector<EpochStats>& curve, const std::string& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot write " + path);
    out << "epoch,mean_loss\n";
    out.precision(10);
    for (const auto& s : curve) out << s.epoch << "," << s.mean_loss << "\n";
}

} // namespace thor
