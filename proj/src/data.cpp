#include "thor/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <limits>
#include <numbers>
#include <random>

#include "thor/errors.hpp"
#include "thor/io.hpp"
#include "thor/noise.hpp"

namespace thor {

namespace fs = std::filesystem;
using nlohmann::json;

std::string to_string(SizeClass c) {
    switch (c) {
    case SizeClass::small: return "small";
    case SizeClass::medium: return "medium";
    case SizeClass::large: return "large";
    }
    return "?";
}

SizeClass parse_size_class(const std::string& name) {
    if (name == "small") return SizeClass::small;
    if (name == "medium") return SizeClass::medium;
    if (name == "large") return SizeClass::large;
    throw ConfigError("unknown size class '" + name + "'");
}

SizeThresholds size_thresholds(Shape shape) {
    const double scale = static_cast<double>(shape.area()) / (128.0 * 128.0);
    return {71.0 * scale, 570.0 * scale};
}

std::vector<Component> connected_components(const Mask& mask) {
    const Index h = mask.rows();
    const Index w = mask.cols();
    std::vector<int> label(static_cast<std::size_t>(h * w), -1);
    std::vector<Component> out;
    std::vector<Index> stack;
    for (Index start = 0; start < h * w; ++start) {
        if (!mask.data()[start] || label[start] >= 0) continue;
        const int id = static_cast<int>(out.size());
        Component comp;
        const int sx = static_cast<int>(start % w);
        const int sy = static_cast<int>(start / w);
        comp.box = {sx, sy, sx, sy};
        label[start] = id;
        stack.assign(1, start);
        while (!stack.empty()) {
            const Index p = stack.back();
            stack.pop_back();
            comp.pixels.push_back(p);
            const int px = static_cast<int>(p % w);
            const int py = static_cast<int>(p / w);
            comp.box.x0 = std::min(comp.box.x0, px);
            comp.box.x1 = std::max(comp.box.x1, px);
            comp.box.y0 = std::min(comp.box.y0, py);
            comp.box.y1 = std::max(comp.box.y1, py);
            for (int dy = -1; dy <= 1; ++dy) {
                for (int dx = -1; dx <= 1; ++dx) {
                    const int nx = px + dx;
                    const int ny = py + dy;
                    if (nx < 0 || ny < 0 || nx >= w || ny >= h) continue;
                    const Index q = static_cast<Index>(ny) * w + nx;
                    if (mask.data()[q] && label[q] < 0) {
                        label[q] = id;
                        stack.push_back(q);
                    }
                }
            }
        }
        std::sort(comp.pixels.begin(), comp.pixels.end());
        out.push_back(std::move(comp));
    }
    return out;
}

std::vector<Box> component_boxes(const Mask& mask) {
    std::vector<Box> boxes;
    for (const auto& c : connected_components(mask)) boxes.push_back(c.box);
    return boxes;
}

// ---- phantoms ------------------------------------------------------------

void PhantomSpec::validate() const {
    if (size.height < 8 || size.width < 8) throw ConfigError("phantom size must be at least 8x8");
    if (min_structures < 1 || max_structures < min_structures) {
        throw ConfigError("phantom structure count range is invalid");
    }
    if (intensity_bands.empty()) throw ConfigError("phantom needs at least one intensity band");
    for (const auto& b : intensity_bands) {
        if (!(b.mean > 0.0 && b.mean <= 1.0) || !(b.jitter >= 0.0) || b.mean - b.jitter <= 0.0) {
            throw ConfigError("phantom intensity bands must lie in (0, 1]");
        }
    }
    if (!(texture_amplitude >= 0.0 && texture_amplitude < 0.5)) {
        throw ConfigError("phantom texture amplitude must be in [0, 0.5)");
    }
}

namespace {

struct Ellipse {
    double cx, cy; // normalized [-1, 1] coordinates
    double a, b;
    double theta;

    // Normalized radius: < 1 inside, 1 on the boundary.
    [[nodiscard]] double radius(double u, double v) const {
        const double du = u - cx;
        const double dv = v - cy;
        const double c = std::cos(theta);
        const double s = std::sin(theta);
        const double p = (c * du + s * dv) / a;
        const double q = (-s * du + c * dv) / b;
        return std::sqrt(p * p + q * q);
    }
};

double smoothstep(double e) {
    e = std::clamp(e, 0.0, 1.0);
    return e * e * (3.0 - 2.0 * e);
}

double uniform(std::mt19937_64& rng, double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(rng);
}

} // namespace

Image generate_phantom(const PhantomSpec& spec) {
    spec.validate();
    std::mt19937_64 rng(mix_seed(spec.seed, 0x9a47));
    const Index h = spec.size.height;
    const Index w = spec.size.width;
    const int n = std::uniform_int_distribution<int>(spec.min_structures, spec.max_structures)(rng);

    std::vector<Ellipse> shapes;
    shapes.push_back({uniform(rng, -0.05, 0.05), uniform(rng, -0.05, 0.05), uniform(rng, 0.70, 0.84),
                      uniform(rng, 0.62, 0.80), uniform(rng, -0.3, 0.3)});
    for (int k = 1; k < n; ++k) {
        const Ellipse& p = shapes.back();
        const double scale = k == 1 ? uniform(rng, 0.86, 0.92) : uniform(rng, 0.55, 0.85);
        const double slack = 1.0 - scale;
        shapes.push_back({p.cx + uniform(rng, -0.5, 0.5) * slack * p.a, p.cy + uniform(rng, -0.5, 0.5) * slack * p.b,
                          p.a * scale, p.b * scale, p.theta + uniform(rng, -0.3, 0.3)});
    }
    std::vector<double> levels;
    for (int k = 0; k < n; ++k) {
        const auto& band = spec.intensity_bands[static_cast<std::size_t>(k) % spec.intensity_bands.size()];
        levels.push_back(band.mean + uniform(rng, -band.jitter, band.jitter));
    }

    // edge width of about 1.5 pixels in normalized radius units
    const double pixel = 2.0 / static_cast<double>(std::min(h, w));
    const Image texture = fractal_simplex(mix_seed(spec.seed, 0x7e47), spec.size, 3, 0.5, 8.0);

    Image img = Image::Zero(h, w);
    for (Index y = 0; y < h; ++y) {
        const double v = (static_cast<double>(y) + 0.5) / static_cast<double>(h) * 2.0 - 1.0;
        for (Index x = 0; x < w; ++x) {
            const double u = (static_cast<double>(x) + 0.5) / static_cast<double>(w) * 2.0 - 1.0;
            double value = 0.0;
            double outer = 0.0;
            for (int k = 0; k < n; ++k) {
                const Ellipse& e = shapes[k];
                const double edge = 1.5 * pixel / std::min(e.a, e.b);
                const double alpha = smoothstep((1.0 - e.radius(u, v)) / edge + 0.5);
                if (k == 0) outer = alpha;
                value = value * (1.0 - alpha) + levels[k] * alpha;
            }
            img(y, x) = std::clamp(value * (1.0 + spec.texture_amplitude * texture(y, x) * outer), 0.0, 1.0);
        }
    }
    return img;
}

// ---- anomalies -----------------------------------------------------------

std::string to_string(Polarity p) { return p == Polarity::hypo ? "hypo" : "hyper"; }
std::string to_string(AnomalyShape s) { return s == AnomalyShape::blob ? "blob" : "ellipse"; }

namespace {

constexpr double kTissueLevel = 0.1;

// Union of ellipses given in unit coordinates around a pixel centre.
struct Region {
    double cx = 0.0;
    double cy = 0.0;
    std::vector<Ellipse> lobes;
    double scale = 1.0;

    [[nodiscard]] double radius(double x, double y) const {
        double r = std::numeric_limits<double>::infinity();
        for (const auto& e : lobes) r = std::min(r, e.radius((x - cx) / scale, (y - cy) / scale));
        return r;
    }

    [[nodiscard]] Index count(Index h, Index w) const {
        Index c = 0;
        for (Index y = 0; y < h; ++y)
            for (Index x = 0; x < w; ++x) c += radius(static_cast<double>(x), static_cast<double>(y)) < 1.0;
        return c;
    }
};

std::pair<Index, Index> class_bounds(SizeClass c, Shape shape) {
    const SizeThresholds t = size_thresholds(shape);
    const auto small_hi = static_cast<Index>(std::ceil(t.small_below)) - 1;
    const auto large_lo = static_cast<Index>(std::ceil(t.large_from));
    switch (c) {
    case SizeClass::small: return {std::max<Index>(4, static_cast<Index>(std::ceil(0.35 * t.small_below))), small_hi};
    case SizeClass::medium: return {small_hi + 1, large_lo - 1};
    case SizeClass::large: return {large_lo, static_cast<Index>(std::floor(2.5 * t.large_from))};
    }
    return {0, 0};
}

} // namespace

InjectedAnomaly inject_anomaly(const Image& image, const AnomalySpec& spec) {
    const Index h = image.rows();
    const Index w = image.cols();
    if (h < 8 || w < 8) throw ShapeError("inject_anomaly: image too small " + to_string(shape_of(image)));
    const auto [lo, hi] = class_bounds(spec.size_class, shape_of(image));
    if (lo > hi) throw DataError("inject_anomaly: image too small for size class " + to_string(spec.size_class));

    std::vector<Index> tissue;
    for (Index k = 0; k < image.size(); ++k)
        if (image.data()[k] > kTissueLevel) tissue.push_back(k);
    if (static_cast<Index>(tissue.size()) < lo) throw DataError("inject_anomaly: not enough foreground");

    std::mt19937_64 rng(mix_seed(spec.seed, 0xa70));
    for (int attempt = 0; attempt < 400; ++attempt) {
        const double target = std::exp(uniform(rng, std::log(static_cast<double>(lo) + 0.5),
                                               std::log(static_cast<double>(hi) + 0.5)));
        const Index centre = tissue[std::uniform_int_distribution<std::size_t>(0, tissue.size() - 1)(rng)];
        const double cx = static_cast<double>(centre % w);
        const double cy = static_cast<double>(centre / w);

        Region region;
        region.cx = cx;
        region.cy = cy;
        const double q = uniform(rng, 0.5, 1.0);
        const double theta = uniform(rng, 0.0, std::numbers::pi);
        region.lobes.push_back({0.0, 0.0, 1.0, q, theta});
        if (spec.shape == AnomalyShape::blob) {
            for (int k = 0; k < 2; ++k) {
                const double phi = uniform(rng, 0.0, 2.0 * std::numbers::pi);
                const double d = uniform(rng, 0.4, 0.8);
                region.lobes.push_back({d * std::cos(phi), d * std::sin(phi), uniform(rng, 0.5, 0.8),
                                        uniform(rng, 0.4, 0.7), uniform(rng, 0.0, std::numbers::pi)});
            }
        }
        // scale so the covered pixel count is as close to the target as possible
        double s_lo = 0.3;
        double s_hi = 2.0 * std::sqrt(static_cast<double>(h * w));
        for (int it = 0; it < 40; ++it) {
            region.scale = 0.5 * (s_lo + s_hi);
            (static_cast<double>(region.count(h, w)) < target ? s_lo : s_hi) = region.scale;
        }
        region.scale = s_hi;

        Image out = image;
        bool inside = true;
        for (Index y = 0; y < h && inside; ++y) {
            for (Index x = 0; x < w; ++x) {
                const double r = region.radius(static_cast<double>(x), static_cast<double>(y));
                if (r >= 1.0) continue;
                if (image(y, x) <= kTissueLevel) {
                    inside = false;
                    break;
                }
            }
        }
        if (!inside) continue;

        const double factor = uniform(rng, 0.3, 0.7);
        const double offset = uniform(rng, 0.2, 0.4);
        for (Index y = 0; y < h; ++y) {
            for (Index x = 0; x < w; ++x) {
                const double r = region.radius(static_cast<double>(x), static_cast<double>(y));
                if (r >= 1.0) continue;
                const double weight = 0.4 + 0.6 * (1.0 - r * r);
                out(y, x) = spec.polarity == Polarity::hypo ? image(y, x) * (1.0 - weight * (1.0 - factor))
                                                            : std::min(1.0, image(y, x) + weight * offset);
            }
        }
        Mask mask = (out.array() != image.array()).cast<std::uint8_t>();
        const Index area = popcount(mask);
        if (area < lo || area > hi) continue;
        return {std::move(out), mask, component_boxes(mask)};
    }
    throw DataError("inject_anomaly: no valid " + to_string(spec.size_class) + " placement after 400 attempts");
}

double percentile(std::vector<double> values, double q) {
    if (values.empty()) throw DataError("percentile of an empty set");
    if (!(q >= 0.0 && q <= 100.0)) throw ConfigError("percentile q must lie in [0, 100]");
    const double rank = std::ceil(q / 100.0 * static_cast<double>(values.size()));
    const auto k = static_cast<std::size_t>(std::clamp(rank, 1.0, static_cast<double>(values.size()))) - 1;
    std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(k), values.end());
    return values[k];
}

Image preprocess(const Image& raw, Shape target_size) {
    if (target_size.height <= 0 || target_size.width <= 0) throw ShapeError("preprocess: empty target size");
    if (raw.size() == 0) throw ShapeError("preprocess: empty image");
    if (!all_finite(raw)) throw DataError("preprocess: image contains non-finite values");
    if ((raw.array() < 0.0).any()) throw DataError("preprocess: image has negative values");
    std::vector<double> nonzero;
    for (Index k = 0; k < raw.size(); ++k)
        if (raw.data()[k] > 0.0) nonzero.push_back(raw.data()[k]);
    if (nonzero.empty()) throw DataError("preprocess: image is all zero");
    Image scaled = raw / percentile(std::move(nonzero), 98.0);
    scaled = clamp01(scaled);
    return resize_bilinear(scaled, target_size.height, target_size.width);
}

// ---- manifest ------------------------------------------------------------

std::string to_string(Split s) {
    switch (s) {
    case Split::train: return "train";
    case Split::test_healthy: return "test_healthy";
    case Split::test_anomalous: return "test_anomalous";
    }
    return "?";
}

Split parse_split(const std::string& name) {
    if (name == "train") return Split::train;
    if (name == "test_healthy") return Split::test_healthy;
    if (name == "test_anomalous") return Split::test_anomalous;
    throw ConfigError("unknown split '" + name + "'");
}

json DatasetManifest::to_json() const {
    json recs = json::array();
    for (const auto& r : records) {
        json j;
        j["image"] = r.image;
        if (r.mask) j["mask"] = *r.mask;
        if (!r.boxes.empty() || r.mask) {
            json boxes = json::array();
            for (const auto& b : r.boxes) boxes.push_back({b.x0, b.y0, b.x1, b.y1});
            j["boxes"] = boxes;
        }
        j["split"] = thor::to_string(r.split);
        if (r.size_class) j["size_class"] = thor::to_string(*r.size_class);
        recs.push_back(std::move(j));
    }
    return {{"version", version},
            {"seed", seed},
            {"image_size", {image_size.height, image_size.width}},
            {"records", recs}};
}

DatasetManifest DatasetManifest::from_json(const json& doc, const std::string& root_dir) {
    DatasetManifest m;
    try {
        m.version = doc.at("version").get<int>();
        if (m.version != 1) throw DataError("unsupported manifest version " + std::to_string(m.version));
        m.seed = doc.at("seed").get<std::uint64_t>();
        if (doc.contains("image_size")) {
            m.image_size = {doc["image_size"].at(0).get<Index>(), doc["image_size"].at(1).get<Index>()};
        }
        for (const auto& j : doc.at("records")) {
            ManifestRecord r;
            r.image = j.at("image").get<std::string>();
            if (j.contains("mask")) r.mask = j["mask"].get<std::string>();
            if (j.contains("boxes")) {
                for (const auto& b : j["boxes"])
                    r.boxes.push_back({b.at(0).get<int>(), b.at(1).get<int>(), b.at(2).get<int>(), b.at(3).get<int>()});
            }
            r.split = parse_split(j.at("split").get<std::string>());
            if (j.contains("size_class")) r.size_class = parse_size_class(j["size_class"].get<std::string>());
            m.records.push_back(std::move(r));
        }
    } catch (const json::exception& e) {
        throw DataError(std::string("malformed manifest: ") + e.what());
    }
    m.root = root_dir;
    return m;
}

std::vector<const ManifestRecord*> DatasetManifest::split(Split s) const {
    std::vector<const ManifestRecord*> out;
    for (const auto& r : records)
        if (r.split == s) out.push_back(&r);
    return out;
}

std::string DatasetManifest::resolve(const std::string& relative) const {
    const fs::path p(relative);
    if (p.is_absolute() || root.empty()) return p.string();
    return (fs::path(root) / p).string();
}

DatasetManifest load_manifest(const std::string& path) {
    if (!fs::exists(path)) throw IoError("manifest not found: " + path);
    return DatasetManifest::from_json(io::read_json(path), fs::path(path).parent_path().string());
}

void save_manifest(const DatasetManifest& manifest, const std::string& path) {
    io::write_json(manifest.to_json(), path);
}

namespace {

std::string indexed(const std::string& prefix, int i) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "_%04d", i);
    return prefix + buf;
}

} // namespace

DatasetManifest build_dataset(const DatasetConfig& config) {
    if (config.out_dir.empty()) throw ConfigError("dataset output directory is empty");
    if (config.counts.train < 0 || config.counts.test_healthy < 0 || config.counts.test_anomalous < 0) {
        throw ConfigError("dataset split counts must be non-negative");
    }
    io::ensure_directory(config.out_dir + "/images");
    io::ensure_directory(config.out_dir + "/masks");

    DatasetManifest manifest;
    manifest.seed = config.seed;
    manifest.image_size = config.size;
    manifest.root = config.out_dir;

    auto phantom = [&](std::uint64_t stream) {
        PhantomSpec p = config.phantom;
        p.seed = mix_seed(config.seed, stream);
        // phantoms are drawn at twice the working size and then preprocessed down
        p.size = {config.size.height * 2, config.size.width * 2};
        return preprocess(generate_phantom(p), config.size);
    };
    auto save_image = [&](const Image& img, const std::string& id) {
        const std::string rel = "images/" + id + ".png";
        io::write_png16(img, config.out_dir + "/" + rel);
        if (config.write_float) io::write_float_grid(img, config.out_dir + "/images/" + id + ".f32");
        return rel;
    };

    for (int i = 0; i < config.counts.train; ++i) {
        const std::string id = indexed("train", i);
        manifest.records.push_back({save_image(phantom(1'000'000 + i), id), std::nullopt, {}, Split::train, {}});
    }
    for (int i = 0; i < config.counts.test_healthy; ++i) {
        const std::string id = indexed("test_healthy", i);
        manifest.records.push_back(
            {save_image(phantom(2'000'000 + i), id), std::nullopt, {}, Split::test_healthy, {}});
    }
    std::mt19937_64 rng(mix_seed(config.seed, 0x5eed));
    for (int i = 0; i < config.counts.test_anomalous; ++i) {
        const std::string id = indexed("test_anomalous", i);
        AnomalySpec a;
        a.size_class = static_cast<SizeClass>(i % 3);
        a.polarity = std::bernoulli_distribution(0.5)(rng) ? Polarity::hypo : Polarity::hyper;
        a.shape = (i / 3) % 2 == 0 ? AnomalyShape::ellipse : AnomalyShape::blob;
        a.seed = mix_seed(config.seed, 3'000'000 + i);
        InjectedAnomaly inj;
        for (int retry = 0;; ++retry) {
            const Image base = phantom(4'000'000 + static_cast<std::uint64_t>(i) * 16 + retry);
            try {
                inj = inject_anomaly(base, a);
                break;
            } catch (const DataError&) {
                if (retry >= 8) throw;
            }
        }
        const std::string rel_mask = "masks/" + id + ".png";
        io::write_mask_png(inj.mask, config.out_dir + "/" + rel_mask);
        manifest.records.push_back(
            {save_image(inj.image, id), rel_mask, inj.boxes, Split::test_anomalous, a.size_class});
    }
    save_manifest(manifest, config.out_dir + "/manifest.json");
    return manifest;
}

std::vector<Sample> load_split(const DatasetManifest& manifest, Split split) {
    std::vector<Sample> out;
    for (const ManifestRecord* r : manifest.split(split)) {
        Sample s;
        s.id = fs::path(r->image).stem().string();
        s.image = io::read_image(manifest.resolve(r->image));
        if (s.image.rows() != manifest.image_size.height || s.image.cols() != manifest.image_size.width) {
            throw ShapeError("image " + r->image + " is " + to_string(shape_of(s.image)) + ", manifest says " +
                             to_string(manifest.image_size));
        }
        if (r->mask) {
            s.mask = io::read_mask_png(manifest.resolve(*r->mask));
            require_same_shape(s.mask, s.image, "load_split mask");
        }
        s.boxes = r->boxes;
        s.size_class = r->size_class;
        out.push_back(std::move(s));
    }
    return out;
}

} // namespace thor
