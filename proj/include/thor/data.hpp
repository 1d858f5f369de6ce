#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "thor/image.hpp"

namespace thor {

// ---- lesion strata -------------------------------------------------------

enum class SizeClass { small, medium, large };

std::string to_string(SizeClass c);
SizeClass parse_size_class(const std::string& name);

/// Pixel-count bounds of the size strata: small < small_below <= medium <
/// large_from <= large. Defined as 71 / 570 at 128x128 and rescaled by area.
struct SizeThresholds {
    double small_below = 71.0;
    double large_from = 570.0;
};

SizeThresholds size_thresholds(Shape shape);

// ---- connected components ------------------------------------------------

/// Inclusive pixel box [x0, y0, x1, y1].
struct Box {
    int x0 = 0;
    int y0 = 0;
    int x1 = 0;
    int y1 = 0;

    [[nodiscard]] long long area() const { return static_cast<long long>(x1 - x0 + 1) * (y1 - y0 + 1); }
    friend bool operator==(const Box&, const Box&) = default;
};

struct Component {
    Box box;
    std::vector<Index> pixels; // linear row-major indices
};

/// 8-connected components of the nonzero pixels, in raster order of first pixel.
std::vector<Component> connected_components(const Mask& mask);

std::vector<Box> component_boxes(const Mask& mask);

// ---- phantoms and anomalies ----------------------------------------------

struct IntensityBand {
    double mean = 0.5;
    double jitter = 0.05;
};

/// Nested smooth-edged ellipses with banded intensities and a faint texture.
struct PhantomSpec {
    std::uint64_t seed = 0;
    Shape size{64, 64};
    int min_structures = 3;
    int max_structures = 5;
    std::vector<IntensityBand> intensity_bands = {
        {0.85, 0.04}, {0.30, 0.05}, {0.55, 0.06}, {0.72, 0.06}, {0.45, 0.06},
    };
    double texture_amplitude = 0.03;

    void validate() const;
};

Image generate_phantom(const PhantomSpec& spec);

enum class Polarity { hypo, hyper };
enum class AnomalyShape { blob, ellipse };

std::string to_string(Polarity p);
std::string to_string(AnomalyShape s);

struct AnomalySpec {
    std::uint64_t seed = 0;
    SizeClass size_class = SizeClass::medium;
    Polarity polarity = Polarity::hypo;
    AnomalyShape shape = AnomalyShape::ellipse;
};

struct InjectedAnomaly {
    Image image;
    Mask mask;
    std::vector<Box> boxes;
};

/// Intensity-shifted region with a soft profile, placed inside the foreground.
/// The mask is exactly the set of altered pixels and its size lies within the
/// requested stratum. Throws DataError if no placement fits.
InjectedAnomaly inject_anomaly(const Image& image, const AnomalySpec& spec);

/// Divide by the 98th percentile of the nonzero pixels, clamp to [0, 1],
/// then bilinearly resize.
Image preprocess(const Image& raw, Shape target_size);

/// Nearest-rank percentile (q in [0, 100]): the smallest value with at least
/// q% of the values at or below it.
double percentile(std::vector<double> values, double q);

// ---- dataset manifest ----------------------------------------------------

enum class Split { train, test_healthy, test_anomalous };

std::string to_string(Split s);
Split parse_split(const std::string& name);

struct ManifestRecord {
    std::string image; // relative to the manifest directory
    std::optional<std::string> mask;
    std::vector<Box> boxes;
    Split split = Split::train;
    std::optional<SizeClass> size_class;
};

struct DatasetManifest {
    int version = 1;
    std::uint64_t seed = 0;
    Shape image_size{64, 64};
    std::vector<ManifestRecord> records;
    std::string root; // directory the relative paths resolve against (not serialized)

    [[nodiscard]] nlohmann::json to_json() const;
    static DatasetManifest from_json(const nlohmann::json& doc, const std::string& root);

    [[nodiscard]] std::vector<const ManifestRecord*> split(Split s) const;
    [[nodiscard]] std::string resolve(const std::string& relative) const;
};

struct DatasetCounts {
    int train = 400;
    int test_healthy = 20;
    int test_anomalous = 60;
};

struct DatasetConfig {
    std::uint64_t seed = 0;
    Shape size{64, 64};
    DatasetCounts counts;
    std::string out_dir;
    PhantomSpec phantom; // seed and size are overridden per image
    bool write_float = false;
};

/// Generates and writes all splits plus `manifest.json` under `out_dir`.
DatasetManifest build_dataset(const DatasetConfig& config);

DatasetManifest load_manifest(const std::string& path);
void save_manifest(const DatasetManifest& manifest, const std::string& path);

/// An image with its ground truth, loaded from a manifest record.
struct Sample {
    std::string id;
    Image image;
    Mask mask; // empty (0x0) for healthy records
    std::vector<Box> boxes;
    std::optional<SizeClass> size_class;
};

std::vector<Sample> load_split(const DatasetManifest& manifest, Split split);

} // namespace thor
