#pragma once

#include <cmath>
#include <limits>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "thor/image.hpp"

namespace thor {

/// Per-pixel dissimilarity between two images. Implementations must return a
/// non-negative map of the input shape that is zero when the inputs coincide.
class PerceptualMetric {
public:
    virtual ~PerceptualMetric() = default;
    [[nodiscard]] virtual Image operator()(const Image& x, const Image& y) const = 0;
    [[nodiscard]] virtual std::string name() const = 0;
};

/// Multi-scale structural dissimilarity: (1 - SSIM) / 2 from local window
/// statistics at several dyadic scales, bilinearly upsampled and averaged.
class StructuralDissimilarity final : public PerceptualMetric {
public:
    explicit StructuralDissimilarity(int scales = 3, int window = 7);

    [[nodiscard]] Image operator()(const Image& x, const Image& y) const override;
    [[nodiscard]] std::string name() const override { return "msssim-dissimilarity"; }

    /// Radius (in full-resolution pixels) beyond which one pixel cannot affect the map.
    [[nodiscard]] int receptive_radius() const;

private:
    int scales_;
    int window_;
};

const PerceptualMetric& default_perceptual_metric();

/// Symmetric per-pixel dissimilarity via the supplied metric.
Image perceptual_map(const Image& x, const Image& y, const PerceptualMetric& metric = default_perceptual_metric());

/// Residual weighted by perceptual dissimilarity: |x - x_rec| * S(x, x_rec).
Image anomaly_map(const Image& x, const Image& x_rec, const PerceptualMetric& metric = default_perceptual_metric());

/// Min-max rescale to [0, 1]. A constant map yields all zeros.
template <typename Scalar>
ImageGrid<Scalar> normalize01(const ImageGrid<Scalar>& m) {
    if (!all_finite(m)) throw ConfigError("normalize01: non-finite input");
    if (m.size() == 0) return m;
    const Scalar lo = m.minCoeff();
    const Scalar hi = m.maxCoeff();
    if (!(hi > lo)) return ImageGrid<Scalar>::Zero(m.rows(), m.cols());
    return ((m.array() - lo) / (hi - lo)).matrix();
}

enum class StructuringShape { square3, square5, disk };

struct MorphConfig {
    StructuringShape element = StructuringShape::square3;
    int disk_radius = 1;
    int closing_iterations = 1;
    int dilation_iterations = 1;

    void validate() const;
    /// Offsets (dy, dx) of the element; always contains (0, 0) and is symmetric.
    [[nodiscard]] std::vector<std::pair<int, int>> offsets() const;
};

std::string to_string(StructuringShape s);
StructuringShape parse_structuring_shape(const std::string& name);

/// Flat grayscale dilation (max filter). Pixels outside the grid are ignored.
template <typename Scalar>
ImageGrid<Scalar> dilate(const ImageGrid<Scalar>& m, std::span<const std::pair<int, int>> element) {
    ImageGrid<Scalar> out(m.rows(), m.cols());
    for (Index y = 0; y < m.rows(); ++y) {
        for (Index x = 0; x < m.cols(); ++x) {
            Scalar v = std::numeric_limits<Scalar>::lowest();
            for (const auto& [dy, dx] : element) {
                const Index yy = y + dy;
                const Index xx = x + dx;
                if (yy >= 0 && yy < m.rows() && xx >= 0 && xx < m.cols()) v = std::max(v, m(yy, xx));
            }
            out(y, x) = v;
        }
    }
    return out;
}

/// Flat grayscale erosion (min filter). Pixels outside the grid are ignored.
template <typename Scalar>
ImageGrid<Scalar> erode(const ImageGrid<Scalar>& m, std::span<const std::pair<int, int>> element) {
    ImageGrid<Scalar> out(m.rows(), m.cols());
    for (Index y = 0; y < m.rows(); ++y) {
        for (Index x = 0; x < m.cols(); ++x) {
            Scalar v = std::numeric_limits<Scalar>::max();
            for (const auto& [dy, dx] : element) {
                const Index yy = y + dy;
                const Index xx = x + dx;
                if (yy >= 0 && yy < m.rows() && xx >= 0 && xx < m.cols()) v = std::min(v, m(yy, xx));
            }
            out(y, x) = v;
        }
    }
    return out;
}

template <typename Scalar>
ImageGrid<Scalar> closing(const ImageGrid<Scalar>& m, std::span<const std::pair<int, int>> element) {
    return erode<Scalar>(dilate<Scalar>(m, element), element);
}

/// The cd operator: closing repeated, then dilation repeated, clamped to [0, 1].
template <typename Scalar>
ImageGrid<Scalar> close_dilate(const ImageGrid<Scalar>& m, const MorphConfig& cfg) {
    cfg.validate();
    const auto element = cfg.offsets();
    ImageGrid<Scalar> out = m;
    for (int i = 0; i < cfg.closing_iterations; ++i) out = closing<Scalar>(out, element);
    for (int i = 0; i < cfg.dilation_iterations; ++i) out = dilate<Scalar>(out, element);
    return clamp01(out);
}

/// Pixelwise harmonic mean n / sum(1 / max(m_t, floor)). Any near-zero map
/// drives the score toward zero.
template <typename Scalar>
ImageGrid<Scalar> harmonic_score(std::span<const ImageGrid<Scalar>> maps, Scalar eps_floor = Scalar(1e-8)) {
    if (maps.empty()) throw ConfigError("harmonic_score: no maps");
    ImageGrid<Scalar> inv_sum = ImageGrid<Scalar>::Zero(maps.front().rows(), maps.front().cols());
    for (const auto& m : maps) {
        require_same_shape(maps.front(), m, "harmonic_score");
        if ((m.array() < Scalar(0)).any()) throw ConfigError("harmonic_score: negative map value");
        inv_sum.array() += m.array().max(eps_floor).inverse();
    }
    return (Scalar(maps.size()) / inv_sum.array()).matrix();
}

template <typename Scalar>
ImageGrid<Scalar> harmonic_score(const std::vector<ImageGrid<Scalar>>& maps, Scalar eps_floor = Scalar(1e-8)) {
    return harmonic_score<Scalar>(std::span<const ImageGrid<Scalar>>(maps), eps_floor);
}

} // namespace thor
