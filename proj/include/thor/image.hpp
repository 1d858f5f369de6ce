#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>

#include "thor/errors.hpp"

namespace thor {

/// Row-major 2D raster. Row index is y, column index is x.
template <typename Scalar>
using ImageGrid = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using Image = ImageGrid<double>;
using Mask = ImageGrid<std::uint8_t>;
using Index = Eigen::Index;

struct Shape {
    Index height = 0;
    Index width = 0;

    [[nodiscard]] Index area() const { return height * width; }
    friend bool operator==(const Shape&, const Shape&) = default;
};

template <typename Derived>
Shape shape_of(const Eigen::DenseBase<Derived>& m) {
    return {m.rows(), m.cols()};
}

inline std::string to_string(const Shape& s) {
    return std::to_string(s.height) + "x" + std::to_string(s.width);
}

template <typename A, typename B>
void require_same_shape(const Eigen::DenseBase<A>& a, const Eigen::DenseBase<B>& b, const char* what) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
        throw ShapeError(std::string(what) + ": shape mismatch " + to_string(shape_of(a)) + " vs " +
                         to_string(shape_of(b)));
    }
}

template <typename Derived>
bool all_finite(const Eigen::DenseBase<Derived>& m) {
    return m.derived().array().isFinite().all();
}

template <typename Scalar>
ImageGrid<Scalar> clamp01(const ImageGrid<Scalar>& m) {
    return m.cwiseMax(Scalar(0)).cwiseMin(Scalar(1));
}

template <typename Derived>
Index popcount(const Eigen::DenseBase<Derived>& mask) {
    return (mask.derived().array() != 0).count();
}

template <typename Scalar>
Mask binarize(const ImageGrid<Scalar>& m, Scalar threshold) {
    return (m.array() > threshold).template cast<std::uint8_t>();
}

/// Bilinear resampling with half-pixel centers. Identity when the size is unchanged.
template <typename Scalar>
ImageGrid<Scalar> resize_bilinear(const ImageGrid<Scalar>& src, Index height, Index width) {
    if (height <= 0 || width <= 0 || src.size() == 0) {
        throw ShapeError("resize_bilinear: empty source or target");
    }
    ImageGrid<Scalar> out(height, width);
    const double sy = static_cast<double>(src.rows()) / static_cast<double>(height);
    const double sx = static_cast<double>(src.cols()) / static_cast<double>(width);
    for (Index y = 0; y < height; ++y) {
        double fy = (static_cast<double>(y) + 0.5) * sy - 0.5;
        fy = std::clamp(fy, 0.0, static_cast<double>(src.rows() - 1));
        const auto y0 = static_cast<Index>(std::floor(fy));
        const Index y1 = std::min<Index>(y0 + 1, src.rows() - 1);
        const double wy = fy - static_cast<double>(y0);
        for (Index x = 0; x < width; ++x) {
            double fx = (static_cast<double>(x) + 0.5) * sx - 0.5;
            fx = std::clamp(fx, 0.0, static_cast<double>(src.cols() - 1));
            const auto x0 = static_cast<Index>(std::floor(fx));
            const Index x1 = std::min<Index>(x0 + 1, src.cols() - 1);
            const double wx = fx - static_cast<double>(x0);
            if (wy == 0.0 && wx == 0.0) {
                out(y, x) = src(y0, x0);
                continue;
            }
            const double top = (1.0 - wx) * static_cast<double>(src(y0, x0)) + wx * static_cast<double>(src(y0, x1));
            const double bottom = (1.0 - wx) * static_cast<double>(src(y1, x0)) + wx * static_cast<double>(src(y1, x1));
            out(y, x) = static_cast<Scalar>((1.0 - wy) * top + wy * bottom);
        }
    }
    return out;
}

} // namespace thor
