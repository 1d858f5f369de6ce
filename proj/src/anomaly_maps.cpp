#include "thor/anomaly_maps.hpp"

#include <algorithm>

namespace thor {

namespace {

// Mean over a (2r+1)^2 window clipped to the grid.
Image box_mean(const Image& m, int r) {
    const Index h = m.rows();
    const Index w = m.cols();
    Image rows(h, w);
    for (Index y = 0; y < h; ++y) {
        for (Index x = 0; x < w; ++x) {
            const Index x0 = std::max<Index>(0, x - r);
            const Index x1 = std::min<Index>(w - 1, x + r);
            rows(y, x) = m.row(y).segment(x0, x1 - x0 + 1).sum();
        }
    }
    Image out(h, w);
    for (Index y = 0; y < h; ++y) {
        const Index y0 = std::max<Index>(0, y - r);
        const Index y1 = std::min<Index>(h - 1, y + r);
        for (Index x = 0; x < w; ++x) {
            const Index x0 = std::max<Index>(0, x - r);
            const Index x1 = std::min<Index>(w - 1, x + r);
            const double count = static_cast<double>((y1 - y0 + 1) * (x1 - x0 + 1));
            out(y, x) = rows.col(x).segment(y0, y1 - y0 + 1).sum() / count;
        }
    }
    return out;
}

Image downsample2(const Image& m) {
    const Index h = (m.rows() + 1) / 2;
    const Index w = (m.cols() + 1) / 2;
    Image out(h, w);
    for (Index y = 0; y < h; ++y) {
        for (Index x = 0; x < w; ++x) {
            double sum = 0.0;
            int n = 0;
            for (Index dy = 0; dy < 2; ++dy) {
                for (Index dx = 0; dx < 2; ++dx) {
                    const Index yy = 2 * y + dy;
                    const Index xx = 2 * x + dx;
                    if (yy < m.rows() && xx < m.cols()) {
                        sum += m(yy, xx);
                        ++n;
                    }
                }
            }
            out(y, x) = sum / n;
        }
    }
    return out;
}

// (1 - SSIM) / 2 per pixel. Each expression treats x and y symmetrically so
// that swapping the arguments and x == y both hold exactly in floating point.
Image ssim_dissimilarity(const Image& x, const Image& y, int radius) {
    constexpr double c1 = 0.01 * 0.01;
    constexpr double c2 = 0.03 * 0.03;
    const Image mx = box_mean(x, radius);
    const Image my = box_mean(y, radius);
    const Image exx = box_mean(x.cwiseProduct(x), radius);
    const Image eyy = box_mean(y.cwiseProduct(y), radius);
    const Image exy = box_mean(x.cwiseProduct(y), radius);

    Image out(x.rows(), x.cols());
    for (Index k = 0; k < out.size(); ++k) {
        const double ux = mx.data()[k];
        const double uy = my.data()[k];
        const double vx = exx.data()[k] - ux * ux;
        const double vy = eyy.data()[k] - uy * uy;
        const double cxy = exy.data()[k] - ux * uy;
        const double num = (ux * uy + ux * uy + c1) * (cxy + cxy + c2);
        const double den = (ux * ux + uy * uy + c1) * (vx + vy + c2);
        const double ssim = std::clamp(num / den, -1.0, 1.0);
        out.data()[k] = (1.0 - ssim) * 0.5;
    }
    return out;
}

} // namespace

StructuralDissimilarity::StructuralDissimilarity(int scales, int window) : scales_(scales), window_(window) {
    if (scales_ < 1) throw ConfigError("StructuralDissimilarity: scales must be >= 1");
    if (window_ < 1 || window_ % 2 == 0) throw ConfigError("StructuralDissimilarity: window must be odd");
}

int StructuralDissimilarity::receptive_radius() const {
    return (window_ / 2 + 2) * (1 << (scales_ - 1));
}

Image StructuralDissimilarity::operator()(const Image& x, const Image& y) const {
    require_same_shape(x, y, "perceptual_map");
    Image acc = Image::Zero(x.rows(), x.cols());
    Image xs = x;
    Image ys = y;
    for (int s = 0; s < scales_; ++s) {
        if (s > 0) {
            xs = downsample2(xs);
            ys = downsample2(ys);
        }
        const Image d = ssim_dissimilarity(xs, ys, window_ / 2);
        acc += s == 0 ? d : resize_bilinear(d, x.rows(), x.cols());
    }
    return (acc / static_cast<double>(scales_)).cwiseMax(0.0);
}

const PerceptualMetric& default_perceptual_metric() {
    static const StructuralDissimilarity metric;
    return metric;
}

Image perceptual_map(const Image& x, const Image& y, const PerceptualMetric& metric) {
    require_same_shape(x, y, "perceptual_map");
    return metric(x, y);
}

Image anomaly_map(const Image& x, const Image& x_rec, const PerceptualMetric& metric) {
    require_same_shape(x, x_rec, "anomaly_map");
    const Image s = metric(x, x_rec);
    return ((x - x_rec).cwiseAbs().array() * s.array()).matrix();
}

void MorphConfig::validate() const {
    if (element == StructuringShape::disk && disk_radius < 1) {
        throw ConfigError("disk structuring element needs a positive radius");
    }
    if (closing_iterations < 0 || dilation_iterations < 0) {
        throw ConfigError("morphology iteration counts must be non-negative");
    }
}

std::vector<std::pair<int, int>> MorphConfig::offsets() const {
    std::vector<std::pair<int, int>> out;
    auto square = [&](int r) {
        for (int dy = -r; dy <= r; ++dy)
            for (int dx = -r; dx <= r; ++dx) out.emplace_back(dy, dx);
    };
    switch (element) {
    case StructuringShape::square3: square(1); break;
    case StructuringShape::square5: square(2); break;
    case StructuringShape::disk:
        for (int dy = -disk_radius; dy <= disk_radius; ++dy)
            for (int dx = -disk_radius; dx <= disk_radius; ++dx)
                if (dy * dy + dx * dx <= disk_radius * disk_radius) out.emplace_back(dy, dx);
        break;
    }
    return out;
}

std::string to_string(StructuringShape s) {
    switch (s) {
    case StructuringShape::square3: return "square3";
    case StructuringShape::square5: return "square5";
    case StructuringShape::disk: return "disk";
    }
    return "?";
}

StructuringShape parse_structuring_shape(const std::string& name) {
    if (name == "square3") return StructuringShape::square3;
    if (name == "square5") return StructuringShape::square5;
    if (name == "disk") return StructuringShape::disk;
    throw ConfigError("unknown structuring element '" + name + "'");
}

} // namespace thor
