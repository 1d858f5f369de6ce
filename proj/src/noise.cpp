#include "thor/noise.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <random>

namespace thor {

std::string to_string(NoiseKind kind) {
    return kind == NoiseKind::gaussian ? "gaussian" : "simplex";
}

NoiseKind parse_noise_kind(const std::string& name) {
    if (name == "gaussian" || name == "gauss") return NoiseKind::gaussian;
    if (name == "simplex") return NoiseKind::simplex;
    throw ConfigError("unknown noise kind '" + name + "' (expected gaussian or simplex)");
}

void NoiseSpec::validate() const {
    if (kind == NoiseKind::gaussian) return;
    if (simplex_octaves < 1) throw ConfigError("simplex_octaves must be positive");
    if (!(simplex_persistence > 0.0 && simplex_persistence <= 1.0)) {
        throw ConfigError("simplex_persistence must lie in (0, 1]");
    }
    if (!(simplex_base_period > 0.0)) throw ConfigError("simplex_base_period must be positive");
}

std::string NoiseSpec::canonical() const {
    if (kind == NoiseKind::gaussian) return "gaussian";
    char buf[128];
    std::snprintf(buf, sizeof(buf), "simplex:%d:%.17g:%.17g", simplex_octaves, simplex_persistence,
                  simplex_base_period);
    return buf;
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
    // splitmix64 finalizer over both words
    auto mix = [](std::uint64_t z) {
        z += 0x9e3779b97f4a7c15ULL;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    };
    return mix(mix(seed) ^ (stream * 0xd1b54a32d192ed03ULL + 0x8cb92ba72f3d8dd7ULL));
}

namespace {

constexpr std::array<std::array<double, 2>, 12> kGradients = {{
    {1, 1}, {-1, 1}, {1, -1}, {-1, -1}, {1, 0}, {-1, 0},
    {1, 0}, {-1, 0}, {0, 1}, {0, -1}, {0, 1}, {0, -1},
}};

} // namespace

SimplexNoise2D::SimplexNoise2D(std::uint64_t seed) {
    std::array<std::uint8_t, 256> p{};
    std::iota(p.begin(), p.end(), 0);
    std::mt19937_64 rng(seed);
    std::shuffle(p.begin(), p.end(), rng);
    for (std::size_t i = 0; i < 512; ++i) perm_[i] = p[i & 255];
}

double SimplexNoise2D::operator()(double xin, double yin) const {
    static const double F2 = 0.5 * (std::sqrt(3.0) - 1.0);
    static const double G2 = (3.0 - std::sqrt(3.0)) / 6.0;

    const double s = (xin + yin) * F2;
    const double i = std::floor(xin + s);
    const double j = std::floor(yin + s);
    const double t = (i + j) * G2;
    const double x0 = xin - (i - t);
    const double y0 = yin - (j - t);

    const int i1 = x0 > y0 ? 1 : 0;
    const int j1 = x0 > y0 ? 0 : 1;
    const double x1 = x0 - i1 + G2;
    const double y1 = y0 - j1 + G2;
    const double x2 = x0 - 1.0 + 2.0 * G2;
    const double y2 = y0 - 1.0 + 2.0 * G2;

    const int ii = static_cast<int>(static_cast<long long>(i) & 255);
    const int jj = static_cast<int>(static_cast<long long>(j) & 255);

    auto corner = [](double tx, double ty, int g) {
        double r = 0.5 - tx * tx - ty * ty;
        if (r < 0.0) return 0.0;
        r *= r;
        return r * r * (kGradients[g][0] * tx + kGradients[g][1] * ty);
    };
    const double n0 = corner(x0, y0, perm_[ii + perm_[jj]] % 12);
    const double n1 = corner(x1, y1, perm_[ii + i1 + perm_[jj + j1]] % 12);
    const double n2 = corner(x2, y2, perm_[ii + 1 + perm_[jj + 1]] % 12);
    return 70.0 * (n0 + n1 + n2);
}

Image fractal_simplex(std::uint64_t seed, Shape shape, int octaves, double persistence, double base_period) {
    SimplexNoise2D simplex(seed);
    std::mt19937_64 rng(mix_seed(seed, 0x51u));
    std::uniform_real_distribution<double> offset(0.0, 256.0);

    Image field = Image::Zero(shape.height, shape.width);
    double amplitude = 1.0;
    double frequency = 1.0 / base_period;
    for (int o = 0; o < octaves; ++o) {
        const double ox = offset(rng);
        const double oy = offset(rng);
        for (Index y = 0; y < shape.height; ++y) {
            for (Index x = 0; x < shape.width; ++x) {
                field(y, x) += amplitude * simplex(static_cast<double>(x) * frequency + ox,
                                                   static_cast<double>(y) * frequency + oy);
            }
        }
        amplitude *= persistence;
        frequency *= 2.0;
    }
    return field;
}

Image sample_noise(const NoiseSpec& spec, Shape shape, std::uint64_t draw_index) {
    if (shape.height <= 0 || shape.width <= 0) {
        throw ShapeError("sample_noise: zero-area shape " + to_string(shape));
    }
    spec.validate();
    const std::uint64_t stream_seed = mix_seed(spec.seed, draw_index);

    if (spec.kind == NoiseKind::gaussian) {
        std::mt19937_64 rng(stream_seed);
        std::normal_distribution<double> normal(0.0, 1.0);
        Image field(shape.height, shape.width);
        for (Index k = 0; k < field.size(); ++k) field.data()[k] = normal(rng);
        return field;
    }

    Image field = fractal_simplex(stream_seed, shape, spec.simplex_octaves, spec.simplex_persistence,
                                  spec.simplex_base_period);
    const double mean = field.mean();
    field.array() -= mean;
    const double var = field.squaredNorm() / static_cast<double>(field.size());
    if (var > 0.0) {
        field /= std::sqrt(var);
    } else {
        field.setZero();
    }
    return field;
}

} // namespace thor
