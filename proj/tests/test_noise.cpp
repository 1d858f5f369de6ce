#include <cmath>
#include <set>

#include "doctest.h"
#include "thor/noise.hpp"

using namespace thor;

namespace {

struct FieldStats {
    double mean;
    double var;
    double lag1; // mean of horizontal and vertical lag-1 autocorrelation
};

FieldStats stats(const Image& f) {
    const double mean = f.mean();
    const Image c = (f.array() - mean).matrix();
    const double var = c.squaredNorm() / static_cast<double>(c.size());
    double h = 0.0;
    double v = 0.0;
    for (Index y = 0; y < c.rows(); ++y)
        for (Index x = 0; x + 1 < c.cols(); ++x) h += c(y, x) * c(y, x + 1);
    for (Index y = 0; y + 1 < c.rows(); ++y)
        for (Index x = 0; x < c.cols(); ++x) v += c(y, x) * c(y + 1, x);
    h /= static_cast<double>(c.rows() * (c.cols() - 1));
    v /= static_cast<double>((c.rows() - 1) * c.cols());
    return {mean, var, 0.5 * (h + v) / var};
}

} // namespace

TEST_CASE("noise kind names round-trip") {
    CHECK(parse_noise_kind("gaussian") == NoiseKind::gaussian);
    CHECK(parse_noise_kind("simplex") == NoiseKind::simplex);
    CHECK(to_string(NoiseKind::simplex) == "simplex");
    CHECK_THROWS_AS(parse_noise_kind("perlin"), ConfigError);
}

TEST_CASE("sample_noise is a pure function of spec, shape and draw index") {
    for (NoiseKind kind : {NoiseKind::gaussian, NoiseKind::simplex}) {
        const NoiseSpec spec{kind, 42};
        const Image a = sample_noise(spec, {64, 64}, 3);
        CHECK(a == sample_noise(spec, {64, 64}, 3));
        CHECK(a != sample_noise(spec, {64, 64}, 4));
        CHECK(a != sample_noise(spec.with_seed(43), {64, 64}, 3));
        CHECK(a.rows() == 64);
        CHECK(a.cols() == 64);
        CHECK(all_finite(a));
    }
}

TEST_CASE("sample_noise rejects empty shapes and bad specs") {
    CHECK_THROWS_AS(sample_noise({}, {0, 8}, 0), ShapeError);
    CHECK_THROWS_AS(sample_noise({}, {8, 0}, 0), ShapeError);
    NoiseSpec bad{NoiseKind::simplex, 1};
    bad.simplex_octaves = 0;
    CHECK_THROWS_AS(sample_noise(bad, {8, 8}, 0), ConfigError);
    bad = {NoiseKind::simplex, 1};
    bad.simplex_persistence = 1.5;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = {NoiseKind::simplex, 1};
    bad.simplex_base_period = 0.0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("simplex fields are standardized and spatially smooth") {
    const NoiseSpec spec{NoiseKind::simplex, 9};
    for (int d = 0; d < 100; ++d) {
        const FieldStats s = stats(sample_noise(spec, {64, 64}, d));
        CHECK(std::abs(s.mean) < 0.02);
        CHECK(s.var > 0.95);
        CHECK(s.var < 1.05);
        CHECK(s.lag1 > 0.3);
    }
}

TEST_CASE("simplex standardization holds across exposed parameters") {
    for (int octaves : {1, 3, 6}) {
        for (double persistence : {0.3, 0.8, 1.0}) {
            for (double period : {4.0, 16.0, 64.0}) {
                NoiseSpec spec{NoiseKind::simplex, 2};
                spec.simplex_octaves = octaves;
                spec.simplex_persistence = persistence;
                spec.simplex_base_period = period;
                const FieldStats s = stats(sample_noise(spec, {32, 48}, 1));
                CHECK(std::abs(s.mean) < 1e-9);
                CHECK(s.var == doctest::Approx(1.0).epsilon(1e-9));
            }
        }
    }
}

TEST_CASE("gaussian fields are white") {
    const NoiseSpec spec{NoiseKind::gaussian, 9};
    double total_mean = 0.0;
    double total_var = 0.0;
    for (int d = 0; d < 100; ++d) {
        const FieldStats s = stats(sample_noise(spec, {64, 64}, d));
        CHECK(std::abs(s.lag1) < 0.05);
        total_mean += s.mean;
        total_var += s.var;
    }
    CHECK(std::abs(total_mean / 100) < 0.01);
    CHECK(std::abs(total_var / 100 - 1.0) < 0.01);
}

TEST_CASE("simplex lattice noise is bounded and deterministic") {
    const SimplexNoise2D a(7);
    const SimplexNoise2D b(7);
    const SimplexNoise2D c(8);
    int differ = 0;
    for (int i = 0; i < 2000; ++i) {
        const double x = 0.37 * i - 100.0;
        const double y = 0.11 * i + 3.0;
        const double v = a(x, y);
        CHECK(v == b(x, y));
        CHECK(std::abs(v) <= 1.0);
        differ += v != c(x, y);
    }
    CHECK(differ > 1000);
}

TEST_CASE("mix_seed separates streams") {
    std::set<std::uint64_t> seen;
    for (std::uint64_t s = 0; s < 50; ++s)
        for (std::uint64_t k = 0; k < 50; ++k) seen.insert(mix_seed(s, k));
    CHECK(seen.size() == 2500);
}

TEST_CASE("noise canonical form ignores the seed and simplex fields for gaussian") {
    NoiseSpec a{NoiseKind::gaussian, 1};
    NoiseSpec b{NoiseKind::gaussian, 2};
    b.simplex_octaves = 3;
    CHECK(a.canonical() == b.canonical());
    NoiseSpec c{NoiseKind::simplex, 1};
    NoiseSpec d{NoiseKind::simplex, 1};
    d.simplex_octaves = 5;
    CHECK(c.canonical() != d.canonical());
    CHECK(a.canonical() != c.canonical());
}
