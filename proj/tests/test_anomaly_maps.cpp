#include <algorithm>
#include <random>

#include "doctest.h"
#include "test_util.hpp"
#include "thor/anomaly_maps.hpp"
#include "thor/data.hpp"

using namespace thor;

namespace {

Image smooth_image(std::uint64_t seed, Index size) {
    PhantomSpec p;
    p.seed = seed;
    p.size = {size, size};
    return generate_phantom(p);
}

} // namespace

TEST_CASE("perceptual map: identity, symmetry, range") {
    std::mt19937_64 rng(1);
    for (int i = 0; i < 20; ++i) {
        const Image x = test::random_image(rng, 32, 24);
        const Image y = test::random_image(rng, 32, 24);
        CHECK(perceptual_map(x, x).cwiseAbs().maxCoeff() == 0.0);
        const Image a = perceptual_map(x, y);
        CHECK(a == perceptual_map(y, x));
        CHECK(a.rows() == 32);
        CHECK(a.cols() == 24);
        CHECK(a.minCoeff() >= 0.0);
        CHECK(a.maxCoeff() <= 1.0);
    }
    CHECK_THROWS_AS(perceptual_map(Image::Zero(4, 4), Image::Zero(4, 5)), ShapeError);
}

TEST_CASE("perceptual map localizes a corrupted block") {
    const StructuralDissimilarity metric;
    const int r = metric.receptive_radius();
    for (std::uint64_t seed : {1, 2, 3, 4, 5}) {
        const Image x = smooth_image(seed, 64);
        for (auto [by, bx] : {std::pair{28, 28}, std::pair{8, 40}}) {
            Image y = x;
            y.block(by, bx, 8, 8) = (1.0 - x.block(by, bx, 8, 8).array()).matrix();
            const Image m = perceptual_map(x, y, metric);
            const Index y0 = std::max(0, by - r);
            const Index x0 = std::max(0, bx - r);
            const Index y1 = std::min(64, by + 8 + r);
            const Index x1 = std::min(64, bx + 8 + r);
            const double inside = m.block(y0, x0, y1 - y0, x1 - x0).sum();
            CHECK(m.sum() > 0.0);
            CHECK(inside >= 0.6 * m.sum());
            // nothing at all leaks beyond the receptive field
            CHECK(inside == doctest::Approx(m.sum()).epsilon(1e-12));
        }
    }
}

TEST_CASE("anomaly map examples") {
    std::mt19937_64 rng(2);
    const Image x = test::random_image(rng, 16, 16);
    CHECK(anomaly_map(x, x).cwiseAbs().maxCoeff() == 0.0);

    struct Constant final : PerceptualMetric {
        Image operator()(const Image& a, const Image&) const override { return Image::Constant(a.rows(), a.cols(), 0.2); }
        std::string name() const override { return "constant"; }
    } constant;
    const Image shifted = (x.array() + 0.5).matrix();
    const Image m = anomaly_map(x, shifted, constant);
    CHECK((m.array() - 0.1).abs().maxCoeff() < 1e-15);

    Image y = x;
    y.block(4, 4, 3, 3).array() += 0.3;
    const Image a = anomaly_map(x, y);
    for (Index r = 0; r < 16; ++r)
        for (Index c = 0; c < 16; ++c)
            if (x(r, c) == y(r, c)) CHECK(a(r, c) == 0.0);
}

TEST_CASE("normalize01 examples") {
    Image m(1, 3);
    m << 0.0, 2.0, 4.0;
    const Image n = normalize01(m);
    CHECK(n(0, 0) == 0.0);
    CHECK(n(0, 1) == 0.5);
    CHECK(n(0, 2) == 1.0);
    CHECK(normalize01(Image::Constant(3, 3, 0.7).eval()).cwiseAbs().maxCoeff() == 0.0);

    std::mt19937_64 rng(3);
    for (int i = 0; i < 100; ++i) {
        const Image r = test::random_image(rng, 6, 7, 0.0, 5.0);
        const Image nr = normalize01(r);
        CHECK(nr.minCoeff() == 0.0);
        CHECK(nr.maxCoeff() == 1.0);
        const double c = std::uniform_real_distribution<double>(0.01, 100.0)(rng);
        CHECK((normalize01((c * r).eval()) - nr).cwiseAbs().maxCoeff() < 1e-12);
    }
    Image bad = Image::Zero(2, 2);
    bad(0, 0) = std::numeric_limits<double>::infinity();
    CHECK_THROWS_AS(normalize01(bad), ConfigError);
}

TEST_CASE("close_dilate fixed points and the hand-traced single pixel") {
    const MorphConfig cfg;
    CHECK(close_dilate(Image::Zero(6, 6).eval(), cfg).cwiseAbs().maxCoeff() == 0.0);
    CHECK((close_dilate(Image::Ones(6, 6).eval(), cfg).array() == 1.0).all());

    Image dot = Image::Zero(5, 5);
    dot(2, 2) = 1.0;
    const auto element = cfg.offsets();
    CHECK(closing<double>(dot, element) == dot);
    Image expected = Image::Zero(5, 5);
    expected.block(1, 1, 3, 3).setOnes();
    CHECK(close_dilate(dot, cfg) == expected);
}

TEST_CASE("structuring elements") {
    MorphConfig c;
    CHECK(c.offsets().size() == 9);
    c.element = StructuringShape::square5;
    CHECK(c.offsets().size() == 25);
    c.element = StructuringShape::disk;
    c.disk_radius = 2;
    CHECK(c.offsets().size() == 13);
    for (auto shape : {StructuringShape::square3, StructuringShape::square5, StructuringShape::disk}) {
        c.element = shape;
        const auto off = c.offsets();
        CHECK(std::find(off.begin(), off.end(), std::pair{0, 0}) != off.end());
        for (auto [dy, dx] : off) CHECK(std::find(off.begin(), off.end(), std::pair{-dy, -dx}) != off.end());
        CHECK(parse_structuring_shape(to_string(shape)) == shape);
    }
    c.disk_radius = 0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = {};
    c.closing_iterations = -1;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    CHECK_THROWS_AS(parse_structuring_shape("cross"), ConfigError);
}

TEST_CASE("close_dilate is extensive and closing is idempotent") {
    std::mt19937_64 rng(4);
    MorphConfig cfgs[3];
    cfgs[1].element = StructuringShape::square5;
    cfgs[2].element = StructuringShape::disk;
    cfgs[2].disk_radius = 2;
    cfgs[2].closing_iterations = 2;
    for (int i = 0; i < 1000; ++i) {
        const MorphConfig& cfg = cfgs[i % 3];
        const Image m = test::random_image(rng, 9, 11);
        const Image cd = close_dilate(m, cfg);
        CHECK(((cd - m).array() >= 0.0).all());
        CHECK(cd.maxCoeff() <= 1.0);
        if (i % 10 == 0) {
            const Image b = (test::random_mask(rng, 9, 11, 0.4).cast<double>()).eval();
            const auto el = cfg.offsets();
            const Image once = closing<double>(b, el);
            CHECK(closing<double>(once, el) == once);
            CHECK(((once - b).array() >= 0.0).all());
        }
    }
}

TEST_CASE("grayscale dilation and erosion against a brute-force oracle") {
    std::mt19937_64 rng(5);
    MorphConfig cfg;
    cfg.element = StructuringShape::disk;
    cfg.disk_radius = 2;
    const auto el = cfg.offsets();
    for (int i = 0; i < 50; ++i) {
        const Image m = test::random_image(rng, 7, 9);
        const Image d = dilate<double>(m, el);
        const Image e = erode<double>(m, el);
        for (Index y = 0; y < 7; ++y) {
            for (Index x = 0; x < 9; ++x) {
                double hi = -1.0;
                double lo = 2.0;
                for (Index v = 0; v < 7; ++v) {
                    for (Index u = 0; u < 9; ++u) {
                        const Index dy = v - y;
                        const Index dx = u - x;
                        if (dy * dy + dx * dx > 4) continue;
                        hi = std::max(hi, m(v, u));
                        lo = std::min(lo, m(v, u));
                    }
                }
                CHECK(d(y, x) == hi);
                CHECK(e(y, x) == lo);
            }
        }
    }
}

TEST_CASE("harmonic score examples") {
    const std::vector<Image> same(4, Image::Constant(3, 3, 0.2));
    CHECK((harmonic_score(same).array() - 0.2).abs().maxCoeff() < 1e-15);

    const std::vector<Image> two{Image::Constant(1, 1, 1.0), Image::Constant(1, 1, 0.5)};
    CHECK(harmonic_score(two)(0, 0) == doctest::Approx(2.0 / 3.0).epsilon(1e-15));

    const std::vector<Image> with_zero{Image::Constant(2, 2, 0.9), Image::Zero(2, 2)};
    CHECK(harmonic_score(with_zero).maxCoeff() <= 2.0 * 1e-8);

    CHECK_THROWS_AS(harmonic_score(std::vector<Image>{}), ConfigError);
    CHECK_THROWS_AS(harmonic_score(std::vector<Image>{Image::Zero(2, 2), Image::Zero(2, 3)}), ShapeError);
    CHECK_THROWS_AS(harmonic_score(std::vector<Image>{Image::Constant(2, 2, -0.1)}), ConfigError);
}

TEST_CASE("harmonic score properties on random stacks") {
    std::mt19937_64 rng(6);
    for (int i = 0; i < 1000; ++i) {
        const int n = 1 + static_cast<int>(rng() % 5);
        std::vector<Image> maps;
        for (int k = 0; k < n; ++k) maps.push_back(test::random_image(rng, 4, 5));
        const Image h = harmonic_score(maps);
        Image mean = Image::Zero(4, 5);
        for (const auto& m : maps) mean += m;
        mean /= n;
        CHECK(((h - mean).array() <= 1e-12).all());
        std::vector<Image> shuffled = maps;
        std::shuffle(shuffled.begin(), shuffled.end(), rng);
        CHECK((harmonic_score(shuffled) - h).cwiseAbs().maxCoeff() < 1e-12);
    }
}
