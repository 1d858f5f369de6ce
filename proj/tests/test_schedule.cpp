#include <cmath>
#include <random>

#include "doctest.h"
#include "test_util.hpp"
#include "thor/noise.hpp"
#include "thor/schedule.hpp"

using namespace thor;

TEST_CASE("linear schedule: two steps") {
    const auto s = make_linear_schedule(2, 0.1, 0.2);
    CHECK(s.steps() == 2);
    CHECK(s.alpha(1) == doctest::Approx(0.9).epsilon(1e-15));
    CHECK(s.alpha(2) == doctest::Approx(0.8).epsilon(1e-15));
    CHECK(s.alpha_bar(1) == doctest::Approx(0.9).epsilon(1e-15));
    CHECK(s.alpha_bar(2) == doctest::Approx(0.72).epsilon(1e-15));
}

TEST_CASE("linear schedule: single step") {
    const auto s = make_linear_schedule(1, 0.5, 0.5);
    CHECK(s.alpha_bar(1) == 0.5);
}

TEST_CASE("linear schedule: cumulative product against high-precision values") {
    // 40-digit cumulative products over the 1000 linear betas in [1e-4, 0.02]
    const auto s = make_linear_schedule(1000, 1e-4, 0.02);
    CHECK(s.alpha_bar(1) == doctest::Approx(0.9999).epsilon(1e-14));
    CHECK(s.alpha_bar(10) == doctest::Approx(0.99810520478583461889).epsilon(1e-12));
    CHECK(s.alpha_bar(100) == doctest::Approx(0.89701814567496036372).epsilon(1e-12));
    CHECK(s.alpha_bar(250) == doctest::Approx(0.52408537382536050097).epsilon(1e-11));
    CHECK(s.alpha_bar(350) == doctest::Approx(0.28519950718066713308).epsilon(1e-11));
    CHECK(s.alpha_bar(500) == doctest::Approx(0.078587242881778237343).epsilon(1e-10));
    CHECK(s.alpha_bar(1000) == doctest::Approx(0.000040358297653756833148).epsilon(1e-9));

    const auto short_s = make_linear_schedule(100, 1e-3, 0.2);
    CHECK(short_s.alpha_bar(35) == doctest::Approx(0.28339016338564171302).epsilon(1e-11));
    CHECK(short_s.alpha_bar(100) == doctest::Approx(0.000020390089755640776543).epsilon(1e-8));
}

TEST_CASE("linear schedule invariants") {
    for (int T : {1, 2, 10, 100, 1000}) {
        const auto s = make_linear_schedule(T, 1e-4, 0.02);
        CHECK(s.beta(1) == 1e-4);
        CHECK(s.beta(T) == (T == 1 ? 1e-4 : 0.02));
        for (int t = 1; t <= T; ++t) {
            CHECK(s.beta(t) > 0.0);
            CHECK(s.beta(t) < 1.0);
            CHECK(s.alpha(t) == 1.0 - s.beta(t));
            if (t > 1) CHECK(s.alpha_bar(t) < s.alpha_bar(t - 1));
        }
        CHECK(s.alpha_bar(1) == s.alpha(1));
        CHECK(s.alpha_bar(T) > 0.0);
        CHECK(s.alpha_bar(1) < 1.0);
    }
}

TEST_CASE("linear schedule rejects bad configuration") {
    CHECK_THROWS_AS(make_linear_schedule(0, 1e-4, 0.02), ConfigError);
    CHECK_THROWS_AS(make_linear_schedule(10, 0.0, 0.02), ConfigError);
    CHECK_THROWS_AS(make_linear_schedule(10, 0.03, 0.02), ConfigError);
    CHECK_THROWS_AS(make_linear_schedule(10, 1e-4, 1.0), ConfigError);
    const auto s = make_linear_schedule(10, 1e-4, 0.02);
    CHECK_THROWS_AS((void)s.alpha(0), ConfigError);
    CHECK_THROWS_AS((void)s.alpha(11), ConfigError);
}

TEST_CASE("boundary betas only with explicit opt-in") {
    Eigen::VectorXd betas(2);
    betas << 0.0, 0.5;
    CHECK_THROWS_AS(NoiseSchedule::from_betas(betas), ConfigError);
    const auto s = NoiseSchedule::from_betas(betas, true);
    CHECK(s.alpha(1) == 1.0);
}

TEST_CASE("forward_step examples") {
    const auto s = make_linear_schedule(10, 1e-4, 0.02);
    std::mt19937_64 rng(3);
    const Image x = test::random_image(rng, 5, 6);
    const Image zero = Image::Zero(5, 6);
    const Image out = forward_step(x, 4, s, zero);
    CHECK((out - std::sqrt(s.alpha(4)) * x).cwiseAbs().maxCoeff() == 0.0);

    Eigen::VectorXd b(1);
    b << 0.0;
    const auto identity = NoiseSchedule::from_betas(b, true);
    CHECK(forward_step(x, 1, identity, test::random_image(rng, 5, 6)) == x);

    Eigen::VectorXd q(1);
    q << 0.25;
    const auto quarter = NoiseSchedule::from_betas(q);
    const Image half = forward_step(zero, 1, quarter, Image::Ones(5, 6).eval());
    CHECK((half.array() == 0.5).all());

    CHECK_THROWS_AS(forward_step(x, 1, s, Image::Zero(5, 5).eval()), ShapeError);
    CHECK_THROWS_AS(forward_step(x, 11, s, zero), ConfigError);
}

TEST_CASE("forward_closed examples") {
    const auto s = make_linear_schedule(50, 1e-3, 0.05);
    std::mt19937_64 rng(4);
    const Image x = test::random_image(rng, 4, 4);
    const Image eps = test::random_image(rng, 4, 4, -2.0, 2.0);
    CHECK((forward_closed(x, 1, s, eps) - forward_step(x, 1, s, eps)).cwiseAbs().maxCoeff() == 0.0);
    const Image z = Image::Zero(4, 4);
    CHECK((forward_closed(x, 20, s, z) - std::sqrt(s.alpha_bar(20)) * x).cwiseAbs().maxCoeff() == 0.0);
    CHECK_THROWS_AS(forward_closed(x, 0, s, eps), ConfigError);
}

TEST_CASE("forward_closed variance matches 1 - alpha_bar") {
    const auto s = make_linear_schedule(1000, 1e-4, 0.02);
    const NoiseSpec spec{NoiseKind::gaussian, 11};
    const Image x0 = Image::Zero(8, 8);
    for (int t : {10, 100, 350}) {
        double sum = 0.0;
        double sq = 0.0;
        long long n = 0;
        for (int d = 0; d < 200; ++d) {
            const Image xt = forward_closed(x0, t, s, sample_noise(spec, {8, 8}, d));
            sum += xt.sum();
            sq += xt.squaredNorm();
            n += xt.size();
        }
        const double mean = sum / n;
        const double var = sq / n - mean * mean;
        CHECK(std::abs(var / (1.0 - s.alpha_bar(t)) - 1.0) < 0.03);
    }
}

TEST_CASE("iterated forward steps match the closed form in distribution") {
    const auto s = make_linear_schedule(100, 1e-3, 0.05);
    const NoiseSpec spec{NoiseKind::gaussian, 5};
    const int t = 30;
    const Image x0 = Image::Constant(4, 4, 0.7);
    const long long draws = 700;
    double sum = 0.0;
    double sq = 0.0;
    long long n = 0;
    for (long long d = 0; d < draws; ++d) {
        Image x = x0;
        for (int k = 1; k <= t; ++k) x = forward_step(x, k, s, sample_noise(spec, {4, 4}, d * 1000 + k));
        sum += x.sum();
        sq += x.squaredNorm();
        n += x.size();
    }
    const double mean = sum / n;
    const double var = sq / n - mean * mean;
    CHECK(std::abs(mean / (std::sqrt(s.alpha_bar(t)) * 0.7) - 1.0) < 0.03);
    CHECK(std::abs(var / (1.0 - s.alpha_bar(t)) - 1.0) < 0.03);
}

TEST_CASE("schedule canonical text distinguishes tables") {
    const auto a = make_linear_schedule(100, 1e-3, 0.2);
    const auto b = make_linear_schedule(100, 1e-3, 0.2000001);
    CHECK(a.canonical() == make_linear_schedule(100, 1e-3, 0.2).canonical());
    CHECK(a.canonical() != b.canonical());
}
