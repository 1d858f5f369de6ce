#include <cmath>
#include <fstream>
#include <random>
#include <set>

#include "doctest.h"
#include "test_util.hpp"
#include "thor/evaluation.hpp"

using namespace thor;

namespace {

// Set-arithmetic dice over coordinate sets.
double dice_oracle(const Mask& a, const Mask& b) {
    std::set<Index> sa;
    std::set<Index> sb;
    for (Index k = 0; k < a.size(); ++k) {
        if (a.data()[k]) sa.insert(k);
        if (b.data()[k]) sb.insert(k);
    }
    if (sa.empty() && sb.empty()) return 1.0;
    std::size_t inter = 0;
    for (Index k : sa) inter += sb.count(k);
    return 2.0 * static_cast<double>(inter) / static_cast<double>(sa.size() + sb.size());
}

// Probability that a random positive outscores a random negative.
double auroc_oracle(const std::vector<Image>& scores, const std::vector<Mask>& gts) {
    std::vector<double> pos;
    std::vector<double> neg;
    for (std::size_t i = 0; i < scores.size(); ++i)
        for (Index k = 0; k < scores[i].size(); ++k) (gts[i].data()[k] ? pos : neg).push_back(scores[i].data()[k]);
    double wins = 0.0;
    for (double p : pos)
        for (double n : neg) wins += p > n ? 1.0 : (p == n ? 0.5 : 0.0);
    return wins / (static_cast<double>(pos.size()) * static_cast<double>(neg.size()));
}

Mask mask_with(Index h, Index w, std::initializer_list<std::pair<Index, Index>> on) {
    Mask m = Mask::Zero(h, w);
    for (auto [y, x] : on) m(y, x) = 1;
    return m;
}

} // namespace

TEST_CASE("dice examples") {
    std::mt19937_64 rng(1);
    const Mask a = test::random_mask(rng, 8, 8);
    CHECK(dice(a, a) == 1.0);
    const Mask left = mask_with(2, 4, {{0, 0}, {1, 0}});
    const Mask right = mask_with(2, 4, {{0, 3}, {1, 3}});
    CHECK(dice(left, right) == 0.0);
    const Mask p = mask_with(3, 3, {{0, 0}, {0, 1}, {0, 2}});
    const Mask g = mask_with(3, 3, {{0, 0}, {0, 1}, {1, 0}, {1, 1}});
    CHECK(dice(p, g) == doctest::Approx(4.0 / 7.0).epsilon(1e-15));
    CHECK(dice(Mask::Zero(3, 3), Mask::Zero(3, 3)) == 1.0);
    CHECK_THROWS_AS(dice(Mask::Zero(3, 3), Mask::Zero(3, 4)), ShapeError);
}

TEST_CASE("dice agrees with set arithmetic and is symmetric") {
    std::mt19937_64 rng(2);
    for (int i = 0; i < 1000; ++i) {
        const double pa = std::uniform_real_distribution<double>(0.0, 0.6)(rng);
        const Mask a = test::random_mask(rng, 9, 7, pa);
        const Mask b = test::random_mask(rng, 9, 7, 0.3);
        CHECK(dice(a, b) == doctest::Approx(dice_oracle(a, b)).epsilon(1e-15));
        CHECK(dice(a, b) == dice(b, a));
    }
}

TEST_CASE("max_dice examples") {
    std::mt19937_64 rng(3);
    std::vector<Image> scores;
    std::vector<Mask> gts;
    for (int i = 0; i < 5; ++i) {
        Mask g = test::random_mask(rng, 8, 8, 0.2);
        g(0, 0) = 1;
        gts.push_back(g);
        scores.push_back(g.cast<double>());
    }
    CHECK(max_dice(scores, gts).dice == 1.0);
    const std::vector<Image> zeros(5, Image::Zero(8, 8));
    CHECK(max_dice(zeros, gts).dice == 0.0);
    CHECK_THROWS_AS(max_dice({}, {}), ConfigError);
    CHECK_THROWS_AS(max_dice(zeros, {gts[0]}), ConfigError);
    std::vector<Image> negative = zeros;
    negative[0](1, 1) = -0.5;
    CHECK_THROWS_AS(max_dice(negative, gts), ConfigError);
}

TEST_CASE("quantile sweep tracks the exhaustive sweep") {
    std::mt19937_64 rng(4);
    for (int i = 0; i < 50; ++i) {
        std::vector<Image> scores;
        std::vector<Mask> gts;
        for (int k = 0; k < 3; ++k) {
            Mask g = test::random_mask(rng, 8, 8, 0.25);
            g(3, 3) = 1;
            Image s = test::random_image(rng, 8, 8);
            s += 0.5 * g.cast<double>();
            scores.push_back(s);
            gts.push_back(g);
        }
        const DiceSweep exact = max_dice_exhaustive(scores, gts);
        const DiceSweep q = max_dice(scores, gts, 256);
        CHECK(q.dice <= exact.dice);
        CHECK(exact.dice - q.dice <= 0.02);
        const auto n_distinct = static_cast<int>(distinct_scores(scores).size());
        const DiceSweep all = max_dice(scores, gts, n_distinct);
        CHECK(all.dice == exact.dice);
        CHECK(all.threshold == exact.threshold);
    }
}

TEST_CASE("quantile thresholds") {
    Image s(1, 5);
    s << 0.0, 1.0, 1.0, 2.0, 3.0;
    CHECK(quantile_thresholds({s}, 10) == std::vector<double>{0.0, 1.0, 2.0, 3.0});
    CHECK(quantile_thresholds({s}, 2) == std::vector<double>{0.0, 3.0});
    CHECK(quantile_thresholds({s}, 1) == std::vector<double>{3.0});
    CHECK_THROWS_AS(quantile_thresholds({s}, 0), ConfigError);
}

TEST_CASE("adding the ground truth as a score map never lowers the best dice") {
    std::mt19937_64 rng(5);
    for (int i = 0; i < 30; ++i) {
        std::vector<Image> scores;
        std::vector<Mask> gts;
        for (int k = 0; k < 4; ++k) {
            Mask g = test::random_mask(rng, 6, 6, 0.3);
            g(0, 0) = 1;
            gts.push_back(g);
            scores.push_back(test::random_image(rng, 6, 6));
        }
        const double before = max_dice_exhaustive(scores, gts).dice;
        auto more_scores = scores;
        auto more_gts = gts;
        more_scores.push_back(gts[0].cast<double>());
        more_gts.push_back(gts[0]);
        // the appended pair scores dice 1 at every threshold in [0, 1)
        CHECK(max_dice_exhaustive(more_scores, more_gts).dice >= before);
    }
}

TEST_CASE("per-image sweep is at least the shared-threshold dice") {
    std::mt19937_64 rng(6);
    std::vector<Image> scores;
    std::vector<Mask> gts;
    for (int k = 0; k < 6; ++k) {
        Mask g = test::random_mask(rng, 8, 8, 0.3);
        g(2, 2) = 1;
        gts.push_back(g);
        scores.push_back(test::random_image(rng, 8, 8) * static_cast<double>(k + 1));
    }
    CHECK(per_image_max_dice(scores, gts) >= max_dice_exhaustive(scores, gts).dice);
}

TEST_CASE("stratify boundaries") {
    auto with_count = [](Index n, Index size = 128) {
        Mask m = Mask::Zero(size, size);
        for (Index k = 0; k < n; ++k) m.data()[k] = 1;
        return m;
    };
    CHECK(stratify(with_count(1)) == SizeClass::small);
    CHECK(stratify(with_count(70)) == SizeClass::small);
    CHECK(stratify(with_count(71)) == SizeClass::medium);
    CHECK(stratify(with_count(569)) == SizeClass::medium);
    CHECK(stratify(with_count(570)) == SizeClass::large);
    CHECK(stratify(with_count(5000)) == SizeClass::large);
    CHECK_THROWS_AS(stratify(with_count(0)), DataError);
    // rescaled at 64x64: 17.75 and 142.5
    CHECK(stratify(with_count(17, 64)) == SizeClass::small);
    CHECK(stratify(with_count(18, 64)) == SizeClass::medium);
    CHECK(stratify(with_count(142, 64)) == SizeClass::medium);
    CHECK(stratify(with_count(143, 64)) == SizeClass::large);
    CHECK(parse_size_class(to_string(SizeClass::medium)) == SizeClass::medium);
}

TEST_CASE("pixel AUROC against the pairwise oracle") {
    std::mt19937_64 rng(7);
    for (int i = 0; i < 20; ++i) {
        std::vector<Image> scores;
        std::vector<Mask> gts;
        for (int k = 0; k < 2; ++k) {
            Mask g = test::random_mask(rng, 6, 6, 0.3);
            g(0, 0) = 1;
            g(5, 5) = 0;
            Image s = test::random_image(rng, 6, 6);
            // coarse values create ties
            s = (s.array() * 4.0).floor().matrix() + 0.6 * g.cast<double>();
            scores.push_back(s);
            gts.push_back(g);
        }
        CHECK(pixel_auroc(scores, gts) == doctest::Approx(auroc_oracle(scores, gts)).epsilon(1e-12));
    }
    CHECK(std::isnan(pixel_auroc({Image::Ones(2, 2)}, {Mask::Zero(2, 2)})));
}

TEST_CASE("detect_components examples") {
    const DetectionRule rule;
    CHECK(detect_components(Image::Zero(8, 8), 0.5, rule).empty());

    Image s = Image::Zero(12, 12);
    s.block(1, 1, 2, 3).setConstant(0.9);  // 6 px, lighter mass
    s.block(6, 6, 4, 4).setConstant(0.8);  // 16 px, heavier mass
    s(11, 0) = 1.0;                        // 1 px, filtered
    const auto boxes = detect_components(s, 0.5, rule);
    REQUIRE(boxes.size() == 2);
    CHECK(boxes[0] == Box{6, 6, 9, 9});
    CHECK(boxes[1] == Box{1, 1, 3, 2});

    DetectionRule strict;
    strict.min_component_area = 7;
    CHECK(detect_components(s, 0.5, strict).size() == 1);
    CHECK_THROWS_AS(detect_components(s, -1.0, rule), ConfigError);
    strict.min_overlap = 0.0;
    CHECK_THROWS_AS(detect_components(s, 0.5, strict), ConfigError);
}

TEST_CASE("recall_f1 examples") {
    const std::vector<Box> gt{{0, 0, 3, 3}, {10, 10, 12, 12}};
    const auto exact = recall_f1(gt, gt);
    CHECK(exact.recall == 1.0);
    CHECK(exact.precision == 1.0);
    CHECK(exact.f1 == 1.0);

    const auto none = recall_f1({}, gt);
    CHECK(none.recall == 0.0);
    CHECK(none.f1 == 0.0);

    const std::vector<Box> one_gt{{0, 0, 3, 3}};
    const auto half = recall_f1({{0, 0, 1, 1}, {20, 20, 22, 22}}, one_gt);
    CHECK(half.recall == 1.0);
    CHECK(half.precision == 0.5);
    CHECK(half.f1 == doctest::Approx(2.0 / 3.0).epsilon(1e-15));

    // a box covering 3/16 of the ground truth is not a hit
    const auto miss = recall_f1({{0, 0, 2, 0}}, one_gt);
    CHECK(miss.recall == 0.0);
    CHECK(overlap_fraction({0, 0, 2, 0}, {0, 0, 3, 3}) == doctest::Approx(3.0 / 16.0).epsilon(1e-15));

    // one prediction cannot be matched twice
    const auto greedy = recall_f1({{0, 0, 12, 12}}, gt);
    CHECK(greedy.recall == 0.5);
    CHECK(greedy.precision == 1.0);
}

TEST_CASE("detection scores stay in bounds") {
    std::mt19937_64 rng(8);
    std::uniform_int_distribution<int> coord(0, 20);
    auto random_box = [&] {
        int x0 = coord(rng), y0 = coord(rng), x1 = coord(rng), y1 = coord(rng);
        return Box{std::min(x0, x1), std::min(y0, y1), std::max(x0, x1), std::max(y0, y1)};
    };
    for (int i = 0; i < 500; ++i) {
        std::vector<Box> pred(rng() % 4);
        std::vector<Box> gt(rng() % 4);
        for (auto& b : pred) b = random_box();
        for (auto& b : gt) b = random_box();
        const auto s = recall_f1(pred, gt);
        for (double v : {s.recall, s.precision, s.f1}) {
            CHECK(v >= 0.0);
            CHECK(v <= 1.0);
        }
        if (s.recall == 0.0 || s.precision == 0.0) CHECK(s.f1 == 0.0);
    }
}

namespace {

std::vector<Sample> tiny_samples(int n) {
    std::vector<Sample> out;
    PhantomSpec p;
    p.size = {16, 16};
    const Index sides[3] = {1, 2, 4};
    for (int i = 0; i < n; ++i) {
        p.seed = 40 + i;
        Sample s;
        s.id = "img" + std::to_string(i);
        s.image = generate_phantom(p);
        s.mask = Mask::Zero(16, 16);
        const Index side = sides[i % 3];
        s.mask.block(6, 5 + i % 2, side, side).setOnes();
        s.image.block(6, 5 + i % 2, side, side).array() *= 0.3;
        s.boxes = component_boxes(s.mask);
        s.size_class = stratify(s.mask);
        REQUIRE(*s.size_class == static_cast<SizeClass>(i % 3));
        out.push_back(std::move(s));
    }
    return out;
}

DenoiserModel tiny_model(const NoiseSchedule& s, NoiseKind kind) {
    DenoiserConfig c;
    c.base_channels = 4;
    c.depth = 1;
    c.time_embed_dim = 8;
    c.image_size = {16, 16};
    NoiseSpec spec;
    spec.kind = kind;
    const auto base = DenoiserModel::untrained(c, s, spec, 1);
    std::vector<float> p = base.parameters();
    std::mt19937 rng(2);
    std::normal_distribution<float> n(0.0f, 0.05f);
    for (auto& v : p) v += n(rng);
    return {c, p, base.info()};
}

} // namespace

TEST_CASE("run_experiment produces a complete, reproducible report") {
    const auto s = make_linear_schedule(20, 1e-3, 0.2);
    const auto model = tiny_model(s, NoiseKind::gaussian);
    const auto samples = tiny_samples(6);
    ExperimentConfig cfg;
    cfg.plan.t_start = 7;
    cfg.plan.harmonization_steps = {5, 3};
    cfg.seed = 4;
    cfg.per_image_sweep = true;
    cfg.config_hash = "abc";
    for (Method m : {Method::ddpm, Method::thor}) {
        cfg.method = m;
        const auto a = run_experiment(samples, model, s, cfg, default_perceptual_metric());
        const auto b = run_experiment(samples, model, s, cfg, default_perceptual_metric());
        CHECK(a.report.hash() == b.report.hash());
        CHECK(a.report.runtime_seconds > 0.0);
        CHECK(a.images.size() == 6);
        const auto j = a.report.to_json();
        for (const char* k : {"average", "small", "medium", "large"}) CHECK(j["max_dice"].contains(k));
        CHECK(j["method"] == to_string(m));
        CHECK(j.contains("runtime_seconds"));
        CHECK_FALSE(a.report.to_json(false).contains("runtime_seconds"));
        CHECK(a.report.small.images == 2);
        for (double v : {a.report.dice_average, a.report.recall, a.report.precision, a.report.f1}) {
            CHECK(v >= 0.0);
            CHECK(v <= 1.0);
        }
        CHECK(*a.report.per_image_dice >= a.report.dice_average);
        for (const auto& img : a.images) CHECK(img.score.minCoeff() >= 0.0);
    }
    cfg.seed = 5;
    cfg.method = Method::thor;
    const auto c = run_experiment(samples, model, s, cfg, default_perceptual_metric());
    cfg.seed = 4;
    CHECK(c.report.hash() != run_experiment(samples, model, s, cfg, default_perceptual_metric()).report.hash());

    CHECK_THROWS_AS(run_experiment({}, model, s, cfg, default_perceptual_metric()), DataError);
    ExperimentConfig wrong = cfg;
    wrong.noise.kind = NoiseKind::simplex;
    CHECK_THROWS_AS(run_experiment(samples, model, s, wrong, default_perceptual_metric()), CompatibilityError);
}

TEST_CASE("ablation grid cardinality and plot data schema") {
    const auto s = make_linear_schedule(20, 1e-3, 0.2);
    const auto gauss = tiny_model(s, NoiseKind::gaussian);
    const auto simplex = tiny_model(s, NoiseKind::simplex);
    const auto samples = tiny_samples(3);
    AblationConfig cfg;
    cfg.t_levels = {5, 7, 10};
    cfg.noise_kinds = {NoiseKind::gaussian, NoiseKind::simplex};
    const std::vector<AblationModel> models{{NoiseKind::gaussian, &gauss}, {NoiseKind::simplex, &simplex}};
    const auto reports = ablate(samples, models, s, cfg, default_perceptual_metric());
    CHECK(reports.size() == 12);
    CHECK(reports[0].method == "ddpm");
    CHECK(reports[0].noise == "gaussian");
    CHECK(reports[0].t_start == 5);
    CHECK(reports[11].method == "thor");
    CHECK(reports[11].noise == "simplex");
    CHECK(reports[11].t_start == 10);
    CHECK(reports[11].harmonization_steps == evenly_spaced_steps(10, 3));
    const auto again = ablate(samples, models, s, cfg, default_perceptual_metric());
    for (std::size_t i = 0; i < reports.size(); ++i) CHECK(reports[i].hash() == again[i].hash());

    const std::string dir = test::scratch_dir("ablate");
    write_plot_data(reports, dir + "/plot.csv");
    write_results_csv(reports, dir + "/results.csv");
    std::ifstream plot(dir + "/plot.csv");
    std::string line;
    std::getline(plot, line);
    CHECK(line == "t_level,method,noise,dice_avg,dice_small,dice_medium,dice_large");
    int rows = 0;
    while (std::getline(plot, line)) ++rows;
    CHECK(rows == 12);
    std::ifstream results(dir + "/results.csv");
    std::getline(results, line);
    CHECK(line == results_csv_header());
    rows = 0;
    while (std::getline(results, line)) ++rows;
    CHECK(rows == 48);

    cfg.t_levels = {5};
    CHECK_THROWS_AS(ablate(samples, models, s, cfg, default_perceptual_metric()), ConfigError);
    cfg.t_levels = {5, 7};
    CHECK_THROWS_AS(ablate(samples, {models[0]}, s, cfg, default_perceptual_metric()), ConfigError);
}
