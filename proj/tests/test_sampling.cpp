#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "n2b/sampling.hpp"

using namespace n2b;

TEST_CASE("bernoulli masks: degenerate p") {
    const MaskPattern ones = draw_bernoulli_mask({100}, 1.0, 3);
    for (std::size_t i = 0; i < ones.values.size(); ++i) CHECK(ones.values[i] == 1.0);
    const MaskPattern zeros = draw_bernoulli_mask({100}, 0.0, 3);
    for (std::size_t i = 0; i < zeros.values.size(); ++i) CHECK(zeros.values[i] == 0.0);
    CHECK_THROWS_AS(draw_bernoulli_mask({4}, 1.5, 1), std::invalid_argument);
}

TEST_CASE("bernoulli masks: binomial concentration at p = 0.7") {
    const int n = 100000;
    const MaskPattern m = draw_bernoulli_mask({n}, 0.7, 12345);
    const double mean_v = sum(m.values) / n;
    const double band = 4.0 * std::sqrt(0.7 * 0.3 / n);
    CHECK(std::fabs(mean_v - 0.7) <= band);
    for (std::size_t i = 0; i < 32; ++i) {
        CHECK((m.values[i] == 0.0 || m.values[i] == 1.0));
    }
}

TEST_CASE("weight masks: range, mean, degenerate width") {
    CHECK_THROWS_AS(draw_weight_mask({4}, 1.0, 1.0, 1), std::invalid_argument);
    CHECK_THROWS_AS(draw_weight_mask({4}, 1.2, 0.8, 1), std::invalid_argument);

    const MaskPattern tiny = draw_weight_mask({64}, 1.0, 1.0 + 1e-9, 2);
    for (std::size_t i = 0; i < tiny.values.size(); ++i) {
        CHECK(tiny.values[i] == doctest::Approx(1.0).epsilon(1e-8));
    }

    const int n = 100000;
    const MaskPattern m = draw_weight_mask({n}, 0.8, 1.2, 777);
    CHECK(m.p == doctest::Approx(1.0));
    for (std::size_t i = 0; i < m.values.size(); ++i) {
        CHECK(m.values[i] >= 0.8);
        CHECK(m.values[i] <= 1.2);
    }
    const double mean_v = sum(m.values) / n;
    const double stderr_v = (0.4 / std::sqrt(12.0)) / std::sqrt(static_cast<double>(n));
    CHECK(std::fabs(mean_v - 1.0) <= 4.0 * stderr_v);
}

TEST_CASE("masks are bit-exactly reproducible from the seed") {
    const MaskPattern a = draw_bernoulli_mask({64}, 0.5, 42);
    const MaskPattern b = draw_bernoulli_mask({64}, 0.5, 42);
    const MaskPattern c = draw_bernoulli_mask({64}, 0.5, 43);
    CHECK(max_abs_diff(a.values, b.values) == 0.0);
    CHECK(max_abs_diff(a.values, c.values) != 0.0);

    const MaskPattern w1 = draw_weight_mask({64}, 0.8, 1.2, 9);
    const MaskPattern w2 = draw_weight_mask({64}, 0.8, 1.2, 9);
    CHECK(max_abs_diff(w1.values, w2.values) == 0.0);
}

TEST_CASE("apply_mask") {
    Tensor x({4}, {1, 2, 3, 4});
    CHECK(max_abs_diff(apply_mask(x, all_ones_mask({4})), x) == 0.0);

    MaskPattern zeros = draw_bernoulli_mask({4}, 0.0, 1);
    CHECK(max_abs(apply_mask(x, zeros)) == 0.0);

    MaskPattern wrong = all_ones_mask({5});
    CHECK_THROWS_AS(apply_mask(x, wrong), std::invalid_argument);
}

TEST_CASE("mean over many bernoulli masks recovers p x") {
    Tensor x({8}, {1, -2, 3, -4, 5, -6, 7, -8});
    const int k = 10000;
    Tensor acc({8});
    for (int i = 0; i < k; ++i) {
        acc += apply_mask(x, draw_bernoulli_mask({8}, 0.5, mix_seed(100, static_cast<std::uint64_t>(i))));
    }
    acc *= 1.0 / k;
    for (std::size_t i = 0; i < 8; ++i) {
        const double se = std::fabs(x[i]) * 0.5 / std::sqrt(static_cast<double>(k));
        CHECK(std::fabs(acc[i] - 0.5 * x[i]) <= 4.0 * se);
    }
}

TEST_CASE("noise_augment") {
    Tensor x({64}, std::vector<double>(64, 0.5));
    SUBCASE("zero width, zero sigma leaves input unchanged") {
        CHECK(max_abs_diff(noise_augment(x, 0.0, 0.0, 5), x) == 0.0);
    }
    SUBCASE("deterministic per seed") {
        const Tensor a = noise_augment(x, 10.0 / 255, 40.0 / 255, 5);
        const Tensor b = noise_augment(x, 10.0 / 255, 40.0 / 255, 5);
        CHECK(max_abs_diff(a, b) == 0.0);
    }
    SUBCASE("fixed sigma: sample std within 2 percent") {
        const int n = 100000;
        Tensor big({n});
        big.fill(0.0);
        const Tensor out = noise_augment(big, 0.1, 0.1, 31);
        double var = 0.0;
        for (std::size_t i = 0; i < out.size(); ++i) var += out[i] * out[i];
        var /= n;
        CHECK(std::fabs(std::sqrt(var) - 0.1) <= 0.002);
    }
    SUBCASE("negative sigma rejected") {
        CHECK_THROWS_AS(noise_augment(x, -0.1, 0.1, 1), std::invalid_argument);
    }
}

TEST_CASE("mask sets: counter substreams are order independent") {
    BoostConfig cfg;
    cfg.k = 4;
    cfg.kind = MaskKind::weights;
    cfg.base_seed = 55;
    const std::vector<MaskPattern> set = draw_mask_set(cfg, {16});
    const MaskPattern third = draw_mask(cfg, {16}, 2);
    CHECK(max_abs_diff(set[2].values, third.values) == 0.0);
    CHECK(max_abs_diff(set[0].values, set[1].values) != 0.0);

    BoostConfig bad = cfg;
    bad.k = 0;
    CHECK_THROWS_AS(draw_mask_set(bad, {16}), std::invalid_argument);
}

TEST_CASE("empirical mean of masks converges to p with the expected stderr") {
    BoostConfig cfg;
    cfg.k = 10000;
    cfg.kind = MaskKind::bernoulli;
    cfg.p = 0.9;
    cfg.base_seed = 91;
    double acc = 0.0;
    for (int i = 0; i < cfg.k; ++i) {
        acc += mean(draw_mask(cfg, {16}, i).values);
    }
    acc /= cfg.k;
    const double se = std::sqrt(0.9 * 0.1 / (16.0 * cfg.k));
    CHECK(std::fabs(acc - 0.9) <= 4.0 * se);
}
