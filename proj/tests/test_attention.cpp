#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "n2b/attention.hpp"
#include "n2b/rng.hpp"

using namespace n2b;

namespace {

Tensor random_tensor(std::vector<int> shape, RngStream& rng, double lo = -1.0, double hi = 1.0) {
    Tensor t(std::move(shape));
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
    return t;
}

}  // namespace

TEST_CASE("pooled_features") {
    SUBCASE("constant branches give their constants") {
        std::vector<Tensor> branches = {Tensor::full({2, 3}, 0.4), Tensor::full({2, 3}, -1.5)};
        const auto f = pooled_features(branches);
        CHECK(f[0] == doctest::Approx(0.4).epsilon(1e-15));
        CHECK(f[1] == doctest::Approx(-1.5).epsilon(1e-15));
    }
    SUBCASE("zero branches give the zero vector") {
        std::vector<Tensor> branches = {Tensor::zeros({4}), Tensor::zeros({4})};
        for (double v : pooled_features(branches)) CHECK(v == 0.0);
    }
    SUBCASE("random branches match the reference mean loop") {
        RngStream rng(5);
        std::vector<Tensor> branches = {random_tensor({3, 4}, rng), random_tensor({3, 4}, rng)};
        const auto f = pooled_features(branches);
        for (std::size_t k = 0; k < 2; ++k) {
            double acc = 0.0;
            for (std::size_t i = 0; i < branches[k].size(); ++i) acc += branches[k][i];
            CHECK(f[k] == doctest::Approx(acc / 12.0).epsilon(1e-14));
        }
    }
    SUBCASE("shape mismatch rejected") {
        std::vector<Tensor> branches = {Tensor::zeros({4}), Tensor::zeros({5})};
        CHECK_THROWS_AS(pooled_features(branches), std::invalid_argument);
    }
}

TEST_CASE("attention_weights") {
    SUBCASE("zero parameters give uniform weights") {
        AttentionNet net = make_attention(5, 1);
        net.w1.fill(0.0);
        net.b1.fill(0.0);
        net.w2.fill(0.0);
        net.b2.fill(0.0);
        const auto w = attention_weights({1.0, -2.0, 0.5, 3.0, 0.0}, net);
        for (double v : w) CHECK(v == doctest::Approx(0.2).epsilon(1e-14));
    }
    SUBCASE("weights are positive and sum to one for random inputs") {
        RngStream rng(7);
        const AttentionNet net = make_attention(6, rng.next_u64());
        for (int trial = 0; trial < 20; ++trial) {
            std::vector<double> f(6);
            for (double& v : f) v = rng.uniform(-3, 3);
            const auto w = attention_weights(f, net);
            double s = 0.0;
            for (double v : w) {
                CHECK(v > 0.0);
                CHECK(v < 1.0);
                s += v;
            }
            CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
        }
    }
    SUBCASE("matches a hand-rolled dense computation") {
        RngStream rng(11);
        const AttentionNet net = make_attention(3, rng.next_u64(), 8);
        const std::vector<double> f = {0.3, -0.7, 1.2};
        // reference: explicit loops over the two layers plus softmax
        std::vector<double> h(8, 0.0);
        for (int i = 0; i < 8; ++i) {
            double acc = net.b1[static_cast<std::size_t>(i)];
            for (int j = 0; j < 3; ++j) acc += net.w1.at({i, j}) * f[static_cast<std::size_t>(j)];
            h[static_cast<std::size_t>(i)] = std::max(acc, 0.0);
        }
        std::vector<double> logits(3, 0.0);
        for (int i = 0; i < 3; ++i) {
            double acc = net.b2[static_cast<std::size_t>(i)];
            for (int j = 0; j < 8; ++j) acc += net.w2.at({i, j}) * h[static_cast<std::size_t>(j)];
            logits[static_cast<std::size_t>(i)] = acc;
        }
        double z = 0.0;
        std::vector<double> ref(3);
        for (int i = 0; i < 3; ++i) z += std::exp(logits[static_cast<std::size_t>(i)]);
        for (int i = 0; i < 3; ++i) ref[static_cast<std::size_t>(i)] = std::exp(logits[static_cast<std::size_t>(i)]) / z;
        const auto w = attention_weights(f, net);
        for (int i = 0; i < 3; ++i) CHECK(w[static_cast<std::size_t>(i)] == doctest::Approx(ref[static_cast<std::size_t>(i)]).epsilon(1e-12));
    }
    SUBCASE("dimension mismatch rejected") {
        const AttentionNet net = make_attention(4, 1);
        CHECK_THROWS_AS(attention_weights({1.0, 2.0}, net), std::invalid_argument);
    }
}

TEST_CASE("aggregate") {
    RngStream rng(13);
    SUBCASE("identical branches collapse to the branch for any normalized weights") {
        const Tensor y = random_tensor({4, 4}, rng);
        const std::vector<Tensor> branches = {y, y, y};
        const Tensor out = aggregate(branches, {0.2, 0.5, 0.3});
        CHECK(max_abs_diff(out, y) <= 1e-15);
    }
    SUBCASE("one-hot weights select a branch") {
        const std::vector<Tensor> branches = {random_tensor({5}, rng), random_tensor({5}, rng)};
        const Tensor out = aggregate(branches, {0.0, 1.0});
        CHECK(max_abs_diff(out, branches[1]) == 0.0);
    }
    SUBCASE("random case matches the reference loop") {
        const std::vector<Tensor> branches = {random_tensor({6}, rng), random_tensor({6}, rng),
                                              random_tensor({6}, rng)};
        const std::vector<double> w = {0.1, 0.6, 0.3};
        const Tensor out = aggregate(branches, w);
        for (std::size_t i = 0; i < 6; ++i) {
            const double ref = 0.1 * branches[0][i] + 0.6 * branches[1][i] + 0.3 * branches[2][i];
            CHECK(out[i] == doctest::Approx(ref).epsilon(1e-14));
        }
    }
    SUBCASE("convex hull property") {
        const std::vector<Tensor> branches = {random_tensor({8}, rng), random_tensor({8}, rng),
                                              random_tensor({8}, rng)};
        AttentionNet net = make_attention(3, rng.next_u64());
        const auto w = attention_weights(pooled_features(branches), net);
        const Tensor out = aggregate(branches, w);
        for (std::size_t i = 0; i < 8; ++i) {
            double lo = branches[0][i], hi = branches[0][i];
            for (std::size_t k = 1; k < 3; ++k) {
                lo = std::min(lo, branches[k][i]);
                hi = std::max(hi, branches[k][i]);
            }
            CHECK(out[i] >= lo - 1e-12);
            CHECK(out[i] <= hi + 1e-12);
        }
    }
    SUBCASE("length mismatch rejected") {
        const std::vector<Tensor> branches = {Tensor::zeros({2})};
        CHECK_THROWS_AS(aggregate(branches, {0.5, 0.5}), std::invalid_argument);
    }
}

TEST_CASE("attention_gradients") {
    SUBCASE("zero loss gives zero gradients") {
        const AttentionNet net = make_attention(3, 21);
        const AttentionGradients g = attention_gradients(net, [](const AttentionVars&) {
            return ad::Var::leaf(Tensor::scalar(0.0));
        });
        CHECK(max_abs(g.w1) == 0.0);
        CHECK(max_abs(g.w2) == 0.0);
    }
    SUBCASE("finite-difference match on a weighted-aggregate loss") {
        RngStream rng(23);
        AttentionNet net = make_attention(3, rng.next_u64(), 6);
        const std::vector<Tensor> branches = {random_tensor({5}, rng), random_tensor({5}, rng),
                                              random_tensor({5}, rng)};
        const Tensor target = random_tensor({5}, rng);
        const Tensor feats({3}, pooled_features(branches));

        auto loss_with = [&](const AttentionNet& a) {
            const auto w = attention_weights(pooled_features(branches), a);
            const Tensor out = aggregate(branches, w);
            double acc = 0.0;
            for (std::size_t i = 0; i < out.size(); ++i) {
                acc += (out[i] - target[i]) * (out[i] - target[i]);
            }
            return acc;
        };

        const AttentionGradients g = attention_gradients(net, [&](const AttentionVars& vars) {
            std::vector<ad::Var> consts;
            for (const Tensor& b : branches) consts.push_back(ad::Var::constant(b));
            ad::Var w = attention_weights_var(ad::Var::constant(feats), vars);
            return ad::sum_sq(ad::sub_const(ad::weighted_sum(consts, w), target));
        });

        const double eps = 1e-6;
        auto fd_check = [&](Tensor AttentionNet::*field, const Tensor& grad) {
            AttentionNet plus = net, minus = net;
            for (std::size_t i = 0; i < (net.*field).size(); ++i) {
                (plus.*field)[i] += eps;
                (minus.*field)[i] -= eps;
                const double fd = (loss_with(plus) - loss_with(minus)) / (2 * eps);
                (plus.*field)[i] -= eps;
                (minus.*field)[i] += eps;
                CHECK(std::fabs(grad[i] - fd) <= 1e-5 * std::max(1.0, std::fabs(fd)));
            }
        };
        fd_check(&AttentionNet::w1, g.w1);
        fd_check(&AttentionNet::b1, g.b1);
        fd_check(&AttentionNet::w2, g.w2);
        fd_check(&AttentionNet::b2, g.b2);
    }
    SUBCASE("identical branches make the fidelity loss stationary in Xi") {
        RngStream rng(29);
        const AttentionNet net = make_attention(4, rng.next_u64());
        const Tensor common = random_tensor({6}, rng);
        const Tensor target = random_tensor({6}, rng);
        const std::vector<Tensor> branches(4, common);
        const Tensor feats({4}, pooled_features(branches));
        const AttentionGradients g = attention_gradients(net, [&](const AttentionVars& vars) {
            std::vector<ad::Var> consts;
            for (const Tensor& b : branches) consts.push_back(ad::Var::constant(b));
            ad::Var w = attention_weights_var(ad::Var::constant(feats), vars);
            return ad::sum_sq(ad::sub_const(ad::weighted_sum(consts, w), target));
        });
        // the aggregate is weight-independent, so every gradient vanishes
        CHECK(max_abs(g.w1) <= 1e-12);
        CHECK(max_abs(g.b1) <= 1e-12);
        CHECK(max_abs(g.w2) <= 1e-12);
        CHECK(max_abs(g.b2) <= 1e-12);
    }
}
