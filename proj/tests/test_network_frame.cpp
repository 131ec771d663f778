#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <filesystem>

#include "n2b/checkpoint.hpp"
#include "n2b/divergence.hpp"
#include "n2b/network.hpp"
#include "n2b/rng.hpp"

using namespace n2b;

namespace {

Tensor random_tensor(std::vector<int> shape, RngStream& rng, double lo = -1.0, double hi = 1.0) {
    Tensor t(std::move(shape));
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
    return t;
}

Network random_frame_net_2d(RngStream& rng, int side = 8) {
    NetworkConfig cfg;
    cfg.stages = 2;
    cfg.channels = {1, 3, 5};
    cfg.taps = 3;
    cfg.spatial = {side, side};
    return make_network(cfg, rng.next_u64());
}

// Oracle: dense matrix of a kappa=1 multi-channel chain, from circulant
// blocks assembled by index arithmetic. Encoder is the flipped convention.
DenseMatrix dense_circulant(const Tensor& taps1d, int n, bool flipped) {
    const int r = taps1d.extent(0), h = r / 2;
    DenseMatrix c(n, n);
    for (int i = 0; i < n; ++i)
        for (int t = 0; t < r; ++t) {
            int j = flipped ? (i + (t - h)) : (i - (t - h));
            j %= n;
            if (j < 0) j += n;
            c.at(i, j) += taps1d[static_cast<std::size_t>(t)];
        }
    return c;
}

Tensor kernel_row(const KernelSpec& k, int out_c, int in_c) {
    const int r = k.taps();
    Tensor t({r});
    for (int i = 0; i < r; ++i) t[static_cast<std::size_t>(i)] = k.weights.at({out_c, in_c, i});
    return t;
}

}  // namespace

TEST_CASE("forward: delta identity config is relu") {
    const Network net = make_delta_identity_network({8});
    Tensor x({8}, {1, -2, 3, -4, 0.5, -0.5, 2, 0});
    const Tensor y = forward_value(net, x);
    for (std::size_t i = 0; i < x.size(); ++i) CHECK(y[i] == std::max(x[i], 0.0));

    Tensor pos({8}, {1, 2, 3, 4, 5, 6, 7, 8});
    CHECK(max_abs_diff(forward_value(net, pos), pos) == 0.0);  // exact copy
}

TEST_CASE("forward: positive homogeneity") {
    RngStream rng(31);
    const Network net = random_frame_net_2d(rng);
    const Tensor x = random_tensor({8, 8}, rng);
    const Tensor fx = forward_value(net, x);
    for (double alpha : {0.5, 2.0, 3.0, 10.0}) {
        const Tensor lhs = forward_value(net, scaled(x, alpha));
        const Tensor rhs = scaled(fx, alpha);
        CHECK(max_abs_diff(lhs, rhs) <= 1e-12 * alpha * std::max(1.0, max_abs(fx)));
    }
}

TEST_CASE("frame identity: F(x) == J(x) x for bias-free nets") {
    RngStream rng(37);
    for (int trial = 0; trial < 5; ++trial) {
        const Network net = random_frame_net_2d(rng);
        const Tensor x = random_tensor({8, 8}, rng);
        const ForwardResult r = forward(net, x);
        const LinearizedOperator op = freeze(net, x);
        const Tensor jx = linearized_apply(op, x);
        CHECK(max_abs_diff(r.output, jx) <= 1e-10 * std::max(1.0, norm2(r.output)));
    }
}

TEST_CASE("linearized_apply: zero, linearity, fd Jacobian columns") {
    RngStream rng(41);
    const Network net = random_frame_net_2d(rng);
    const Tensor x = sample_input_with_margin(net, rng);
    const LinearizedOperator op = freeze(net, x);

    CHECK(max_abs(linearized_apply(op, Tensor::zeros({8, 8}))) == 0.0);

    const Tensor v = random_tensor({8, 8}, rng);
    const Tensor w = random_tensor({8, 8}, rng);
    const Tensor lhs = linearized_apply(op, add(scaled(v, 1.7), scaled(w, -0.3)));
    const Tensor rhs = add(scaled(linearized_apply(op, v), 1.7),
                           scaled(linearized_apply(op, w), -0.3));
    CHECK(max_abs_diff(lhs, rhs) <= 1e-12 * std::max(1.0, max_abs(lhs)));

    const DenseMatrix jac_fd =
        numerical_jacobian([&](const Tensor& t) { return forward_value(net, t); }, x);
    Tensor e({8, 8});
    for (int j = 0; j < 64; ++j) {
        e[static_cast<std::size_t>(j)] = 1.0;
        const Tensor col = linearized_apply(op, e);
        e[static_cast<std::size_t>(j)] = 0.0;
        for (int i = 0; i < 64; ++i) {
            const double ref = jac_fd.at(i, j);
            CHECK(std::fabs(col[static_cast<std::size_t>(i)] - ref) <=
                  1e-6 * std::max(1.0, std::fabs(ref)));
        }
    }
}

TEST_CASE("divergence_exact: identity net on positive input gives n") {
    const Network net = make_delta_identity_network({4, 4});
    Tensor x = Tensor::full({4, 4}, 0.5);
    CHECK(divergence_exact(net, x) == doctest::Approx(16.0).epsilon(1e-14));
}

TEST_CASE("divergence_exact: always-active chain equals dense composite trace") {
    RngStream rng(43);
    const int n = 12;
    NetworkConfig cfg;
    cfg.stages = 1;
    cfg.channels = {1, 2};
    cfg.taps = 3;
    cfg.spatial = {n};
    Network net = make_network(cfg, rng.next_u64());
    for (auto& k : net.enc_kernels)
        for (std::size_t i = 0; i < k.weights.size(); ++i) k.weights[i] = rng.uniform(0.05, 0.5);
    for (auto& k : net.dec_kernels)
        for (std::size_t i = 0; i < k.weights.size(); ++i) k.weights[i] = rng.uniform(0.05, 0.5);
    Tensor x({n});
    for (int i = 0; i < n; ++i) x[static_cast<std::size_t>(i)] = rng.uniform(0.2, 1.0);

    // encoder [2n x n]: stacked flipped circulants; decoder [n x 2n]
    DenseMatrix enc(2 * n, n);
    DenseMatrix dec(n, 2 * n);
    for (int c = 0; c < 2; ++c) {
        const DenseMatrix ec = dense_circulant(kernel_row(net.enc_kernels[0], c, 0), n, true);
        const DenseMatrix dc = dense_circulant(kernel_row(net.dec_kernels[0], 0, c), n, false);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j) {
                enc.at(c * n + i, j) = ec.at(i, j);
                dec.at(i, c * n + j) = dc.at(i, j);
            }
    }
    const DenseMatrix composite = matmul(dec, enc);
    const double div = divergence_exact(net, x);
    CHECK(div == doctest::Approx(trace(composite)).epsilon(1e-12));
}

TEST_CASE("divergence_exact matches the fd Jacobian trace at margin inputs") {
    RngStream rng(47);
    for (int trial = 0; trial < 3; ++trial) {
        const Network net = random_frame_net_2d(rng);
        const Tensor x = sample_input_with_margin(net, rng);
        const double div = divergence_exact(net, x);
        const DenseMatrix jac =
            numerical_jacobian([&](const Tensor& t) { return forward_value(net, t); }, x);
        CHECK(std::fabs(div - trace(jac)) <= 1e-6 * std::max(1.0, std::fabs(div)));
    }
}

TEST_CASE("divergence_exact rejects non-frame configs") {
    RngStream rng(49);
    NetworkConfig cfg;
    cfg.stages = 2;
    cfg.channels = {1, 2, 4};
    cfg.taps = 3;
    cfg.spatial = {8, 8};
    cfg.skip_connections = true;
    const Network net = make_network(cfg, rng.next_u64());
    const Tensor x = random_tensor({8, 8}, rng);
    CHECK_THROWS_AS(divergence_exact(net, x), std::runtime_error);
    CHECK_THROWS_AS(freeze(net, x), std::runtime_error);
    CHECK(forward_value(net, x).shape() == x.shape());  // training path still runs
}

TEST_CASE("divergence_hutchinson") {
    RngStream rng(53);
    SUBCASE("identity net: mean near n") {
        const Network net = make_delta_identity_network({16});
        Tensor x = Tensor::full({16}, 0.7);
        const HutchinsonResult r = divergence_hutchinson(net, x, 1e-4, 10000, 99);
        CHECK(std::fabs(r.mean - 16.0) <= 4.0 * r.stderr_ + 1e-9);
    }
    SUBCASE("linear smoother: unbiased against exact trace") {
        NetworkConfig cfg;
        cfg.stages = 1;
        cfg.channels = {1, 1};
        cfg.taps = 3;
        cfg.spatial = {16};
        Network net = make_network(cfg, rng.next_u64());
        Tensor delta({1, 1, 3}, {0, 1, 0});
        net.enc_kernels[0] = KernelSpec(delta);
        Tensor x = Tensor::full({16}, 0.8);
        const double exact = divergence_exact(net, x);
        const HutchinsonResult r = divergence_hutchinson(net, x, 1e-4, 10000, 7);
        CHECK(std::fabs(r.mean - exact) <= 4.0 * r.stderr_);
    }
    SUBCASE("single probe, same seed, identical result") {
        const Network net = make_delta_identity_network({8});
        Tensor x = Tensor::full({8}, 0.4);
        const HutchinsonResult a = divergence_hutchinson(net, x, 1e-4, 1, 5);
        const HutchinsonResult b = divergence_hutchinson(net, x, 1e-4, 1, 5);
        CHECK(a.mean == b.mean);
        CHECK(a.stderr_ == 0.0);
    }
    SUBCASE("random net: within 4 stderr of the exact divergence at 1e4 probes") {
        RngStream rng2(151);
        const Network net = random_frame_net_2d(rng2);
        const Tensor x = sample_input_with_margin(net, rng2);
        const double exact = divergence_exact(net, x);
        const HutchinsonResult r = divergence_hutchinson(net, x, 1e-4, 10000, 71);
        CHECK(std::fabs(r.mean - exact) <= 4.0 * r.stderr_);
    }
}

TEST_CASE("jacobian_spectrum_report") {
    SUBCASE("identity net") {
        const Network net = make_delta_identity_network({4, 4});
        Tensor x = Tensor::full({4, 4}, 0.6);
        const SpectrumReport rep = jacobian_spectrum_report(net, x);
        CHECK(rep.trace_over_n == doctest::Approx(1.0).epsilon(1e-12));
        CHECK(rep.frob_dist_identity <= 1e-10);
        for (double s : rep.singular_values) CHECK(s == doctest::Approx(1.0).epsilon(1e-10));
    }
    SUBCASE("doubling both kernels of a 2-layer net scales singular values by 4") {
        RngStream rng(59);
        NetworkConfig cfg;
        cfg.stages = 1;
        cfg.channels = {1, 2};
        cfg.taps = 3;
        cfg.spatial = {8};
        Network net = make_network(cfg, rng.next_u64());
        const Tensor x = sample_input_with_margin(net, rng);
        const SpectrumReport base = jacobian_spectrum_report(net, x);
        Network doubled = net;
        for (auto& k : doubled.enc_kernels)
            for (std::size_t i = 0; i < k.weights.size(); ++i) k.weights[i] *= 2.0;
        for (auto& k : doubled.dec_kernels)
            for (std::size_t i = 0; i < k.weights.size(); ++i) k.weights[i] *= 2.0;
        // patterns at x are scale-invariant, so the operator scales exactly
        const SpectrumReport four = jacobian_spectrum_report(doubled, x);
        REQUIRE(base.singular_values.size() == four.singular_values.size());
        for (std::size_t i = 0; i < base.singular_values.size(); ++i) {
            CHECK(four.singular_values[i] ==
                  doctest::Approx(4.0 * base.singular_values[i]).epsilon(1e-9));
        }
    }
}

TEST_CASE("dense jacobian assembly refuses oversized inputs") {
    NetworkConfig cfg;
    cfg.stages = 1;
    cfg.channels = {1, 1};
    cfg.taps = 3;
    cfg.spatial = {8192};
    const Network net = make_network(cfg, 1);
    Tensor x = Tensor::full({8192}, 0.5);
    CHECK_THROWS_WITH_AS(jacobian_spectrum_report(net, x), doctest::Contains("4096"),
                         std::runtime_error);
}

TEST_CASE("gradient: hand derivative for a pure linear layer") {
    RngStream rng(61);
    const Tensor a = random_tensor({3, 4}, rng);
    const Tensor x = random_tensor({4}, rng);
    ad::Var av = ad::Var::leaf(a);
    ad::Var loss = ad::scale(ad::sum_sq(ad::matvec(av, ad::Var::constant(x))), 0.5);
    ad::backward(loss);
    // d/dA of 0.5||Ax||^2 = (Ax) x'
    std::vector<double> ax(3, 0.0);
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 4; ++j) ax[static_cast<std::size_t>(i)] += a.at({i, j}) * x[static_cast<std::size_t>(j)];
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 4; ++j) {
            CHECK(av.grad().at({i, j}) ==
                  doctest::Approx(ax[static_cast<std::size_t>(i)] * x[static_cast<std::size_t>(j)]).epsilon(1e-12));
        }
}

TEST_CASE("gradient: directional derivative matches finite differences") {
    RngStream rng(67);
    NetworkConfig cfg;
    cfg.stages = 2;
    cfg.channels = {1, 2, 3};
    cfg.taps = 3;
    cfg.spatial = {8};
    Network net = make_network(cfg, rng.next_u64());
    const Tensor x = random_tensor({1, 1, 8}, rng, 0.0, 1.0);
    const Tensor target = random_tensor({1, 1, 8}, rng, 0.0, 1.0);

    const LossBuilder builder = [&](Network& n, const ParamVars& pv) {
        ad::Var y = forward_var(n, pv, ad::Var::constant(x), ForwardMode::eval);
        return ad::sum_sq(ad::sub_const(y, target));
    };
    const Gradients g = gradient(net, builder);

    auto eval_loss = [&](const Network& n) {
        Network copy = n;
        ParamVars pv = make_param_vars(copy);
        return builder(copy, pv).value()[0];
    };

    // random direction over all kernels
    RngStream dir_rng(71);
    double directional = 0.0;
    const double eps = 1e-6;
    Network plus = net, minus = net;
    for (std::size_t l = 0; l < net.enc_kernels.size(); ++l) {
        for (std::size_t i = 0; i < net.enc_kernels[l].weights.size(); ++i) {
            const double d = dir_rng.uniform(-1, 1);
            directional += g.enc_k[l][i] * d;
            plus.enc_kernels[l].weights[i] += eps * d;
            minus.enc_kernels[l].weights[i] -= eps * d;
        }
    }
    for (std::size_t l = 0; l < net.dec_kernels.size(); ++l) {
        for (std::size_t i = 0; i < net.dec_kernels[l].weights.size(); ++i) {
            const double d = dir_rng.uniform(-1, 1);
            directional += g.dec_k[l][i] * d;
            plus.dec_kernels[l].weights[i] += eps * d;
            minus.dec_kernels[l].weights[i] -= eps * d;
        }
    }
    const double fd = (eval_loss(plus) - eval_loss(minus)) / (2 * eps);
    CHECK(std::fabs(directional - fd) <= 1e-5 * std::max(1.0, std::fabs(fd)));
}

TEST_CASE("gradient: zero input batch gives zero gradients on a bias-free net") {
    RngStream rng(73);
    NetworkConfig cfg;
    cfg.stages = 1;
    cfg.channels = {1, 2};
    cfg.taps = 3;
    cfg.spatial = {8};
    Network net = make_network(cfg, rng.next_u64());
    const Gradients g = gradient(net, [&](Network& n, const ParamVars& pv) {
        ad::Var y = forward_var(n, pv, ad::Var::constant(Tensor::zeros({2, 1, 8})),
                                ForwardMode::eval);
        return ad::sum_sq(y);
    });
    for (const Tensor& t : g.enc_k) CHECK(max_abs(t) == 0.0);
    for (const Tensor& t : g.dec_k) CHECK(max_abs(t) == 0.0);
}

TEST_CASE("forward_var matches the plain forward bit for bit") {
    RngStream rng(79);
    Network net = random_frame_net_2d(rng);
    const Tensor x0 = random_tensor({8, 8}, rng);
    const Tensor x1 = random_tensor({8, 8}, rng);
    Tensor batch({2, 1, 8, 8});
    for (int i = 0; i < 64; ++i) {
        batch[static_cast<std::size_t>(i)] = x0[static_cast<std::size_t>(i)];
        batch[static_cast<std::size_t>(64 + i)] = x1[static_cast<std::size_t>(i)];
    }
    ParamVars pv = make_param_vars(net);
    const ad::Var y = forward_var(net, pv, ad::Var::constant(batch), ForwardMode::eval);
    const Tensor y0 = forward_value(net, x0);
    const Tensor y1 = forward_value(net, x1);
    for (int i = 0; i < 64; ++i) {
        CHECK(y.value()[static_cast<std::size_t>(i)] == y0[static_cast<std::size_t>(i)]);
        CHECK(y.value()[static_cast<std::size_t>(64 + i)] == y1[static_cast<std::size_t>(i)]);
    }
}

TEST_CASE("skip connections: training graph differentiable, frame path rejects") {
    RngStream rng(83);
    NetworkConfig cfg;
    cfg.stages = 2;
    cfg.channels = {1, 2, 3};
    cfg.taps = 3;
    cfg.spatial = {8};
    cfg.skip_connections = true;
    Network net = make_network(cfg, rng.next_u64());
    CHECK(net.dec_kernels[0].in_channels() == 4);  // concat doubles q_1
    const Tensor x = random_tensor({2, 1, 8}, rng);
    const Gradients g = gradient(net, [&](Network& n, const ParamVars& pv) {
        ad::Var y = forward_var(n, pv, ad::Var::constant(x), ForwardMode::eval);
        return ad::sum_sq(y);
    });
    bool any_nonzero = false;
    for (const Tensor& t : g.enc_k) any_nonzero = any_nonzero || max_abs(t) > 0;
    CHECK(any_nonzero);

    // the training graph and the plain evaluation agree on skip nets too
    ParamVars pv = make_param_vars(net);
    const ad::Var y = forward_var(net, pv, ad::Var::constant(x), ForwardMode::eval);
    Tensor x0({8}), x1({8});
    for (int i = 0; i < 8; ++i) {
        x0[static_cast<std::size_t>(i)] = x[static_cast<std::size_t>(i)];
        x1[static_cast<std::size_t>(i)] = x[static_cast<std::size_t>(8 + i)];
    }
    const Tensor y0 = forward_value(net, x0);
    const Tensor y1 = forward_value(net, x1);
    for (int i = 0; i < 8; ++i) {
        CHECK(y.value()[static_cast<std::size_t>(i)] == y0[static_cast<std::size_t>(i)]);
        CHECK(y.value()[static_cast<std::size_t>(8 + i)] == y1[static_cast<std::size_t>(i)]);
    }
}

TEST_CASE("sample_input_with_margin clears the requested margin") {
    RngStream rng(89);
    const Network net = random_frame_net_2d(rng);
    const Tensor x = sample_input_with_margin(net, rng, 1e-3);
    CHECK(forward(net, x).min_preact_abs >= 1e-3);
}

TEST_CASE("network config validation") {
    NetworkConfig cfg;
    cfg.stages = 2;
    cfg.channels = {1, 2, 4};
    cfg.taps = 3;
    cfg.spatial = {10, 10};  // not divisible by 4
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg.spatial = {16, 16};
    CHECK_NOTHROW(cfg.validate());
    cfg.taps = 4;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg.taps = 3;
    cfg.channels = {1, 2};
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}

TEST_CASE("checkpoint round trip preserves the forward map") {
    RngStream rng(97);
    NetworkConfig cfg;
    cfg.stages = 2;
    cfg.channels = {1, 3, 5};
    cfg.taps = 3;
    cfg.spatial = {8, 8};
    cfg.bn_mode = BnMode::linear_eval;
    Network net = make_network(cfg, rng.next_u64());
    for (auto& s : net.enc_bn_scale)
        for (std::size_t i = 0; i < s.size(); ++i) s[i] = rng.uniform(0.5, 1.5);
    AttentionNet attn = make_attention(4, 11);

    const auto dir = std::filesystem::temp_directory_path() / "n2b_ckpt_test";
    std::filesystem::remove_all(dir);
    save_checkpoint(dir, net, &attn, 1234, {{"note", "test"}});
    const Checkpoint back = load_checkpoint(dir);

    CHECK(back.seed == 1234);
    REQUIRE(back.attention.has_value());
    CHECK(back.attention->k == 4);
    CHECK(max_abs_diff(back.attention->w1, attn.w1) == 0.0);

    const Tensor x = random_tensor({8, 8}, rng);
    CHECK(max_abs_diff(forward_value(back.net, x), forward_value(net, x)) == 0.0);
    std::filesystem::remove_all(dir);
}
