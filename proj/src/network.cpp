#include "n2b/network.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace n2b {

std::vector<int> NetworkConfig::input_shape() const {
    std::vector<int> s = {channels[0]};
    s.insert(s.end(), spatial.begin(), spatial.end());
    return s;
}

void NetworkConfig::validate() const {
    if (stages < 1) throw std::invalid_argument("network stages must be >= 1");
    if (static_cast<int>(channels.size()) != stages + 1) {
        throw std::invalid_argument("channels must list q_0..q_kappa (" +
                                    std::to_string(stages + 1) + " entries), got " +
                                    std::to_string(channels.size()));
    }
    for (int q : channels)
        if (q < 1) throw std::invalid_argument("channel counts must be positive");
    if (taps < 1 || taps % 2 == 0) throw std::invalid_argument("kernel taps must be odd");
    if (spatial.empty() || spatial.size() > 2) {
        throw std::invalid_argument("spatial dims must be {n} or {h,w}");
    }
    const int div = 1 << stages;
    for (int e : spatial) {
        if (e < taps) throw std::invalid_argument("spatial extent smaller than kernel taps");
        if (e % div != 0) {
            throw std::invalid_argument("spatial extent " + std::to_string(e) +
                                        " not divisible by 2^stages = " + std::to_string(div));
        }
    }
}

namespace {

Tensor random_kernel(int out_ch, int in_ch, int taps, int srank, RngStream& rng) {
    std::vector<int> shape = {out_ch, in_ch, taps};
    if (srank == 2) shape.push_back(taps);
    Tensor w(shape);
    const double fan_in = static_cast<double>(in_ch) * std::pow(static_cast<double>(taps), srank);
    const double bound = std::sqrt(6.0 / fan_in);
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = rng.uniform(-bound, bound);
    return w;
}

}  // namespace

Network make_network(const NetworkConfig& config, std::uint64_t seed) {
    config.validate();
    Network net;
    net.config = config;
    const int kappa = config.stages;
    const int srank = config.spatial_rank();
    RngStream rng(mix_seed(seed, {0x6b65726eULL}));  // kernel stream
    for (int l = 1; l <= kappa; ++l) {
        const int q_in = config.channels[static_cast<std::size_t>(l - 1)];
        const int q_out = config.channels[static_cast<std::size_t>(l)];
        net.enc_kernels.emplace_back(random_kernel(q_out, q_in, config.taps, srank, rng));
    }
    for (int l = 1; l <= kappa; ++l) {
        const int q_out = config.channels[static_cast<std::size_t>(l - 1)];
        net.dec_kernels.emplace_back(
            random_kernel(q_out, config.dec_in_channels(l), config.taps, srank, rng));
    }
    if (!config.bias_free) {
        for (int l = 1; l <= kappa; ++l) {
            net.enc_bias.push_back(Tensor::zeros({config.channels[static_cast<std::size_t>(l)]}));
            net.dec_bias.push_back(Tensor::zeros({config.channels[static_cast<std::size_t>(l - 1)]}));
        }
    }
    if (config.bn_mode != BnMode::off) {
        for (int l = 1; l <= kappa; ++l) {
            const int q = config.channels[static_cast<std::size_t>(l)];
            net.enc_bn_scale.push_back(Tensor::ones({q}));
            net.enc_bn_state.push_back(BatchNormState{Tensor::ones({q})});
        }
        for (int l = 2; l <= kappa; ++l) {
            const int q = config.channels[static_cast<std::size_t>(l - 1)];
            net.dec_bn_scale.push_back(Tensor::ones({q}));
            net.dec_bn_state.push_back(BatchNormState{Tensor::ones({q})});
        }
    }
    return net;
}

Network make_delta_identity_network(std::vector<int> spatial, int channels, int taps) {
    NetworkConfig cfg;
    cfg.stages = 1;
    cfg.channels = {channels, channels};
    cfg.taps = taps;
    cfg.spatial = std::move(spatial);
    cfg.validate();
    Network net;
    net.config = cfg;
    const int srank = cfg.spatial_rank();
    std::vector<int> kshape = {channels, channels, taps};
    if (srank == 2) kshape.push_back(taps);
    Tensor delta(kshape);
    const int h = taps / 2;
    for (int c = 0; c < channels; ++c) {
        std::vector<int> idx = {c, c, h};
        if (srank == 2) idx.push_back(h);
        delta.at(idx) = 1.0;
    }
    net.enc_kernels.emplace_back(delta);
    net.dec_kernels.emplace_back(delta);
    return net;
}

namespace {

// channel-axis helpers for single-sample [C, spatial...] activations
Tensor scale_channels(const Tensor& x, const std::vector<double>& f) {
    const int ch = x.extent(0);
    const std::size_t plane = x.size() / static_cast<std::size_t>(ch);
    Tensor y = x;
    for (int c = 0; c < ch; ++c) {
        double* row = y.data() + static_cast<std::size_t>(c) * plane;
        for (std::size_t j = 0; j < plane; ++j) row[j] *= f[static_cast<std::size_t>(c)];
    }
    return y;
}

Tensor add_bias_channels(const Tensor& x, const Tensor& bias) {
    const int ch = x.extent(0);
    const std::size_t plane = x.size() / static_cast<std::size_t>(ch);
    Tensor y = x;
    for (int c = 0; c < ch; ++c) {
        double* row = y.data() + static_cast<std::size_t>(c) * plane;
        const double b = bias[static_cast<std::size_t>(c)];
        for (std::size_t j = 0; j < plane; ++j) row[j] += b;
    }
    return y;
}

Tensor concat_channels_plain(const Tensor& a, const Tensor& b) {
    std::vector<int> shape = a.shape();
    shape[0] += b.extent(0);
    Tensor y(shape);
    for (std::size_t i = 0; i < a.size(); ++i) y[i] = a[i];
    for (std::size_t i = 0; i < b.size(); ++i) y[a.size() + i] = b[i];
    return y;
}

struct ShapedInput {
    Tensor x;      // [q0, spatial...]
    bool was_bare;  // caller passed plain [spatial...]
};

ShapedInput shape_input(const NetworkConfig& cfg, const Tensor& x) {
    const int srank = cfg.spatial_rank();
    std::vector<int> expect = cfg.input_shape();
    if (x.rank() == srank && cfg.channels[0] == 1) {
        if (std::vector<int>(expect.begin() + 1, expect.end()) != x.shape()) {
            throw std::invalid_argument("forward: input shape " + shape_string(x.shape()) +
                                        " does not match network spatial dims " +
                                        shape_string(cfg.spatial));
        }
        return {x.reshaped(expect), true};
    }
    if (x.shape() != expect) {
        throw std::invalid_argument("forward: input shape " + shape_string(x.shape()) +
                                    " does not match network input " + shape_string(expect));
    }
    return {x, false};
}

// Shared evaluation walk. When `frozen` is non-null, ReLUs are replaced by
// multiplication with the frozen patterns and biases are dropped, which turns
// the walk into the exact linear map J(x)v.
Tensor run_network(const Network& net, const Tensor& x_in, ActivationTrace* record,
                   const ActivationTrace* frozen, double* min_preact) {
    const NetworkConfig& cfg = net.config;
    const int kappa = cfg.stages;
    const int srank = cfg.spatial_rank();
    const bool bn_on = cfg.bn_mode != BnMode::off;
    const bool linear_pass = frozen != nullptr;

    ShapedInput in = shape_input(cfg, x_in);
    Tensor h = in.x;
    std::vector<Tensor> skip_stash;
    if (record) {
        record->enc.resize(static_cast<std::size_t>(kappa));
        record->dec.resize(static_cast<std::size_t>(kappa > 1 ? kappa - 1 : 0));
    }
    if (min_preact) *min_preact = std::numeric_limits<double>::infinity();

    auto note_margin = [&](const Tensor& pre) {
        if (!min_preact) return;
        for (std::size_t i = 0; i < pre.size(); ++i) {
            *min_preact = std::min(*min_preact, std::fabs(pre[i]));
        }
    };

    for (int l = 1; l <= kappa; ++l) {
        h = periodic_conv(h, net.enc_kernels[static_cast<std::size_t>(l - 1)], /*flipped=*/true);
        if (!cfg.bias_free && !linear_pass) {
            h = add_bias_channels(h, net.enc_bias[static_cast<std::size_t>(l - 1)]);
        }
        if (bn_on) {
            h = scale_channels(h, bn_linear_factors(net.enc_bn_scale[static_cast<std::size_t>(l - 1)],
                                                    net.enc_bn_state[static_cast<std::size_t>(l - 1)]));
        }
        note_margin(h);
        if (linear_pass) {
            h = mul(h, frozen->enc[static_cast<std::size_t>(l - 1)]);
        } else {
            if (record) record->enc[static_cast<std::size_t>(l - 1)] = relu_pattern(h);
            h = relu(h);
        }
        if (l < kappa) {
            if (cfg.skip_connections) skip_stash.push_back(h);
            h = pool(h, srank);
        }
    }

    for (int l = kappa; l >= 1; --l) {
        h = periodic_conv(h, net.dec_kernels[static_cast<std::size_t>(l - 1)], /*flipped=*/false);
        if (!cfg.bias_free && !linear_pass) {
            h = add_bias_channels(h, net.dec_bias[static_cast<std::size_t>(l - 1)]);
        }
        if (l >= 2) {
            if (bn_on) {
                h = scale_channels(h,
                                   bn_linear_factors(net.dec_bn_scale[static_cast<std::size_t>(l - 2)],
                                                     net.dec_bn_state[static_cast<std::size_t>(l - 2)]));
            }
            note_margin(h);
            if (linear_pass) {
                h = mul(h, frozen->dec[static_cast<std::size_t>(l - 2)]);
            } else {
                if (record) record->dec[static_cast<std::size_t>(l - 2)] = relu_pattern(h);
                h = relu(h);
            }
            h = unpool(h, srank);
            if (cfg.skip_connections) {
                h = concat_channels_plain(h, skip_stash[static_cast<std::size_t>(l - 2)]);
            }
        }
    }

    if (in.was_bare) h = h.reshaped(std::vector<int>(cfg.spatial.begin(), cfg.spatial.end()));
    return h;
}

}  // namespace

ForwardResult forward(const Network& net, const Tensor& x) {
    ForwardResult r;
    r.output = run_network(net, x, &r.trace, nullptr, &r.min_preact_abs);
    return r;
}

Tensor forward_value(const Network& net, const Tensor& x) {
    return run_network(net, x, nullptr, nullptr, nullptr);
}

LinearizedOperator freeze(const Network& net, const Tensor& x) {
    if (net.config.skip_connections) {
        throw std::runtime_error("freeze: frame extraction rejects skip connections");
    }
    if (net.config.bn_mode == BnMode::train) {
        throw std::runtime_error("freeze: frame extraction requires bn_mode off or linear_eval");
    }
    LinearizedOperator op;
    op.net = &net;
    ForwardResult r = forward(net, x);
    op.trace = std::move(r.trace);
    return op;
}

Tensor linearized_apply(const LinearizedOperator& op, const Tensor& v) {
    return run_network(*op.net, v, nullptr, &op.trace, nullptr);
}

Tensor sample_input_with_margin(const Network& net, RngStream& rng, double margin, int max_tries) {
    // single-channel nets take bare [spatial...] inputs everywhere else
    const std::vector<int> shape = net.config.channels[0] == 1
                                       ? net.config.spatial
                                       : net.config.input_shape();
    for (int attempt = 0; attempt < max_tries; ++attempt) {
        Tensor x(shape);
        for (std::size_t i = 0; i < x.size(); ++i) x[i] = rng.uniform(-1.0, 1.0);
        ForwardResult r = forward(net, x);
        if (r.min_preact_abs >= margin) return x;
    }
    throw std::runtime_error("sample_input_with_margin: no input cleared margin after " +
                             std::to_string(max_tries) + " tries");
}

ParamVars make_param_vars(const Network& net) {
    ParamVars pv;
    for (const auto& k : net.enc_kernels) pv.enc_k.push_back(ad::Var::leaf(k.weights));
    for (const auto& k : net.dec_kernels) pv.dec_k.push_back(ad::Var::leaf(k.weights));
    for (const auto& b : net.enc_bias) pv.enc_b.push_back(ad::Var::leaf(b));
    for (const auto& b : net.dec_bias) pv.dec_b.push_back(ad::Var::leaf(b));
    for (const auto& s : net.enc_bn_scale) pv.enc_bn.push_back(ad::Var::leaf(s));
    for (const auto& s : net.dec_bn_scale) pv.dec_bn.push_back(ad::Var::leaf(s));
    return pv;
}

ad::Var forward_var(Network& net, const ParamVars& pv, const ad::Var& x, ForwardMode mode) {
    const NetworkConfig& cfg = net.config;
    const int kappa = cfg.stages;
    const int srank = cfg.spatial_rank();
    const bool bn_on = cfg.bn_mode != BnMode::off;
    const bool bn_batch = bn_on && cfg.bn_mode == BnMode::train && mode == ForwardMode::train;

    if (x.value().rank() != srank + 2) {
        throw std::invalid_argument("forward_var expects [B,q0,spatial...], got " +
                                    shape_string(x.value().shape()));
    }

    ad::Var h = x;
    std::vector<ad::Var> skip_stash;
    for (int l = 1; l <= kappa; ++l) {
        h = ad::conv(h, pv.enc_k[static_cast<std::size_t>(l - 1)], /*flipped=*/true);
        if (!cfg.bias_free) h = ad::add_channel_bias(h, pv.enc_b[static_cast<std::size_t>(l - 1)]);
        if (bn_on) {
            auto& st = net.enc_bn_state[static_cast<std::size_t>(l - 1)];
            h = bn_batch ? ad::bn_train(h, pv.enc_bn[static_cast<std::size_t>(l - 1)], &st)
                         : ad::bn_linear(h, pv.enc_bn[static_cast<std::size_t>(l - 1)], st);
        }
        h = ad::relu(h);
        if (l < kappa) {
            if (cfg.skip_connections) skip_stash.push_back(h);
            h = ad::pool(h, srank);
        }
    }
    for (int l = kappa; l >= 1; --l) {
        h = ad::conv(h, pv.dec_k[static_cast<std::size_t>(l - 1)], /*flipped=*/false);
        if (!cfg.bias_free) h = ad::add_channel_bias(h, pv.dec_b[static_cast<std::size_t>(l - 1)]);
        if (l >= 2) {
            if (bn_on) {
                auto& st = net.dec_bn_state[static_cast<std::size_t>(l - 2)];
                h = bn_batch ? ad::bn_train(h, pv.dec_bn[static_cast<std::size_t>(l - 2)], &st)
                             : ad::bn_linear(h, pv.dec_bn[static_cast<std::size_t>(l - 2)], st);
            }
            h = ad::relu(h);
            h = ad::unpool(h, srank);
            if (cfg.skip_connections) {
                h = ad::concat_channels(h, skip_stash[static_cast<std::size_t>(l - 2)]);
            }
        }
    }
    return h;
}

namespace {

Tensor grad_or_zeros(const ad::Var& v) {
    const Tensor& g = v.grad();
    return g.empty() ? Tensor::zeros(v.value().shape()) : g;
}

}  // namespace

Gradients collect_gradients(const ParamVars& pv) {
    Gradients g;
    for (const auto& v : pv.enc_k) g.enc_k.push_back(grad_or_zeros(v));
    for (const auto& v : pv.dec_k) g.dec_k.push_back(grad_or_zeros(v));
    for (const auto& v : pv.enc_b) g.enc_b.push_back(grad_or_zeros(v));
    for (const auto& v : pv.dec_b) g.dec_b.push_back(grad_or_zeros(v));
    for (const auto& v : pv.enc_bn) g.enc_bn.push_back(grad_or_zeros(v));
    for (const auto& v : pv.dec_bn) g.dec_bn.push_back(grad_or_zeros(v));
    return g;
}

Gradients gradient(Network& net, const LossBuilder& loss_fn) {
    ParamVars pv = make_param_vars(net);
    ad::Var loss = loss_fn(net, pv);
    ad::backward(loss);
    return collect_gradients(pv);
}

}  // namespace n2b
