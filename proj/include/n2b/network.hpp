// Bias-free encoder-decoder ReLU network with periodic convolutions and
// orthonormal pooling, plus the machinery that makes it analyzable: every
// forward pass records the 0/1 ReLU patterns, and freezing those patterns
// yields the exact pointwise linear operator J(x) of the network at x.
//
// Stage layout for kappa stages (pooling sits between stages, the bottleneck
// keeps its ReLU, the output layer has none):
//
//   enc l:  conv(flipped) -> [bias] -> [bn] -> relu -> (pool if l < kappa)
//   dec l:  conv          -> [bias] -> [bn, relu, unpool if l >= 2]
//
// With kappa = 1 and delta kernels this reduces to y = relu(x).

#pragma once

#include <cstdint>
#include <vector>

#include "n2b/autodiff.hpp"
#include "n2b/rng.hpp"
#include "n2b/tensor.hpp"
#include "n2b/tensor_ops.hpp"

namespace n2b {

struct NetworkConfig {
    int stages = 1;                  // kappa
    std::vector<int> channels;       // q_0 .. q_kappa
    int taps = 3;                    // odd kernel width r
    std::vector<int> spatial;        // {n} or {h, w}
    bool skip_connections = false;
    BnMode bn_mode = BnMode::off;
    bool bias_free = true;

    int spatial_rank() const { return static_cast<int>(spatial.size()); }
    std::size_t input_size() const { return static_cast<std::size_t>(channels[0]) * shape_size(spatial); }
    std::vector<int> input_shape() const;  // [q0, spatial...]
    void validate() const;
    bool frame_analyzable() const {
        return bias_free && !skip_connections && bn_mode != BnMode::train;
    }
    // decoder conv input channels at stage l (1-based)
    int dec_in_channels(int l) const {
        const int q = channels[static_cast<std::size_t>(l)];
        return (skip_connections && l < stages) ? 2 * q : q;
    }
};

struct Network {
    NetworkConfig config;
    std::vector<KernelSpec> enc_kernels;  // stage l at [l-1]: [q_l, q_{l-1}, r...]
    std::vector<KernelSpec> dec_kernels;  // stage l at [l-1]: [q_{l-1}, dec_in(l), r...]
    std::vector<Tensor> enc_bias, dec_bias;        // empty when bias_free
    std::vector<Tensor> enc_bn_scale;              // per stage, empty when bn off
    std::vector<Tensor> dec_bn_scale;              // stages 2..kappa at [l-2]
    std::vector<BatchNormState> enc_bn_state;
    std::vector<BatchNormState> dec_bn_state;
};

Network make_network(const NetworkConfig& config, std::uint64_t seed);

// kappa=1 net whose kernels are unit impulses: F(x) = relu(x).
Network make_delta_identity_network(std::vector<int> spatial, int channels = 1, int taps = 3);

// Per-layer diagonal 0/1 ReLU patterns recorded at a forward pass.
struct ActivationTrace {
    std::vector<Tensor> enc;  // stages 1..kappa
    std::vector<Tensor> dec;  // stages 2..kappa at [l-2]
};

struct ForwardResult {
    Tensor output;
    ActivationTrace trace;
    double min_preact_abs = 0.0;  // smallest |preactivation| seen at any ReLU
};

ForwardResult forward(const Network& net, const Tensor& x);
Tensor forward_value(const Network& net, const Tensor& x);

// Network + trace frozen at a point; applies v -> J(x) v.
struct LinearizedOperator {
    const Network* net = nullptr;
    ActivationTrace trace;
};

LinearizedOperator freeze(const Network& net, const Tensor& x);
Tensor linearized_apply(const LinearizedOperator& op, const Tensor& v);

// Draw inputs until every ReLU preactivation clears the margin; frame and
// Jacobian tests need to stay away from the kinks.
Tensor sample_input_with_margin(const Network& net, RngStream& rng, double margin = kReluMargin,
                                int max_tries = 500);

// ---- training-side graph ----

enum class ForwardMode { eval, train };

struct ParamVars {
    std::vector<ad::Var> enc_k, dec_k, enc_b, dec_b, enc_bn, dec_bn;
};

ParamVars make_param_vars(const Network& net);
// x is [B, q0, spatial...]; train mode uses batch statistics and updates the
// running variances inside `net`.
ad::Var forward_var(Network& net, const ParamVars& pv, const ad::Var& x, ForwardMode mode);

// Write gradients accumulated in pv back out in parameter order.
struct Gradients {
    std::vector<Tensor> enc_k, dec_k, enc_b, dec_b, enc_bn, dec_bn;
};
Gradients collect_gradients(const ParamVars& pv);

// Exact reverse-mode gradients of a scalar loss built from module operations.
using LossBuilder = std::function<ad::Var(Network&, const ParamVars&)>;
Gradients gradient(Network& net, const LossBuilder& loss_fn);

}  // namespace n2b
