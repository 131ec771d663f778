// Data attention network: global average pooling of the K branch outputs
// into a K-vector, a two-layer perceptron K -> 64 -> K, softmax weights, and
// the weighted aggregation of the branches.

#pragma once

#include <cstdint>
#include <vector>

#include "n2b/autodiff.hpp"
#include "n2b/tensor.hpp"

namespace n2b {

struct AttentionNet {
    int k = 8;
    int hidden = 64;
    Tensor w1, b1;  // [hidden, k], [hidden]
    Tensor w2, b2;  // [k, hidden], [k]
};

AttentionNet make_attention(int k, std::uint64_t seed, int hidden = 64);

// entry k = spatial-and-channel mean of branch k
std::vector<double> pooled_features(const std::vector<Tensor>& branches);

// FC(K->hidden) -> ReLU -> FC(hidden->K) -> softmax; weights are positive and
// sum to one.
std::vector<double> attention_weights(const std::vector<double>& features,
                                      const AttentionNet& net);

Tensor aggregate(const std::vector<Tensor>& branches, const std::vector<double>& weights);

// ---- training-side graph ----

struct AttentionVars {
    ad::Var w1, b1, w2, b2;
};

AttentionVars make_attention_vars(const AttentionNet& net);
ad::Var attention_weights_var(const ad::Var& features, const AttentionVars& vars);

struct AttentionGradients {
    Tensor w1, b1, w2, b2;
};

// Exact reverse-mode gradients of a scalar loss with respect to the attention
// parameters. Branch outputs enter the loss builder as constants (two-stage)
// or as differentiable nodes (joint); the builder decides.
using AttentionLossBuilder = std::function<ad::Var(const AttentionVars&)>;
AttentionGradients attention_gradients(const AttentionNet& net,
                                       const AttentionLossBuilder& loss_fn);

}  // namespace n2b
