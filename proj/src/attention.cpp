#include "n2b/attention.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

#include "n2b/rng.hpp"

namespace n2b {

AttentionNet make_attention(int k, std::uint64_t seed, int hidden) {
    if (k < 1) throw std::invalid_argument("make_attention: k must be >= 1");
    AttentionNet net;
    net.k = k;
    net.hidden = hidden;
    net.w1 = Tensor({hidden, k});
    net.b1 = Tensor({hidden});
    net.w2 = Tensor({k, hidden});
    net.b2 = Tensor({k});
    RngStream rng(mix_seed(seed, {0x61747465ULL}));
    const double a1 = std::sqrt(6.0 / k);
    for (std::size_t i = 0; i < net.w1.size(); ++i) net.w1[i] = rng.uniform(-a1, a1);
    const double a2 = std::sqrt(6.0 / hidden);
    for (std::size_t i = 0; i < net.w2.size(); ++i) net.w2[i] = rng.uniform(-a2, a2);
    return net;
}

std::vector<double> pooled_features(const std::vector<Tensor>& branches) {
    if (branches.empty()) throw std::invalid_argument("pooled_features: no branches");
    for (std::size_t k = 1; k < branches.size(); ++k) {
        require_same_shape(branches[0], branches[k], "pooled_features");
    }
    std::vector<double> f(branches.size());
    for (std::size_t k = 0; k < branches.size(); ++k) f[k] = mean(branches[k]);
    return f;
}

std::vector<double> attention_weights(const std::vector<double>& features,
                                      const AttentionNet& net) {
    const int k = net.k, hidden = net.hidden;
    if (static_cast<int>(features.size()) != k) {
        throw std::invalid_argument("attention_weights: " + std::to_string(features.size()) +
                                    " features for k = " + std::to_string(k));
    }
    std::vector<double> h(static_cast<std::size_t>(hidden));
    for (int i = 0; i < hidden; ++i) {
        double acc = net.b1[static_cast<std::size_t>(i)];
        for (int j = 0; j < k; ++j)
            acc += net.w1[static_cast<std::size_t>(i * k + j)] * features[static_cast<std::size_t>(j)];
        h[static_cast<std::size_t>(i)] = acc > 0.0 ? acc : 0.0;
    }
    std::vector<double> logits(static_cast<std::size_t>(k));
    double mx = -std::numeric_limits<double>::infinity();
    for (int i = 0; i < k; ++i) {
        double acc = net.b2[static_cast<std::size_t>(i)];
        for (int j = 0; j < hidden; ++j)
            acc += net.w2[static_cast<std::size_t>(i * hidden + j)] * h[static_cast<std::size_t>(j)];
        logits[static_cast<std::size_t>(i)] = acc;
        mx = std::max(mx, acc);
    }
    double z = 0.0;
    std::vector<double> w(static_cast<std::size_t>(k));
    for (int i = 0; i < k; ++i) {
        w[static_cast<std::size_t>(i)] = std::exp(logits[static_cast<std::size_t>(i)] - mx);
        z += w[static_cast<std::size_t>(i)];
    }
    for (double& v : w) v /= z;
    return w;
}

Tensor aggregate(const std::vector<Tensor>& branches, const std::vector<double>& weights) {
    if (branches.empty() || branches.size() != weights.size()) {
        throw std::invalid_argument("aggregate: " + std::to_string(branches.size()) +
                                    " branches vs " + std::to_string(weights.size()) + " weights");
    }
    Tensor out = scaled(branches[0], weights[0]);
    for (std::size_t k = 1; k < branches.size(); ++k) {
        require_same_shape(out, branches[k], "aggregate");
        for (std::size_t i = 0; i < out.size(); ++i) out[i] += weights[k] * branches[k][i];
    }
    return out;
}

AttentionVars make_attention_vars(const AttentionNet& net) {
    return AttentionVars{ad::Var::leaf(net.w1), ad::Var::leaf(net.b1), ad::Var::leaf(net.w2),
                         ad::Var::leaf(net.b2)};
}

ad::Var attention_weights_var(const ad::Var& features, const AttentionVars& vars) {
    ad::Var h = ad::relu(ad::add(ad::matvec(vars.w1, features), vars.b1));
    ad::Var logits = ad::add(ad::matvec(vars.w2, h), vars.b2);
    return ad::softmax(logits);
}

AttentionGradients attention_gradients(const AttentionNet& net,
                                       const AttentionLossBuilder& loss_fn) {
    AttentionVars vars = make_attention_vars(net);
    ad::Var loss = loss_fn(vars);
    ad::backward(loss);
    auto take = [](const ad::Var& v) {
        return v.grad().empty() ? Tensor::zeros(v.value().shape()) : v.grad();
    };
    return AttentionGradients{take(vars.w1), take(vars.b1), take(vars.w2), take(vars.b2)};
}

}  // namespace n2b
