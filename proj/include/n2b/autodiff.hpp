// Reverse-mode automatic differentiation over Tensors. A Var wraps a node in
// a dynamically built tape; backward() walks the tape in reverse topological
// order with a fixed, deterministic accumulation order. Values are computed
// by the same tensor_ops kernels as the plain evaluation paths, so the two
// agree bit for bit.

#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "n2b/tensor.hpp"
#include "n2b/tensor_ops.hpp"

namespace n2b::ad {

namespace detail {
struct Node {
    Tensor value;
    Tensor grad;
    bool grad_set = false;
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(const Tensor&)> backward_fn;  // receives this node's grad
};
void accumulate(const std::shared_ptr<Node>& node, const Tensor& delta);
}  // namespace detail

class Var {
public:
    Var() = default;

    static Var constant(Tensor value);
    static Var leaf(Tensor value);  // differentiable input / parameter

    bool valid() const { return static_cast<bool>(node_); }
    const Tensor& value() const { return node_->value; }
    const Tensor& grad() const;
    bool requires_grad() const { return node_ && node_->requires_grad; }

    std::shared_ptr<detail::Node> node() const { return node_; }
    static Var wrap(std::shared_ptr<detail::Node> n) {
        Var v;
        v.node_ = std::move(n);
        return v;
    }

private:
    std::shared_ptr<detail::Node> node_;
};

// Runs reverse-mode accumulation from a scalar loss.
void backward(const Var& loss);

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var add_const(const Var& a, const Tensor& c);
Var sub_const(const Var& a, const Tensor& c);
Var mul_const(const Var& a, const Tensor& c);

// x: [B, C_in, spatial...], kernel: [C_out, C_in, taps...]
Var conv(const Var& x, const Var& kernel, bool flipped);
Var pool(const Var& x, int spatial_axes);
Var unpool(const Var& x, int spatial_axes);
Var relu(const Var& x);
Var add_channel_bias(const Var& x, const Var& bias);
Var bn_train(const Var& x, const Var& scale, BatchNormState* state, double eps = kBnEps,
             double momentum = 0.9);
Var bn_linear(const Var& x, const Var& scale, const BatchNormState& state, double eps = kBnEps);
Var concat_channels(const Var& a, const Var& b);
Var slice_batch(const Var& x, int index);

Var sum_sq(const Var& x);                  // -> scalar
Var mean_all(const Var& x);                // -> scalar
Var dot_const(const Var& x, const Tensor& c);  // -> scalar
Var add_many(const std::vector<Var>& xs);
Var average(const std::vector<Var>& xs);
Var stack_scalars(const std::vector<Var>& xs);  // K scalars -> [K]
Var matvec(const Var& w, const Var& x);         // [m,n] x [n] -> [m]
Var softmax(const Var& x);
Var weighted_sum(const std::vector<Var>& branches, const Var& weights);

}  // namespace n2b::ad
