#include "n2b/autodiff.hpp"

#include <cmath>
#include <stdexcept>
#include <unordered_set>

namespace n2b::ad {

using detail::Node;
using NodePtr = std::shared_ptr<Node>;

namespace detail {

void accumulate(const NodePtr& node, const Tensor& delta) {
    if (!node || !node->requires_grad) return;
    if (!node->grad_set) {
        node->grad = delta;
        node->grad_set = true;
        return;
    }
    node->grad += delta;
}

}  // namespace detail

namespace {

NodePtr make_node(Tensor value, std::vector<NodePtr> parents,
                  std::function<void(const Tensor&)> backward_fn) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    n->parents = std::move(parents);
    for (const auto& p : n->parents) {
        if (p && p->requires_grad) n->requires_grad = true;
    }
    if (n->requires_grad) n->backward_fn = std::move(backward_fn);
    return n;
}

void require_valid(const Var& v, const char* op) {
    if (!v.valid()) throw std::invalid_argument(std::string(op) + ": empty Var");
}

}  // namespace

Var Var::constant(Tensor value) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    return wrap(std::move(n));
}

Var Var::leaf(Tensor value) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    n->requires_grad = true;
    return wrap(std::move(n));
}

const Tensor& Var::grad() const {
    if (!node_ || !node_->grad_set) {
        static const Tensor empty;
        return empty;
    }
    return node_->grad;
}

void backward(const Var& loss) {
    require_valid(loss, "backward");
    if (loss.value().size() != 1) {
        throw std::invalid_argument("backward: loss must be scalar, got shape " +
                                    shape_string(loss.value().shape()));
    }
    // iterative DFS topological order
    std::vector<NodePtr> topo;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<NodePtr, std::size_t>> stack;
    stack.emplace_back(loss.node(), 0);
    visited.insert(loss.node().get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            NodePtr p = node->parents[next++];
            if (p && !visited.count(p.get())) {
                visited.insert(p.get());
                stack.emplace_back(std::move(p), 0);
            }
        } else {
            topo.push_back(node);
            stack.pop_back();
        }
    }
    detail::accumulate(loss.node(), Tensor::ones(loss.value().shape()));
    for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
        Node& n = **it;
        if (n.requires_grad && n.grad_set && n.backward_fn) n.backward_fn(n.grad);
    }
}

Var add(const Var& a, const Var& b) {
    require_valid(a, "add");
    require_valid(b, "add");
    auto pa = a.node(), pb = b.node();
    return Var::wrap(make_node(n2b::add(a.value(), b.value()), {pa, pb}, [pa, pb](const Tensor& g) {
        detail::accumulate(pa, g);
        detail::accumulate(pb, g);
    }));
}

Var sub(const Var& a, const Var& b) {
    require_valid(a, "sub");
    require_valid(b, "sub");
    auto pa = a.node(), pb = b.node();
    return Var::wrap(make_node(n2b::sub(a.value(), b.value()), {pa, pb}, [pa, pb](const Tensor& g) {
        detail::accumulate(pa, g);
        detail::accumulate(pb, scaled(g, -1.0));
    }));
}

Var mul(const Var& a, const Var& b) {
    require_valid(a, "mul");
    require_valid(b, "mul");
    auto pa = a.node(), pb = b.node();
    return Var::wrap(make_node(n2b::mul(a.value(), b.value()), {pa, pb}, [pa, pb](const Tensor& g) {
        detail::accumulate(pa, n2b::mul(g, pb->value));
        detail::accumulate(pb, n2b::mul(g, pa->value));
    }));
}

Var scale(const Var& a, double s) {
    require_valid(a, "scale");
    auto pa = a.node();
    return Var::wrap(make_node(scaled(a.value(), s), {pa}, [pa, s](const Tensor& g) {
        detail::accumulate(pa, scaled(g, s));
    }));
}

Var add_const(const Var& a, const Tensor& c) {
    require_valid(a, "add_const");
    auto pa = a.node();
    return Var::wrap(make_node(n2b::add(a.value(), c), {pa}, [pa](const Tensor& g) {
        detail::accumulate(pa, g);
    }));
}

Var sub_const(const Var& a, const Tensor& c) { return add_const(a, scaled(c, -1.0)); }

Var mul_const(const Var& a, const Tensor& c) {
    require_valid(a, "mul_const");
    auto pa = a.node();
    Tensor cc = c;
    return Var::wrap(make_node(n2b::mul(a.value(), c), {pa}, [pa, cc](const Tensor& g) {
        detail::accumulate(pa, n2b::mul(g, cc));
    }));
}

Var conv(const Var& x, const Var& kernel, bool flipped) {
    require_valid(x, "conv");
    require_valid(kernel, "conv");
    auto px = x.node(), pk = kernel.node();
    KernelSpec spec(kernel.value());
    Tensor y = conv_batched(x.value(), spec, flipped);
    return Var::wrap(make_node(std::move(y), {px, pk}, [px, pk, flipped](const Tensor& g) {
        KernelSpec k(pk->value);
        if (px->requires_grad) detail::accumulate(px, conv_batched_grad_input(g, k, flipped));
        if (pk->requires_grad)
            detail::accumulate(pk, conv_batched_grad_kernel(px->value, g, k, flipped));
    }));
}

Var pool(const Var& x, int spatial_axes) {
    require_valid(x, "pool");
    auto px = x.node();
    return Var::wrap(make_node(n2b::pool(x.value(), spatial_axes), {px},
                               [px, spatial_axes](const Tensor& g) {
                                   detail::accumulate(px, n2b::unpool(g, spatial_axes));
                               }));
}

Var unpool(const Var& x, int spatial_axes) {
    require_valid(x, "unpool");
    auto px = x.node();
    return Var::wrap(make_node(n2b::unpool(x.value(), spatial_axes), {px},
                               [px, spatial_axes](const Tensor& g) {
                                   detail::accumulate(px, n2b::pool(g, spatial_axes));
                               }));
}

Var relu(const Var& x) {
    require_valid(x, "relu");
    auto px = x.node();
    Tensor pat = relu_pattern(x.value());
    return Var::wrap(make_node(n2b::relu(x.value()), {px}, [px, pat](const Tensor& g) {
        detail::accumulate(px, n2b::mul(g, pat));
    }));
}

namespace {

// per-channel reduction over [B, C, plane]
void channel_layout(const Tensor& x, int& batch, int& ch, std::size_t& plane) {
    if (x.rank() < 2) {
        throw std::invalid_argument("expected [B,C,spatial...], got " + shape_string(x.shape()));
    }
    batch = x.extent(0);
    ch = x.extent(1);
    plane = 1;
    for (int d = 2; d < x.rank(); ++d) plane *= static_cast<std::size_t>(x.extent(d));
}

}  // namespace

Var add_channel_bias(const Var& x, const Var& bias) {
    require_valid(x, "add_channel_bias");
    require_valid(bias, "add_channel_bias");
    int batch, ch;
    std::size_t plane;
    channel_layout(x.value(), batch, ch, plane);
    if (bias.value().rank() != 1 || bias.value().extent(0) != ch) {
        throw std::invalid_argument("add_channel_bias: bias shape " +
                                    shape_string(bias.value().shape()) + " vs channels " +
                                    std::to_string(ch));
    }
    Tensor y = x.value();
    for (int b = 0; b < batch; ++b)
        for (int c = 0; c < ch; ++c) {
            const std::size_t base = (static_cast<std::size_t>(b) * ch + c) * plane;
            const double add_v = bias.value()[static_cast<std::size_t>(c)];
            for (std::size_t j = 0; j < plane; ++j) y[base + j] += add_v;
        }
    auto px = x.node(), pb = bias.node();
    return Var::wrap(make_node(std::move(y), {px, pb}, [px, pb, batch, ch, plane](const Tensor& g) {
        detail::accumulate(px, g);
        if (pb->requires_grad) {
            Tensor gb({ch});
            for (int b = 0; b < batch; ++b)
                for (int c = 0; c < ch; ++c) {
                    const std::size_t base = (static_cast<std::size_t>(b) * ch + c) * plane;
                    double acc = 0.0;
                    for (std::size_t j = 0; j < plane; ++j) acc += g[base + j];
                    gb[static_cast<std::size_t>(c)] += acc;
                }
            detail::accumulate(pb, gb);
        }
    }));
}

Var bn_train(const Var& x, const Var& scale_v, BatchNormState* state, double eps, double momentum) {
    require_valid(x, "bn_train");
    require_valid(scale_v, "bn_train");
    int batch, ch;
    std::size_t plane;
    channel_layout(x.value(), batch, ch, plane);
    if (batch < 2) throw std::invalid_argument("bn_train requires batch >= 2");
    const Tensor& xv = x.value();
    const Tensor& gamma = scale_v.value();
    const double count = static_cast<double>(batch) * static_cast<double>(plane);

    Tensor xhat(xv.shape());
    std::vector<double> inv_std(static_cast<std::size_t>(ch));
    for (int c = 0; c < ch; ++c) {
        double m = 0.0;
        for (int b = 0; b < batch; ++b) {
            const std::size_t base = (static_cast<std::size_t>(b) * ch + c) * plane;
            for (std::size_t j = 0; j < plane; ++j) m += xv[base + j];
        }
        m /= count;
        double v = 0.0;
        for (int b = 0; b < batch; ++b) {
            const std::size_t base = (static_cast<std::size_t>(b) * ch + c) * plane;
            for (std::size_t j = 0; j < plane; ++j) {
                const double d = xv[base + j] - m;
                v += d * d;
            }
        }
        v /= count;
        const double is = 1.0 / std::sqrt(v + eps);
        inv_std[static_cast<std::size_t>(c)] = is;
        for (int b = 0; b < batch; ++b) {
            const std::size_t base = (static_cast<std::size_t>(b) * ch + c) * plane;
            for (std::size_t j = 0; j < plane; ++j) xhat[base + j] = (xv[base + j] - m) * is;
        }
        if (state) {
            state->running_var[static_cast<std::size_t>(c)] =
                momentum * state->running_var[static_cast<std::size_t>(c)] + (1.0 - momentum) * v;
        }
    }
    Tensor y(xv.shape());
    for (int b = 0; b < batch; ++b)
        for (int c = 0; c < ch; ++c) {
            const std::size_t base = (static_cast<std::size_t>(b) * ch + c) * plane;
            const double gc = gamma[static_cast<std::size_t>(c)];
            for (std::size_t j = 0; j < plane; ++j) y[base + j] = gc * xhat[base + j];
        }

    auto px = x.node(), pg = scale_v.node();
    return Var::wrap(make_node(
        std::move(y), {px, pg}, [px, pg, xhat, inv_std, batch, ch, plane, count](const Tensor& g) {
            const Tensor& gamma_now = pg->value;
            if (pg->requires_grad) {
                Tensor dg({ch});
                for (int b = 0; b < batch; ++b)
                    for (int c = 0; c < ch; ++c) {
                        const std::size_t base = (static_cast<std::size_t>(b) * ch + c) * plane;
                        double acc = 0.0;
                        for (std::size_t j = 0; j < plane; ++j) acc += g[base + j] * xhat[base + j];
                        dg[static_cast<std::size_t>(c)] += acc;
                    }
                detail::accumulate(pg, dg);
            }
            if (px->requires_grad) {
                Tensor dx(xhat.shape());
                for (int c = 0; c < ch; ++c) {
                    double sum_g = 0.0, sum_gx = 0.0;
                    for (int b = 0; b < batch; ++b) {
                        const std::size_t base = (static_cast<std::size_t>(b) * ch + c) * plane;
                        for (std::size_t j = 0; j < plane; ++j) {
                            sum_g += g[base + j];
                            sum_gx += g[base + j] * xhat[base + j];
                        }
                    }
                    const double mean_g = sum_g / count;
                    const double mean_gx = sum_gx / count;
                    const double f = gamma_now[static_cast<std::size_t>(c)] *
                                     inv_std[static_cast<std::size_t>(c)];
                    for (int b = 0; b < batch; ++b) {
                        const std::size_t base = (static_cast<std::size_t>(b) * ch + c) * plane;
                        for (std::size_t j = 0; j < plane; ++j) {
                            dx[base + j] = f * (g[base + j] - mean_g - xhat[base + j] * mean_gx);
                        }
                    }
                }
                detail::accumulate(px, dx);
            }
        }));
}

Var bn_linear(const Var& x, const Var& scale_v, const BatchNormState& state, double eps) {
    require_valid(x, "bn_linear");
    require_valid(scale_v, "bn_linear");
    int batch, ch;
    std::size_t plane;
    channel_layout(x.value(), batch, ch, plane);
    std::vector<double> inv(static_cast<std::size_t>(ch));
    for (int c = 0; c < ch; ++c)
        inv[static_cast<std::size_t>(c)] =
            1.0 / std::sqrt(state.running_var[static_cast<std::size_t>(c)] + eps);
    Tensor y(x.value().shape());
    for (int b = 0; b < batch; ++b)
        for (int c = 0; c < ch; ++c) {
            const std::size_t base = (static_cast<std::size_t>(b) * ch + c) * plane;
            const double f = scale_v.value()[static_cast<std::size_t>(c)] * inv[static_cast<std::size_t>(c)];
            for (std::size_t j = 0; j < plane; ++j) y[base + j] = f * x.value()[base + j];
        }
    auto px = x.node(), pg = scale_v.node();
    return Var::wrap(make_node(std::move(y), {px, pg},
                               [px, pg, inv, batch, ch, plane](const Tensor& g) {
        if (px->requires_grad) {
            Tensor dx(px->value.shape());
            for (int b = 0; b < batch; ++b)
                for (int c = 0; c < ch; ++c) {
                    const std::size_t base = (static_cast<std::size_t>(b) * ch + c) * plane;
                    const double f = pg->value[static_cast<std::size_t>(c)] * inv[static_cast<std::size_t>(c)];
                    for (std::size_t j = 0; j < plane; ++j) dx[base + j] = f * g[base + j];
                }
            detail::accumulate(px, dx);
        }
        if (pg->requires_grad) {
            Tensor dg({ch});
            for (int b = 0; b < batch; ++b)
                for (int c = 0; c < ch; ++c) {
                    const std::size_t base = (static_cast<std::size_t>(b) * ch + c) * plane;
                    double acc = 0.0;
                    for (std::size_t j = 0; j < plane; ++j) acc += g[base + j] * px->value[base + j];
                    dg[static_cast<std::size_t>(c)] += acc * inv[static_cast<std::size_t>(c)];
                }
            detail::accumulate(pg, dg);
        }
    }));
}

Var concat_channels(const Var& a, const Var& b) {
    require_valid(a, "concat_channels");
    require_valid(b, "concat_channels");
    int batch, ca;
    std::size_t plane;
    channel_layout(a.value(), batch, ca, plane);
    int batch_b, cb;
    std::size_t plane_b;
    channel_layout(b.value(), batch_b, cb, plane_b);
    if (batch != batch_b || plane != plane_b) {
        throw std::invalid_argument("concat_channels: shape mismatch " +
                                    shape_string(a.value().shape()) + " vs " +
                                    shape_string(b.value().shape()));
    }
    std::vector<int> shape = a.value().shape();
    shape[1] = ca + cb;
    Tensor y(shape);
    const std::size_t a_stride = static_cast<std::size_t>(ca) * plane;
    const std::size_t b_stride = static_cast<std::size_t>(cb) * plane;
    const std::size_t y_stride = a_stride + b_stride;
    for (int i = 0; i < batch; ++i) {
        double* dst = y.data() + i * y_stride;
        const double* sa = a.value().data() + i * a_stride;
        const double* sb = b.value().data() + i * b_stride;
        for (std::size_t j = 0; j < a_stride; ++j) dst[j] = sa[j];
        for (std::size_t j = 0; j < b_stride; ++j) dst[a_stride + j] = sb[j];
    }
    auto pa = a.node(), pb = b.node();
    return Var::wrap(make_node(std::move(y), {pa, pb},
                               [pa, pb, batch, a_stride, b_stride, y_stride](const Tensor& g) {
        if (pa->requires_grad) {
            Tensor ga(pa->value.shape());
            for (int i = 0; i < batch; ++i) {
                const double* src = g.data() + i * y_stride;
                double* dst = ga.data() + i * a_stride;
                for (std::size_t j = 0; j < a_stride; ++j) dst[j] = src[j];
            }
            detail::accumulate(pa, ga);
        }
        if (pb->requires_grad) {
            Tensor gb(pb->value.shape());
            for (int i = 0; i < batch; ++i) {
                const double* src = g.data() + i * y_stride + a_stride;
                double* dst = gb.data() + i * b_stride;
                for (std::size_t j = 0; j < b_stride; ++j) dst[j] = src[j];
            }
            detail::accumulate(pb, gb);
        }
    }));
}

Var slice_batch(const Var& x, int index) {
    require_valid(x, "slice_batch");
    const Tensor& xv = x.value();
    if (xv.rank() < 2 || index < 0 || index >= xv.extent(0)) {
        throw std::invalid_argument("slice_batch: index " + std::to_string(index) +
                                    " out of range for " + shape_string(xv.shape()));
    }
    std::vector<int> shape(xv.shape().begin() + 1, xv.shape().end());
    const std::size_t stride = shape_size(shape);
    Tensor y(shape);
    const double* src = xv.data() + static_cast<std::size_t>(index) * stride;
    for (std::size_t j = 0; j < stride; ++j) y[j] = src[j];
    auto px = x.node();
    return Var::wrap(make_node(std::move(y), {px}, [px, index, stride](const Tensor& g) {
        Tensor gx(px->value.shape());
        double* dst = gx.data() + static_cast<std::size_t>(index) * stride;
        for (std::size_t j = 0; j < stride; ++j) dst[j] = g[j];
        detail::accumulate(px, gx);
    }));
}

Var sum_sq(const Var& x) {
    require_valid(x, "sum_sq");
    auto px = x.node();
    return Var::wrap(make_node(Tensor::scalar(n2b::sum_sq(x.value())), {px},
                               [px](const Tensor& g) {
                                   detail::accumulate(px, scaled(px->value, 2.0 * g[0]));
                               }));
}

Var mean_all(const Var& x) {
    require_valid(x, "mean_all");
    auto px = x.node();
    const double inv_n = 1.0 / static_cast<double>(x.value().size());
    return Var::wrap(make_node(Tensor::scalar(n2b::mean(x.value())), {px},
                               [px, inv_n](const Tensor& g) {
                                   detail::accumulate(px, Tensor::full(px->value.shape(), g[0] * inv_n));
                               }));
}

Var dot_const(const Var& x, const Tensor& c) {
    require_valid(x, "dot_const");
    auto px = x.node();
    Tensor cc = c;
    return Var::wrap(make_node(Tensor::scalar(dot(x.value(), c)), {px}, [px, cc](const Tensor& g) {
        detail::accumulate(px, scaled(cc, g[0]));
    }));
}

Var add_many(const std::vector<Var>& xs) {
    if (xs.empty()) throw std::invalid_argument("add_many: empty list");
    Tensor total = xs[0].value();
    std::vector<NodePtr> parents;
    parents.reserve(xs.size());
    parents.push_back(xs[0].node());
    for (std::size_t i = 1; i < xs.size(); ++i) {
        total += xs[i].value();
        parents.push_back(xs[i].node());
    }
    auto ps = parents;
    return Var::wrap(make_node(std::move(total), std::move(parents), [ps](const Tensor& g) {
        for (const auto& p : ps) detail::accumulate(p, g);
    }));
}

Var average(const std::vector<Var>& xs) {
    return scale(add_many(xs), 1.0 / static_cast<double>(xs.size()));
}

Var stack_scalars(const std::vector<Var>& xs) {
    if (xs.empty()) throw std::invalid_argument("stack_scalars: empty list");
    const int k = static_cast<int>(xs.size());
    Tensor v({k});
    std::vector<NodePtr> parents;
    for (int i = 0; i < k; ++i) {
        if (xs[static_cast<std::size_t>(i)].value().size() != 1) {
            throw std::invalid_argument("stack_scalars: entry " + std::to_string(i) + " not scalar");
        }
        v[static_cast<std::size_t>(i)] = xs[static_cast<std::size_t>(i)].value()[0];
        parents.push_back(xs[static_cast<std::size_t>(i)].node());
    }
    auto ps = parents;
    return Var::wrap(make_node(std::move(v), std::move(parents), [ps](const Tensor& g) {
        for (std::size_t i = 0; i < ps.size(); ++i) detail::accumulate(ps[i], Tensor::scalar(g[i]));
    }));
}

Var matvec(const Var& w, const Var& x) {
    require_valid(w, "matvec");
    require_valid(x, "matvec");
    const Tensor& wm = w.value();
    const Tensor& xv = x.value();
    if (wm.rank() != 2 || xv.rank() != 1 || wm.extent(1) != xv.extent(0)) {
        throw std::invalid_argument("matvec: shapes " + shape_string(wm.shape()) + " x " +
                                    shape_string(xv.shape()));
    }
    const int m = wm.extent(0), n = wm.extent(1);
    Tensor y({m});
    for (int i = 0; i < m; ++i) {
        double acc = 0.0;
        for (int j = 0; j < n; ++j) acc += wm[static_cast<std::size_t>(i * n + j)] * xv[static_cast<std::size_t>(j)];
        y[static_cast<std::size_t>(i)] = acc;
    }
    auto pw = w.node(), px = x.node();
    return Var::wrap(make_node(std::move(y), {pw, px}, [pw, px, m, n](const Tensor& g) {
        if (pw->requires_grad) {
            Tensor gw({m, n});
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < n; ++j)
                    gw[static_cast<std::size_t>(i * n + j)] =
                        g[static_cast<std::size_t>(i)] * px->value[static_cast<std::size_t>(j)];
            detail::accumulate(pw, gw);
        }
        if (px->requires_grad) {
            Tensor gx({n});
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < n; ++j)
                    gx[static_cast<std::size_t>(j)] +=
                        pw->value[static_cast<std::size_t>(i * n + j)] * g[static_cast<std::size_t>(i)];
            detail::accumulate(px, gx);
        }
    }));
}

Var softmax(const Var& x) {
    require_valid(x, "softmax");
    const Tensor& xv = x.value();
    if (xv.rank() != 1) {
        throw std::invalid_argument("softmax expects a vector, got " + shape_string(xv.shape()));
    }
    double mx = xv[0];
    for (std::size_t i = 1; i < xv.size(); ++i) mx = std::max(mx, xv[i]);
    Tensor w(xv.shape());
    double z = 0.0;
    for (std::size_t i = 0; i < xv.size(); ++i) {
        w[i] = std::exp(xv[i] - mx);
        z += w[i];
    }
    for (std::size_t i = 0; i < w.size(); ++i) w[i] /= z;
    Tensor w_copy = w;
    auto px = x.node();
    return Var::wrap(make_node(std::move(w), {px}, [px, w_copy](const Tensor& g) {
        const double gw = dot(g, w_copy);
        Tensor gx(w_copy.shape());
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] = w_copy[i] * (g[i] - gw);
        detail::accumulate(px, gx);
    }));
}

Var weighted_sum(const std::vector<Var>& branches, const Var& weights) {
    require_valid(weights, "weighted_sum");
    if (branches.empty()) throw std::invalid_argument("weighted_sum: no branches");
    const Tensor& wv = weights.value();
    if (wv.rank() != 1 || static_cast<std::size_t>(wv.extent(0)) != branches.size()) {
        throw std::invalid_argument("weighted_sum: " + std::to_string(branches.size()) +
                                    " branches vs weights " + shape_string(wv.shape()));
    }
    Tensor y = scaled(branches[0].value(), wv[0]);
    std::vector<NodePtr> parents;
    parents.push_back(weights.node());
    parents.push_back(branches[0].node());
    for (std::size_t k = 1; k < branches.size(); ++k) {
        require_same_shape(y, branches[k].value(), "weighted_sum");
        const double wk = wv[k];
        const Tensor& bk = branches[k].value();
        for (std::size_t i = 0; i < y.size(); ++i) y[i] += wk * bk[i];
        parents.push_back(branches[k].node());
    }
    auto ps = parents;
    return Var::wrap(make_node(std::move(y), std::move(parents), [ps](const Tensor& g) {
        const NodePtr& pw = ps[0];
        const std::size_t kk = ps.size() - 1;
        if (pw->requires_grad) {
            Tensor gw({static_cast<int>(kk)});
            for (std::size_t k = 0; k < kk; ++k) gw[k] = dot(g, ps[k + 1]->value);
            detail::accumulate(pw, gw);
        }
        for (std::size_t k = 0; k < kk; ++k) {
            detail::accumulate(ps[k + 1], scaled(g, pw->value[k]));
        }
    }));
}

}  // namespace n2b::ad
