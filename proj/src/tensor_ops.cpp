#include "n2b/tensor_ops.hpp"

#include <cmath>
#include <stdexcept>

namespace n2b {

KernelSpec::KernelSpec(Tensor w) : weights(std::move(w)) {
    if (weights.rank() != 3 && weights.rank() != 4) {
        throw std::invalid_argument("kernel weights must be [out,in,r] or [out,in,r,r], got " +
                                    shape_string(weights.shape()));
    }
    const int r = weights.extent(2);
    if (r <= 0 || r % 2 == 0) {
        throw std::invalid_argument("kernel taps must be odd and positive, got " + std::to_string(r));
    }
    if (weights.rank() == 4 && weights.extent(3) != r) {
        throw std::invalid_argument("2-D kernels must be square, got " +
                                    shape_string(weights.shape()));
    }
}

namespace {

// Wrap table for one axis: table[j] = (j - half) mod n for j in [0, n + 2*half).
std::vector<int> wrap_table(int n, int half) {
    std::vector<int> t(static_cast<std::size_t>(n + 2 * half));
    for (int j = 0; j < n + 2 * half; ++j) {
        int v = (j - half) % n;
        if (v < 0) v += n;
        t[static_cast<std::size_t>(j)] = v;
    }
    return t;
}

struct ConvDims {
    int in_ch, out_ch, taps, half, srank;
    std::vector<int> spatial;
    std::size_t plane;  // product of spatial extents
};

ConvDims conv_dims(const std::vector<int>& spatial, const KernelSpec& k) {
    ConvDims d;
    d.in_ch = k.in_channels();
    d.out_ch = k.out_channels();
    d.taps = k.taps();
    d.half = d.taps / 2;
    d.srank = k.spatial_rank();
    d.spatial = spatial;
    d.plane = shape_size(spatial);
    for (int e : spatial) {
        if (e < d.taps) {
            throw std::invalid_argument("signal extent " + std::to_string(e) +
                                        " smaller than kernel taps " + std::to_string(d.taps));
        }
    }
    return d;
}

// One sample: x [in_ch, plane] -> accumulate into y [out_ch, plane].
void conv_core(const double* x, double* y, const ConvDims& d, const Tensor& kw, bool flipped) {
    const int r = d.taps, h = d.half;
    if (d.srank == 1) {
        const int n = d.spatial[0];
        const auto tab = wrap_table(n, h);
        for (int o = 0; o < d.out_ch; ++o) {
            double* yo = y + static_cast<std::size_t>(o) * d.plane;
            for (int c = 0; c < d.in_ch; ++c) {
                const double* xc = x + static_cast<std::size_t>(c) * d.plane;
                const double* kr = kw.data() + (static_cast<std::size_t>(o) * d.in_ch + c) * r;
                for (int t = 0; t < r; ++t) {
                    const double coef = kr[t];
                    if (coef == 0.0) continue;
                    const int u = flipped ? t : (r - 1 - t);
                    for (int i = 0; i < n; ++i) yo[i] += coef * xc[tab[static_cast<std::size_t>(i + u)]];
                }
            }
        }
        return;
    }
    const int hh = d.spatial[0], ww = d.spatial[1];
    const auto ti = wrap_table(hh, h);
    for (int o = 0; o < d.out_ch; ++o) {
        double* yo = y + static_cast<std::size_t>(o) * d.plane;
        for (int c = 0; c < d.in_ch; ++c) {
            const double* xc = x + static_cast<std::size_t>(c) * d.plane;
            const double* kk = kw.data() + (static_cast<std::size_t>(o) * d.in_ch + c) * r * r;
            for (int t1 = 0; t1 < r; ++t1) {
                const int u1 = flipped ? t1 : (r - 1 - t1);
                for (int t2 = 0; t2 < r; ++t2) {
                    const double coef = kk[t1 * r + t2];
                    if (coef == 0.0) continue;
                    const int delta = (flipped ? t2 : (r - 1 - t2)) - h;
                    for (int i = 0; i < hh; ++i) {
                        const double* xrow =
                            xc + static_cast<std::size_t>(ti[static_cast<std::size_t>(i + u1)]) * ww;
                        double* yrow = yo + static_cast<std::size_t>(i) * ww;
                        // split the column loop into wrap-free segments
                        if (delta >= 0) {
                            for (int j = 0; j < ww - delta; ++j) yrow[j] += coef * xrow[j + delta];
                            for (int j = ww - delta; j < ww; ++j) yrow[j] += coef * xrow[j + delta - ww];
                        } else {
                            for (int j = 0; j < -delta; ++j) yrow[j] += coef * xrow[j + delta + ww];
                            for (int j = -delta; j < ww; ++j) yrow[j] += coef * xrow[j + delta];
                        }
                    }
                }
            }
        }
    }
}

// dk[o,c,t..] = sum_s g[o,s] * x[c, src(s,t)], same source indexing as the
// forward pass.
void conv_kernel_grad_core(const double* x, const double* g, double* dk, const ConvDims& d,
                           bool flipped) {
    const int r = d.taps, h = d.half;
    if (d.srank == 1) {
        const int n = d.spatial[0];
        const auto tab = wrap_table(n, h);
        for (int o = 0; o < d.out_ch; ++o) {
            const double* go = g + static_cast<std::size_t>(o) * d.plane;
            for (int c = 0; c < d.in_ch; ++c) {
                const double* xc = x + static_cast<std::size_t>(c) * d.plane;
                double* kr = dk + (static_cast<std::size_t>(o) * d.in_ch + c) * r;
                for (int t = 0; t < r; ++t) {
                    const int u = flipped ? t : (r - 1 - t);
                    double acc = 0.0;
                    for (int i = 0; i < n; ++i) acc += go[i] * xc[tab[static_cast<std::size_t>(i + u)]];
                    kr[t] += acc;
                }
            }
        }
        return;
    }
    const int hh = d.spatial[0], ww = d.spatial[1];
    const auto ti = wrap_table(hh, h);
    for (int o = 0; o < d.out_ch; ++o) {
        const double* go = g + static_cast<std::size_t>(o) * d.plane;
        for (int c = 0; c < d.in_ch; ++c) {
            const double* xc = x + static_cast<std::size_t>(c) * d.plane;
            double* kk = dk + (static_cast<std::size_t>(o) * d.in_ch + c) * r * r;
            for (int t1 = 0; t1 < r; ++t1) {
                const int u1 = flipped ? t1 : (r - 1 - t1);
                for (int t2 = 0; t2 < r; ++t2) {
                    const int delta = (flipped ? t2 : (r - 1 - t2)) - h;
                    double acc = 0.0;
                    for (int i = 0; i < hh; ++i) {
                        const double* xrow =
                            xc + static_cast<std::size_t>(ti[static_cast<std::size_t>(i + u1)]) * ww;
                        const double* grow = go + static_cast<std::size_t>(i) * ww;
                        if (delta >= 0) {
                            for (int j = 0; j < ww - delta; ++j) acc += grow[j] * xrow[j + delta];
                            for (int j = ww - delta; j < ww; ++j) acc += grow[j] * xrow[j + delta - ww];
                        } else {
                            for (int j = 0; j < -delta; ++j) acc += grow[j] * xrow[j + delta + ww];
                            for (int j = -delta; j < ww; ++j) acc += grow[j] * xrow[j + delta];
                        }
                    }
                    kk[t1 * r + t2] += acc;
                }
            }
        }
    }
}

std::vector<int> spatial_of(const Tensor& x, int srank, int expected_in, const char* what) {
    const int xr = x.rank();
    if (xr != srank && xr != srank + 1) {
        throw std::invalid_argument(std::string(what) + ": input shape " + shape_string(x.shape()) +
                                    " incompatible with kernel spatial rank " + std::to_string(srank));
    }
    const int ch = (xr == srank) ? 1 : x.extent(0);
    if (ch != expected_in) {
        throw std::invalid_argument(std::string(what) + ": input has " + std::to_string(ch) +
                                    " channels, kernel expects " + std::to_string(expected_in) +
                                    " (input " + shape_string(x.shape()) + ")");
    }
    std::vector<int> sp(x.shape().end() - srank, x.shape().end());
    return sp;
}

}  // namespace

Tensor periodic_conv(const Tensor& x, const KernelSpec& k, bool flipped) {
    const int srank = k.spatial_rank();
    const auto sp = spatial_of(x, srank, k.in_channels(), "periodic_conv");
    const ConvDims d = conv_dims(sp, k);
    const bool bare = (x.rank() == srank);
    std::vector<int> out_shape;
    if (bare && d.out_ch == 1) {
        out_shape = sp;
    } else {
        out_shape.push_back(d.out_ch);
        out_shape.insert(out_shape.end(), sp.begin(), sp.end());
    }
    Tensor y(out_shape);
    conv_core(x.data(), y.data(), d, k.weights, flipped);
    return y;
}

Tensor conv_batched(const Tensor& x, const KernelSpec& k, bool flipped) {
    const int srank = k.spatial_rank();
    if (x.rank() != srank + 2) {
        throw std::invalid_argument("conv_batched expects [B,C,spatial...], got " +
                                    shape_string(x.shape()));
    }
    if (x.extent(1) != k.in_channels()) {
        throw std::invalid_argument("conv_batched: channel mismatch, input " +
                                    shape_string(x.shape()) + " vs kernel " +
                                    shape_string(k.weights.shape()));
    }
    const int batch = x.extent(0);
    std::vector<int> sp(x.shape().begin() + 2, x.shape().end());
    const ConvDims d = conv_dims(sp, k);
    std::vector<int> out_shape = {batch, d.out_ch};
    out_shape.insert(out_shape.end(), sp.begin(), sp.end());
    Tensor y(out_shape);
    const std::size_t in_stride = static_cast<std::size_t>(d.in_ch) * d.plane;
    const std::size_t out_stride = static_cast<std::size_t>(d.out_ch) * d.plane;
    for (int b = 0; b < batch; ++b) {
        conv_core(x.data() + b * in_stride, y.data() + b * out_stride, d, k.weights, flipped);
    }
    return y;
}

KernelSpec transpose_io(const KernelSpec& k) {
    const int out = k.out_channels(), in = k.in_channels(), r = k.taps();
    const int srank = k.spatial_rank();
    const std::size_t tap_block = (srank == 1) ? static_cast<std::size_t>(r)
                                               : static_cast<std::size_t>(r) * r;
    std::vector<int> shape = {in, out, r};
    if (srank == 2) shape.push_back(r);
    Tensor w(shape);
    for (int o = 0; o < out; ++o) {
        for (int c = 0; c < in; ++c) {
            const double* src = k.weights.data() + (static_cast<std::size_t>(o) * in + c) * tap_block;
            double* dst = w.data() + (static_cast<std::size_t>(c) * out + o) * tap_block;
            for (std::size_t t = 0; t < tap_block; ++t) dst[t] = src[t];
        }
    }
    return KernelSpec(std::move(w));
}

Tensor conv_batched_grad_input(const Tensor& grad_out, const KernelSpec& k, bool flipped) {
    // adjoint of conv(.,k,flipped) is conv(.,k^T,!flipped)
    return conv_batched(grad_out, transpose_io(k), !flipped);
}

Tensor conv_batched_grad_kernel(const Tensor& x, const Tensor& grad_out, const KernelSpec& k,
                                bool flipped) {
    const int batch = x.extent(0);
    std::vector<int> sp(x.shape().begin() + 2, x.shape().end());
    const ConvDims d = conv_dims(sp, k);
    Tensor dk(k.weights.shape());
    const std::size_t in_stride = static_cast<std::size_t>(d.in_ch) * d.plane;
    const std::size_t out_stride = static_cast<std::size_t>(d.out_ch) * d.plane;
    for (int b = 0; b < batch; ++b) {
        conv_kernel_grad_core(x.data() + b * in_stride, grad_out.data() + b * out_stride, dk.data(),
                              d, flipped);
    }
    return dk;
}

namespace {

constexpr double kInvSqrt2 = 0.70710678118654752440084436210485;

// Pool/unpool one axis, viewing the tensor as [outer, n, inner].
Tensor pool_axis(const Tensor& x, int axis) {
    const int n = x.extent(axis);
    if (n % 2 != 0) {
        throw std::invalid_argument("pool: axis " + std::to_string(axis) + " has odd extent " +
                                    std::to_string(n) + " in shape " + shape_string(x.shape()));
    }
    std::vector<int> out_shape = x.shape();
    out_shape[static_cast<std::size_t>(axis)] = n / 2;
    Tensor y(out_shape);
    std::size_t outer = 1, inner = 1;
    for (int d = 0; d < axis; ++d) outer *= static_cast<std::size_t>(x.extent(d));
    for (int d = axis + 1; d < x.rank(); ++d) inner *= static_cast<std::size_t>(x.extent(d));
    for (std::size_t a = 0; a < outer; ++a) {
        const double* xs = x.data() + a * static_cast<std::size_t>(n) * inner;
        double* ys = y.data() + a * static_cast<std::size_t>(n / 2) * inner;
        for (int i = 0; i < n / 2; ++i) {
            const double* x0 = xs + static_cast<std::size_t>(2 * i) * inner;
            const double* x1 = xs + static_cast<std::size_t>(2 * i + 1) * inner;
            double* yr = ys + static_cast<std::size_t>(i) * inner;
            for (std::size_t j = 0; j < inner; ++j) yr[j] = (x0[j] + x1[j]) * kInvSqrt2;
        }
    }
    return y;
}

Tensor unpool_axis(const Tensor& x, int axis) {
    const int n = x.extent(axis);
    std::vector<int> out_shape = x.shape();
    out_shape[static_cast<std::size_t>(axis)] = 2 * n;
    Tensor y(out_shape);
    std::size_t outer = 1, inner = 1;
    for (int d = 0; d < axis; ++d) outer *= static_cast<std::size_t>(x.extent(d));
    for (int d = axis + 1; d < x.rank(); ++d) inner *= static_cast<std::size_t>(x.extent(d));
    for (std::size_t a = 0; a < outer; ++a) {
        const double* xs = x.data() + a * static_cast<std::size_t>(n) * inner;
        double* ys = y.data() + a * static_cast<std::size_t>(2 * n) * inner;
        for (int i = 0; i < n; ++i) {
            const double* xr = xs + static_cast<std::size_t>(i) * inner;
            double* y0 = ys + static_cast<std::size_t>(2 * i) * inner;
            double* y1 = ys + static_cast<std::size_t>(2 * i + 1) * inner;
            for (std::size_t j = 0; j < inner; ++j) {
                const double v = xr[j] * kInvSqrt2;
                y0[j] = v;
                y1[j] = v;
            }
        }
    }
    return y;
}

}  // namespace

Tensor pool(const Tensor& x, int spatial_axes) {
    const int k = spatial_axes < 0 ? x.rank() : spatial_axes;
    Tensor out = x;
    for (int axis = x.rank() - k; axis < x.rank(); ++axis) out = pool_axis(out, axis);
    return out;
}

Tensor unpool(const Tensor& x, int spatial_axes) {
    const int k = spatial_axes < 0 ? x.rank() : spatial_axes;
    Tensor out = x;
    for (int axis = x.rank() - k; axis < x.rank(); ++axis) out = unpool_axis(out, axis);
    return out;
}

Tensor relu(const Tensor& x) {
    Tensor y = x;
    for (std::size_t i = 0; i < y.size(); ++i)
        if (y[i] < 0.0) y[i] = 0.0;
    return y;
}

Tensor relu_pattern(const Tensor& x) {
    Tensor p(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) p[i] = x[i] > 0.0 ? 1.0 : 0.0;
    return p;
}

Tensor batch_norm(const Tensor& x, const Tensor& scale, BatchNormState* state, BnMode mode,
                  double eps, double momentum) {
    if (mode == BnMode::off) return x;
    if (x.rank() < 2) {
        throw std::invalid_argument("batch_norm expects [B,C,spatial...], got " +
                                    shape_string(x.shape()));
    }
    const int batch = x.extent(0), ch = x.extent(1);
    if (scale.rank() != 1 || scale.extent(0) != ch) {
        throw std::invalid_argument("batch_norm: scale shape " + shape_string(scale.shape()) +
                                    " does not match " + std::to_string(ch) + " channels");
    }
    std::size_t plane = 1;
    for (int d = 2; d < x.rank(); ++d) plane *= static_cast<std::size_t>(x.extent(d));
    Tensor y(x.shape());

    if (mode == BnMode::linear_eval) {
        if (!state) throw std::invalid_argument("batch_norm linear_eval requires running statistics");
        const auto f = bn_linear_factors(scale, *state, eps);
        for (int b = 0; b < batch; ++b) {
            for (int c = 0; c < ch; ++c) {
                const std::size_t base = (static_cast<std::size_t>(b) * ch + c) * plane;
                for (std::size_t j = 0; j < plane; ++j) y[base + j] = f[static_cast<std::size_t>(c)] * x[base + j];
            }
        }
        return y;
    }

    if (batch < 2) throw std::invalid_argument("batch_norm train mode requires batch >= 2");
    const double count = static_cast<double>(batch) * static_cast<double>(plane);
    for (int c = 0; c < ch; ++c) {
        double m = 0.0;
        for (int b = 0; b < batch; ++b) {
            const std::size_t base = (static_cast<std::size_t>(b) * ch + c) * plane;
            for (std::size_t j = 0; j < plane; ++j) m += x[base + j];
        }
        m /= count;
        double v = 0.0;
        for (int b = 0; b < batch; ++b) {
            const std::size_t base = (static_cast<std::size_t>(b) * ch + c) * plane;
            for (std::size_t j = 0; j < plane; ++j) {
                const double d = x[base + j] - m;
                v += d * d;
            }
        }
        v /= count;
        const double f = scale[static_cast<std::size_t>(c)] / std::sqrt(v + eps);
        for (int b = 0; b < batch; ++b) {
            const std::size_t base = (static_cast<std::size_t>(b) * ch + c) * plane;
            for (std::size_t j = 0; j < plane; ++j) y[base + j] = f * (x[base + j] - m);
        }
        if (state) {
            state->running_var[static_cast<std::size_t>(c)] =
                momentum * state->running_var[static_cast<std::size_t>(c)] + (1.0 - momentum) * v;
        }
    }
    return y;
}

std::vector<double> bn_linear_factors(const Tensor& scale, const BatchNormState& state, double eps) {
    const std::size_t ch = scale.size();
    if (state.running_var.size() != ch) {
        throw std::invalid_argument("bn_linear_factors: running variance size mismatch");
    }
    std::vector<double> f(ch);
    for (std::size_t c = 0; c < ch; ++c) f[c] = scale[c] / std::sqrt(state.running_var[c] + eps);
    return f;
}

void adam_step(Tensor& param, const Tensor& grad, AdamState& state, double lr, double beta1,
               double beta2, double eps) {
    require_same_shape(param, grad, "adam_step");
    if (state.m.empty()) {
        state.m = Tensor::zeros(param.shape());
        state.v = Tensor::zeros(param.shape());
        state.step = 0;
    }
    require_same_shape(param, state.m, "adam_step state");
    state.step += 1;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(state.step));
    for (std::size_t i = 0; i < param.size(); ++i) {
        state.m[i] = beta1 * state.m[i] + (1.0 - beta1) * grad[i];
        state.v[i] = beta2 * state.v[i] + (1.0 - beta2) * grad[i] * grad[i];
        const double mhat = state.m[i] / bc1;
        const double vhat = state.v[i] / bc2;
        param[i] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
}

DenseMatrix numerical_jacobian(const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                               double eps) {
    const int n = static_cast<int>(x.size());
    Tensor probe = x;
    probe[0] += 0.0;  // force a copy we can mutate
    const Tensor y0 = f(x);
    const int m = static_cast<int>(y0.size());
    DenseMatrix jac(m, n);
    for (int j = 0; j < n; ++j) {
        const double saved = probe[static_cast<std::size_t>(j)];
        probe[static_cast<std::size_t>(j)] = saved + eps;
        const Tensor yp = f(probe);
        probe[static_cast<std::size_t>(j)] = saved - eps;
        const Tensor ym = f(probe);
        probe[static_cast<std::size_t>(j)] = saved;
        for (int i = 0; i < m; ++i) {
            jac.at(i, j) = (yp[static_cast<std::size_t>(i)] - ym[static_cast<std::size_t>(i)]) / (2.0 * eps);
        }
    }
    return jac;
}

}  // namespace n2b
