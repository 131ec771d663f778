// Numerical substrate: periodic multi-channel convolution, orthonormal
// average pooling and its adjoint, ReLU, batch normalization, Adam, and the
// central-difference Jacobian used as an oracle throughout the tests.

#pragma once

#include <functional>

#include "n2b/linalg.hpp"
#include "n2b/tensor.hpp"

namespace n2b {

inline constexpr double kBnEps = 1e-5;
inline constexpr double kFdEps = 1e-6;
inline constexpr double kReluMargin = 1e-3;

enum class BnMode { off, linear_eval, train };

// Center-anchored odd-tap convolution kernel, 1-D [out, in, r] or
// 2-D [out, in, r, r]. flipped=true applies the kernel time-reversed
// (correlation, the encoder convention); flipped=false applies it directly.
struct KernelSpec {
    Tensor weights;

    KernelSpec() = default;
    explicit KernelSpec(Tensor w);

    int out_channels() const { return weights.extent(0); }
    int in_channels() const { return weights.extent(1); }
    int taps() const { return weights.extent(2); }
    int spatial_rank() const { return weights.rank() - 2; }
};

// Factor-2 orthonormal average pooling; the only pooling this project uses.
struct PoolSpec {
    int factor = 2;
};

Tensor periodic_conv(const Tensor& x, const KernelSpec& k, bool flipped);

// Batched variants over [B, C, spatial...]; used by the training graph.
Tensor conv_batched(const Tensor& x, const KernelSpec& k, bool flipped);
Tensor conv_batched_grad_input(const Tensor& grad_out, const KernelSpec& k, bool flipped);
Tensor conv_batched_grad_kernel(const Tensor& x, const Tensor& grad_out, const KernelSpec& k,
                                bool flipped);
KernelSpec transpose_io(const KernelSpec& k);

// Pool/unpool the last `spatial_axes` axes (all axes when negative).
// pool: out_i = (x_{2i} + x_{2i+1})/sqrt(2) per pooled axis; unpool is the
// exact adjoint, so pool(unpool(z)) == z.
Tensor pool(const Tensor& x, int spatial_axes = -1);
Tensor unpool(const Tensor& x, int spatial_axes = -1);

Tensor relu(const Tensor& x);
Tensor relu_pattern(const Tensor& x);  // 1.0 where x > 0, else 0.0

struct BatchNormState {
    Tensor running_var;  // per channel, initialised to ones
};

// x is [B, C, spatial...]; statistics are per channel over batch and space.
// train normalizes with batch statistics (no learned shift) and updates the
// running variance; linear_eval is the pure per-channel multiplication
// scale_c / sqrt(running_var_c + eps).
Tensor batch_norm(const Tensor& x, const Tensor& scale, BatchNormState* state, BnMode mode,
                  double eps = kBnEps, double momentum = 0.9);
std::vector<double> bn_linear_factors(const Tensor& scale, const BatchNormState& state,
                                      double eps = kBnEps);

struct AdamState {
    Tensor m, v;
    long step = 0;
};

void adam_step(Tensor& param, const Tensor& grad, AdamState& state, double lr, double beta1 = 0.9,
               double beta2 = 0.999, double eps = 1e-8);

// Central differences, column j = (f(x + eps e_j) - f(x - eps e_j)) / (2 eps).
DenseMatrix numerical_jacobian(const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                               double eps = kFdEps);

}  // namespace n2b
