// Realizations of the random input-selection variable L: Bernoulli bootstrap
// masks and random multiplicative weight masks, plus the noisy-augmentation
// transform. Every draw is a pure function of (parameters, seed); mask k of a
// set uses the substream mix_seed(base_seed, k) so draws are order-free.

#pragma once

#include <cstdint>
#include <vector>

#include "n2b/rng.hpp"
#include "n2b/tensor.hpp"

namespace n2b {

enum class MaskKind { bernoulli, weights };

struct MaskPattern {
    MaskKind kind = MaskKind::bernoulli;
    Tensor values;       // same shape as the masked input
    double p = 1.0;      // mean value of the entries
    std::uint64_t seed = 0;
};

MaskPattern draw_bernoulli_mask(const std::vector<int>& shape, double p, std::uint64_t seed);
MaskPattern draw_weight_mask(const std::vector<int>& shape, double lo, double hi,
                             std::uint64_t seed);
MaskPattern all_ones_mask(const std::vector<int>& shape);

Tensor apply_mask(const Tensor& x, const MaskPattern& mask);

// x + N(0, sigma^2 I) with sigma ~ Uniform[sigma_lo, sigma_hi] drawn once per
// call; applied to the measurement itself, never to a clean reference.
Tensor noise_augment(const Tensor& x, double sigma_lo, double sigma_hi, std::uint64_t seed);

struct BoostConfig {
    int k = 8;
    MaskKind kind = MaskKind::weights;
    double p = 0.9;           // bernoulli inclusion probability
    double lo = 0.8, hi = 1.2;  // weight mask range
    std::uint64_t base_seed = 0;

    double mean_value() const { return kind == MaskKind::bernoulli ? p : 0.5 * (lo + hi); }
};

MaskPattern draw_mask(const BoostConfig& cfg, const std::vector<int>& shape, int index);
std::vector<MaskPattern> draw_mask_set(const BoostConfig& cfg, const std::vector<int>& shape);

}  // namespace n2b
