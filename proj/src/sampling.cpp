#include "n2b/sampling.hpp"

#include <stdexcept>

namespace n2b {

MaskPattern draw_bernoulli_mask(const std::vector<int>& shape, double p, std::uint64_t seed) {
    if (p < 0.0 || p > 1.0) {
        throw std::invalid_argument("draw_bernoulli_mask: p = " + std::to_string(p) +
                                    " outside [0,1]");
    }
    MaskPattern m;
    m.kind = MaskKind::bernoulli;
    m.p = p;
    m.seed = seed;
    m.values = Tensor(shape);
    RngStream rng(seed);
    for (std::size_t i = 0; i < m.values.size(); ++i) {
        m.values[i] = rng.uniform01() < p ? 1.0 : 0.0;
    }
    return m;
}

MaskPattern draw_weight_mask(const std::vector<int>& shape, double lo, double hi,
                             std::uint64_t seed) {
    if (!(lo < hi)) {
        throw std::invalid_argument("draw_weight_mask: requires lo < hi, got [" +
                                    std::to_string(lo) + "," + std::to_string(hi) + "]");
    }
    MaskPattern m;
    m.kind = MaskKind::weights;
    m.p = 0.5 * (lo + hi);
    m.seed = seed;
    m.values = Tensor(shape);
    RngStream rng(seed);
    for (std::size_t i = 0; i < m.values.size(); ++i) m.values[i] = rng.uniform(lo, hi);
    return m;
}

MaskPattern all_ones_mask(const std::vector<int>& shape) {
    MaskPattern m;
    m.kind = MaskKind::bernoulli;
    m.p = 1.0;
    m.seed = 0;
    m.values = Tensor::ones(shape);
    return m;
}

Tensor apply_mask(const Tensor& x, const MaskPattern& mask) {
    require_same_shape(x, mask.values, "apply_mask");
    return mul(x, mask.values);
}

Tensor noise_augment(const Tensor& x, double sigma_lo, double sigma_hi, std::uint64_t seed) {
    if (sigma_lo < 0.0 || sigma_hi < sigma_lo) {
        throw std::invalid_argument("noise_augment: need 0 <= sigma_lo <= sigma_hi");
    }
    RngStream rng(seed);
    const double sigma = rng.uniform(sigma_lo, sigma_hi);
    Tensor y = x;
    if (sigma == 0.0) return y;
    for (std::size_t i = 0; i < y.size(); ++i) y[i] += sigma * rng.normal();
    return y;
}

MaskPattern draw_mask(const BoostConfig& cfg, const std::vector<int>& shape, int index) {
    const std::uint64_t seed = mix_seed(cfg.base_seed, static_cast<std::uint64_t>(index));
    if (cfg.kind == MaskKind::bernoulli) return draw_bernoulli_mask(shape, cfg.p, seed);
    return draw_weight_mask(shape, cfg.lo, cfg.hi, seed);
}

std::vector<MaskPattern> draw_mask_set(const BoostConfig& cfg, const std::vector<int>& shape) {
    if (cfg.k < 1) throw std::invalid_argument("BoostConfig: k must be >= 1");
    std::vector<MaskPattern> masks;
    masks.reserve(static_cast<std::size_t>(cfg.k));
    for (int i = 0; i < cfg.k; ++i) masks.push_back(draw_mask(cfg, shape, i));
    return masks;
}

}  // namespace n2b
