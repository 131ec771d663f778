#include "n2b/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "n2b/rng.hpp"

namespace n2b {

DataKind data_kind_from_string(const std::string& s) {
    if (s == "blocks") return DataKind::blocks;
    if (s == "bumps") return DataKind::bumps;
    if (s == "mixed") return DataKind::mixed;
    throw std::invalid_argument("unknown dataset kind '" + s + "' (blocks|bumps|mixed)");
}

std::string data_kind_name(DataKind k) {
    switch (k) {
        case DataKind::blocks: return "blocks";
        case DataKind::bumps: return "bumps";
        case DataKind::mixed: return "mixed";
    }
    return "?";
}

namespace {

void draw_blocks(Tensor& img, int h, int w, RngStream& rng) {
    const double bg = rng.uniform(0.05, 0.25);
    img.fill(bg);
    const int count = 3 + static_cast<int>(rng.below(4));
    for (int r = 0; r < count; ++r) {
        const int bh = 2 + static_cast<int>(rng.below(static_cast<std::uint64_t>(h / 2)));
        const int bw = 2 + static_cast<int>(rng.below(static_cast<std::uint64_t>(w / 2)));
        const int i0 = static_cast<int>(rng.below(static_cast<std::uint64_t>(h - bh + 1)));
        const int j0 = static_cast<int>(rng.below(static_cast<std::uint64_t>(w - bw + 1)));
        const double level = rng.uniform(0.2, 1.0);
        for (int i = i0; i < i0 + bh; ++i)
            for (int j = j0; j < j0 + bw; ++j) img[static_cast<std::size_t>(i * w + j)] = level;
    }
}

void draw_bumps(Tensor& img, int h, int w, RngStream& rng) {
    const double bg = rng.uniform(0.0, 0.15);
    img.fill(bg);
    const int count = 2 + static_cast<int>(rng.below(4));
    for (int r = 0; r < count; ++r) {
        const double ci = rng.uniform(0.0, h - 1.0);
        const double cj = rng.uniform(0.0, w - 1.0);
        const double radius = rng.uniform(1.5, std::max(2.0, h / 4.0));
        const double amp = rng.uniform(0.2, 0.8);
        const double inv_2r2 = 1.0 / (2.0 * radius * radius);
        for (int i = 0; i < h; ++i)
            for (int j = 0; j < w; ++j) {
                const double d2 = (i - ci) * (i - ci) + (j - cj) * (j - cj);
                img[static_cast<std::size_t>(i * w + j)] += amp * std::exp(-d2 * inv_2r2);
            }
    }
    for (std::size_t i = 0; i < img.size(); ++i) img[i] = std::clamp(img[i], 0.0, 1.0);
}

}  // namespace

Dataset gen_synthetic_dataset(DataKind kind, int height, int width, int count,
                              std::uint64_t seed) {
    if (height < 4 || width < 4) throw std::invalid_argument("gen_synthetic_dataset: image too small");
    Dataset data;
    data.clean.reserve(static_cast<std::size_t>(count));
    for (int idx = 0; idx < count; ++idx) {
        RngStream rng(mix_seed(seed, {0x696d67ULL, static_cast<std::uint64_t>(idx)}));
        Tensor img({height, width});
        DataKind k = kind;
        if (kind == DataKind::mixed) k = (rng.next_u64() & 1) ? DataKind::blocks : DataKind::bumps;
        if (k == DataKind::blocks) {
            draw_blocks(img, height, width, rng);
        } else {
            draw_bumps(img, height, width, rng);
        }
        data.clean.push_back(std::move(img));
    }
    return data;
}

std::vector<Tensor> add_noise(const std::vector<Tensor>& clean, double sigma, std::uint64_t seed) {
    std::vector<Tensor> noisy;
    noisy.reserve(clean.size());
    for (std::size_t idx = 0; idx < clean.size(); ++idx) {
        RngStream rng(mix_seed(seed, {0x6e6f6973ULL, idx}));
        Tensor x = clean[idx];
        for (std::size_t i = 0; i < x.size(); ++i) x[i] += sigma * rng.normal();
        noisy.push_back(std::move(x));
    }
    return noisy;
}

}  // namespace n2b
