// PSNR and single-scale SSIM (uniform 8x8 windows, k1=0.01, k2=0.03).

#pragma once

#include <vector>

#include "n2b/tensor.hpp"

namespace n2b {

// 10 log10(peak^2 / MSE); +inf when the images are identical.
double psnr(const Tensor& a, const Tensor& b, double peak = 1.0);

double ssim(const Tensor& a, const Tensor& b, double peak = 1.0);

struct MetricsRecord {
    double psnr = 0.0;
    double ssim = 0.0;
};

MetricsRecord image_metrics(const Tensor& a, const Tensor& b, double peak = 1.0);

}  // namespace n2b
