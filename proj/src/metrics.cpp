#include "n2b/metrics.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace n2b {

double psnr(const Tensor& a, const Tensor& b, double peak) {
    require_same_shape(a, b, "psnr");
    double mse = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        mse += d * d;
    }
    mse /= static_cast<double>(a.size());
    if (mse == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(peak * peak / mse);
}

double ssim(const Tensor& a, const Tensor& b, double peak) {
    require_same_shape(a, b, "ssim");
    if (a.rank() != 2) {
        throw std::invalid_argument("ssim expects 2-D images, got " + shape_string(a.shape()));
    }
    const int h = a.extent(0), w = a.extent(1);
    const int win = 8;
    if (h < win || w < win) throw std::invalid_argument("ssim: image smaller than 8x8 window");
    const double c1 = (0.01 * peak) * (0.01 * peak);
    const double c2 = (0.03 * peak) * (0.03 * peak);
    const double inv_n = 1.0 / (win * win);

    double acc = 0.0;
    long count = 0;
    for (int i = 0; i + win <= h; ++i) {
        for (int j = 0; j + win <= w; ++j) {
            double ma = 0.0, mb = 0.0;
            for (int u = 0; u < win; ++u)
                for (int v = 0; v < win; ++v) {
                    ma += a[static_cast<std::size_t>((i + u) * w + j + v)];
                    mb += b[static_cast<std::size_t>((i + u) * w + j + v)];
                }
            ma *= inv_n;
            mb *= inv_n;
            double va = 0.0, vb = 0.0, cov = 0.0;
            for (int u = 0; u < win; ++u)
                for (int v = 0; v < win; ++v) {
                    const double da = a[static_cast<std::size_t>((i + u) * w + j + v)] - ma;
                    const double db = b[static_cast<std::size_t>((i + u) * w + j + v)] - mb;
                    va += da * da;
                    vb += db * db;
                    cov += da * db;
                }
            va *= inv_n;
            vb *= inv_n;
            cov *= inv_n;
            const double num = (2.0 * ma * mb + c1) * (2.0 * cov + c2);
            const double den = (ma * ma + mb * mb + c1) * (va + vb + c2);
            acc += num / den;
            ++count;
        }
    }
    return acc / static_cast<double>(count);
}

MetricsRecord image_metrics(const Tensor& a, const Tensor& b, double peak) {
    return MetricsRecord{psnr(a, b, peak), ssim(a, b, peak)};
}

}  // namespace n2b
