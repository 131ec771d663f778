#include "n2b/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace n2b {

DenseMatrix identity_matrix(int n) {
    DenseMatrix m(n, n);
    for (int i = 0; i < n; ++i) m.at(i, i) = 1.0;
    return m;
}

DenseMatrix matmul(const DenseMatrix& a, const DenseMatrix& b) {
    if (a.cols != b.rows) throw std::invalid_argument("matmul: inner dimensions differ");
    DenseMatrix c(a.rows, b.cols);
    for (int i = 0; i < a.rows; ++i) {
        for (int k = 0; k < a.cols; ++k) {
            const double aik = a.at(i, k);
            if (aik == 0.0) continue;
            for (int j = 0; j < b.cols; ++j) c.at(i, j) += aik * b.at(k, j);
        }
    }
    return c;
}

std::vector<double> matvec(const DenseMatrix& a, const std::vector<double>& x) {
    if (static_cast<int>(x.size()) != a.cols) throw std::invalid_argument("matvec: size mismatch");
    std::vector<double> y(static_cast<std::size_t>(a.rows), 0.0);
    for (int i = 0; i < a.rows; ++i) {
        double acc = 0.0;
        for (int j = 0; j < a.cols; ++j) acc += a.at(i, j) * x[j];
        y[static_cast<std::size_t>(i)] = acc;
    }
    return y;
}

double trace(const DenseMatrix& a) {
    const int n = std::min(a.rows, a.cols);
    double t = 0.0;
    for (int i = 0; i < n; ++i) t += a.at(i, i);
    return t;
}

double frobenius_norm(const DenseMatrix& a) {
    double s = 0.0;
    for (double v : a.a) s += v * v;
    return std::sqrt(s);
}

namespace {

inline double sign_of(double a, double b) { return b >= 0.0 ? std::fabs(a) : -std::fabs(a); }

}  // namespace

// Golub-Reinsch: Householder bidiagonalization followed by implicit-shift QR
// on the bidiagonal. Singular vectors are never accumulated.
std::vector<double> singular_values(DenseMatrix mat) {
    if (mat.rows < mat.cols) {  // work with m >= n
        DenseMatrix t(mat.cols, mat.rows);
        for (int i = 0; i < mat.rows; ++i)
            for (int j = 0; j < mat.cols; ++j) t.at(j, i) = mat.at(i, j);
        mat = std::move(t);
    }
    const int m = mat.rows, n = mat.cols;
    if (n == 0) return {};
    auto a = [&](int i, int j) -> double& { return mat.at(i, j); };

    std::vector<double> w(static_cast<std::size_t>(n), 0.0);
    std::vector<double> rv1(static_cast<std::size_t>(n), 0.0);
    double g = 0.0, scale = 0.0, anorm = 0.0;

    for (int i = 0; i < n; ++i) {
        const int l = i + 1;
        rv1[i] = scale * g;
        g = scale = 0.0;
        double s = 0.0;
        if (i < m) {
            for (int k = i; k < m; ++k) scale += std::fabs(a(k, i));
            if (scale != 0.0) {
                for (int k = i; k < m; ++k) {
                    a(k, i) /= scale;
                    s += a(k, i) * a(k, i);
                }
                double f = a(i, i);
                g = -sign_of(std::sqrt(s), f);
                const double h = f * g - s;
                a(i, i) = f - g;
                if (l < n) {
                    // row sweeps keep the update cache friendly
                    std::vector<double> acc(static_cast<std::size_t>(n - l), 0.0);
                    for (int k = i; k < m; ++k) {
                        const double aki = a(k, i);
                        const double* row = &mat.a[static_cast<std::size_t>(k) * n];
                        for (int j = l; j < n; ++j) acc[static_cast<std::size_t>(j - l)] += aki * row[j];
                    }
                    for (double& v : acc) v /= h;
                    for (int k = i; k < m; ++k) {
                        const double aki = a(k, i);
                        double* row = &mat.a[static_cast<std::size_t>(k) * n];
                        for (int j = l; j < n; ++j) row[j] += acc[static_cast<std::size_t>(j - l)] * aki;
                    }
                }
                for (int k = i; k < m; ++k) a(k, i) *= scale;
            }
        }
        w[i] = scale * g;
        g = scale = 0.0;
        s = 0.0;
        if (i < m && i != n - 1) {
            for (int k = l; k < n; ++k) scale += std::fabs(a(i, k));
            if (scale != 0.0) {
                for (int k = l; k < n; ++k) {
                    a(i, k) /= scale;
                    s += a(i, k) * a(i, k);
                }
                double f = a(i, l);
                g = -sign_of(std::sqrt(s), f);
                const double h = f * g - s;
                a(i, l) = f - g;
                for (int k = l; k < n; ++k) rv1[k] = a(i, k) / h;
                for (int j = l; j < m; ++j) {
                    double acc = 0.0;
                    for (int k = l; k < n; ++k) acc += a(j, k) * a(i, k);
                    for (int k = l; k < n; ++k) a(j, k) += acc * rv1[k];
                }
                for (int k = l; k < n; ++k) a(i, k) *= scale;
            }
        }
        anorm = std::max(anorm, std::fabs(w[i]) + std::fabs(rv1[i]));
    }

    for (int k = n - 1; k >= 0; --k) {
        for (int its = 0;; ++its) {
            bool flag = true;
            int l = k, nm = 0;
            for (; l >= 0; --l) {
                nm = l - 1;
                if (std::fabs(rv1[l]) + anorm == anorm) {
                    flag = false;
                    break;
                }
                if (std::fabs(w[nm]) + anorm == anorm) break;
            }
            if (flag) {
                double c = 0.0, s = 1.0;
                for (int i = l; i <= k; ++i) {
                    double f = s * rv1[i];
                    rv1[i] = c * rv1[i];
                    if (std::fabs(f) + anorm == anorm) break;
                    g = w[i];
                    double h = std::hypot(f, g);
                    w[i] = h;
                    h = 1.0 / h;
                    c = g * h;
                    s = -f * h;
                }
            }
            double z = w[k];
            if (l == k) {
                if (z < 0.0) w[k] = -z;
                break;
            }
            if (its >= 60) throw std::runtime_error("singular_values: QR iteration stalled");
            double x = w[l];
            nm = k - 1;
            double y = w[nm];
            g = rv1[nm];
            double h = rv1[k];
            double f = ((y - z) * (y + z) + (g - h) * (g + h)) / (2.0 * h * y);
            g = std::hypot(f, 1.0);
            f = ((x - z) * (x + z) + h * ((y / (f + sign_of(g, f))) - h)) / x;
            double c = 1.0, s = 1.0;
            for (int j = l; j <= nm; ++j) {
                const int i = j + 1;
                g = rv1[i];
                y = w[i];
                h = s * g;
                g = c * g;
                z = std::hypot(f, h);
                rv1[j] = z;
                c = f / z;
                s = h / z;
                f = x * c + g * s;
                g = g * c - x * s;
                h = y * s;
                y *= c;
                z = std::hypot(f, h);
                w[j] = z;
                if (z != 0.0) {
                    z = 1.0 / z;
                    c = f * z;
                    s = h * z;
                }
                f = c * g + s * y;
                x = c * y - s * g;
            }
            rv1[l] = 0.0;
            rv1[k] = f;
            w[k] = x;
        }
    }

    std::sort(w.begin(), w.end(), std::greater<double>());
    return w;
}

}  // namespace n2b
