// Small dense-matrix helpers used by the Jacobian diagnostics and the
// closed-form oracles. Row-major, desk scale only.

#pragma once

#include <vector>

namespace n2b {

struct DenseMatrix {
    int rows = 0, cols = 0;
    std::vector<double> a;  // row-major

    DenseMatrix() = default;
    DenseMatrix(int r, int c) : rows(r), cols(c), a(static_cast<std::size_t>(r) * c, 0.0) {}

    double& at(int i, int j) { return a[static_cast<std::size_t>(i) * cols + j]; }
    double at(int i, int j) const { return a[static_cast<std::size_t>(i) * cols + j]; }
};

DenseMatrix identity_matrix(int n);
DenseMatrix matmul(const DenseMatrix& a, const DenseMatrix& b);
std::vector<double> matvec(const DenseMatrix& a, const std::vector<double>& x);
double trace(const DenseMatrix& a);
double frobenius_norm(const DenseMatrix& a);

// Singular values in descending order (Golub-Reinsch, values only).
std::vector<double> singular_values(DenseMatrix a);

}  // namespace n2b
