// Divergence (Jacobian trace) of the network map: the exact route through the
// frozen linear operator, the Monte-Carlo probing estimator, and the dense
// Jacobian spectrum diagnostic.

#pragma once

#include <cstdint>

#include "n2b/linalg.hpp"
#include "n2b/network.hpp"

namespace n2b {

// Tr(J(x)) via one linearized apply per input coordinate. Requires a
// frame-analyzable configuration.
double divergence_exact(const Network& net, const Tensor& x);

// Divergence of x -> F(mask ⊙ x) with respect to x (the mask Jacobian
// diag(mask) composed in by the chain rule).
double divergence_exact_masked(const Network& net, const Tensor& x, const Tensor& mask);

struct HutchinsonResult {
    double mean = 0.0;
    double stderr_ = 0.0;
    int probes = 0;
    std::uint64_t seed = 0;
};

// Gaussian probing: mean over b ~ N(0,I) of b'(F(x + eps b) - F(x))/eps.
HutchinsonResult divergence_hutchinson(const Network& net, const Tensor& x, double probe_eps,
                                       int n_probes, std::uint64_t seed);
HutchinsonResult divergence_hutchinson_masked(const Network& net, const Tensor& x,
                                              const Tensor& mask, double probe_eps, int n_probes,
                                              std::uint64_t seed);

inline constexpr int kMaxDenseJacobian = 4096;

// Column j = J(x) e_j, assembled densely. Guarded by kMaxDenseJacobian.
DenseMatrix assemble_jacobian(const Network& net, const Tensor& x);

struct SpectrumReport {
    std::vector<double> singular_values;  // descending
    double frob_dist_identity = 0.0;      // ||J J' - I||_F / sqrt(n)
    double trace_over_n = 0.0;            // Tr(J) / n
};

SpectrumReport jacobian_spectrum_report(const Network& net, const Tensor& x);

}  // namespace n2b
