#include "n2b/divergence.hpp"

#include <cmath>
#include <stdexcept>

#include "n2b/rng.hpp"

namespace n2b {

namespace {

void require_frame_config(const NetworkConfig& cfg, const char* what) {
    if (!cfg.frame_analyzable()) {
        throw std::runtime_error(std::string(what) +
                                 ": configuration is not frame-analyzable (requires bias_free, "
                                 "no skip connections, bn off or linear_eval)");
    }
}

}  // namespace

double divergence_exact(const Network& net, const Tensor& x) {
    require_frame_config(net.config, "divergence_exact");
    LinearizedOperator op = freeze(net, x);
    Tensor e(x.shape());
    double tr = 0.0;
    for (std::size_t j = 0; j < x.size(); ++j) {
        e[j] = 1.0;
        tr += linearized_apply(op, e)[j];
        e[j] = 0.0;
    }
    return tr;
}

double divergence_exact_masked(const Network& net, const Tensor& x, const Tensor& mask) {
    require_frame_config(net.config, "divergence_exact");
    require_same_shape(x, mask, "divergence_exact_masked");
    const Tensor u = mul(x, mask);
    LinearizedOperator op = freeze(net, u);
    Tensor e(x.shape());
    double tr = 0.0;
    for (std::size_t j = 0; j < x.size(); ++j) {
        if (mask[j] == 0.0) continue;  // column scaled to zero by the mask
        e[j] = 1.0;
        tr += mask[j] * linearized_apply(op, e)[j];
        e[j] = 0.0;
    }
    return tr;
}

namespace {

HutchinsonResult hutchinson_impl(const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                                 double probe_eps, int n_probes, std::uint64_t seed) {
    if (n_probes < 1) throw std::invalid_argument("divergence_hutchinson: n_probes must be >= 1");
    if (probe_eps <= 0.0) throw std::invalid_argument("divergence_hutchinson: probe_eps must be > 0");
    RngStream rng(seed);
    const Tensor y0 = f(x);
    double acc = 0.0, acc_sq = 0.0;
    Tensor probe(x.shape());
    for (int p = 0; p < n_probes; ++p) {
        for (std::size_t i = 0; i < probe.size(); ++i) probe[i] = rng.normal();
        Tensor xp = x;
        for (std::size_t i = 0; i < xp.size(); ++i) xp[i] += probe_eps * probe[i];
        const Tensor yp = f(xp);
        double est = 0.0;
        for (std::size_t i = 0; i < probe.size(); ++i) est += probe[i] * (yp[i] - y0[i]);
        est /= probe_eps;
        acc += est;
        acc_sq += est * est;
    }
    HutchinsonResult r;
    r.probes = n_probes;
    r.seed = seed;
    r.mean = acc / n_probes;
    if (n_probes > 1) {
        const double var = (acc_sq - acc * acc / n_probes) / (n_probes - 1);
        r.stderr_ = std::sqrt(std::max(0.0, var) / n_probes);
    }
    return r;
}

}  // namespace

HutchinsonResult divergence_hutchinson(const Network& net, const Tensor& x, double probe_eps,
                                       int n_probes, std::uint64_t seed) {
    return hutchinson_impl([&](const Tensor& v) { return forward_value(net, v); }, x, probe_eps,
                           n_probes, seed);
}

HutchinsonResult divergence_hutchinson_masked(const Network& net, const Tensor& x,
                                              const Tensor& mask, double probe_eps, int n_probes,
                                              std::uint64_t seed) {
    require_same_shape(x, mask, "divergence_hutchinson_masked");
    return hutchinson_impl([&](const Tensor& v) { return forward_value(net, mul(v, mask)); }, x,
                           probe_eps, n_probes, seed);
}

DenseMatrix assemble_jacobian(const Network& net, const Tensor& x) {
    require_frame_config(net.config, "assemble_jacobian");
    const int n = static_cast<int>(x.size());
    if (n > kMaxDenseJacobian) {
        throw std::runtime_error("assemble_jacobian: input dimension " + std::to_string(n) +
                                 " exceeds dense guard " + std::to_string(kMaxDenseJacobian));
    }
    LinearizedOperator op = freeze(net, x);
    DenseMatrix jac(n, n);
    Tensor e(x.shape());
    for (int j = 0; j < n; ++j) {
        e[static_cast<std::size_t>(j)] = 1.0;
        const Tensor col = linearized_apply(op, e);
        e[static_cast<std::size_t>(j)] = 0.0;
        for (int i = 0; i < n; ++i) jac.at(i, j) = col[static_cast<std::size_t>(i)];
    }
    return jac;
}

SpectrumReport jacobian_spectrum_report(const Network& net, const Tensor& x) {
    const DenseMatrix jac = assemble_jacobian(net, x);
    const int n = jac.rows;
    SpectrumReport rep;
    rep.trace_over_n = trace(jac) / n;
    rep.singular_values = singular_values(jac);
    // ||JJ' - I||_F = ||diag(s_i^2 - 1)||_F in the left singular basis
    double acc = 0.0;
    for (double s : rep.singular_values) {
        const double d = s * s - 1.0;
        acc += d * d;
    }
    rep.frob_dist_identity = std::sqrt(acc) / std::sqrt(static_cast<double>(n));
    return rep;
}

}  // namespace n2b
