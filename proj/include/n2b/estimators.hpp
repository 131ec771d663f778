// The family of prediction-error estimators and training losses: paired-
// sample, divergence-penalized (plain, masked, bagged) and attention-weighted
// forms, plus the Monte-Carlo / closed-form oracles for the true prediction
// error of a fixed map.

#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "n2b/attention.hpp"
#include "n2b/divergence.hpp"
#include "n2b/network.hpp"
#include "n2b/sampling.hpp"

namespace n2b {

struct NoiseModel {
    double sigma = 0.1;          // intensity units, [0,1] scale
    std::optional<Tensor> mu;    // clean mean, oracle use only
};

struct Dataset {
    std::vector<Tensor> inputs;   // x^(i), i = 1..P
    std::vector<Tensor> targets;  // x*^(j), optional
    std::vector<Tensor> clean;    // references for oracle metrics, optional
};

enum class DivMethod { exact, hutchinson, pn_constant, omitted };

std::string div_method_name(DivMethod m);

struct DivergenceSpec {
    DivMethod method = DivMethod::exact;
    double probe_eps = 1e-4;  // hutchinson step
    int n_probes = 1;
    std::uint64_t seed = 0;
    double p = 1.0;           // mean mask value for pn_constant
};

struct EstimatorReport {
    std::string method;
    double fidelity = 0.0;
    double divergence = 0.0;
    DivMethod divergence_method = DivMethod::omitted;
    double sigma = 0.0;
    double total = 0.0;  // fidelity + 2 sigma^2 divergence unless omitted
    std::uint64_t seed = 0;
    nlohmann::json config_echo;

    nlohmann::json to_json() const;
};

// ||x* - y||^2
double err_hat(const Tensor& x_star, const Tensor& y);

// (1/PQ) sum_i sum_j ||x*_j - F(x_i)||^2 over same-source noisy realizations
double loss_n2n(const Dataset& data, const Network& net);

EstimatorReport sure_point(const Tensor& x, const Network& net, double sigma,
                           const DivergenceSpec& div);
double loss_sure(const Dataset& data, const Network& net, double sigma, const DivergenceSpec& div);

// ||x - F(mask ⊙ x)||^2 + 2 sigma^2 div_x{F(mask ⊙ x)}
EstimatorReport sure_masked(const Tensor& x, const Network& net, const MaskPattern& mask,
                            double sigma, const DivergenceSpec& div);

// masked-fidelity loss over P inputs and K masks; the divergence term is off
// by default.
double loss_n2v(const Dataset& data, const std::vector<MaskPattern>& masks, const Network& net,
                double sigma, bool include_divergence = false);

// (1/K) sum_k F(mask_k ⊙ x)
Tensor bagged_mean(const Network& net, const Tensor& x, const std::vector<MaskPattern>& masks);

// ||x - bagged||^2 + 2 sigma^2 div of the bagged map; div method must be
// exact or pn_constant.
double loss_boosting(const Dataset& data, const Network& net,
                     const std::vector<MaskPattern>& masks, double sigma,
                     const DivergenceSpec& div);

// attention-weighted aggregate fidelity, no divergence term
double loss_n2b(const Dataset& data, const Network& net, const AttentionNet& attention,
                const std::vector<MaskPattern>& masks);

struct McEstimate {
    double mean = 0.0;
    double stderr_ = 0.0;
    int trials = 0;
};

// Monte-Carlo estimate of E||x* - f(x)||^2 around a known clean mean.
McEstimate oracle_prediction_error(const std::function<Tensor(const Tensor&)>& f,
                                   const NoiseModel& noise, int trials, std::uint64_t seed);

// Exact value for a fixed linear map A: ||(I-A)mu||^2 + n sigma^2 + sigma^2 ||A||_F^2.
double linear_prediction_error(const DenseMatrix& a, const Tensor& mu, double sigma);

}  // namespace n2b
