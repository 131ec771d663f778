#include "n2b/estimators.hpp"

#include <cmath>
#include <stdexcept>

#include "n2b/rng.hpp"

namespace n2b {

std::string div_method_name(DivMethod m) {
    switch (m) {
        case DivMethod::exact: return "exact";
        case DivMethod::hutchinson: return "hutchinson";
        case DivMethod::pn_constant: return "pn_constant";
        case DivMethod::omitted: return "omitted";
    }
    return "?";
}

nlohmann::json EstimatorReport::to_json() const {
    nlohmann::json j;
    j["method"] = method;
    j["fidelity"] = fidelity;
    j["divergence"] = divergence;
    j["divergence_method"] = div_method_name(divergence_method);
    j["sigma"] = sigma;
    j["total"] = total;
    j["seed"] = seed;
    j["config"] = config_echo;
    return j;
}

double err_hat(const Tensor& x_star, const Tensor& y) {
    require_same_shape(x_star, y, "err_hat");
    double acc = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) {
        const double d = x_star[i] - y[i];
        acc += d * d;
    }
    return acc;
}

double loss_n2n(const Dataset& data, const Network& net) {
    if (data.inputs.empty()) throw std::invalid_argument("loss_n2n: empty inputs");
    if (data.targets.empty()) throw std::invalid_argument("loss_n2n: targets are required");
    double acc = 0.0;
    for (const Tensor& x : data.inputs) {
        const Tensor y = forward_value(net, x);
        for (const Tensor& t : data.targets) acc += err_hat(t, y);
    }
    return acc / (static_cast<double>(data.inputs.size()) * static_cast<double>(data.targets.size()));
}

namespace {

// fidelity ||x - y||^2 plus the requested divergence of the map that produced
// y; shared by the plain and masked SURE points.
EstimatorReport assemble_sure(const std::string& method, double fidelity, const Network& net,
                              const Tensor& x, const Tensor* mask, double sigma,
                              const DivergenceSpec& div) {
    EstimatorReport rep;
    rep.method = method;
    rep.fidelity = fidelity;
    rep.sigma = sigma;
    rep.divergence_method = div.method;
    switch (div.method) {
        case DivMethod::omitted:
            rep.divergence = 0.0;
            rep.total = fidelity;
            return rep;
        case DivMethod::exact:
            rep.divergence = mask ? divergence_exact_masked(net, x, *mask)
                                  : divergence_exact(net, x);
            break;
        case DivMethod::hutchinson: {
            const HutchinsonResult h =
                mask ? divergence_hutchinson_masked(net, x, *mask, div.probe_eps, div.n_probes,
                                                    div.seed)
                     : divergence_hutchinson(net, x, div.probe_eps, div.n_probes, div.seed);
            rep.divergence = h.mean;
            rep.seed = div.seed;
            break;
        }
        case DivMethod::pn_constant:
            rep.divergence = div.p * static_cast<double>(x.size());
            break;
    }
    rep.total = rep.fidelity + 2.0 * sigma * sigma * rep.divergence;
    return rep;
}

}  // namespace

EstimatorReport sure_point(const Tensor& x, const Network& net, double sigma,
                           const DivergenceSpec& div) {
    const Tensor y = forward_value(net, x);
    EstimatorReport rep = assemble_sure("sure", err_hat(x, y), net, x, nullptr, sigma, div);
    rep.config_echo = {{"n", x.size()}};
    return rep;
}

double loss_sure(const Dataset& data, const Network& net, double sigma,
                 const DivergenceSpec& div) {
    if (data.inputs.empty()) throw std::invalid_argument("loss_sure: empty inputs");
    double acc = 0.0;
    for (const Tensor& x : data.inputs) acc += sure_point(x, net, sigma, div).total;
    return acc / static_cast<double>(data.inputs.size());
}

EstimatorReport sure_masked(const Tensor& x, const Network& net, const MaskPattern& mask,
                            double sigma, const DivergenceSpec& div) {
    const Tensor y = forward_value(net, apply_mask(x, mask));
    EstimatorReport rep =
        assemble_sure("sure_masked", err_hat(x, y), net, x, &mask.values, sigma, div);
    rep.config_echo = {{"n", x.size()},
                       {"mask_kind", mask.kind == MaskKind::bernoulli ? "bernoulli" : "weights"},
                       {"mask_p", mask.p},
                       {"mask_seed", mask.seed}};
    return rep;
}

double loss_n2v(const Dataset& data, const std::vector<MaskPattern>& masks, const Network& net,
                double sigma, bool include_divergence) {
    if (data.inputs.empty()) throw std::invalid_argument("loss_n2v: empty inputs");
    if (masks.empty()) throw std::invalid_argument("loss_n2v: need at least one mask");
    double acc = 0.0;
    for (const Tensor& x : data.inputs) {
        for (const MaskPattern& mask : masks) {
            acc += err_hat(x, forward_value(net, apply_mask(x, mask)));
            if (include_divergence) {
                acc += 2.0 * sigma * sigma * divergence_exact_masked(net, x, mask.values);
            }
        }
    }
    return acc / (static_cast<double>(data.inputs.size()) * static_cast<double>(masks.size()));
}

Tensor bagged_mean(const Network& net, const Tensor& x, const std::vector<MaskPattern>& masks) {
    if (masks.empty()) throw std::invalid_argument("bagged_mean: need at least one mask");
    Tensor acc = forward_value(net, apply_mask(x, masks[0]));
    for (std::size_t k = 1; k < masks.size(); ++k) {
        acc += forward_value(net, apply_mask(x, masks[k]));
    }
    acc *= 1.0 / static_cast<double>(masks.size());
    return acc;
}

double loss_boosting(const Dataset& data, const Network& net,
                     const std::vector<MaskPattern>& masks, double sigma,
                     const DivergenceSpec& div) {
    if (data.inputs.empty()) throw std::invalid_argument("loss_boosting: empty inputs");
    if (div.method != DivMethod::exact && div.method != DivMethod::pn_constant) {
        throw std::invalid_argument("loss_boosting: divergence method must be exact or pn_constant");
    }
    double acc = 0.0;
    for (const Tensor& x : data.inputs) {
        acc += err_hat(x, bagged_mean(net, x, masks));
        double d;
        if (div.method == DivMethod::exact) {
            d = 0.0;  // divergence of the empirical mean map
            for (const MaskPattern& mask : masks) d += divergence_exact_masked(net, x, mask.values);
            d /= static_cast<double>(masks.size());
        } else {
            d = div.p * static_cast<double>(x.size());
        }
        acc += 2.0 * sigma * sigma * d;
    }
    return acc / static_cast<double>(data.inputs.size());
}

double loss_n2b(const Dataset& data, const Network& net, const AttentionNet& attention,
                const std::vector<MaskPattern>& masks) {
    if (data.inputs.empty()) throw std::invalid_argument("loss_n2b: empty inputs");
    if (static_cast<int>(masks.size()) != attention.k) {
        throw std::invalid_argument("loss_n2b: " + std::to_string(masks.size()) +
                                    " masks but attention expects k = " +
                                    std::to_string(attention.k));
    }
    double acc = 0.0;
    for (const Tensor& x : data.inputs) {
        std::vector<Tensor> branches;
        branches.reserve(masks.size());
        for (const MaskPattern& mask : masks) {
            branches.push_back(forward_value(net, apply_mask(x, mask)));
        }
        const auto w = attention_weights(pooled_features(branches), attention);
        acc += err_hat(x, aggregate(branches, w));
    }
    return acc / static_cast<double>(data.inputs.size());
}

McEstimate oracle_prediction_error(const std::function<Tensor(const Tensor&)>& f,
                                   const NoiseModel& noise, int trials, std::uint64_t seed) {
    if (!noise.mu.has_value()) {
        throw std::invalid_argument("oracle_prediction_error: clean mean mu is required");
    }
    if (trials < 2) throw std::invalid_argument("oracle_prediction_error: trials must be >= 2");
    const Tensor& mu = *noise.mu;
    RngStream rng(seed);
    double acc = 0.0, acc_sq = 0.0;
    Tensor x(mu.shape()), x_star(mu.shape());
    for (int t = 0; t < trials; ++t) {
        for (std::size_t i = 0; i < mu.size(); ++i) x[i] = mu[i] + noise.sigma * rng.normal();
        for (std::size_t i = 0; i < mu.size(); ++i) x_star[i] = mu[i] + noise.sigma * rng.normal();
        const double e = err_hat(x_star, f(x));
        acc += e;
        acc_sq += e * e;
    }
    McEstimate est;
    est.trials = trials;
    est.mean = acc / trials;
    const double var = (acc_sq - acc * acc / trials) / (trials - 1);
    est.stderr_ = std::sqrt(std::max(0.0, var) / trials);
    return est;
}

double linear_prediction_error(const DenseMatrix& a, const Tensor& mu, double sigma) {
    const int n = a.rows;
    if (a.cols != n || static_cast<int>(mu.size()) != n) {
        throw std::invalid_argument("linear_prediction_error: dimension mismatch");
    }
    double bias_sq = 0.0;
    for (int i = 0; i < n; ++i) {
        double r = mu[static_cast<std::size_t>(i)];
        for (int j = 0; j < n; ++j) r -= a.at(i, j) * mu[static_cast<std::size_t>(j)];
        bias_sq += r * r;
    }
    const double fro_sq = frobenius_norm(a) * frobenius_norm(a);
    return bias_sq + n * sigma * sigma + sigma * sigma * fro_sq;
}

}  // namespace n2b
