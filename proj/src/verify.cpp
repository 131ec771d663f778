#include "n2b/verify.hpp"

#include <cmath>
#include <stdexcept>

#include "n2b/rng.hpp"

namespace n2b {

namespace {

// Smoother evaluated through the real network path: a kappa=1 net whose
// encoder is an identity impulse and whose decoder holds the smoothing taps.
// On positive inputs it acts as the circulant matrix of those taps.
struct SmootherCase {
    Network net;
    DenseMatrix a;         // independently assembled circulant
    Tensor kernel_taps;    // [r]
};

SmootherCase make_smoother(int n, int taps, RngStream& rng) {
    SmootherCase sc;
    NetworkConfig cfg;
    cfg.stages = 1;
    cfg.channels = {1, 1};
    cfg.taps = taps;
    cfg.spatial = {n};
    cfg.validate();
    sc.net.config = cfg;

    Tensor delta({1, 1, taps});
    delta[static_cast<std::size_t>(taps / 2)] = 1.0;
    sc.net.enc_kernels.emplace_back(std::move(delta));

    sc.kernel_taps = Tensor({taps});
    for (int t = 0; t < taps; ++t) sc.kernel_taps[static_cast<std::size_t>(t)] = rng.uniform(-0.4, 0.6);
    Tensor dec({1, 1, taps});
    for (int t = 0; t < taps; ++t) dec[static_cast<std::size_t>(t)] = sc.kernel_taps[static_cast<std::size_t>(t)];
    sc.net.dec_kernels.emplace_back(std::move(dec));

    // direct convolution: row i takes k[t] from column (i - (t - h)) mod n
    sc.a = DenseMatrix(n, n);
    const int h = taps / 2;
    for (int i = 0; i < n; ++i) {
        for (int t = 0; t < taps; ++t) {
            int j = (i - (t - h)) % n;
            if (j < 0) j += n;
            sc.a.at(i, j) += sc.kernel_taps[static_cast<std::size_t>(t)];
        }
    }
    return sc;
}

Tensor positive_ramp(int n, RngStream& rng) {
    Tensor mu({n});
    const double base = rng.uniform(0.5, 0.7);
    const double slope = rng.uniform(0.1, 0.3);
    for (int i = 0; i < n; ++i) {
        mu[static_cast<std::size_t>(i)] = base + slope * static_cast<double>(i) / (n - 1);
    }
    return mu;
}

struct MeanStderr {
    double mean = 0.0, stderr_ = 0.0;
};

MeanStderr running_stats(const std::vector<double>& xs) {
    const double n = static_cast<double>(xs.size());
    double acc = 0.0;
    for (double v : xs) acc += v;
    const double mean = acc / n;
    double var = 0.0;
    for (double v : xs) var += (v - mean) * (v - mean);
    var /= (n - 1.0);
    return MeanStderr{mean, std::sqrt(var / n)};
}

}  // namespace

SuiteResult verify_lemma1(std::uint64_t seed, int nets) {
    SuiteResult suite;
    suite.suite = "lemma1";
    for (int i = 0; i < nets; ++i) {
        RngStream rng(mix_seed(seed, {0x6c656d31ULL, static_cast<std::uint64_t>(i)}));
        NetworkConfig cfg;
        cfg.stages = 2;
        cfg.channels = {1, 2 + static_cast<int>(rng.below(3)), 4 + static_cast<int>(rng.below(5))};
        cfg.taps = 3;
        cfg.spatial = {16, 16};
        const Network net = make_network(cfg, rng.next_u64());
        const Tensor x = sample_input_with_margin(net, rng);
        const double div = divergence_exact(net, x);
        const DenseMatrix jac =
            numerical_jacobian([&](const Tensor& v) { return forward_value(net, v); }, x);
        const double err = std::fabs(div - trace(jac));
        const double bound = 1e-6 * std::max(1.0, std::fabs(div));
        suite.add(CheckResult{"net_" + std::to_string(i), err <= bound, err, bound,
                              "divergence " + std::to_string(div)});
    }
    return suite;
}

namespace {

SuiteResult sure_unbiased_impl(const std::string& suite_name, std::uint64_t seed, int smoothers,
                               int draws, bool masked) {
    SuiteResult suite;
    suite.suite = suite_name;
    const int n = 16;
    DivergenceSpec div;
    div.method = DivMethod::exact;
    for (int s = 0; s < smoothers; ++s) {
        RngStream rng(mix_seed(seed, {0x73757265ULL, static_cast<std::uint64_t>(s)}));
        SmootherCase sc = make_smoother(n, 3, rng);
        const Tensor mu = positive_ramp(n, rng);
        const double sigma = 0.1;

        MaskPattern mask;
        DenseMatrix a_eff = sc.a;
        if (masked) {
            mask = draw_bernoulli_mask({n}, 0.7, rng.next_u64());
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < n; ++j) a_eff.at(i, j) *= mask.values[static_cast<std::size_t>(j)];
        }
        const double oracle = linear_prediction_error(a_eff, mu, sigma);

        std::vector<double> totals(static_cast<std::size_t>(draws));
        Tensor x({n});
        for (int d = 0; d < draws; ++d) {
            for (int i = 0; i < n; ++i) x[static_cast<std::size_t>(i)] = mu[static_cast<std::size_t>(i)] + sigma * rng.normal();
            totals[static_cast<std::size_t>(d)] =
                masked ? sure_masked(x, sc.net, mask, sigma, div).total
                       : sure_point(x, sc.net, sigma, div).total;
        }
        const MeanStderr st = running_stats(totals);
        const double err = std::fabs(st.mean - oracle);
        const double bound = 3.0 * st.stderr_;
        suite.add(CheckResult{"smoother_" + std::to_string(s), err <= bound, err, bound,
                              "mean " + std::to_string(st.mean) + " oracle " + std::to_string(oracle)});
    }
    return suite;
}

}  // namespace

SuiteResult verify_sure_unbiased(std::uint64_t seed, int smoothers, int draws) {
    return sure_unbiased_impl("sure_unbiased", seed, smoothers, draws, /*masked=*/false);
}

SuiteResult verify_prop1(std::uint64_t seed, int smoothers, int draws) {
    return sure_unbiased_impl("prop1", seed, smoothers, draws, /*masked=*/true);
}

Prop2Stats prop2_check(const Network& net, const BoostConfig& boost,
                       const std::vector<Tensor>& clean, double sigma, int draws,
                       std::uint64_t seed) {
    if (clean.empty()) throw std::invalid_argument("prop2_check: no clean images");
    Prop2Stats stats;
    stats.instances = draws;
    stats.min_gap = std::numeric_limits<double>::infinity();
    const std::vector<int> in_shape = net.config.input_shape();
    double gap_acc = 0.0;
    for (int d = 0; d < draws; ++d) {
        RngStream rng(mix_seed(seed, {0x70327276ULL, static_cast<std::uint64_t>(d)}));
        const Tensor& base = clean[static_cast<std::size_t>(d) % clean.size()];
        Tensor x = base, x_star = base;
        for (std::size_t i = 0; i < x.size(); ++i) x[i] += sigma * rng.normal();
        for (std::size_t i = 0; i < x_star.size(); ++i) x_star[i] += sigma * rng.normal();

        BoostConfig bc = boost;
        bc.base_seed = rng.next_u64();
        const std::vector<MaskPattern> masks = draw_mask_set(bc, in_shape);

        const Tensor xin = x.rank() == net.config.spatial_rank() && net.config.channels[0] == 1
                               ? x.reshaped(in_shape)
                               : x;
        double lhs = 0.0;
        Tensor mean_out;
        for (std::size_t k = 0; k < masks.size(); ++k) {
            Tensor out = forward_value(net, apply_mask(xin, masks[k]));
            if (k == 0) {
                mean_out = out;
            } else {
                mean_out += out;
            }
            lhs += err_hat(x_star.reshaped(out.shape()), out);
        }
        lhs /= static_cast<double>(masks.size());
        mean_out *= 1.0 / static_cast<double>(masks.size());
        const double rhs = err_hat(x_star.reshaped(mean_out.shape()), mean_out);

        const double gap = lhs - rhs;
        gap_acc += gap;
        stats.min_gap = std::min(stats.min_gap, gap);
        if (gap < -1e-12 * std::max(1.0, std::fabs(lhs))) stats.violations += 1;
    }
    stats.aggregate_gap = gap_acc / draws;
    return stats;
}

SuiteResult verify_prop2(std::uint64_t seed, int draws) {
    SuiteResult suite;
    suite.suite = "prop2";
    RngStream rng(mix_seed(seed, 0x70726f7032ULL));
    NetworkConfig cfg;
    cfg.stages = 2;
    cfg.channels = {1, 4, 8};
    cfg.taps = 3;
    cfg.spatial = {16, 16};
    const Network net = make_network(cfg, rng.next_u64());
    const Dataset data = gen_synthetic_dataset(DataKind::mixed, 16, 16, 8, rng.next_u64());
    BoostConfig boost;
    boost.k = 8;
    boost.kind = MaskKind::weights;
    boost.lo = 0.8;
    boost.hi = 1.2;
    const Prop2Stats stats = prop2_check(net, boost, data.clean, 0.1, draws, rng.next_u64());
    suite.add(CheckResult{"pointwise", stats.violations == 0,
                          static_cast<double>(stats.violations), 0.0,
                          "min gap " + std::to_string(stats.min_gap)});
    suite.add(CheckResult{"aggregate_gap", stats.aggregate_gap >= 0.0, stats.aggregate_gap, 0.0,
                          "mean of (mean-of-losses - loss-of-mean)"});
    return suite;
}

SuiteResult verify_prop3(std::uint64_t seed, int mask_draws) {
    SuiteResult suite;
    suite.suite = "prop3";
    const int n = 64;
    for (double p : {0.5, 0.9}) {
        RngStream rng(mix_seed(seed, {0x70726f7033ULL, static_cast<std::uint64_t>(p * 10)}));
        // strictly positive kernels + strictly positive inputs + weight masks
        // bounded away from zero: every ReLU stays active for every mask
        NetworkConfig cfg;
        cfg.stages = 1;
        cfg.channels = {1, 2};
        cfg.taps = 3;
        cfg.spatial = {n};
        Network net = make_network(cfg, rng.next_u64());
        for (auto& k : net.enc_kernels)
            for (std::size_t i = 0; i < k.weights.size(); ++i) k.weights[i] = rng.uniform(0.1, 0.5);
        for (auto& k : net.dec_kernels)
            for (std::size_t i = 0; i < k.weights.size(); ++i) k.weights[i] = rng.uniform(0.1, 0.5);

        Tensor x({n});
        for (int i = 0; i < n; ++i) x[static_cast<std::size_t>(i)] = rng.uniform(0.3, 1.0);

        const double div_f = divergence_exact(net, x);
        const double half_width = 0.3;
        std::vector<double> ratios(static_cast<std::size_t>(mask_draws));
        for (int d = 0; d < mask_draws; ++d) {
            const MaskPattern mask =
                draw_weight_mask({n}, p - half_width, p + half_width, rng.next_u64());
            ratios[static_cast<std::size_t>(d)] =
                divergence_exact_masked(net, x, mask.values) / div_f;
        }
        const MeanStderr st = running_stats(ratios);
        const double err = std::fabs(st.mean - p);
        const double bound = 3.0 * st.stderr_;
        suite.add(CheckResult{"p_" + std::to_string(p).substr(0, 3), err <= bound, err, bound,
                              "ratio " + std::to_string(st.mean) + " target " + std::to_string(p)});
    }
    return suite;
}

SuiteResult verify_bn_diag(std::uint64_t seed, const BnDiagOptions& opts) {
    SuiteResult suite;
    suite.suite = "bn_diag";

    ExperimentConfig cfg = default_experiment();
    cfg.mode = TrainMode::supervised;
    cfg.network.stages = 2;
    cfg.network.channels = opts.channels;
    cfg.network.spatial = {opts.height, opts.width};
    cfg.network.bn_mode = BnMode::train;
    cfg.sigma = opts.sigma;
    cfg.lr.start = opts.lr_start;
    cfg.lr.halve_every = opts.lr_halve_every;
    cfg.data.height = opts.height;
    cfg.data.width = opts.width;
    cfg.data.train_count = opts.train_count;
    cfg.data.test_count = opts.test_inputs;
    cfg.data.seed = mix_seed(seed, 0x626e6431ULL);
    cfg.epochs = opts.epochs;
    cfg.seed = mix_seed(seed, 0x626e6432ULL);

    const TrainResult result = train(cfg);

    int in_band = 0;
    double trace_acc = 0.0, frob_acc = 0.0, top_acc = 0.0;
    for (int i = 0; i < opts.test_inputs; ++i) {
        const SpectrumReport rep =
            jacobian_spectrum_report(result.net, result.test_data.inputs[static_cast<std::size_t>(i)]);
        trace_acc += rep.trace_over_n;
        frob_acc += rep.frob_dist_identity;
        top_acc += rep.singular_values.front();
        if (rep.trace_over_n >= opts.band_lo && rep.trace_over_n <= opts.band_hi) ++in_band;
    }
    const double frac = static_cast<double>(in_band) / opts.test_inputs;
    const double inv_n = 1.0 / opts.test_inputs;
    suite.add(CheckResult{"trace_band", frac >= opts.required_fraction, frac,
                          opts.required_fraction,
                          "mean Tr(J)/n " + std::to_string(trace_acc * inv_n) + ", mean ||JJ'-I||_F/sqrt(n) " +
                              std::to_string(frob_acc * inv_n) + ", mean top sv " +
                              std::to_string(top_acc * inv_n)});
    return suite;
}

std::vector<SuiteResult> run_suites(const std::string& which, std::uint64_t seed) {
    const bool all = which == "all";
    std::vector<SuiteResult> suites;
    if (all || which == "lemma1") suites.push_back(verify_lemma1(mix_seed(seed, 1)));
    if (all || which == "prop1") suites.push_back(verify_prop1(mix_seed(seed, 2)));
    if (all || which == "prop2") suites.push_back(verify_prop2(mix_seed(seed, 3)));
    if (all || which == "prop3") suites.push_back(verify_prop3(mix_seed(seed, 4)));
    if (all || which == "sure_unbiased") suites.push_back(verify_sure_unbiased(mix_seed(seed, 5)));
    if (all || which == "bn_diag") suites.push_back(verify_bn_diag(mix_seed(seed, 6)));
    if (suites.empty()) {
        throw std::invalid_argument("unknown suite '" + which +
                                    "' (all|lemma1|prop1|prop2|prop3|sure_unbiased|bn_diag)");
    }
    return suites;
}

nlohmann::json verify_report_json(const std::string& which, std::uint64_t seed,
                                  const std::vector<SuiteResult>& suites) {
    nlohmann::json j;
    j["suite"] = which;
    j["seed"] = seed;
    bool all_pass = true;
    nlohmann::json arr = nlohmann::json::array();
    for (const SuiteResult& s : suites) {
        nlohmann::json js;
        js["name"] = s.suite;
        js["pass"] = s.pass;
        nlohmann::json checks = nlohmann::json::array();
        for (const CheckResult& c : s.checks) {
            checks.push_back({{"name", c.name},
                              {"pass", c.pass},
                              {"measured", c.measured},
                              {"bound", c.bound},
                              {"detail", c.detail}});
        }
        js["checks"] = checks;
        arr.push_back(js);
        all_pass = all_pass && s.pass;
    }
    j["suites"] = arr;
    j["pass"] = all_pass;
    return j;
}

}  // namespace n2b
