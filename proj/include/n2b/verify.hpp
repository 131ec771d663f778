// Numerical property suites behind the `verify` command: the exact-divergence
// identity, unbiasedness of the divergence-penalized estimators (plain and
// masked), the pointwise aggregation inequality, the p-scaling of the bagged
// divergence, and the batch-norm Jacobian diagnostic.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"
#include "n2b/estimators.hpp"
#include "n2b/train.hpp"

namespace n2b {

struct CheckResult {
    std::string name;
    bool pass = false;
    double measured = 0.0;
    double bound = 0.0;
    std::string detail;
};

struct SuiteResult {
    std::string suite;
    bool pass = true;
    std::vector<CheckResult> checks;

    void add(CheckResult c) {
        pass = pass && c.pass;
        checks.push_back(std::move(c));
    }
};

SuiteResult verify_lemma1(std::uint64_t seed, int nets = 20);
SuiteResult verify_sure_unbiased(std::uint64_t seed, int smoothers = 5, int draws = 10000);
SuiteResult verify_prop1(std::uint64_t seed, int smoothers = 5, int draws = 10000);
SuiteResult verify_prop2(std::uint64_t seed, int draws = 100);
SuiteResult verify_prop3(std::uint64_t seed, int mask_draws = 10000);

struct BnDiagOptions {
    int height = 16, width = 16;
    std::vector<int> channels = {1, 8, 16};
    int train_count = 512;
    int test_inputs = 20;
    int epochs = 80;
    double sigma = 10.0 / 255.0;
    double lr_start = 1e-3;
    int lr_halve_every = 30;
    double band_lo = 0.2, band_hi = 2.0;
    double required_fraction = 0.8;
};

SuiteResult verify_bn_diag(std::uint64_t seed, const BnDiagOptions& opts = {});

// Per-instance aggregation inequality on a given net: mean over masks of
// ||x* - F(x ⊙ L_k)||^2 versus ||x* - bagged_mean||^2 on fresh noise draws.
struct Prop2Stats {
    int instances = 0;
    int violations = 0;
    double aggregate_gap = 0.0;  // mean of (lhs - rhs)
    double min_gap = 0.0;
};

Prop2Stats prop2_check(const Network& net, const BoostConfig& boost,
                       const std::vector<Tensor>& clean, double sigma, int draws,
                       std::uint64_t seed);

// which = all | lemma1 | prop1 | prop2 | prop3 | sure_unbiased | bn_diag
std::vector<SuiteResult> run_suites(const std::string& which, std::uint64_t seed);
nlohmann::json verify_report_json(const std::string& which, std::uint64_t seed,
                                  const std::vector<SuiteResult>& suites);

}  // namespace n2b
