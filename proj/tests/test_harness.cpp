#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <filesystem>

#include "n2b/metrics.hpp"
#include "n2b/pgm.hpp"
#include "n2b/rng.hpp"
#include "n2b/synthetic.hpp"
#include "n2b/train.hpp"
#include "n2b/verify.hpp"

using namespace n2b;

namespace {

// Reference reimplementations of the metric formulas, independent loops.
double psnr_ref(const Tensor& a, const Tensor& b, double peak) {
    double mse = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) mse += (a[i] - b[i]) * (a[i] - b[i]);
    mse /= static_cast<double>(a.size());
    return 10.0 * std::log10(peak * peak / mse);
}

double ssim_ref(const Tensor& a, const Tensor& b) {
    const int h = a.extent(0), w = a.extent(1), win = 8;
    const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
    double acc = 0.0;
    int cnt = 0;
    for (int i = 0; i + win <= h; ++i)
        for (int j = 0; j + win <= w; ++j) {
            double ma = 0, mb = 0, vaa = 0, vbb = 0, vab = 0;
            for (int u = 0; u < win; ++u)
                for (int v = 0; v < win; ++v) {
                    ma += a.at({i + u, j + v});
                    mb += b.at({i + u, j + v});
                }
            ma /= 64.0;
            mb /= 64.0;
            for (int u = 0; u < win; ++u)
                for (int v = 0; v < win; ++v) {
                    vaa += (a.at({i + u, j + v}) - ma) * (a.at({i + u, j + v}) - ma);
                    vbb += (b.at({i + u, j + v}) - mb) * (b.at({i + u, j + v}) - mb);
                    vab += (a.at({i + u, j + v}) - ma) * (b.at({i + u, j + v}) - mb);
                }
            vaa /= 64.0;
            vbb /= 64.0;
            vab /= 64.0;
            acc += ((2 * ma * mb + c1) * (2 * vab + c2)) /
                   ((ma * ma + mb * mb + c1) * (vaa + vbb + c2));
            ++cnt;
        }
    return acc / cnt;
}

Tensor random_image(int h, int w, RngStream& rng) {
    Tensor t({h, w});
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(0.0, 1.0);
    return t;
}

ExperimentConfig tiny_config(TrainMode mode) {
    ExperimentConfig cfg = default_experiment();
    cfg.mode = mode;
    cfg.network.stages = 2;
    cfg.network.channels = {1, 2, 4};
    cfg.network.spatial = {16, 16};
    cfg.data.height = 16;
    cfg.data.width = 16;
    cfg.data.train_count = 16;
    cfg.data.test_count = 4;
    cfg.batch = 4;
    cfg.epochs = 2;
    cfg.attention_epochs = 2;
    cfg.boost.k = 3;
    return cfg;
}

}  // namespace

TEST_CASE("psnr") {
    RngStream rng(201);
    const Tensor a = random_image(16, 16, rng);
    const Tensor b = random_image(16, 16, rng);
    CHECK(std::isinf(psnr(a, a)));
    CHECK(psnr(a, b) == doctest::Approx(psnr(b, a)).epsilon(1e-14));
    CHECK(psnr(a, b) == doctest::Approx(psnr_ref(a, b, 1.0)).epsilon(1e-12));

    // mse 0.01 at peak 1 is 20 dB
    Tensor x({8, 8});
    Tensor y({8, 8});
    y.fill(0.1);
    CHECK(psnr(x, y) == doctest::Approx(20.0).epsilon(1e-12));
}

TEST_CASE("ssim") {
    RngStream rng(203);
    const Tensor a = random_image(16, 16, rng);
    const Tensor b = random_image(16, 16, rng);
    CHECK(ssim(a, a) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(ssim(a, b) == doctest::Approx(ssim_ref(a, b)).epsilon(1e-12));
    CHECK(ssim(a, b) >= -1.0);
    CHECK(ssim(a, b) <= 1.0);
}

TEST_CASE("psnr decreases with noise level (statistically)") {
    const Dataset data = gen_synthetic_dataset(DataKind::mixed, 16, 16, 100, 7);
    double acc_low = 0.0, acc_high = 0.0;
    const auto low = add_noise(data.clean, 0.05, 11);
    const auto high = add_noise(data.clean, 0.15, 11);
    for (std::size_t i = 0; i < data.clean.size(); ++i) {
        acc_low += psnr(low[i], data.clean[i]);
        acc_high += psnr(high[i], data.clean[i]);
    }
    CHECK(acc_low / 100.0 > acc_high / 100.0);
}

TEST_CASE("synthetic dataset") {
    SUBCASE("count zero gives an empty dataset") {
        const Dataset d = gen_synthetic_dataset(DataKind::blocks, 16, 16, 0, 1);
        CHECK(d.clean.empty());
    }
    SUBCASE("deterministic per seed") {
        const Dataset a = gen_synthetic_dataset(DataKind::mixed, 16, 16, 8, 42);
        const Dataset b = gen_synthetic_dataset(DataKind::mixed, 16, 16, 8, 42);
        for (std::size_t i = 0; i < a.clean.size(); ++i) {
            CHECK(max_abs_diff(a.clean[i], b.clean[i]) == 0.0);
        }
    }
    SUBCASE("pixel values stay in [0,1] over a thousand images") {
        for (DataKind kind : {DataKind::blocks, DataKind::bumps, DataKind::mixed}) {
            const Dataset d = gen_synthetic_dataset(kind, 16, 16, 334, 3);
            for (const Tensor& img : d.clean) {
                double lo = 1e300, hi = -1e300;
                for (std::size_t i = 0; i < img.size(); ++i) {
                    lo = std::min(lo, img[i]);
                    hi = std::max(hi, img[i]);
                }
                CHECK(lo >= 0.0);
                CHECK(hi <= 1.0);
            }
        }
    }
}

TEST_CASE("pgm round trip") {
    RngStream rng(207);
    const Tensor img = random_image(12, 10, rng);
    const auto path = std::filesystem::temp_directory_path() / "n2b_test.pgm";
    write_pgm(path, img);
    const Tensor back = read_pgm(path);
    CHECK(back.shape() == img.shape());
    CHECK(max_abs_diff(back, img) <= 0.5 / 255.0 + 1e-9);  // 8-bit quantization
    std::filesystem::remove(path);
}

TEST_CASE("experiment config json round trip") {
    ExperimentConfig cfg = tiny_config(TrainMode::n2b_joint);
    cfg.sigma = 25.0 / 255.0;
    cfg.augment.enabled = true;
    const nlohmann::json j = experiment_to_json(cfg);
    CHECK(j.at("sigma").get<double>() == doctest::Approx(25.0));
    const ExperimentConfig back = experiment_from_json(j);
    CHECK(back.mode == cfg.mode);
    CHECK(back.sigma == doctest::Approx(cfg.sigma));
    CHECK(back.network.channels == cfg.network.channels);
    CHECK(back.boost.k == cfg.boost.k);
    CHECK(back.augment.enabled);
}

TEST_CASE("train: zero epochs returns the seeded initialization") {
    ExperimentConfig cfg = tiny_config(TrainMode::supervised);
    cfg.epochs = 0;
    const TrainResult r = train(cfg);
    const Network fresh = make_network(cfg.network, mix_seed(cfg.seed, 0x696e6974ULL));
    for (std::size_t l = 0; l < fresh.enc_kernels.size(); ++l) {
        CHECK(max_abs_diff(r.net.enc_kernels[l].weights, fresh.enc_kernels[l].weights) == 0.0);
    }
}

TEST_CASE("train: identical config and seed reproduce the run exactly") {
    const ExperimentConfig cfg = tiny_config(TrainMode::n2n);
    const TrainResult a = train(cfg);
    const TrainResult b = train(cfg);
    REQUIRE(a.history.size() == b.history.size());
    for (std::size_t i = 0; i < a.history.size(); ++i) {
        CHECK(a.history[i].train_loss == b.history[i].train_loss);
        CHECK(a.history[i].test_psnr == b.history[i].test_psnr);
    }
    for (std::size_t l = 0; l < a.net.enc_kernels.size(); ++l) {
        CHECK(max_abs_diff(a.net.enc_kernels[l].weights, b.net.enc_kernels[l].weights) == 0.0);
    }
}

TEST_CASE("train: every regime runs and improves or keeps the loss finite") {
    for (TrainMode mode : {TrainMode::supervised, TrainMode::n2n, TrainMode::sure, TrainMode::n2v,
                           TrainMode::n2b_joint, TrainMode::n2b_twostage}) {
        CAPTURE(train_mode_name(mode));
        const TrainResult r = train(tiny_config(mode));
        REQUIRE(!r.history.empty());
        for (const EpochRecord& e : r.history) CHECK(std::isfinite(e.train_loss));
        if (mode == TrainMode::n2b_joint || mode == TrainMode::n2b_twostage) {
            CHECK(r.attention.has_value());
        }
    }
    // masked regime with the optional divergence term switched on
    ExperimentConfig cfg = tiny_config(TrainMode::n2v);
    cfg.n2v_divergence = true;
    const TrainResult r = train(cfg);
    for (const EpochRecord& e : r.history) CHECK(std::isfinite(e.train_loss));
}

TEST_CASE("train: a non-finite loss aborts with a diagnostic") {
    ExperimentConfig cfg = tiny_config(TrainMode::sure);
    cfg.sigma = 1e160;  // the 2 sigma^2 penalty overflows on the first step
    CHECK_THROWS_WITH_AS(train(cfg), doctest::Contains("diverged"), std::runtime_error);
}

TEST_CASE("train: bn train mode runs and checkpoints as linear_eval") {
    ExperimentConfig cfg = tiny_config(TrainMode::supervised);
    cfg.network.bn_mode = BnMode::train;
    const TrainResult r = train(cfg);
    CHECK(r.net.config.bn_mode == BnMode::linear_eval);
    // frame diagnostics are available on the trained net
    const double div = divergence_exact(r.net, r.test_data.inputs[0]);
    CHECK(std::isfinite(div));
}

TEST_CASE("infer") {
    ExperimentConfig cfg = tiny_config(TrainMode::supervised);
    cfg.epochs = 1;
    const TrainResult r = train(cfg);
    const Tensor& x = r.test_data.inputs[0];

    SUBCASE("k = 1 all-ones mask mean aggregation is the plain forward") {
        BoostConfig boost;
        boost.k = 1;
        boost.kind = MaskKind::bernoulli;
        boost.p = 1.0;
        const Tensor out = infer(r.net, nullptr, x, boost, Aggregation::mean);
        CHECK(max_abs_diff(out, forward_value(r.net, x)) == 0.0);
    }
    SUBCASE("attention aggregation equals the branch value for identical branches") {
        AttentionNet attn = make_attention(3, 9);
        BoostConfig boost;
        boost.k = 3;
        boost.kind = MaskKind::bernoulli;
        boost.p = 1.0;  // all-ones masks, so all branches coincide
        const Tensor out = infer(r.net, &attn, x, boost, Aggregation::attention);
        CHECK(max_abs_diff(out, forward_value(r.net, x)) <= 1e-12);
    }
    SUBCASE("attention without weights is rejected") {
        BoostConfig boost;
        boost.k = 2;
        CHECK_THROWS_AS(infer(r.net, nullptr, x, boost, Aggregation::attention),
                        std::invalid_argument);
    }
    SUBCASE("attention k mismatch is rejected") {
        AttentionNet attn = make_attention(3, 7);
        BoostConfig boost;
        boost.k = 5;
        CHECK_THROWS_AS(infer(r.net, &attn, x, boost, Aggregation::attention),
                        std::invalid_argument);
    }
    SUBCASE("outputs stay within a sane range for both aggregations") {
        AttentionNet attn = make_attention(4, 13);
        BoostConfig boost;
        boost.k = 4;
        for (Aggregation agg : {Aggregation::mean, Aggregation::attention}) {
            const Tensor out = infer(r.net, &attn, x, boost, agg);
            CHECK(max_abs(out) < 10.0);
        }
    }
}

TEST_CASE("verify: suite report is deterministic and fast suites pass") {
    const auto a = run_suites("lemma1", 7);
    const auto b = run_suites("lemma1", 7);
    const auto ja = verify_report_json("lemma1", 7, a);
    const auto jb = verify_report_json("lemma1", 7, b);
    CHECK(ja.dump() == jb.dump());
    CHECK(ja["pass"].get<bool>());

    CHECK_THROWS_AS(run_suites("nonsense", 7), std::invalid_argument);
}

TEST_CASE("verify: prop2 and prop3 suites pass") {
    CHECK(verify_prop2(11, 50).pass);
    CHECK(verify_prop3(11, 4000).pass);
}
