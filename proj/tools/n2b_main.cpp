// n2b command line: synthetic data generation, training, inference, the
// numerical verification suites, and run reports. All randomness is seeded;
// sigma flags are quoted on the 8-bit scale and divided by 255 internally.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include "CLI11.hpp"
#include "json.hpp"
#include "n2b/checkpoint.hpp"
#include "n2b/pgm.hpp"
#include "n2b/train.hpp"
#include "n2b/verify.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

int cmd_gen_data(const std::string& kind, int height, int width, int count, double sigma8,
                 std::uint64_t seed, const std::string& out, bool pgm) {
    const auto data_kind = n2b::data_kind_from_string(kind);
    n2b::Dataset data = n2b::gen_synthetic_dataset(data_kind, height, width, count, seed);
    data.inputs = n2b::add_noise(data.clean, sigma8 / 255.0, n2b::mix_seed(seed, 1));
    const fs::path dir(out);
    fs::create_directories(dir);
    json index;
    index["kind"] = kind;
    index["height"] = height;
    index["width"] = width;
    index["count"] = count;
    index["sigma"] = sigma8;
    index["seed"] = seed;
    json files = json::array();
    char name[64];
    for (int i = 0; i < count; ++i) {
        std::snprintf(name, sizeof(name), "clean_%04d.n2bt", i);
        n2b::write_tensor(dir / name, data.clean[static_cast<std::size_t>(i)]);
        const std::string clean_name = name;
        std::snprintf(name, sizeof(name), "noisy_%04d.n2bt", i);
        n2b::write_tensor(dir / name, data.inputs[static_cast<std::size_t>(i)]);
        files.push_back({{"clean", clean_name}, {"noisy", name}});
        if (pgm) {
            std::snprintf(name, sizeof(name), "clean_%04d.pgm", i);
            n2b::write_pgm(dir / name, data.clean[static_cast<std::size_t>(i)]);
            std::snprintf(name, sizeof(name), "noisy_%04d.pgm", i);
            n2b::write_pgm(dir / name, data.inputs[static_cast<std::size_t>(i)]);
        }
    }
    index["files"] = files;
    std::ofstream os(dir / "dataset.json");
    os << index.dump(2) << "\n";
    std::cout << "wrote " << count << " image pairs to " << dir.string() << "\n";
    return 0;
}

n2b::Tensor read_image(const fs::path& path) {
    if (path.extension() == ".pgm") return n2b::read_pgm(path);
    return n2b::read_tensor(path);
}

void write_image(const fs::path& path, const n2b::Tensor& img) {
    if (path.extension() == ".pgm") {
        n2b::write_pgm(path, img);
    } else {
        n2b::write_tensor(path, img);
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"prediction-error estimator laboratory for denoising networks"};
    app.require_subcommand(1);

    // gen-data
    auto* gen = app.add_subcommand("gen-data", "generate a synthetic dataset");
    std::string gen_kind = "mixed", gen_out = "dataset";
    int gen_h = 32, gen_w = 32, gen_count = 64;
    double gen_sigma = 25.0;
    std::uint64_t gen_seed = 1;
    bool gen_pgm = false;
    gen->add_option("--kind", gen_kind, "blocks|bumps|mixed");
    gen->add_option("--height", gen_h);
    gen->add_option("--width", gen_w);
    gen->add_option("--count", gen_count);
    gen->add_option("--sigma", gen_sigma, "noise std on the 8-bit scale (divided by 255)");
    gen->add_option("--seed", gen_seed);
    gen->add_option("--out", gen_out, "output directory");
    gen->add_flag("--pgm", gen_pgm, "also write PGM previews");

    // train
    auto* tr = app.add_subcommand("train", "train a model per config");
    std::string tr_config, tr_out, tr_mode;
    std::optional<std::uint64_t> tr_seed;
    std::optional<int> tr_k;
    std::optional<double> tr_p, tr_sigma;
    tr->add_option("--config", tr_config, "experiment config JSON file");
    tr->add_option("--seed", tr_seed, "override config seed");
    tr->add_option("--out", tr_out, "output directory (checkpoint + metrics)");
    tr->add_option("--mode", tr_mode, "supervised|n2n|sure|n2v|n2b-joint|n2b-twostage");
    tr->add_option("--k", tr_k, "override boost mask count");
    tr->add_option("--p", tr_p, "override bernoulli mask probability");
    tr->add_option("--sigma", tr_sigma, "override noise std (8-bit scale)");

    // infer
    auto* inf = app.add_subcommand("infer", "denoise one image with a checkpoint");
    std::string inf_ckpt, inf_input, inf_out = "denoised.n2bt", inf_agg = "mean";
    std::optional<int> inf_k;
    std::uint64_t inf_seed = 0;
    inf->add_option("--checkpoint", inf_ckpt)->required();
    inf->add_option("--input", inf_input, "PGM (.pgm) or tensor (.n2bt) image")->required();
    inf->add_option("--out", inf_out, "output image path");
    inf->add_option("--aggregation", inf_agg, "mean|attention");
    inf->add_option("--k", inf_k, "override mask count");
    inf->add_option("--seed", inf_seed, "mask seed");

    // verify
    auto* ver = app.add_subcommand("verify", "run the numerical property suites");
    std::string ver_suite = "all", ver_out;
    std::uint64_t ver_seed = 7;
    ver->add_option("--suite", ver_suite, "all|lemma1|prop1|prop2|prop3|sure_unbiased|bn_diag");
    ver->add_option("--seed", ver_seed);
    ver->add_option("--out", ver_out, "write the JSON report to this file");

    // report
    auto* rep = app.add_subcommand("report", "summarize a training run directory");
    std::string rep_run, rep_out;
    rep->add_option("--run", rep_run)->required();
    rep->add_option("--out", rep_out);

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed()) {
            return cmd_gen_data(gen_kind, gen_h, gen_w, gen_count, gen_sigma, gen_seed, gen_out,
                                gen_pgm);
        }

        if (tr->parsed()) {
            n2b::ExperimentConfig cfg = n2b::default_experiment();
            if (!tr_config.empty()) {
                std::ifstream is(tr_config);
                if (!is) throw std::runtime_error("cannot open config " + tr_config);
                cfg = n2b::experiment_from_json(json::parse(is));
            }
            if (!tr_mode.empty()) cfg.mode = n2b::train_mode_from_string(tr_mode);
            if (tr_seed) cfg.seed = *tr_seed;
            if (tr_k) cfg.boost.k = *tr_k;
            if (tr_p) cfg.boost.p = *tr_p;
            if (tr_sigma) cfg.sigma = *tr_sigma / 255.0;
            if (!tr_out.empty()) cfg.out_dir = tr_out;
            const n2b::TrainResult result = n2b::train(cfg);
            json out = n2b::metrics_json(cfg, result.history);
            std::cout << out["final"].dump() << "\n";
            return 0;
        }

        if (inf->parsed()) {
            const n2b::Checkpoint ckpt = n2b::load_checkpoint(inf_ckpt);
            n2b::BoostConfig boost;
            if (ckpt.manifest.contains("extra") && ckpt.manifest["extra"].contains("boost")) {
                const json& b = ckpt.manifest["extra"]["boost"];
                boost.k = b.value("k", boost.k);
                boost.kind = b.value("kind", std::string("weights")) == "bernoulli"
                                 ? n2b::MaskKind::bernoulli
                                 : n2b::MaskKind::weights;
                boost.p = b.value("p", boost.p);
                boost.lo = b.value("lo", boost.lo);
                boost.hi = b.value("hi", boost.hi);
                boost.base_seed = b.value("base_seed", boost.base_seed);
            }
            if (ckpt.attention) boost.k = ckpt.attention->k;
            if (inf_k) boost.k = *inf_k;
            const n2b::Aggregation agg = inf_agg == "attention" ? n2b::Aggregation::attention
                                                                : n2b::Aggregation::mean;
            const n2b::Tensor x = read_image(inf_input);
            const n2b::Tensor y = n2b::infer(ckpt.net, ckpt.attention ? &*ckpt.attention : nullptr,
                                             x, boost, agg, inf_seed);
            write_image(inf_out, y);
            std::cout << "wrote " << inf_out << "\n";
            return 0;
        }

        if (ver->parsed()) {
            const auto suites = n2b::run_suites(ver_suite, ver_seed);
            const json report = n2b::verify_report_json(ver_suite, ver_seed, suites);
            const std::string text = report.dump(2) + "\n";
            if (!ver_out.empty()) {
                std::ofstream os(ver_out, std::ios::binary);
                os << text;
            }
            std::cout << text;
            return report["pass"].get<bool>() ? 0 : 1;
        }

        if (rep->parsed()) {
            std::ifstream is(fs::path(rep_run) / "metrics.json");
            if (!is) throw std::runtime_error("no metrics.json under " + rep_run);
            const json metrics = json::parse(is);
            json summary;
            summary["run"] = rep_run;
            summary["mode"] = metrics["config"]["mode"];
            summary["epochs"] = metrics["history"].size();
            if (metrics.contains("final")) summary["final"] = metrics["final"];
            const std::string text = summary.dump(2) + "\n";
            if (!rep_out.empty()) {
                std::ofstream os(rep_out, std::ios::binary);
                os << text;
            }
            std::cout << text;
            return 0;
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
