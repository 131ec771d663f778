#include "n2b/train.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include "n2b/rng.hpp"

namespace n2b {

TrainMode train_mode_from_string(const std::string& s) {
    if (s == "supervised") return TrainMode::supervised;
    if (s == "n2n") return TrainMode::n2n;
    if (s == "sure") return TrainMode::sure;
    if (s == "n2v") return TrainMode::n2v;
    if (s == "n2b-joint") return TrainMode::n2b_joint;
    if (s == "n2b-twostage") return TrainMode::n2b_twostage;
    throw std::invalid_argument("unknown mode '" + s +
                                "' (supervised|n2n|sure|n2v|n2b-joint|n2b-twostage)");
}

std::string train_mode_name(TrainMode m) {
    switch (m) {
        case TrainMode::supervised: return "supervised";
        case TrainMode::n2n: return "n2n";
        case TrainMode::sure: return "sure";
        case TrainMode::n2v: return "n2v";
        case TrainMode::n2b_joint: return "n2b-joint";
        case TrainMode::n2b_twostage: return "n2b-twostage";
    }
    return "?";
}

double LrSchedule::at(int epoch) const {
    double lr = start;
    for (int e = halve_every; e <= epoch; e += halve_every) lr *= 0.5;
    return std::max(lr, floor);
}

void ExperimentConfig::validate() const {
    network.validate();
    if (batch < 1 || epochs < 0) throw std::invalid_argument("bad batch/epochs");
    if (network.spatial.size() != 2 || network.spatial[0] != data.height ||
        network.spatial[1] != data.width) {
        throw std::invalid_argument("network spatial dims must match the dataset size");
    }
    const int div = 1 << network.stages;
    if (data.height % div != 0 || data.width % div != 0) {
        throw std::invalid_argument("dataset size must be divisible by 2^stages");
    }
    const bool needs_sigma = mode == TrainMode::sure || mode == TrainMode::n2v ||
                             mode == TrainMode::n2b_joint || mode == TrainMode::n2b_twostage;
    if (needs_sigma && sigma <= 0.0) {
        throw std::invalid_argument(train_mode_name(mode) + " requires sigma > 0");
    }
    if ((mode == TrainMode::n2b_joint || mode == TrainMode::n2b_twostage) && boost.k < 1) {
        throw std::invalid_argument("boosted modes require k >= 1");
    }
    if (mode == TrainMode::sure && network.bn_mode == BnMode::train && batch < 2) {
        throw std::invalid_argument("bn train mode requires batch >= 2");
    }
}

ExperimentConfig default_experiment() {
    ExperimentConfig cfg;
    cfg.network.stages = 2;
    cfg.network.channels = {1, 8, 16};
    cfg.network.taps = 3;
    cfg.network.spatial = {32, 32};
    cfg.network.bias_free = true;
    cfg.network.bn_mode = BnMode::off;
    return cfg;
}

nlohmann::json experiment_to_json(const ExperimentConfig& cfg) {
    nlohmann::json j;
    j["mode"] = train_mode_name(cfg.mode);
    j["network"] = network_config_to_json(cfg.network);
    j["boost"] = {{"k", cfg.boost.k},
                  {"kind", cfg.boost.kind == MaskKind::bernoulli ? "bernoulli" : "weights"},
                  {"p", cfg.boost.p},
                  {"lo", cfg.boost.lo},
                  {"hi", cfg.boost.hi},
                  {"base_seed", cfg.boost.base_seed}};
    j["sigma"] = cfg.sigma * 255.0;
    j["optimizer"] = {{"lr", cfg.lr.start},
                      {"halve_every", cfg.lr.halve_every},
                      {"lr_floor", cfg.lr.floor},
                      {"batch", cfg.batch},
                      {"epochs", cfg.epochs},
                      {"attention_epochs", cfg.attention_epochs}};
    j["augment"] = {{"enabled", cfg.augment.enabled},
                    {"sigma_lo", cfg.augment.sigma_lo * 255.0},
                    {"sigma_hi", cfg.augment.sigma_hi * 255.0}};
    j["data"] = {{"kind", data_kind_name(cfg.data.kind)},
                 {"height", cfg.data.height},
                 {"width", cfg.data.width},
                 {"train", cfg.data.train_count},
                 {"test", cfg.data.test_count},
                 {"seed", cfg.data.seed}};
    j["sure_div"] = {{"probe_eps", cfg.sure_div.probe_eps}, {"n_probes", cfg.sure_div.n_probes}};
    j["n2v_divergence"] = cfg.n2v_divergence;
    j["seed"] = cfg.seed;
    return j;
}

ExperimentConfig experiment_from_json(const nlohmann::json& j) {
    ExperimentConfig cfg = default_experiment();
    if (j.contains("mode")) cfg.mode = train_mode_from_string(j.at("mode").get<std::string>());
    if (j.contains("network")) cfg.network = network_config_from_json(j.at("network"));
    if (j.contains("boost")) {
        const auto& b = j.at("boost");
        cfg.boost.k = b.value("k", cfg.boost.k);
        const std::string kind = b.value("kind", std::string("weights"));
        if (kind == "bernoulli") {
            cfg.boost.kind = MaskKind::bernoulli;
        } else if (kind == "weights") {
            cfg.boost.kind = MaskKind::weights;
        } else {
            throw std::invalid_argument("unknown mask kind '" + kind + "'");
        }
        cfg.boost.p = b.value("p", cfg.boost.p);
        cfg.boost.lo = b.value("lo", cfg.boost.lo);
        cfg.boost.hi = b.value("hi", cfg.boost.hi);
        cfg.boost.base_seed = b.value("base_seed", cfg.boost.base_seed);
    }
    if (j.contains("sigma")) cfg.sigma = j.at("sigma").get<double>() / 255.0;
    if (j.contains("optimizer")) {
        const auto& o = j.at("optimizer");
        cfg.lr.start = o.value("lr", cfg.lr.start);
        cfg.lr.halve_every = o.value("halve_every", cfg.lr.halve_every);
        cfg.lr.floor = o.value("lr_floor", cfg.lr.floor);
        cfg.batch = o.value("batch", cfg.batch);
        cfg.epochs = o.value("epochs", cfg.epochs);
        cfg.attention_epochs = o.value("attention_epochs", cfg.attention_epochs);
    }
    if (j.contains("augment")) {
        const auto& a = j.at("augment");
        cfg.augment.enabled = a.value("enabled", cfg.augment.enabled);
        if (a.contains("sigma_lo")) cfg.augment.sigma_lo = a.at("sigma_lo").get<double>() / 255.0;
        if (a.contains("sigma_hi")) cfg.augment.sigma_hi = a.at("sigma_hi").get<double>() / 255.0;
    }
    if (j.contains("data")) {
        const auto& d = j.at("data");
        if (d.contains("kind")) cfg.data.kind = data_kind_from_string(d.at("kind").get<std::string>());
        cfg.data.height = d.value("height", cfg.data.height);
        cfg.data.width = d.value("width", cfg.data.width);
        cfg.data.train_count = d.value("train", cfg.data.train_count);
        cfg.data.test_count = d.value("test", cfg.data.test_count);
        cfg.data.seed = d.value("seed", cfg.data.seed);
    }
    if (j.contains("sure_div")) {
        const auto& s = j.at("sure_div");
        cfg.sure_div.probe_eps = s.value("probe_eps", cfg.sure_div.probe_eps);
        cfg.sure_div.n_probes = s.value("n_probes", cfg.sure_div.n_probes);
    }
    cfg.n2v_divergence = j.value("n2v_divergence", cfg.n2v_divergence);
    cfg.seed = j.value("seed", cfg.seed);
    if (j.contains("out")) cfg.out_dir = j.at("out").get<std::string>();
    return cfg;
}

namespace {

// [B, q0, spatial...] batch from per-sample [spatial...] tensors
Tensor stack_batch(const std::vector<const Tensor*>& samples, const NetworkConfig& cfg) {
    std::vector<int> shape = {static_cast<int>(samples.size())};
    const std::vector<int> in = cfg.input_shape();
    shape.insert(shape.end(), in.begin(), in.end());
    Tensor batch(shape);
    const std::size_t stride = shape_size(in);
    for (std::size_t b = 0; b < samples.size(); ++b) {
        const Tensor& s = *samples[b];
        if (s.size() != stride) {
            throw std::invalid_argument("stack_batch: sample size mismatch");
        }
        for (std::size_t i = 0; i < stride; ++i) batch[b * stride + i] = s[i];
    }
    return batch;
}

Tensor tile_to_batch(const Tensor& single, int batch, const NetworkConfig& cfg) {
    std::vector<int> shape = {batch};
    const std::vector<int> in = cfg.input_shape();
    shape.insert(shape.end(), in.begin(), in.end());
    Tensor out(shape);
    const std::size_t stride = shape_size(in);
    for (int b = 0; b < batch; ++b) {
        for (std::size_t i = 0; i < stride; ++i) out[static_cast<std::size_t>(b) * stride + i] = single[i];
    }
    return out;
}

struct Optimizer {
    std::vector<AdamState> enc_k, dec_k, enc_b, dec_b, enc_bn, dec_bn;
    std::vector<AdamState> attn;  // w1, b1, w2, b2

    explicit Optimizer(const Network& net, const AttentionNet* attention) {
        enc_k.resize(net.enc_kernels.size());
        dec_k.resize(net.dec_kernels.size());
        enc_b.resize(net.enc_bias.size());
        dec_b.resize(net.dec_bias.size());
        enc_bn.resize(net.enc_bn_scale.size());
        dec_bn.resize(net.dec_bn_scale.size());
        if (attention) attn.resize(4);
    }

    void apply(Network& net, const Gradients& g, double lr) {
        for (std::size_t i = 0; i < g.enc_k.size(); ++i)
            adam_step(net.enc_kernels[i].weights, g.enc_k[i], enc_k[i], lr);
        for (std::size_t i = 0; i < g.dec_k.size(); ++i)
            adam_step(net.dec_kernels[i].weights, g.dec_k[i], dec_k[i], lr);
        for (std::size_t i = 0; i < g.enc_b.size(); ++i)
            adam_step(net.enc_bias[i], g.enc_b[i], enc_b[i], lr);
        for (std::size_t i = 0; i < g.dec_b.size(); ++i)
            adam_step(net.dec_bias[i], g.dec_b[i], dec_b[i], lr);
        for (std::size_t i = 0; i < g.enc_bn.size(); ++i)
            adam_step(net.enc_bn_scale[i], g.enc_bn[i], enc_bn[i], lr);
        for (std::size_t i = 0; i < g.dec_bn.size(); ++i)
            adam_step(net.dec_bn_scale[i], g.dec_bn[i], dec_bn[i], lr);
    }

    void apply_attention(AttentionNet& a, const AttentionGradients& g, double lr) {
        adam_step(a.w1, g.w1, attn[0], lr);
        adam_step(a.b1, g.b1, attn[1], lr);
        adam_step(a.w2, g.w2, attn[2], lr);
        adam_step(a.b2, g.b2, attn[3], lr);
    }
};

MaskPattern step_mask(const ExperimentConfig& cfg, const std::vector<int>& shape, int epoch,
                      int step, int k) {
    const std::uint64_t seed = mix_seed(cfg.boost.base_seed,
                                        {0x6d61736bULL, static_cast<std::uint64_t>(epoch),
                                         static_cast<std::uint64_t>(step),
                                         static_cast<std::uint64_t>(k)});
    if (cfg.boost.kind == MaskKind::bernoulli) return draw_bernoulli_mask(shape, cfg.boost.p, seed);
    return draw_weight_mask(shape, cfg.boost.lo, cfg.boost.hi, seed);
}

struct StepContext {
    const ExperimentConfig& cfg;
    Network& net;
    AttentionNet* attention;
    int epoch, step;
    Tensor input;    // [B, q0, sp...] noisy measurement batch
    Tensor target;   // same shape: training target per mode
};

// Builds the differentiable batch loss for one step and runs backward.
// Returns loss value; parameter gradients are read from pv afterwards.
double run_step(StepContext& ctx, ParamVars& pv, AttentionVars* av) {
    const ExperimentConfig& cfg = ctx.cfg;
    const int batch = ctx.input.extent(0);
    const double inv_b = 1.0 / static_cast<double>(batch);
    const ForwardMode fwd_mode = ForwardMode::train;
    ad::Var loss;

    switch (cfg.mode) {
        case TrainMode::supervised:
        case TrainMode::n2n: {
            ad::Var y = forward_var(ctx.net, pv, ad::Var::constant(ctx.input), fwd_mode);
            loss = ad::scale(ad::sum_sq(ad::sub_const(y, ctx.target)), inv_b);
            break;
        }
        case TrainMode::sure: {
            ad::Var y = forward_var(ctx.net, pv, ad::Var::constant(ctx.input), fwd_mode);
            ad::Var fid = ad::sum_sq(ad::sub_const(y, ctx.input));
            RngStream rng(mix_seed(cfg.seed, {0x70726f62ULL, static_cast<std::uint64_t>(ctx.epoch),
                                              static_cast<std::uint64_t>(ctx.step)}));
            const double eps = cfg.sure_div.probe_eps;
            Tensor probe(ctx.input.shape());
            for (std::size_t i = 0; i < probe.size(); ++i) probe[i] = rng.normal();
            Tensor perturbed = ctx.input;
            for (std::size_t i = 0; i < perturbed.size(); ++i) perturbed[i] += eps * probe[i];
            ad::Var yp = forward_var(ctx.net, pv, ad::Var::constant(perturbed), fwd_mode);
            ad::Var div_sum = ad::scale(ad::dot_const(ad::sub(yp, y), probe), 1.0 / eps);
            loss = ad::scale(ad::add(fid, ad::scale(div_sum, 2.0 * cfg.sigma * cfg.sigma)), inv_b);
            break;
        }
        case TrainMode::n2v:
        case TrainMode::n2b_twostage: {  // stage one trains the masked fidelity
            const std::vector<int> in_shape = cfg.network.input_shape();
            std::vector<ad::Var> terms;
            for (int k = 0; k < cfg.boost.k; ++k) {
                const MaskPattern mask = step_mask(cfg, in_shape, ctx.epoch, ctx.step, k);
                const Tensor tiled = tile_to_batch(mask.values, batch, cfg.network);
                ad::Var y = forward_var(ctx.net, pv,
                                        ad::Var::constant(mul(ctx.input, tiled)), fwd_mode);
                ad::Var term = ad::sum_sq(ad::sub_const(y, ctx.input));
                if (cfg.mode == TrainMode::n2v && cfg.n2v_divergence) {
                    RngStream rng(mix_seed(cfg.seed, {0x6e327664ULL,
                                                      static_cast<std::uint64_t>(ctx.epoch),
                                                      static_cast<std::uint64_t>(ctx.step),
                                                      static_cast<std::uint64_t>(k)}));
                    const double eps = cfg.sure_div.probe_eps;
                    Tensor probe(ctx.input.shape());
                    for (std::size_t i = 0; i < probe.size(); ++i) probe[i] = rng.normal();
                    Tensor perturbed = ctx.input;
                    for (std::size_t i = 0; i < perturbed.size(); ++i) perturbed[i] += eps * probe[i];
                    ad::Var yp = forward_var(ctx.net, pv,
                                             ad::Var::constant(mul(perturbed, tiled)), fwd_mode);
                    ad::Var div_sum = ad::scale(ad::dot_const(ad::sub(yp, y), probe), 1.0 / eps);
                    term = ad::add(term, ad::scale(div_sum, 2.0 * cfg.sigma * cfg.sigma));
                }
                terms.push_back(term);
            }
            loss = ad::scale(ad::average(terms), inv_b);
            break;
        }
        case TrainMode::n2b_joint: {
            const std::vector<int> in_shape = cfg.network.input_shape();
            Tensor source = ctx.input;
            if (cfg.augment.enabled) {
                source = noise_augment(source, cfg.augment.sigma_lo, cfg.augment.sigma_hi,
                                       mix_seed(cfg.seed, {0x617567ULL,
                                                           static_cast<std::uint64_t>(ctx.epoch),
                                                           static_cast<std::uint64_t>(ctx.step)}));
            }
            std::vector<ad::Var> branches;
            branches.reserve(static_cast<std::size_t>(cfg.boost.k));
            for (int k = 0; k < cfg.boost.k; ++k) {
                const MaskPattern mask = step_mask(cfg, in_shape, ctx.epoch, ctx.step, k);
                const Tensor tiled = tile_to_batch(mask.values, batch, cfg.network);
                branches.push_back(
                    forward_var(ctx.net, pv, ad::Var::constant(mul(source, tiled)), fwd_mode));
            }
            const std::size_t stride = shape_size(cfg.network.input_shape());
            std::vector<ad::Var> sample_losses;
            for (int b = 0; b < batch; ++b) {
                std::vector<ad::Var> slices, feats;
                for (const ad::Var& br : branches) {
                    ad::Var s = ad::slice_batch(br, b);
                    feats.push_back(ad::mean_all(s));
                    slices.push_back(std::move(s));
                }
                ad::Var w = attention_weights_var(ad::stack_scalars(feats), *av);
                ad::Var agg = ad::weighted_sum(slices, w);
                Tensor tgt(cfg.network.input_shape());
                for (std::size_t i = 0; i < stride; ++i)
                    tgt[i] = ctx.target[static_cast<std::size_t>(b) * stride + i];
                sample_losses.push_back(ad::sum_sq(ad::sub_const(agg, tgt)));
            }
            loss = ad::scale(ad::add_many(sample_losses), inv_b);
            break;
        }
    }

    ad::backward(loss);
    return loss.value()[0];
}

// Attention-only phase of the two-stage regime: branch outputs are constants.
double run_attention_step(StepContext& ctx, AttentionVars& av) {
    const ExperimentConfig& cfg = ctx.cfg;
    const int batch = ctx.input.extent(0);
    const std::vector<int> in_shape = cfg.network.input_shape();
    const std::size_t stride = shape_size(in_shape);

    std::vector<MaskPattern> masks;
    for (int k = 0; k < cfg.boost.k; ++k) {
        masks.push_back(step_mask(cfg, in_shape, ctx.epoch, ctx.step, k));
    }
    std::vector<ad::Var> sample_losses;
    for (int b = 0; b < batch; ++b) {
        Tensor x(in_shape);
        for (std::size_t i = 0; i < stride; ++i)
            x[i] = ctx.input[static_cast<std::size_t>(b) * stride + i];
        std::vector<ad::Var> slices, feats;
        for (const MaskPattern& mask : masks) {
            Tensor branch = forward_value(ctx.net, apply_mask(x, mask));
            ad::Var c = ad::Var::constant(std::move(branch));
            feats.push_back(ad::mean_all(c));
            slices.push_back(std::move(c));
        }
        ad::Var w = attention_weights_var(ad::stack_scalars(feats), av);
        ad::Var agg = ad::weighted_sum(slices, w);
        sample_losses.push_back(ad::sum_sq(ad::sub_const(agg, x)));
    }
    ad::Var loss = ad::scale(ad::add_many(sample_losses), 1.0 / static_cast<double>(batch));
    ad::backward(loss);
    return loss.value()[0];
}

MetricsRecord evaluate_heldout(const ExperimentConfig& cfg, const Network& net,
                               const AttentionNet* attention, const Dataset& test) {
    const bool boosted = cfg.mode == TrainMode::n2b_joint || cfg.mode == TrainMode::n2b_twostage;
    double psnr_acc = 0.0, ssim_acc = 0.0;
    for (std::size_t i = 0; i < test.inputs.size(); ++i) {
        Tensor out;
        if (boosted) {
            out = infer(net, attention, test.inputs[i], cfg.boost,
                        attention ? Aggregation::attention : Aggregation::mean,
                        static_cast<std::uint64_t>(i));
        } else {
            out = forward_value(net, test.inputs[i]);
        }
        psnr_acc += psnr(out, test.clean[i]);
        ssim_acc += ssim(out, test.clean[i]);
    }
    const double n = static_cast<double>(test.inputs.size());
    return MetricsRecord{psnr_acc / n, ssim_acc / n};
}

}  // namespace

TrainResult train(const ExperimentConfig& cfg) {
    cfg.validate();

    // data: clean references, noisy measurements, and (for the paired regime)
    // independent second realizations as targets
    Dataset train_data = gen_synthetic_dataset(cfg.data.kind, cfg.data.height, cfg.data.width,
                                               cfg.data.train_count, cfg.data.seed);
    train_data.inputs = add_noise(train_data.clean, cfg.sigma, mix_seed(cfg.data.seed, 1));
    if (cfg.mode == TrainMode::n2n) {
        train_data.targets = add_noise(train_data.clean, cfg.sigma, mix_seed(cfg.data.seed, 2));
    }
    Dataset test_data = gen_synthetic_dataset(cfg.data.kind, cfg.data.height, cfg.data.width,
                                              cfg.data.test_count, mix_seed(cfg.data.seed, 3));
    test_data.inputs = add_noise(test_data.clean, cfg.sigma, mix_seed(cfg.data.seed, 4));

    TrainResult result;
    result.net = make_network(cfg.network, mix_seed(cfg.seed, 0x696e6974ULL));
    const bool boosted = cfg.mode == TrainMode::n2b_joint || cfg.mode == TrainMode::n2b_twostage;
    if (boosted) {
        result.attention = make_attention(cfg.boost.k, mix_seed(cfg.seed, 0x78695f30ULL));
    }
    AttentionNet* attention = result.attention ? &*result.attention : nullptr;
    Optimizer opt(result.net, attention);

    const int count = cfg.data.train_count;
    std::vector<int> order(static_cast<std::size_t>(count));
    std::iota(order.begin(), order.end(), 0);

    auto shuffled = [&](int epoch) {
        RngStream rng(mix_seed(cfg.seed, {0x73687566ULL, static_cast<std::uint64_t>(epoch)}));
        std::vector<int> idx = order;
        for (int i = count - 1; i > 0; --i) {
            const int j = static_cast<int>(rng.below(static_cast<std::uint64_t>(i + 1)));
            std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(j)]);
        }
        return idx;
    };

    auto record_epoch = [&](int epoch, double lr, double loss_value) {
        const MetricsRecord m = evaluate_heldout(cfg, result.net, attention, test_data);
        result.history.push_back(EpochRecord{epoch, lr, loss_value, m.psnr, m.ssim});
    };

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        const double lr = cfg.lr.at(epoch);
        const std::vector<int> idx = shuffled(epoch);
        double loss_acc = 0.0;
        int steps = 0;
        for (int pos = 0; pos < count; pos += cfg.batch, ++steps) {
            const int take = std::min(cfg.batch, count - pos);
            std::vector<const Tensor*> xs, ts;
            for (int b = 0; b < take; ++b) {
                const int i = idx[static_cast<std::size_t>(pos + b)];
                xs.push_back(&train_data.inputs[static_cast<std::size_t>(i)]);
                if (cfg.mode == TrainMode::supervised) {
                    ts.push_back(&train_data.clean[static_cast<std::size_t>(i)]);
                } else if (cfg.mode == TrainMode::n2n) {
                    ts.push_back(&train_data.targets[static_cast<std::size_t>(i)]);
                } else {
                    ts.push_back(&train_data.inputs[static_cast<std::size_t>(i)]);
                }
            }
            StepContext ctx{cfg, result.net, attention, epoch, steps,
                            stack_batch(xs, cfg.network), stack_batch(ts, cfg.network)};
            ParamVars pv = make_param_vars(result.net);
            AttentionVars av;
            double loss_value;
            if (cfg.mode == TrainMode::n2b_joint) {
                av = make_attention_vars(*attention);
                loss_value = run_step(ctx, pv, &av);
            } else {
                loss_value = run_step(ctx, pv, nullptr);
            }
            if (!std::isfinite(loss_value)) {
                throw std::runtime_error("training diverged: loss " + std::to_string(loss_value) +
                                         " at epoch " + std::to_string(epoch) + " step " +
                                         std::to_string(steps) + " (" + train_mode_name(cfg.mode) +
                                         ")");
            }
            opt.apply(result.net, collect_gradients(pv), lr);
            if (cfg.mode == TrainMode::n2b_joint) {
                auto take_grad = [](const ad::Var& v) {
                    return v.grad().empty() ? Tensor::zeros(v.value().shape()) : v.grad();
                };
                opt.apply_attention(*attention,
                                    AttentionGradients{take_grad(av.w1), take_grad(av.b1),
                                                       take_grad(av.w2), take_grad(av.b2)},
                                    lr);
            }
            loss_acc += loss_value;
        }
        record_epoch(epoch, lr, steps ? loss_acc / steps : 0.0);
    }

    if (cfg.mode == TrainMode::n2b_twostage) {
        // stage two: network frozen, attention trained on the aggregate loss
        for (int epoch = 0; epoch < cfg.attention_epochs; ++epoch) {
            const double lr = cfg.lr.at(epoch);
            const std::vector<int> idx = shuffled(cfg.epochs + epoch);
            double loss_acc = 0.0;
            int steps = 0;
            for (int pos = 0; pos < count; pos += cfg.batch, ++steps) {
                const int take = std::min(cfg.batch, count - pos);
                std::vector<const Tensor*> xs;
                for (int b = 0; b < take; ++b) {
                    xs.push_back(&train_data.inputs[static_cast<std::size_t>(idx[static_cast<std::size_t>(pos + b)])]);
                }
                StepContext ctx{cfg, result.net, attention, cfg.epochs + epoch, steps,
                                stack_batch(xs, cfg.network), Tensor()};
                AttentionVars av = make_attention_vars(*attention);
                const double loss_value = run_attention_step(ctx, av);
                if (!std::isfinite(loss_value)) {
                    throw std::runtime_error("attention training diverged at epoch " +
                                             std::to_string(epoch));
                }
                auto take_grad = [](const ad::Var& v) {
                    return v.grad().empty() ? Tensor::zeros(v.value().shape()) : v.grad();
                };
                opt.apply_attention(*attention,
                                    AttentionGradients{take_grad(av.w1), take_grad(av.b1),
                                                       take_grad(av.w2), take_grad(av.b2)},
                                    lr);
                loss_acc += loss_value;
            }
            record_epoch(cfg.epochs + epoch, lr, steps ? loss_acc / steps : 0.0);
        }
    }

    if (cfg.epochs == 0 && cfg.mode != TrainMode::n2b_twostage) {
        record_epoch(0, cfg.lr.at(0), 0.0);
    }

    // checkpoints evaluate with frozen statistics from here on
    nlohmann::json extra = nlohmann::json::object();
    if (result.net.config.bn_mode == BnMode::train) {
        extra["trained_bn_mode"] = "train";
        result.net.config.bn_mode = BnMode::linear_eval;
    }
    extra["mode"] = train_mode_name(cfg.mode);
    if (boosted) {
        extra["boost"] = {{"k", cfg.boost.k},
                          {"kind", cfg.boost.kind == MaskKind::bernoulli ? "bernoulli" : "weights"},
                          {"p", cfg.boost.p},
                          {"lo", cfg.boost.lo},
                          {"hi", cfg.boost.hi},
                          {"base_seed", cfg.boost.base_seed}};
    }

    result.train_data = std::move(train_data);
    result.test_data = std::move(test_data);

    if (!cfg.out_dir.empty()) {
        const std::filesystem::path dir(cfg.out_dir);
        std::filesystem::create_directories(dir);
        save_checkpoint(dir / "checkpoint", result.net, attention, cfg.seed, extra);
        std::ofstream os(dir / "metrics.json");
        if (!os) throw std::runtime_error("cannot write metrics.json in " + cfg.out_dir);
        os << metrics_json(cfg, result.history).dump(2) << "\n";
    }
    return result;
}

Tensor infer(const Network& net, const AttentionNet* attention, const Tensor& x,
             const BoostConfig& boost, Aggregation aggregation, std::uint64_t seed) {
    BoostConfig cfg = boost;
    cfg.base_seed = mix_seed(boost.base_seed, {0x696e666579ULL, seed});
    const std::vector<int> in_shape = net.config.input_shape();
    const std::vector<MaskPattern> masks = draw_mask_set(cfg, in_shape);

    const bool bare = x.rank() == net.config.spatial_rank();
    const Tensor xin = bare && net.config.channels[0] == 1
                           ? x.reshaped(in_shape)
                           : x;
    std::vector<Tensor> branches;
    branches.reserve(masks.size());
    for (const MaskPattern& mask : masks) {
        branches.push_back(forward_value(net, apply_mask(xin, mask)));
    }
    Tensor out;
    if (aggregation == Aggregation::attention) {
        if (!attention) throw std::invalid_argument("infer: attention aggregation needs weights");
        if (attention->k != cfg.k) {
            throw std::invalid_argument("infer: checkpoint attention k = " +
                                        std::to_string(attention->k) + " but boost k = " +
                                        std::to_string(cfg.k));
        }
        out = aggregate(branches, attention_weights(pooled_features(branches), *attention));
    } else {
        out = scaled(branches[0], 1.0 / static_cast<double>(branches.size()));
        for (std::size_t k = 1; k < branches.size(); ++k) {
            for (std::size_t i = 0; i < out.size(); ++i)
                out[i] += branches[k][i] / static_cast<double>(branches.size());
        }
    }
    return bare ? out.reshaped(x.shape()) : out;
}

nlohmann::json metrics_json(const ExperimentConfig& cfg, const std::vector<EpochRecord>& history) {
    nlohmann::json j;
    j["config"] = experiment_to_json(cfg);
    nlohmann::json hist = nlohmann::json::array();
    for (const EpochRecord& r : history) {
        hist.push_back({{"epoch", r.epoch},
                        {"lr", r.lr},
                        {"train_loss", r.train_loss},
                        {"test_psnr", r.test_psnr},
                        {"test_ssim", r.test_ssim}});
    }
    j["history"] = hist;
    if (!history.empty()) {
        j["final"] = {{"train_loss", history.back().train_loss},
                      {"test_psnr", history.back().test_psnr},
                      {"test_ssim", history.back().test_ssim}};
    }
    return j;
}

}  // namespace n2b
