#include "n2b/checkpoint.hpp"

#include <fstream>
#include <stdexcept>

namespace n2b {

std::string bn_mode_name(BnMode mode) {
    switch (mode) {
        case BnMode::off: return "off";
        case BnMode::linear_eval: return "linear_eval";
        case BnMode::train: return "train";
    }
    return "?";
}

BnMode bn_mode_from_string(const std::string& s) {
    if (s == "off") return BnMode::off;
    if (s == "linear_eval") return BnMode::linear_eval;
    if (s == "train") return BnMode::train;
    throw std::invalid_argument("unknown bn mode '" + s + "' (off|linear_eval|train)");
}

nlohmann::json network_config_to_json(const NetworkConfig& cfg) {
    nlohmann::json j;
    j["stages"] = cfg.stages;
    j["channels"] = cfg.channels;
    j["taps"] = cfg.taps;
    j["spatial"] = cfg.spatial;
    j["skip"] = cfg.skip_connections;
    j["bn"] = bn_mode_name(cfg.bn_mode);
    j["bias_free"] = cfg.bias_free;
    return j;
}

NetworkConfig network_config_from_json(const nlohmann::json& j) {
    NetworkConfig cfg;
    cfg.stages = j.at("stages").get<int>();
    cfg.channels = j.at("channels").get<std::vector<int>>();
    cfg.taps = j.at("taps").get<int>();
    cfg.spatial = j.at("spatial").get<std::vector<int>>();
    cfg.skip_connections = j.value("skip", false);
    cfg.bn_mode = bn_mode_from_string(j.value("bn", "off"));
    cfg.bias_free = j.value("bias_free", true);
    cfg.validate();
    return cfg;
}

namespace {

void save_group(const std::filesystem::path& dir, nlohmann::json& files, const std::string& stem,
                const std::vector<Tensor>& tensors) {
    for (std::size_t i = 0; i < tensors.size(); ++i) {
        const std::string name = stem + std::to_string(i + 1) + ".n2bt";
        write_tensor(dir / name, tensors[i]);
        files[stem + std::to_string(i + 1)] = name;
    }
}

std::vector<Tensor> load_group(const std::filesystem::path& dir, const nlohmann::json& files,
                               const std::string& stem, std::size_t count) {
    std::vector<Tensor> out;
    for (std::size_t i = 0; i < count; ++i) {
        const std::string key = stem + std::to_string(i + 1);
        out.push_back(read_tensor(dir / files.at(key).get<std::string>()));
    }
    return out;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& dir, const Network& net,
                     const AttentionNet* attention, std::uint64_t seed,
                     const nlohmann::json& extra) {
    std::filesystem::create_directories(dir);
    nlohmann::json manifest;
    manifest["format"] = "n2b-checkpoint-v1";
    manifest["config"] = network_config_to_json(net.config);
    manifest["seed"] = seed;
    if (!extra.empty()) manifest["extra"] = extra;

    nlohmann::json files = nlohmann::json::object();
    std::vector<Tensor> enc_k, dec_k;
    for (const auto& k : net.enc_kernels) enc_k.push_back(k.weights);
    for (const auto& k : net.dec_kernels) dec_k.push_back(k.weights);
    save_group(dir, files, "enc_kernel_", enc_k);
    save_group(dir, files, "dec_kernel_", dec_k);
    save_group(dir, files, "enc_bias_", net.enc_bias);
    save_group(dir, files, "dec_bias_", net.dec_bias);
    save_group(dir, files, "enc_bn_scale_", net.enc_bn_scale);
    save_group(dir, files, "dec_bn_scale_", net.dec_bn_scale);
    std::vector<Tensor> enc_rv, dec_rv;
    for (const auto& st : net.enc_bn_state) enc_rv.push_back(st.running_var);
    for (const auto& st : net.dec_bn_state) dec_rv.push_back(st.running_var);
    save_group(dir, files, "enc_bn_var_", enc_rv);
    save_group(dir, files, "dec_bn_var_", dec_rv);
    manifest["tensors"] = files;

    if (attention) {
        nlohmann::json att;
        att["k"] = attention->k;
        att["hidden"] = attention->hidden;
        nlohmann::json att_files = nlohmann::json::object();
        const std::pair<std::string, const Tensor*> parts[] = {
            {"w1", &attention->w1}, {"b1", &attention->b1}, {"w2", &attention->w2}, {"b2", &attention->b2}};
        for (const auto& [name, tensor] : parts) {
            const std::string file = "attention_" + name + ".n2bt";
            write_tensor(dir / file, *tensor);
            att_files[name] = file;
        }
        att["tensors"] = att_files;
        manifest["attention"] = att;
    }

    std::ofstream os(dir / "manifest.json");
    if (!os) throw std::runtime_error("cannot write manifest in " + dir.string());
    os << manifest.dump(2) << "\n";
}

Checkpoint load_checkpoint(const std::filesystem::path& dir) {
    std::ifstream is(dir / "manifest.json");
    if (!is) throw std::runtime_error("no manifest.json in " + dir.string());
    nlohmann::json manifest = nlohmann::json::parse(is);

    Checkpoint ckpt;
    ckpt.manifest = manifest;
    ckpt.seed = manifest.value("seed", 0ULL);
    const NetworkConfig cfg = network_config_from_json(manifest.at("config"));
    const nlohmann::json& files = manifest.at("tensors");

    Network net;
    net.config = cfg;
    const std::size_t kappa = static_cast<std::size_t>(cfg.stages);
    for (Tensor& t : load_group(dir, files, "enc_kernel_", kappa)) {
        net.enc_kernels.emplace_back(std::move(t));
    }
    for (Tensor& t : load_group(dir, files, "dec_kernel_", kappa)) {
        net.dec_kernels.emplace_back(std::move(t));
    }
    if (!cfg.bias_free) {
        net.enc_bias = load_group(dir, files, "enc_bias_", kappa);
        net.dec_bias = load_group(dir, files, "dec_bias_", kappa);
    }
    if (cfg.bn_mode != BnMode::off) {
        net.enc_bn_scale = load_group(dir, files, "enc_bn_scale_", kappa);
        net.dec_bn_scale = load_group(dir, files, "dec_bn_scale_", kappa - 1);
        for (Tensor& t : load_group(dir, files, "enc_bn_var_", kappa)) {
            net.enc_bn_state.push_back(BatchNormState{std::move(t)});
        }
        for (Tensor& t : load_group(dir, files, "dec_bn_var_", kappa - 1)) {
            net.dec_bn_state.push_back(BatchNormState{std::move(t)});
        }
    }
    ckpt.net = std::move(net);

    if (manifest.contains("attention")) {
        const nlohmann::json& att = manifest.at("attention");
        AttentionNet a;
        a.k = att.at("k").get<int>();
        a.hidden = att.at("hidden").get<int>();
        const nlohmann::json& att_files = att.at("tensors");
        a.w1 = read_tensor(dir / att_files.at("w1").get<std::string>());
        a.b1 = read_tensor(dir / att_files.at("b1").get<std::string>());
        a.w2 = read_tensor(dir / att_files.at("w2").get<std::string>());
        a.b2 = read_tensor(dir / att_files.at("b2").get<std::string>());
        ckpt.attention = std::move(a);
    }
    return ckpt;
}

}  // namespace n2b
