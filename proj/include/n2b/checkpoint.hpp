// Checkpoint container: one N2BT tensor file per parameter plus a JSON
// manifest carrying the network configuration, tensor filenames and the
// originating seed. Attention parameters live under their own manifest key.

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>

#include "json.hpp"
#include "n2b/attention.hpp"
#include "n2b/network.hpp"

namespace n2b {

nlohmann::json network_config_to_json(const NetworkConfig& cfg);
NetworkConfig network_config_from_json(const nlohmann::json& j);

std::string bn_mode_name(BnMode mode);
BnMode bn_mode_from_string(const std::string& s);

struct Checkpoint {
    Network net;
    std::optional<AttentionNet> attention;
    std::uint64_t seed = 0;
    nlohmann::json manifest;
};

void save_checkpoint(const std::filesystem::path& dir, const Network& net,
                     const AttentionNet* attention, std::uint64_t seed,
                     const nlohmann::json& extra = nlohmann::json::object());

Checkpoint load_checkpoint(const std::filesystem::path& dir);

}  // namespace n2b
