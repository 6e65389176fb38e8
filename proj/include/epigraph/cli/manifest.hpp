#pragma once

#include <openssl/evp.h>

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include <json.hpp>

#include "epigraph/core/errors.hpp"

namespace epigraph::cli {

inline std::string sha256_hex(std::string_view bytes) {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1)
        throw Error("SHA-256 digest failed");
    static constexpr char hex[] = "0123456789abcdef";
    std::string out;
    for (unsigned int i = 0; i < len; ++i) {
        out += hex[digest[i] >> 4];
        out += hex[digest[i] & 0xF];
    }
    return out;
}

inline std::string read_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ArtifactError("cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline std::string sha256_file(const std::filesystem::path& path) { return sha256_hex(read_bytes(path)); }

inline std::string utc_timestamp(std::chrono::system_clock::time_point t) {
    const std::time_t tt = std::chrono::system_clock::to_time_t(t);
    std::tm tm{};
    gmtime_r(&tt, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

// Provenance record written beside every command's outputs. Timestamps are the
// only fields that differ between reruns of the same inputs.
struct RunManifest {
    std::string command;
    std::string config_path;
    std::string config_sha256;
    std::uint64_t seed = 0;
    std::chrono::system_clock::time_point started = std::chrono::system_clock::now();
    std::chrono::system_clock::time_point finished{};
    std::vector<std::string> inputs;
    std::vector<std::string> artifacts;

    nlohmann::ordered_json to_json() const {
        nlohmann::ordered_json j;
        j["command"] = command;
        j["config"] = {{"path", config_path}, {"sha256", config_sha256}};
        j["seed"] = seed;
        j["started"] = utc_timestamp(started);
        j["finished"] = utc_timestamp(finished);
        j["inputs"] = nlohmann::ordered_json::array();
        for (const auto& p : inputs) j["inputs"].push_back({{"path", p}, {"sha256", sha256_file(p)}});
        j["artifacts"] = nlohmann::ordered_json::array();
        for (const auto& p : artifacts) j["artifacts"].push_back({{"path", p}, {"sha256", sha256_file(p)}});
        return j;
    }
};

}  // namespace epigraph::cli
