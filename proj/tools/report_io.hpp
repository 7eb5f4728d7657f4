#pragma once

// Report writing for the command-line tools: every table goes out with a JSON
// sidecar holding the configuration echo and git-style content hashes.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <openssl/evp.h>

#include "forecastkit/common.hpp"
#include "forecastkit/data.hpp"

namespace fk::tools {

/// SHA-1 of "blob <size>\0<content>", the id git assigns to the same bytes.
inline std::string git_blob_sha1(const std::string& content) {
    const std::string header = "blob " + std::to_string(content.size()) + '\0';
    EVP_MD_CTX* ctx = EVP_MD_CTX_new();
    if (!ctx) fail_numeric("sha1: cannot allocate digest context");
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    const bool ok = EVP_DigestInit_ex(ctx, EVP_sha1(), nullptr) == 1 &&
                    EVP_DigestUpdate(ctx, header.data(), header.size()) == 1 &&
                    EVP_DigestUpdate(ctx, content.data(), content.size()) == 1 &&
                    EVP_DigestFinal_ex(ctx, md, &len) == 1;
    EVP_MD_CTX_free(ctx);
    if (!ok) fail_numeric("sha1: digest failed");
    static const char* hex = "0123456789abcdef";
    std::string out;
    for (unsigned int i = 0; i < len; ++i) {
        out += hex[md[i] >> 4];
        out += hex[md[i] & 0xF];
    }
    return out;
}

inline std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail("cannot open '" + path + "'");
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

class ReportWriter {
public:
    ReportWriter(std::string command, json config, std::vector<std::string> inputs)
        : command_(std::move(command)), config_(std::move(config)) {
        for (const auto& p : inputs)
            if (!p.empty())
                inputs_[std::filesystem::path(p).filename().string()] = git_blob_sha1(read_file(p));
    }

    /// Writes `content` to `path` ("-" = stdout) plus `path.meta.json` next to it.
    void write(const std::string& path, const std::string& content) const {
        if (path.empty()) return;
        if (path == "-") {
            std::cout << content;
            return;
        }
        const auto parent = std::filesystem::path(path).parent_path();
        if (!parent.empty()) std::filesystem::create_directories(parent);
        put(path, content);
        json meta{{"command", command_},
                  {"config", config_},
                  {"inputs", inputs_},
                  {"output", std::filesystem::path(path).filename().string()},
                  {"sha1", git_blob_sha1(content)},
                  {"bytes", content.size()}};
        put(path + ".meta.json", meta.dump(2) + "\n");
    }

private:
    static void put(const std::string& path, const std::string& content) {
        std::ofstream out(path, std::ios::binary);
        if (!out) fail("cannot write '" + path + "'");
        out << content;
        if (!out) fail("write failed for '" + path + "'");
    }

    std::string command_;
    json config_;
    json inputs_ = json::object();
};

}  // namespace fk::tools
