#pragma once

#include <map>
#include <string>

#include "json.hpp"
#include "mvgen/nn.hpp"

namespace mvg::ckpt {

// Single-archive checkpoint (msgpack on disk). `config` snapshots the module
// configuration; `extra` carries schedule parameters, extractor seeds and the
// like. format_version gates forward compatibility.
struct Checkpoint {
    int format_version = 1;
    std::string kind;  // "diffusion" | "depth" | "fusion"
    int64_t global_step = 0;
    nlohmann::json config;
    nlohmann::json extra;
    std::map<std::string, Tensor> params;
    std::map<std::string, Tensor> opt_m, opt_v;
    int64_t opt_step = 0;
};

void save(const Checkpoint& c, const std::string& path);
Checkpoint load(const std::string& path);

// Snapshot / restore a parameter store (and optionally Adam state).
void capture_params(Checkpoint& c, const nn::ParamStore& ps, nn::Adam* opt = nullptr);
void restore_params(const Checkpoint& c, nn::ParamStore& ps, nn::Adam* opt = nullptr);

}  // namespace mvg::ckpt
