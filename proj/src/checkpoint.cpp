#include "mvgen/checkpoint.hpp"

#include <fstream>

namespace mvg::ckpt {

namespace {
nlohmann::json tensor_to_json(const Tensor& t) {
    return {{"shape", t.shape()},
            {"data", std::vector<double>(t.data(), t.data() + t.numel())}};
}

Tensor tensor_from_json(const nlohmann::json& j) {
    return Tensor(j.at("shape").get<std::vector<int>>(),
                  j.at("data").get<std::vector<double>>());
}

nlohmann::json map_to_json(const std::map<std::string, Tensor>& m) {
    nlohmann::json j = nlohmann::json::object();
    for (const auto& [k, v] : m) j[k] = tensor_to_json(v);
    return j;
}

std::map<std::string, Tensor> map_from_json(const nlohmann::json& j) {
    std::map<std::string, Tensor> m;
    for (auto it = j.begin(); it != j.end(); ++it) m[it.key()] = tensor_from_json(*it);
    return m;
}
}  // namespace

void save(const Checkpoint& c, const std::string& path) {
    nlohmann::json j;
    j["format_version"] = c.format_version;
    j["kind"] = c.kind;
    j["global_step"] = c.global_step;
    j["config"] = c.config;
    j["extra"] = c.extra;
    j["params"] = map_to_json(c.params);
    j["opt_m"] = map_to_json(c.opt_m);
    j["opt_v"] = map_to_json(c.opt_v);
    j["opt_step"] = c.opt_step;
    const auto bytes = nlohmann::json::to_msgpack(j);
    std::ofstream out(path, std::ios::binary);
    require(out.good(), "IO_FAILURE", "cannot open " + path + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    require(out.good(), "IO_FAILURE", "write failed for " + path);
}

Checkpoint load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    require(in.good(), "IO_FAILURE", "cannot open " + path);
    std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                               std::istreambuf_iterator<char>());
    const auto j = nlohmann::json::from_msgpack(bytes);
    Checkpoint c;
    c.format_version = j.at("format_version").get<int>();
    require(c.format_version == 1, "UNSUPPORTED_FORMAT",
            "checkpoint format_version " + std::to_string(c.format_version));
    c.kind = j.at("kind").get<std::string>();
    c.global_step = j.at("global_step").get<int64_t>();
    c.config = j.at("config");
    c.extra = j.at("extra");
    c.params = map_from_json(j.at("params"));
    c.opt_m = map_from_json(j.at("opt_m"));
    c.opt_v = map_from_json(j.at("opt_v"));
    c.opt_step = j.at("opt_step").get<int64_t>();
    return c;
}

void capture_params(Checkpoint& c, const nn::ParamStore& ps, nn::Adam* opt) {
    for (const auto& [name, var] : ps.named()) c.params[name] = var->val;
    if (opt) {
        const auto& names = ps.names();
        for (size_t i = 0; i < names.size(); ++i) {
            c.opt_m[names[i]] = opt->m()[i];
            c.opt_v[names[i]] = opt->v()[i];
        }
        c.opt_step = opt->step_count();
    }
}

void restore_params(const Checkpoint& c, nn::ParamStore& ps, nn::Adam* opt) {
    for (const auto& [name, var] : ps.named()) {
        auto it = c.params.find(name);
        require(it != c.params.end(), "CONFIG_MISMATCH", "checkpoint missing param " + name);
        require(it->second.shape() == var->val.shape(), "CONFIG_MISMATCH",
                "param " + name + " shape " + it->second.shape_str() + " vs model " +
                    var->val.shape_str());
        var->val = it->second;
    }
    if (opt && !c.opt_m.empty()) {
        const auto& names = ps.names();
        for (size_t i = 0; i < names.size(); ++i) {
            auto mi = c.opt_m.find(names[i]);
            auto vi = c.opt_v.find(names[i]);
            require(mi != c.opt_m.end() && vi != c.opt_v.end(), "CONFIG_MISMATCH",
                    "optimizer state missing for " + names[i]);
            opt->m()[i] = mi->second;
            opt->v()[i] = vi->second;
        }
        opt->set_step_count(c.opt_step);
    }
}

}  // namespace mvg::ckpt
