#include "mvgen/config.hpp"

#include <fstream>
#include <set>

#include "mvgen/tensor.hpp"

namespace mvg::cfg {

using nlohmann::json;

namespace {

[[noreturn]] void bad(const std::string& path, const std::string& why) {
    fail("CONFIG_INVALID", path + ": " + why);
}

// Pulls known keys out of a section, rejecting unknown ones.
class Section {
public:
    Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j_.is_object()) bad(path_, "expected an object");
    }
    ~Section() = default;

    void finish() const {
        for (auto it = j_.begin(); it != j_.end(); ++it)
            if (!seen_.count(it.key())) bad(path_ + "." + it.key(), "unknown key");
    }

    const json* get(const std::string& key) {
        seen_.insert(key);
        auto it = j_.find(key);
        return it == j_.end() ? nullptr : &*it;
    }

    void num(const std::string& key, double& out, double lo, double hi) {
        if (const json* v = get(key)) {
            if (!v->is_number()) bad(path_ + "." + key, "expected a number");
            out = v->get<double>();
            if (out < lo || out > hi)
                bad(path_ + "." + key, "value " + std::to_string(out) + " outside [" +
                                           std::to_string(lo) + ", " + std::to_string(hi) + "]");
        }
    }
    void integer(const std::string& key, int& out, int lo, int hi) {
        if (const json* v = get(key)) {
            if (!v->is_number_integer()) bad(path_ + "." + key, "expected an integer");
            long long x = v->get<long long>();
            if (x < lo || x > hi)
                bad(path_ + "." + key, "value " + std::to_string(x) + " outside [" +
                                           std::to_string(lo) + ", " + std::to_string(hi) + "]");
            out = static_cast<int>(x);
        }
    }
    void uinteger(const std::string& key, uint64_t& out) {
        if (const json* v = get(key)) {
            if (!v->is_number_integer()) bad(path_ + "." + key, "expected an integer");
            out = v->get<uint64_t>();
        }
    }
    void int_list(const std::string& key, std::vector<int>& out, int lo, int hi) {
        if (const json* v = get(key)) {
            if (!v->is_array() || v->empty()) bad(path_ + "." + key, "expected a non-empty array");
            out.clear();
            for (const auto& e : *v) {
                if (!e.is_number_integer()) bad(path_ + "." + key, "expected integers");
                int x = e.get<int>();
                if (x < lo || x > hi) bad(path_ + "." + key, "element out of range");
                out.push_back(x);
            }
        }
    }
    void choice(const std::string& key, std::string& out, const std::set<std::string>& allowed) {
        if (const json* v = get(key)) {
            if (!v->is_string()) bad(path_ + "." + key, "expected a string");
            out = v->get<std::string>();
            if (!allowed.count(out)) {
                std::string opts;
                for (const auto& a : allowed) opts += (opts.empty() ? "" : ", ") + a;
                bad(path_ + "." + key, "'" + out + "' is not one of: " + opts);
            }
        }
    }

    const json& j_;
    std::string path_;
    std::set<std::string> seen_;
};

feat::FeatureBackend parse_feature_backend(const std::string& s) {
    return s == "identity" ? feat::FeatureBackend::IDENTITY : feat::FeatureBackend::TINY_CONV;
}
depth::DepthBackend parse_depth_backend(const std::string& s) {
    return s == "learned" ? depth::DepthBackend::LEARNED : depth::DepthBackend::ORACLE;
}
std::string feature_backend_name(feat::FeatureBackend b) {
    return b == feat::FeatureBackend::IDENTITY ? "identity" : "tiny_conv";
}
std::string depth_backend_name(depth::DepthBackend b) {
    return b == depth::DepthBackend::LEARNED ? "learned" : "oracle";
}

void parse_dataset(const json& j, DatasetConfig& c) {
    Section s(j, "dataset");
    s.integer("n_scenes", c.n_scenes, 1, 100000);
    s.integer("n_views", c.n_views, 1, 360);
    s.num("azimuth_step_deg", c.azimuth_step_deg, 0.1, 360.0);
    s.num("elevation_deg", c.elevation_deg, -89.0, 89.0);
    s.num("fov_y_deg", c.fov_y_deg, 1.0, 170.0);
    s.integer("resolution", c.resolution, 8, 1024);
    s.num("split_ratio", c.split_ratio, 0.0, 1.0);
    s.finish();
}

void parse_unet(const json& j, diff::MVUNetConfig& c) {
    Section s(j, "diffusion.unet");
    s.integer("base_channels", c.base_channels, 4, 256);
    s.int_list("channel_multipliers", c.channel_multipliers, 1, 16);
    s.int_list("attention_levels", c.attention_levels, 0, 15);
    s.integer("view_embedding_dim", c.view_embedding_dim, 1, 512);
    s.integer("text_embedding_dim", c.text_embedding_dim, 1, 512);
    s.integer("n_views_train", c.n_views_train, 1, 60);
    s.integer("vocab_size", c.vocab_size, 2, 65536);
    s.integer("max_prompt_len", c.max_prompt_len, 1, 256);
    s.integer("time_embedding_dim", c.time_embedding_dim, 2, 512);
    s.integer("view_slots", c.view_slots, 1, 360);
    s.finish();
}

void parse_diffusion(const json& j, DiffusionTrainConfig& c) {
    Section s(j, "diffusion");
    if (const json* u = s.get("unet")) parse_unet(*u, c.unet);
    s.integer("timesteps", c.timesteps, 2, 10000);
    s.num("beta_start", c.beta_start, 1e-8, 1.0);
    s.num("beta_end", c.beta_end, 1e-8, 1.0);
    s.integer("steps", c.steps, 1, 1000000);
    s.num("lr", c.lr, 0.0, 1.0);
    s.num("lambda_img", c.lambda_img, 0.0, 1e9);
    std::string fb = feature_backend_name(c.feature_backend);
    s.choice("feature_backend", fb, {"tiny_conv", "identity"});
    c.feature_backend = parse_feature_backend(fb);
    s.uinteger("feature_seed", c.feature_seed);
    s.integer("resolution", c.resolution, 8, 1024);
    s.integer("max_scenes", c.max_scenes, 0, 100000);
    s.integer("log_every", c.log_every, 1, 1000000);
    if (const json* w = s.get("loss_weights")) {
        Section ws(*w, "diffusion.loss_weights");
        ws.num("alpha", c.weights.alpha, 0.0, 1e12);
        ws.num("beta", c.weights.beta, 0.0, 1e12);
        ws.num("gamma", c.weights.gamma, 0.0, 1e12);
        ws.num("delta", c.weights.delta, 0.0, 1e12);
        ws.finish();
    }
    s.finish();
    if (c.beta_end <= c.beta_start) bad("diffusion.beta_end", "must exceed beta_start");
}

void parse_depth(const json& j, DepthTrainConfig& c) {
    Section s(j, "depth");
    std::string b = depth_backend_name(c.estimator.backend);
    s.choice("backend", b, {"oracle", "learned"});
    c.estimator.backend = parse_depth_backend(b);
    s.integer("encoder_levels", c.estimator.encoder_levels, 1, 6);
    s.integer("base_channels", c.estimator.base_channels, 2, 256);
    s.uinteger("seed", c.estimator.seed);
    s.integer("epochs", c.epochs, 1, 10000);
    s.num("lr", c.lr, 0.0, 1.0);
    s.integer("resolution", c.resolution, 8, 1024);
    s.integer("max_scenes", c.max_scenes, 0, 100000);
    s.integer("views_per_scene", c.views_per_scene, 1, 360);
    s.finish();
}

void parse_fusion(const json& j, FusionTrainConfig& c) {
    Section s(j, "fusion");
    s.integer("depth_levels", c.net.depth_levels, 1, 6);
    s.int_list("attention_levels", c.net.attention_levels, 0, 15);
    s.integer("shared_latent_dim", c.net.shared_latent_dim, 2, 512);
    s.integer("base_channels", c.net.base_channels, 4, 256);
    s.int_list("channel_multipliers", c.net.channel_multipliers, 1, 16);
    s.integer("steps", c.steps, 1, 1000000);
    s.num("lr", c.lr, 0.0, 1.0);
    s.num("lambda_consistency", c.lambda_consistency, 0.0, 1e9);
    s.integer("resolution", c.resolution, 8, 1024);
    s.integer("max_scenes", c.max_scenes, 0, 100000);
    std::string b = depth_backend_name(c.depth_backend);
    s.choice("depth_backend", b, {"oracle", "learned"});
    c.depth_backend = parse_depth_backend(b);
    s.finish();
}

void parse_eval(const json& j, EvalConfig& c) {
    Section s(j, "eval");
    s.choice("split", c.split, {"train", "test"});
    s.choice("stage", c.stage, {"stage1", "stage3"});
    s.integer("sample_steps", c.sample_steps, 1, 10000);
    s.integer("max_scenes", c.max_scenes, 0, 100000);
    s.integer("resolution", c.resolution, 8, 1024);
    std::string b = depth_backend_name(c.depth_backend);
    s.choice("depth_backend", b, {"oracle", "learned"});
    c.depth_backend = parse_depth_backend(b);
    s.finish();
}

}  // namespace

RunConfig parse_config(const json& j) {
    RunConfig c;
    Section s(j, "<root>");
    if (const json* v = s.get("dataset")) parse_dataset(*v, c.dataset);
    if (const json* v = s.get("diffusion")) parse_diffusion(*v, c.diffusion);
    if (const json* v = s.get("depth")) parse_depth(*v, c.depth);
    if (const json* v = s.get("fusion")) parse_fusion(*v, c.fusion);
    if (const json* v = s.get("eval")) parse_eval(*v, c.eval);
    s.finish();
    return c;
}

RunConfig load_config(const std::string& path) {
    std::ifstream in(path);
    require(in.good(), "IO_ERROR", "cannot open config: " + path);
    json j = json::parse(in, nullptr, false);
    require(!j.is_discarded(), "CONFIG_INVALID", "config is not valid JSON: " + path);
    return parse_config(j);
}

json config_to_json(const RunConfig& c) {
    return json{
        {"dataset",
         {{"n_scenes", c.dataset.n_scenes},
          {"n_views", c.dataset.n_views},
          {"azimuth_step_deg", c.dataset.azimuth_step_deg},
          {"elevation_deg", c.dataset.elevation_deg},
          {"fov_y_deg", c.dataset.fov_y_deg},
          {"resolution", c.dataset.resolution},
          {"split_ratio", c.dataset.split_ratio}}},
        {"diffusion",
         {{"unet",
           {{"base_channels", c.diffusion.unet.base_channels},
            {"channel_multipliers", c.diffusion.unet.channel_multipliers},
            {"attention_levels", c.diffusion.unet.attention_levels},
            {"view_embedding_dim", c.diffusion.unet.view_embedding_dim},
            {"text_embedding_dim", c.diffusion.unet.text_embedding_dim},
            {"n_views_train", c.diffusion.unet.n_views_train},
            {"vocab_size", c.diffusion.unet.vocab_size},
            {"max_prompt_len", c.diffusion.unet.max_prompt_len},
            {"time_embedding_dim", c.diffusion.unet.time_embedding_dim},
            {"view_slots", c.diffusion.unet.view_slots}}},
          {"timesteps", c.diffusion.timesteps},
          {"beta_start", c.diffusion.beta_start},
          {"beta_end", c.diffusion.beta_end},
          {"steps", c.diffusion.steps},
          {"lr", c.diffusion.lr},
          {"lambda_img", c.diffusion.lambda_img},
          {"feature_backend", feature_backend_name(c.diffusion.feature_backend)},
          {"feature_seed", c.diffusion.feature_seed},
          {"resolution", c.diffusion.resolution},
          {"max_scenes", c.diffusion.max_scenes},
          {"log_every", c.diffusion.log_every},
          {"loss_weights",
           {{"alpha", c.diffusion.weights.alpha},
            {"beta", c.diffusion.weights.beta},
            {"gamma", c.diffusion.weights.gamma},
            {"delta", c.diffusion.weights.delta}}}}},
        {"depth",
         {{"backend", depth_backend_name(c.depth.estimator.backend)},
          {"encoder_levels", c.depth.estimator.encoder_levels},
          {"base_channels", c.depth.estimator.base_channels},
          {"seed", c.depth.estimator.seed},
          {"epochs", c.depth.epochs},
          {"lr", c.depth.lr},
          {"resolution", c.depth.resolution},
          {"max_scenes", c.depth.max_scenes},
          {"views_per_scene", c.depth.views_per_scene}}},
        {"fusion",
         {{"depth_levels", c.fusion.net.depth_levels},
          {"attention_levels", c.fusion.net.attention_levels},
          {"shared_latent_dim", c.fusion.net.shared_latent_dim},
          {"base_channels", c.fusion.net.base_channels},
          {"channel_multipliers", c.fusion.net.channel_multipliers},
          {"steps", c.fusion.steps},
          {"lr", c.fusion.lr},
          {"lambda_consistency", c.fusion.lambda_consistency},
          {"resolution", c.fusion.resolution},
          {"max_scenes", c.fusion.max_scenes},
          {"depth_backend", depth_backend_name(c.fusion.depth_backend)}}},
        {"eval",
         {{"split", c.eval.split},
          {"stage", c.eval.stage},
          {"sample_steps", c.eval.sample_steps},
          {"max_scenes", c.eval.max_scenes},
          {"resolution", c.eval.resolution},
          {"depth_backend", depth_backend_name(c.eval.depth_backend)}}},
    };
}

std::string config_schema() {
    json defaults = config_to_json(RunConfig{});
    json schema = {
        {"description",
         "All sections and keys are optional; omitted keys take the defaults shown. "
         "Unknown keys are rejected."},
        {"defaults", defaults},
        {"constraints",
         {"dataset.split_ratio in [0,1], applied at scene granularity",
          "diffusion.beta_end must exceed diffusion.beta_start",
          "diffusion.feature_backend / *.depth_backend are enumerated strings",
          "all resolutions must be at least 8 pixels",
          "*.max_scenes = 0 means use every scene in the split"}},
    };
    return schema.dump(2);
}

}  // namespace mvg::cfg
