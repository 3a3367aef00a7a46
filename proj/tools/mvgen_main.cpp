// mvgen: multi-view architectural image generation pipeline.
//
// Subcommands: dataset, train-diffusion, train-depth, train-fusion, generate,
// evaluate, plot, pipeline. Every subcommand takes --config PATH --seed INT
// --out DIR; --print-schema dumps the config schema.
//
// Exit codes: 0 success, 1 validation failure (bad CLI/config), 2 runtime
// failure.

#include <cstdio>
#include <deque>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "mvgen/config.hpp"
#include "mvgen/pipeline.hpp"

namespace {

struct CommonArgs {
    std::string config_path;
    uint64_t seed = 0;
    std::string out_dir = ".";
};

CommonArgs* add_common(CLI::App* cmd, std::deque<CommonArgs>& storage) {
    CommonArgs* args = &storage.emplace_back();
    cmd->add_option("--config", args->config_path, "JSON config file (omit for defaults)");
    cmd->add_option("--seed", args->seed, "run seed")->required();
    cmd->add_option("--out", args->out_dir, "run directory")->required();
    return args;
}

bool is_validation_error(const std::string& msg) {
    return msg.rfind("CONFIG_INVALID", 0) == 0 || msg.rfind("ARTIFACT_MISSING", 0) == 0 ||
           msg.rfind("CONFIG_MISMATCH", 0) == 0 || msg.rfind("EMPTY_INPUT", 0) == 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"multi-view building image generation pipeline"};
    app.require_subcommand(0, 1);
    bool print_schema = false;
    app.add_flag("--print-schema", print_schema, "print the config schema and exit");

    struct Cmd {
        const char* name;
        const char* desc;
        void (*run)(const mvg::cfg::RunConfig&, uint64_t, const std::string&);
    };
    const Cmd cmds[] = {
        {"dataset", "render the paired scene dataset and write its manifest",
         [](const mvg::cfg::RunConfig& c, uint64_t seed, const std::string& out) {
             std::string m = mvg::pipe::build_dataset(c.dataset, seed, out);
             std::printf("manifest: %s\n", m.c_str());
         }},
        {"train-diffusion", "train the stage-1 multi-view diffusion model",
         [](const mvg::cfg::RunConfig& c, uint64_t seed, const std::string& out) {
             std::printf("checkpoint: %s\n", mvg::pipe::train_diffusion(c, seed, out).c_str());
         }},
        {"train-depth", "train the monocular depth estimator",
         [](const mvg::cfg::RunConfig& c, uint64_t seed, const std::string& out) {
             std::printf("checkpoint: %s\n", mvg::pipe::train_depth(c, seed, out).c_str());
         }},
        {"train-fusion", "train the stage-3 depth-fusion refiner",
         [](const mvg::cfg::RunConfig& c, uint64_t seed, const std::string& out) {
             std::printf("checkpoint: %s\n", mvg::pipe::train_fusion(c, seed, out).c_str());
         }},
        {"generate", "sample view bundles for the eval split and save PNGs",
         [](const mvg::cfg::RunConfig& c, uint64_t seed, const std::string& out) {
             mvg::pipe::generate(c, seed, out);
             std::printf("samples written under %s/samples\n", out.c_str());
         }},
        {"evaluate", "sample and score the eval split",
         [](const mvg::cfg::RunConfig& c, uint64_t seed, const std::string& out) {
             mvg::pipe::MetricsReport r = mvg::pipe::evaluate(c, seed, out);
             std::printf("%s\n", mvg::pipe::metrics_to_json(r).dump(2).c_str());
         }},
        {"plot", "render loss-curve and metric charts from run artifacts",
         [](const mvg::cfg::RunConfig&, uint64_t, const std::string& out) {
             mvg::pipe::make_plots(out);
             std::printf("plots written under %s/plots\n", out.c_str());
         }},
        {"pipeline", "run every stage in order, resuming from existing artifacts",
         [](const mvg::cfg::RunConfig& c, uint64_t seed, const std::string& out) {
             mvg::pipe::run_pipeline(c, seed, out);
             std::printf("pipeline complete: %s\n", out.c_str());
         }},
    };

    struct Pending {
        const Cmd* cmd;
        CommonArgs* args;
        CLI::App* sub;
    };
    std::deque<CommonArgs> arg_storage;
    std::vector<Pending> pending;
    for (const Cmd& c : cmds) {
        CLI::App* sub = app.add_subcommand(c.name, c.desc);
        pending.push_back({&c, add_common(sub, arg_storage), sub});
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int rc = app.exit(e);
        return rc == 0 ? 0 : 1;
    }

    if (print_schema) {
        std::cout << mvg::cfg::config_schema() << '\n';
        return 0;
    }

    for (const Pending& p : pending) {
        if (!p.sub->parsed()) continue;
        try {
            mvg::cfg::RunConfig cfg = p.args->config_path.empty()
                                          ? mvg::cfg::RunConfig{}
                                          : mvg::cfg::load_config(p.args->config_path);
            p.cmd->run(cfg, p.args->seed, p.args->out_dir);
            return 0;
        } catch (const std::exception& e) {
            std::fprintf(stderr, "%s: error: %s\n", p.cmd->name, e.what());
            return is_validation_error(e.what()) ? 1 : 2;
        }
    }
    std::cout << app.help();
    return 1;
}
