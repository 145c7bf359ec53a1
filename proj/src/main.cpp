#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "foley/config.hpp"
#include "foley/errors.hpp"
#include "foley/pipeline.hpp"

namespace fs = std::filesystem;

namespace {

struct CommonArgs {
    std::string config_path;
    std::vector<std::string> sets;
    int64_t seed = -1;
    std::string out_dir;
};

void add_common(CLI::App* cmd, CommonArgs& a) {
    cmd->add_option("--config", a.config_path, "JSON config file merged over the defaults");
    cmd->add_option("--set", a.sets, "dotted.key=value override, repeatable");
    cmd->add_option("--seed", a.seed, "base RNG seed");
    cmd->add_option("--out", a.out_dir, "output directory");
}

void apply_common(foley::Config& cfg, const CommonArgs& a) {
    if (!a.config_path.empty()) cfg.load_file(a.config_path);
    for (const std::string& kv : a.sets) cfg.apply_set(kv);
    if (a.seed >= 0) cfg.set_num("seed", static_cast<double>(a.seed));
    if (!a.out_dir.empty()) cfg.set_str("paths.out", a.out_dir);
}

void dump_resolved(const foley::Config& cfg) {
    const std::string out = cfg.get_str("paths.out");
    fs::create_directories(out);
    std::ofstream f(fs::path(out) / "resolved_config.json");
    f << cfg.dump(2) << "\n";
}

void print_stage(const char* name, const foley::StageReport& r) {
    std::cout << name << " done";
    if (!r.losses.empty())
        std::cout << ", loss " << r.losses.front() << " -> " << r.losses.back();
    std::cout << ", metric " << r.metric << "\n";
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"synthetic-video foley pipeline: dataset, staged training, sampling, metrics"};
    app.require_subcommand(1);

    CommonArgs ca;
    foley::GenerateArgs ga;
    double lambda = 0.0;
    int steps = 0;
    double cfg_scale = 0.0;

    auto* c_gen_data = app.add_subcommand("gen-data", "write the synthetic dataset");
    auto* c_vae = app.add_subcommand("train-vae", "train the mel autoencoder, cache latents");
    auto* c_t2a = app.add_subcommand("train-t2a", "train the text-to-audio denoiser");
    auto* c_sem = app.add_subcommand("train-semantic", "train the visual context adapter");
    auto* c_det = app.add_subcommand("train-detector", "train the timestamp detector");
    auto* c_tmp = app.add_subcommand("train-temporal", "train the mask-conditioned adapter");
    auto* c_generate = app.add_subcommand("generate", "sample audio for a video and/or prompt");
    auto* c_eval = app.add_subcommand("evaluate", "score generations on the test split");
    for (CLI::App* cmd :
         {c_gen_data, c_vae, c_t2a, c_sem, c_det, c_tmp, c_generate, c_eval})
        add_common(cmd, ca);

    c_generate->add_option("video", ga.video_path, "video track file (.video.f32), optional");
    c_generate->add_option("--prompt", ga.prompt, "caption text");
    c_generate->add_option("--negative-prompt", ga.negative_prompt,
                           "text for the unconditional guidance branch");
    auto* o_lambda = c_generate->add_option("--lambda", lambda, "visual context weight");
    c_generate->add_flag("--gt-mask", ga.gt_mask,
                         "use the ground-truth mask next to the video file");
    auto* o_steps = c_generate->add_option("--steps", steps, "sampler steps");
    auto* o_scale = c_generate->add_option("--cfg-scale", cfg_scale, "guidance scale");

    CLI11_PARSE(app, argc, argv);

    try {
        foley::Config cfg;
        apply_common(cfg, ca);
        if (o_lambda->count()) cfg.set_num("semantic.lambda", lambda);
        if (o_steps->count()) cfg.set_num("sampler.steps", steps);
        if (o_scale->count()) cfg.set_num("sampler.cfg_scale", cfg_scale);
        dump_resolved(cfg);

        if (app.got_subcommand(c_gen_data)) {
            print_stage("gen-data", foley::cmd_gen_data(cfg));
        } else if (app.got_subcommand(c_vae)) {
            print_stage("train-vae", foley::cmd_train_vae(cfg));
        } else if (app.got_subcommand(c_t2a)) {
            print_stage("train-t2a", foley::cmd_train_t2a(cfg));
        } else if (app.got_subcommand(c_sem)) {
            print_stage("train-semantic", foley::cmd_train_semantic(cfg));
        } else if (app.got_subcommand(c_det)) {
            print_stage("train-detector", foley::cmd_train_detector(cfg));
        } else if (app.got_subcommand(c_tmp)) {
            print_stage("train-temporal", foley::cmd_train_temporal(cfg));
        } else if (app.got_subcommand(c_generate)) {
            ga.out_dir = cfg.get_str("paths.out");
            print_stage("generate", foley::cmd_generate(cfg, ga));
        } else if (app.got_subcommand(c_eval)) {
            std::cout << foley::cmd_evaluate(cfg).dump(2) << "\n";
        }
        return 0;
    } catch (const foley::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const foley::MissingPrerequisiteError& e) {
        std::cerr << "missing prerequisite: " << e.what() << "\n";
        return 3;
    } catch (const foley::NumericError& e) {
        std::cerr << "numeric failure: " << e.what() << "\n";
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
