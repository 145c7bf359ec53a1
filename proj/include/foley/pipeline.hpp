#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "foley/config.hpp"

namespace foley {

// Per-stage outcome: windowed mean training losses in step order plus one
// stage-specific summary number (final loss window, validation AP, ...).
struct StageReport {
    std::vector<double> losses;
    double metric = 0.0;
};

struct GenerateArgs {
    std::string video_path;       // empty for text-only generation
    std::string prompt;
    std::string negative_prompt;  // replaces the null context on the guidance branch
    bool gt_mask = false;         // read <video>.mask.u8 instead of running the detector
    std::string out_dir;
};

StageReport cmd_gen_data(const Config& cfg);
StageReport cmd_train_vae(const Config& cfg);
StageReport cmd_train_t2a(const Config& cfg);
StageReport cmd_train_semantic(const Config& cfg);
StageReport cmd_train_detector(const Config& cfg);
StageReport cmd_train_temporal(const Config& cfg);
StageReport cmd_generate(const Config& cfg, const GenerateArgs& args);

// Returns the metrics report and writes it to <out>/report.json.
nlohmann::json cmd_evaluate(const Config& cfg);

}  // namespace foley
