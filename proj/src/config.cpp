#include "foley/config.hpp"

#include <fstream>
#include <sstream>

namespace foley {

namespace {

nlohmann::json default_config() {
    return nlohmann::json{
        {"seed", 1234},
        {"paths",
         {{"data", "data"}, {"ckpt", "ckpt"}, {"out", "out"}}},
        {"audio",
         {{"sample_rate", 16000},
          {"clip_seconds", 4.0},
          {"n_fft", 1024},
          {"hop", 256},
          {"n_mels", 64},
          {"mel_frames", 256},
          {"fmin", 0.0},
          {"fmax", 8000.0},
          {"griffin_lim_iters", 60}}},
        {"dataset",
         {{"n_train", 2000},
          {"n_val", 200},
          {"n_test", 200},
          {"n_frames", 32},
          {"frame_dim", 16}}},
        {"vae",
         {{"base_channels", 32},
          {"latent_channels", 4},
          {"kl_weight", 1e-4},
          {"steps", 3000},
          {"batch", 8},
          {"lr", 1e-3}}},
        {"schedule", {{"T", 1000}, {"beta_start", 1e-4}, {"beta_end", 0.02}}},
        {"unet",
         {{"channels", {64, 128, 256}}, {"d_ctx", 128}, {"t_dim", 256}, {"groups", 8}}},
        {"text", {{"max_len", 8}}},
        {"t2a", {{"steps", 3000}, {"batch", 4}, {"lr", 2e-4}, {"drop_p", 0.1}}},
        {"semantic",
         {{"steps", 2000}, {"batch", 4}, {"lr", 2e-4}, {"drop_text_p", 0.9}, {"lambda", 1.0}}},
        {"detector", {{"steps", 1500}, {"batch", 16}, {"lr", 1e-3}, {"hidden", 32}}},
        {"temporal", {{"steps", 2000}, {"batch", 4}, {"lr", 2e-4}}},
        {"classifier", {{"steps", 1500}, {"batch", 8}, {"lr", 1e-3}}},
        {"sampler", {{"steps", 50}, {"cfg_scale", 3.0}}},
        {"eval",
         {{"n", 200},
          {"sampler_steps", 20},
          {"cfg_scale", 1.0},
          {"use_text", false},
          {"use_semantic", true},
          {"use_temporal", true},
          {"gt_mask", false},
          {"flip_mask", false},
          {"seed", 77}}},
    };
}

void merge_checked(nlohmann::json& dst, const nlohmann::json& src, const std::string& prefix) {
    if (!src.is_object()) throw ConfigError("config section '" + prefix + "' must be an object");
    for (auto it = src.begin(); it != src.end(); ++it) {
        const std::string path = prefix.empty() ? it.key() : prefix + "." + it.key();
        if (!dst.contains(it.key())) throw ConfigError("unknown config key '" + path + "'");
        nlohmann::json& d = dst[it.key()];
        if (d.is_object()) {
            merge_checked(d, it.value(), path);
        } else {
            if (it.value().is_object())
                throw ConfigError("config key '" + path + "' is a value, not a section");
            d = it.value();
        }
    }
}

}  // namespace

Config::Config() : doc_(default_config()) {}

void Config::load_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open config file '" + path + "'");
    nlohmann::json parsed;
    try {
        is >> parsed;
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError("config file '" + path + "' is not valid JSON: " + e.what());
    }
    merge_checked(doc_, parsed, "");
}

void Config::apply_set(const std::string& kv) {
    const size_t eq = kv.find('=');
    if (eq == std::string::npos || eq == 0)
        throw ConfigError("--set expects key=value, got '" + kv + "'");
    const std::string key = kv.substr(0, eq);
    const std::string raw = kv.substr(eq + 1);
    nlohmann::json value = nlohmann::json::parse(raw, nullptr, false);
    if (value.is_discarded()) value = raw;

    nlohmann::json* node = &doc_;
    std::stringstream ss(key);
    std::string part;
    std::string walked;
    std::vector<std::string> parts;
    while (std::getline(ss, part, '.')) parts.push_back(part);
    if (parts.empty()) throw ConfigError("--set key is empty");
    for (size_t i = 0; i < parts.size(); ++i) {
        walked = walked.empty() ? parts[i] : walked + "." + parts[i];
        if (!node->is_object() || !node->contains(parts[i]))
            throw ConfigError("unknown config key '" + walked + "'");
        node = &(*node)[parts[i]];
    }
    if (node->is_object()) throw ConfigError("config key '" + key + "' is a section, not a value");
    *node = value;
}

const nlohmann::json* Config::resolve(const std::string& dotted) const {
    const nlohmann::json* node = &doc_;
    std::stringstream ss(dotted);
    std::string part;
    while (std::getline(ss, part, '.')) {
        if (!node->is_object() || !node->contains(part))
            throw ConfigError("unknown config key '" + dotted + "'");
        node = &(*node)[part];
    }
    return node;
}

double Config::get_num(const std::string& dotted) const {
    const auto* n = resolve(dotted);
    if (!n->is_number()) throw ConfigError("config key '" + dotted + "' is not a number");
    return n->get<double>();
}

int Config::get_int(const std::string& dotted) const {
    const double v = get_num(dotted);
    const int i = static_cast<int>(v);
    if (static_cast<double>(i) != v)
        throw ConfigError("config key '" + dotted + "' is not an integer");
    return i;
}

bool Config::get_bool(const std::string& dotted) const {
    const auto* n = resolve(dotted);
    if (!n->is_boolean()) throw ConfigError("config key '" + dotted + "' is not a boolean");
    return n->get<bool>();
}

std::string Config::get_str(const std::string& dotted) const {
    const auto* n = resolve(dotted);
    if (!n->is_string()) throw ConfigError("config key '" + dotted + "' is not a string");
    return n->get<std::string>();
}

std::vector<int> Config::get_int_list(const std::string& dotted) const {
    const auto* n = resolve(dotted);
    if (!n->is_array()) throw ConfigError("config key '" + dotted + "' is not a list");
    std::vector<int> out;
    for (const auto& v : *n) {
        if (!v.is_number_integer()) throw ConfigError("config key '" + dotted + "' has non-integer entries");
        out.push_back(v.get<int>());
    }
    return out;
}

void Config::set_num(const std::string& dotted, double v) {
    apply_set(dotted + "=" + nlohmann::json(v).dump());
}

void Config::set_bool(const std::string& dotted, bool v) {
    apply_set(dotted + (v ? "=true" : "=false"));
}

void Config::set_str(const std::string& dotted, const std::string& v) {
    apply_set(dotted + "=" + nlohmann::json(v).dump());
}

uint64_t Config::hash() const {
    const std::string s = doc_.dump();
    uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

std::string Config::hash_hex() const {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(hash()));
    return std::string(buf);
}

std::string Config::dump(int indent) const { return doc_.dump(indent); }

}  // namespace foley
