#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "foley/errors.hpp"

namespace foley {

// Nested JSON configuration with a full set of defaults. Files and --set
// overrides may only touch keys that exist in the defaults; anything else is a
// ConfigError naming the offending key.
class Config {
  public:
    Config();

    void load_file(const std::string& path);
    // "a.b.c=value"; value parsed as JSON when possible, else kept as string.
    void apply_set(const std::string& kv);

    double get_num(const std::string& dotted) const;
    int get_int(const std::string& dotted) const;
    bool get_bool(const std::string& dotted) const;
    std::string get_str(const std::string& dotted) const;
    std::vector<int> get_int_list(const std::string& dotted) const;

    void set_num(const std::string& dotted, double v);
    void set_bool(const std::string& dotted, bool v);
    void set_str(const std::string& dotted, const std::string& v);

    // FNV-1a over the canonical (sorted-key) dump.
    uint64_t hash() const;
    std::string hash_hex() const;
    std::string dump(int indent = 2) const;

    const nlohmann::json& json() const { return doc_; }

  private:
    const nlohmann::json* resolve(const std::string& dotted) const;
    nlohmann::json doc_;
};

}  // namespace foley
