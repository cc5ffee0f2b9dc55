#pragma once

#include <map>
#include <string>
#include <vector>

#include "neutrace/common.hpp"

namespace neutrace::config {

/// Flat key-value configuration with sections ("[synth]" + "key = value" means
/// key "synth.key"). Unknown keys are rejected against the built-in schema.
/// The hash over the canonical serialized form stamps every output file.
struct RunConfig {
    std::map<std::string, std::string> values;

    const std::string& get_str(const std::string& key) const;
    int64_t get_int(const std::string& key) const;
    double get_double(const std::string& key) const;
    bool get_bool(const std::string& key) const;

    uint64_t master_seed() const { return uint64_t(get_int("run.seed")); }
    uint64_t stage_seed(std::string_view stage) const { return derive_seed(master_seed(), stage); }

    uint64_t hash() const;
    std::string canonical_text() const;

    void set(const std::string& key, const std::string& value);  // rejects unknown keys
};

/// Schema defaults (every known key with its default value and a short doc).
struct SchemaEntry {
    const char* key;
    const char* default_value;
    const char* doc;
};
const std::vector<SchemaEntry>& schema();

RunConfig defaults();
RunConfig load_file(const std::string& path);
/// default config, then optional file, then --set overrides
RunConfig resolve(const std::string& file_path, const std::vector<std::string>& overrides);

void write_default_config(std::ostream& out);

}  // namespace neutrace::config
