#pragma once

#include <map>
#include <set>
#include <string>
#include <vector>

namespace dglm {

// Flat key=value run configuration. Files use one `key=value` per line with
// '#' comments. Keys outside the known registry are rejected. The SEED
// environment variable overrides `seed` unless a flag set it explicitly.
class RunConfig {
public:
    RunConfig() = default;

    static const std::set<std::string>& known_keys();

    static RunConfig from_file(const std::string& path);

    void set(const std::string& key, const std::string& value);
    bool has(const std::string& key) const;

    std::string get_str(const std::string& key, const std::string& fallback) const;
    double get_double(const std::string& key, double fallback) const;
    int get_int(const std::string& key, int fallback) const;
    uint64_t get_u64(const std::string& key, uint64_t fallback) const;
    bool get_bool(const std::string& key, bool fallback) const;

    // Applies the SEED environment variable if `seed` is not already set.
    void apply_env();

    // Resolved configuration, one key=value per line, keys sorted.
    std::string resolved() const;

private:
    std::map<std::string, std::string> kv_;
};

}  // namespace dglm
