#include "dglm/config.hpp"

#include <cstdlib>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace dglm {

const std::set<std::string>& RunConfig::known_keys() {
    static const std::set<std::string> keys = {
        // noise schedules
        "schedule.kind", "schedule.shift", "schedule.lambda_min", "schedule.lambda_max",
        // training loss
        "loss.weighting", "loss.scale",
        // sampler
        "sampler.v_interp", "sampler.steps", "sampler.cfg_w", "sampler.guidance_s",
        "sampler.mc_n", "sampler.mc_form", "sampler.jacobian",
        // diffusion network
        "model.hidden", "model.layers", "model.time_features",
        "train.lr", "train.steps", "train.batch", "train.mask_prob", "train.seed",
        "train.warmup", "train.weight_decay",
        // toy pipeline
        "embed.dim", "embed.seed",
        "decoder.width", "decoder.layers", "decoder.heads", "decoder.mlp_hidden",
        "decoder.soft_tokens", "decoder.max_seq", "decoder.tie_embeddings",
        "decoder.lr", "decoder.steps", "decoder.batch", "decoder.warmup",
        "decoder.noise_var",
        "grammar.seed", "corpus.size",
        "classifier.l2", "classifier.balanced",
        // misc
        "seed",
    };
    return keys;
}

void RunConfig::set(const std::string& key, const std::string& value) {
    if (!known_keys().count(key)) throw std::runtime_error("config: unknown key '" + key + "'");
    kv_[key] = value;
}

bool RunConfig::has(const std::string& key) const { return kv_.count(key) > 0; }

RunConfig RunConfig::from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("config: cannot open " + path);
    RunConfig cfg;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        // trim
        auto b = line.find_first_not_of(" \t\r");
        if (b == std::string::npos) continue;
        auto e = line.find_last_not_of(" \t\r");
        line = line.substr(b, e - b + 1);
        auto eq = line.find('=');
        if (eq == std::string::npos)
            throw std::runtime_error("config: malformed line " + std::to_string(lineno) +
                                     " in " + path);
        std::string key = line.substr(0, eq);
        std::string value = line.substr(eq + 1);
        auto ke = key.find_last_not_of(" \t");
        key = key.substr(0, ke + 1);
        auto vb = value.find_first_not_of(" \t");
        value = vb == std::string::npos ? "" : value.substr(vb);
        cfg.set(key, value);
    }
    return cfg;
}

std::string RunConfig::get_str(const std::string& key, const std::string& fallback) const {
    auto it = kv_.find(key);
    return it == kv_.end() ? fallback : it->second;
}

double RunConfig::get_double(const std::string& key, double fallback) const {
    auto it = kv_.find(key);
    return it == kv_.end() ? fallback : std::stod(it->second);
}

int RunConfig::get_int(const std::string& key, int fallback) const {
    auto it = kv_.find(key);
    return it == kv_.end() ? fallback : std::stoi(it->second);
}

uint64_t RunConfig::get_u64(const std::string& key, uint64_t fallback) const {
    auto it = kv_.find(key);
    return it == kv_.end() ? fallback : std::stoull(it->second);
}

bool RunConfig::get_bool(const std::string& key, bool fallback) const {
    auto it = kv_.find(key);
    if (it == kv_.end()) return fallback;
    const std::string& v = it->second;
    if (v == "1" || v == "true" || v == "yes") return true;
    if (v == "0" || v == "false" || v == "no") return false;
    throw std::runtime_error("config: bad boolean for " + key + ": " + v);
}

void RunConfig::apply_env() {
    if (has("seed")) return;  // explicit flag/file wins
    if (const char* env = std::getenv("SEED")) kv_["seed"] = env;
}

std::string RunConfig::resolved() const {
    std::ostringstream out;
    for (const auto& [k, v] : kv_) out << k << "=" << v << "\n";
    return out.str();
}

}  // namespace dglm
