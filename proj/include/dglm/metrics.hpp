#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace dglm {

// One prompt with its sampled continuations and optional per-continuation
// attribute scores / proposal embeddings.
struct PromptGroup {
    std::vector<int> prompt;
    std::vector<std::vector<int>> continuations;
    std::vector<double> scores;                 // empty or one per continuation
    std::vector<Eigen::VectorXd> proposals;     // empty or one per continuation
};

struct GenerationSet {
    std::vector<PromptGroup> groups;

    void validate() const;  // throws on empty continuations
};

// Pooled diversity: product over n in {2,3,4} of unique/total n-gram ratios
// across all sequences. Sequences shorter than 4 are excluded with a warning.
double div_metric(const std::vector<std::vector<int>>& samples);

// Per-prompt unique/total n-gram ratio across its continuations, averaged
// over prompts.
double dist_n(const GenerationSet& gen, int n = 3);

struct AttributeRates {
    double avg_max = 0.0;    // mean over prompts of max continuation score
    double rate = 0.0;       // fraction of prompts with >= 1 score above threshold
    double mean_prop = 0.0;  // overall fraction of continuations above threshold
    int excluded = 0;        // continuations the oracle could not score
};

// oracle returns a probability in [0,1], or nullopt on failure (excluded and
// counted).
AttributeRates attribute_rates(
    const GenerationSet& gen,
    const std::function<std::optional<double>(const std::vector<int>&)>& oracle,
    double threshold = 0.5);

// Mean cosine between embed(continuation) and its proposal. When baseline is
// provided, rescales to (cos - base) / (1 - base).
double embedding_similarity(
    const GenerationSet& gen,
    const std::function<Eigen::VectorXd(const std::vector<int>&)>& embed,
    std::optional<double> baseline = std::nullopt);

// Generation file: one line per continuation,
// prompt-id<TAB>continuation tokens<TAB>optional attribute score.
void write_generation_file(const std::string& path, const GenerationSet& gen,
                           const std::function<std::string(const std::vector<int>&)>& detok);
GenerationSet read_generation_file(const std::string& path,
                                   const std::function<std::vector<int>(const std::string&)>& tok);

// Metrics report: one "name<TAB>value" line per metric, then the resolved
// config verbatim under a '# config' banner. Byte-reproducible.
void write_report(const std::string& path,
                  const std::vector<std::pair<std::string, double>>& metrics,
                  const std::string& resolved_config);

}  // namespace dglm
