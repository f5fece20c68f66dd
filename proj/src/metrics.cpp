#include "dglm/metrics.hpp"

#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

namespace dglm {

void GenerationSet::validate() const {
    if (groups.empty()) throw std::invalid_argument("metrics: empty generation set");
    for (const auto& g : groups) {
        if (g.continuations.empty())
            throw std::invalid_argument("metrics: prompt group with no continuations");
        for (const auto& c : g.continuations)
            if (c.empty()) throw std::invalid_argument("metrics: empty continuation");
        if (!g.scores.empty() && g.scores.size() != g.continuations.size())
            throw std::invalid_argument("metrics: score count mismatch");
        if (!g.proposals.empty() && g.proposals.size() != g.continuations.size())
            throw std::invalid_argument("metrics: proposal count mismatch");
    }
}

namespace {

// unique/total ratio of n-grams pooled over the given sequences
std::pair<int64_t, int64_t> ngram_counts(const std::vector<std::vector<int>>& seqs, int n) {
    std::set<std::vector<int>> unique;
    int64_t total = 0;
    for (const auto& s : seqs) {
        if (static_cast<int>(s.size()) < n) continue;
        for (size_t i = 0; i + n <= s.size(); ++i) {
            unique.insert(std::vector<int>(s.begin() + i, s.begin() + i + n));
            ++total;
        }
    }
    return {static_cast<int64_t>(unique.size()), total};
}

}  // namespace

double div_metric(const std::vector<std::vector<int>>& samples) {
    std::vector<std::vector<int>> kept;
    for (const auto& s : samples) {
        if (s.size() < 4) {
            std::cerr << "div: excluding sequence of length " << s.size() << " (< 4)\n";
            continue;
        }
        kept.push_back(s);
    }
    if (kept.empty()) throw std::invalid_argument("div: no sequences of length >= 4");
    double prod = 1.0;
    for (int n = 2; n <= 4; ++n) {
        auto [uniq, total] = ngram_counts(kept, n);
        prod *= static_cast<double>(uniq) / static_cast<double>(total);
    }
    return prod;
}

double dist_n(const GenerationSet& gen, int n) {
    gen.validate();
    double sum = 0.0;
    int prompts = 0;
    for (const auto& g : gen.groups) {
        std::vector<std::vector<int>> kept;
        for (const auto& c : g.continuations) {
            if (static_cast<int>(c.size()) < n) {
                std::cerr << "dist-" << n << ": excluding continuation of length " << c.size()
                          << "\n";
                continue;
            }
            kept.push_back(c);
        }
        if (kept.empty()) continue;
        auto [uniq, total] = ngram_counts(kept, n);
        sum += static_cast<double>(uniq) / static_cast<double>(total);
        ++prompts;
    }
    if (prompts == 0) throw std::invalid_argument("dist: no usable prompts");
    return sum / prompts;
}

AttributeRates attribute_rates(
    const GenerationSet& gen,
    const std::function<std::optional<double>(const std::vector<int>&)>& oracle,
    double threshold) {
    gen.validate();
    AttributeRates r;
    int prompts = 0;
    int64_t positives = 0, scored = 0;
    for (const auto& g : gen.groups) {
        double mx = 0.0;
        bool any_scored = false, any_positive = false;
        for (const auto& c : g.continuations) {
            auto s = oracle(c);
            if (!s) {
                ++r.excluded;
                continue;
            }
            any_scored = true;
            mx = std::max(mx, *s);
            ++scored;
            if (*s >= threshold) {
                ++positives;
                any_positive = true;
            }
        }
        if (!any_scored) continue;
        r.avg_max += mx;
        r.rate += any_positive ? 1.0 : 0.0;
        ++prompts;
    }
    if (prompts == 0 || scored == 0)
        throw std::runtime_error("attribute_rates: oracle scored no continuations");
    r.avg_max /= prompts;
    r.rate /= prompts;
    r.mean_prop = static_cast<double>(positives) / static_cast<double>(scored);
    return r;
}

double embedding_similarity(
    const GenerationSet& gen,
    const std::function<Eigen::VectorXd(const std::vector<int>&)>& embed,
    std::optional<double> baseline) {
    gen.validate();
    double sum = 0.0;
    int64_t count = 0;
    for (const auto& g : gen.groups) {
        if (g.proposals.size() != g.continuations.size())
            throw std::invalid_argument("embedding_similarity: missing proposal");
        for (size_t i = 0; i < g.continuations.size(); ++i) {
            Eigen::VectorXd e = embed(g.continuations[i]);
            const Eigen::VectorXd& p = g.proposals[i];
            double cos = e.dot(p) / (e.norm() * p.norm());
            sum += cos;
            ++count;
        }
    }
    double mean = sum / count;
    if (baseline) return (mean - *baseline) / (1.0 - *baseline);
    return mean;
}

void write_generation_file(const std::string& path, const GenerationSet& gen,
                           const std::function<std::string(const std::vector<int>&)>& detok) {
    gen.validate();
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open " + path + " for writing");
    for (size_t p = 0; p < gen.groups.size(); ++p) {
        const auto& g = gen.groups[p];
        for (size_t i = 0; i < g.continuations.size(); ++i) {
            out << p << '\t' << detok(g.continuations[i]);
            if (!g.scores.empty()) {
                char buf[32];
                std::snprintf(buf, sizeof(buf), "%.17g", g.scores[i]);
                out << '\t' << buf;
            }
            out << '\n';
        }
    }
    if (!out) throw std::runtime_error("write failed: " + path);
}

GenerationSet read_generation_file(
    const std::string& path,
    const std::function<std::vector<int>(const std::string&)>& tok) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path);
    std::map<int64_t, PromptGroup> groups;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::vector<std::string> fields;
        std::stringstream ss(line);
        std::string f;
        while (std::getline(ss, f, '\t')) fields.push_back(f);
        if (fields.size() < 2 || fields.size() > 3)
            throw std::runtime_error(path + ":" + std::to_string(lineno) +
                                     ": expected 2 or 3 tab-separated fields");
        int64_t id = std::stoll(fields[0]);
        auto& g = groups[id];
        g.continuations.push_back(tok(fields[1]));
        if (fields.size() == 3) g.scores.push_back(std::stod(fields[2]));
    }
    GenerationSet gen;
    for (auto& [id, g] : groups) {
        if (!g.scores.empty() && g.scores.size() != g.continuations.size())
            throw std::runtime_error(path + ": prompt " + std::to_string(id) +
                                     " has scores for only some continuations");
        gen.groups.push_back(std::move(g));
    }
    gen.validate();
    return gen;
}

void write_report(const std::string& path,
                  const std::vector<std::pair<std::string, double>>& metrics,
                  const std::string& resolved_config) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open " + path + " for writing");
    for (const auto& [name, value] : metrics) {
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%.17g", value);
        out << name << '\t' << buf << '\n';
    }
    out << "# config\n" << resolved_config;
    if (!out) throw std::runtime_error("write failed: " + path);
}

}  // namespace dglm
