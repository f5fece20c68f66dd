#pragma once

#include <map>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "dglm/rng.hpp"

namespace dglm {

// A labeled record: token ids plus the attribute value per axis.
struct Record {
    std::vector<int> prefix;
    std::vector<int> cont;
    std::vector<int> values;  // one value index per axis
};

// Synthetic attribute-labeled corpus generator: first-order Markov chains
// over a symbol vocabulary, one continuation chain per attribute combination
// and one prefix chain per value of the prefix-driving axis. Sequence
// probabilities are exactly computable, which makes perplexity and attribute
// classification closed-form oracles.
struct ToyGrammar {
    struct Axis {
        std::string name;
        std::vector<std::string> values;
    };

    std::vector<std::string> symbols;
    std::vector<Axis> axes;
    int prefix_axis = 0;  // axis whose value shapes the prefix chain
    int prefix_len = 8;
    int cont_len = 16;

    std::vector<double> combo_prior;          // row-major over axis values
    std::vector<Eigen::VectorXd> cont_init;   // per combo
    std::vector<Eigen::MatrixXd> cont_trans;  // per combo, row = current symbol
    std::vector<Eigen::VectorXd> pref_init;   // per prefix-axis value
    std::vector<Eigen::MatrixXd> pref_trans;

    int vocab() const { return static_cast<int>(symbols.size()); }
    int num_combos() const;
    int combo_index(const std::vector<int>& values) const;
    std::vector<int> combo_values(int combo) const;
    int axis_index(const std::string& name) const;

    void validate() const;

    Record sample_record(Rng& rng) const;
    std::vector<Record> gen_corpus(int size, Rng& rng) const;

    double cont_log_prob(const std::vector<int>& tokens, int combo) const;

    // posterior over attribute combinations given continuation tokens,
    // prior-weighted
    Eigen::VectorXd combo_posterior(const std::vector<int>& tokens) const;

    // posterior probability of axis=value given continuation tokens
    double attribute_score(const std::vector<int>& tokens, int axis, int value) const;

    // exact per-token perplexity under the prior-weighted mixture of chains
    double true_perplexity(const std::vector<int>& tokens) const;

    int symbol_id(const std::string& s) const;
    std::string tokens_to_text(const std::vector<int>& ids) const;
    std::vector<int> text_to_tokens(const std::string& text) const;

    void save(const std::string& path) const;
    static ToyGrammar load(const std::string& path);

    // Default corpus grammar: sentiment {pos,neg} x topic {ta,tb}, ~200
    // symbols with attribute lexicons and ring-structured neutral fillers.
    static ToyGrammar make_default(uint64_t seed);

private:
    mutable std::map<std::string, int> symbol_index_;
};

void write_corpus(const std::string& path, const ToyGrammar& grammar,
                  const std::vector<Record>& records);
std::vector<Record> read_corpus(const std::string& path, const ToyGrammar& grammar);

}  // namespace dglm
