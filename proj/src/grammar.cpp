#include "dglm/grammar.hpp"

#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "dglm/numerics.hpp"

namespace dglm {

int ToyGrammar::num_combos() const {
    int n = 1;
    for (const auto& a : axes) n *= static_cast<int>(a.values.size());
    return n;
}

int ToyGrammar::combo_index(const std::vector<int>& values) const {
    if (values.size() != axes.size()) throw std::invalid_argument("grammar: bad value count");
    int idx = 0;
    for (size_t a = 0; a < axes.size(); ++a) {
        int n = static_cast<int>(axes[a].values.size());
        if (values[a] < 0 || values[a] >= n) throw std::invalid_argument("grammar: bad value");
        idx = idx * n + values[a];
    }
    return idx;
}

std::vector<int> ToyGrammar::combo_values(int combo) const {
    std::vector<int> values(axes.size());
    for (int a = static_cast<int>(axes.size()) - 1; a >= 0; --a) {
        int n = static_cast<int>(axes[a].values.size());
        values[a] = combo % n;
        combo /= n;
    }
    return values;
}

int ToyGrammar::axis_index(const std::string& name) const {
    for (size_t a = 0; a < axes.size(); ++a)
        if (axes[a].name == name) return static_cast<int>(a);
    throw std::invalid_argument("grammar: unknown axis '" + name + "'");
}

void ToyGrammar::validate() const {
    const int V = vocab();
    const int C = num_combos();
    if (V < 2) throw std::runtime_error("grammar: vocabulary too small");
    if (axes.empty()) throw std::runtime_error("grammar: no attribute axes");
    if (prefix_axis < 0 || prefix_axis >= static_cast<int>(axes.size()))
        throw std::runtime_error("grammar: bad prefix axis");
    if (static_cast<int>(combo_prior.size()) != C)
        throw std::runtime_error("grammar: prior size mismatch");
    double total = 0.0;
    for (double p : combo_prior) total += p;
    if (std::abs(total - 1.0) > 1e-12) throw std::runtime_error("grammar: prior must sum to 1");
    auto check_dist = [&](const Eigen::VectorXd& p, const std::string& what) {
        if (p.size() != V) throw std::runtime_error("grammar: " + what + " size mismatch");
        if ((p.array() < 0.0).any()) throw std::runtime_error("grammar: negative prob in " + what);
        if (std::abs(p.sum() - 1.0) > 1e-12)
            throw std::runtime_error("grammar: " + what + " does not sum to 1");
    };
    if (static_cast<int>(cont_init.size()) != C || static_cast<int>(cont_trans.size()) != C)
        throw std::runtime_error("grammar: continuation chain count mismatch");
    for (int c = 0; c < C; ++c) {
        check_dist(cont_init[c], "cont_init");
        for (int r = 0; r < V; ++r)
            check_dist(cont_trans[c].row(r).transpose(), "cont_row");
    }
    int P = static_cast<int>(axes[prefix_axis].values.size());
    if (static_cast<int>(pref_init.size()) != P || static_cast<int>(pref_trans.size()) != P)
        throw std::runtime_error("grammar: prefix chain count mismatch");
    for (int v = 0; v < P; ++v) {
        check_dist(pref_init[v], "pref_init");
        for (int r = 0; r < V; ++r)
            check_dist(pref_trans[v].row(r).transpose(), "pref_row");
    }
}

namespace {

int draw_from(const Eigen::VectorXd& p, Rng& rng) {
    double u = rng.uniform();
    double acc = 0.0;
    for (int i = 0; i < p.size(); ++i) {
        acc += p[i];
        if (u < acc) return i;
    }
    return static_cast<int>(p.size()) - 1;
}

}  // namespace

Record ToyGrammar::sample_record(Rng& rng) const {
    Record rec;
    int combo = rng.categorical(combo_prior);
    rec.values = combo_values(combo);
    int pv = rec.values[prefix_axis];
    rec.prefix.reserve(prefix_len);
    int cur = draw_from(pref_init[pv], rng);
    rec.prefix.push_back(cur);
    for (int i = 1; i < prefix_len; ++i) {
        cur = draw_from(pref_trans[pv].row(cur).transpose(), rng);
        rec.prefix.push_back(cur);
    }
    rec.cont.reserve(cont_len);
    cur = draw_from(cont_init[combo], rng);
    rec.cont.push_back(cur);
    for (int i = 1; i < cont_len; ++i) {
        cur = draw_from(cont_trans[combo].row(cur).transpose(), rng);
        rec.cont.push_back(cur);
    }
    return rec;
}

std::vector<Record> ToyGrammar::gen_corpus(int size, Rng& rng) const {
    std::vector<Record> out;
    out.reserve(size);
    for (int i = 0; i < size; ++i) out.push_back(sample_record(rng));
    return out;
}

double ToyGrammar::cont_log_prob(const std::vector<int>& tokens, int combo) const {
    if (tokens.empty()) throw std::invalid_argument("grammar: empty token sequence");
    const int V = vocab();
    for (int t : tokens)
        if (t < 0 || t >= V) throw std::invalid_argument("grammar: token outside vocabulary");
    double lp = std::log(cont_init[combo][tokens[0]]);
    for (size_t i = 1; i < tokens.size(); ++i)
        lp += std::log(cont_trans[combo](tokens[i - 1], tokens[i]));
    return lp;
}

Eigen::VectorXd ToyGrammar::combo_posterior(const std::vector<int>& tokens) const {
    const int C = num_combos();
    std::vector<double> lj(C);
    for (int c = 0; c < C; ++c) lj[c] = std::log(combo_prior[c]) + cont_log_prob(tokens, c);
    double lse = log_sum_exp(lj);
    Eigen::VectorXd post(C);
    for (int c = 0; c < C; ++c) post[c] = std::exp(lj[c] - lse);
    return post;
}

double ToyGrammar::attribute_score(const std::vector<int>& tokens, int axis, int value) const {
    Eigen::VectorXd post = combo_posterior(tokens);
    double p = 0.0;
    for (int c = 0; c < num_combos(); ++c)
        if (combo_values(c)[axis] == value) p += post[c];
    return p;
}

double ToyGrammar::true_perplexity(const std::vector<int>& tokens) const {
    const int C = num_combos();
    std::vector<double> lj(C);
    for (int c = 0; c < C; ++c) lj[c] = std::log(combo_prior[c]) + cont_log_prob(tokens, c);
    double lp = log_sum_exp(lj);
    return std::exp(-lp / static_cast<double>(tokens.size()));
}

int ToyGrammar::symbol_id(const std::string& s) const {
    if (symbol_index_.empty())
        for (int i = 0; i < vocab(); ++i) symbol_index_[symbols[i]] = i;
    auto it = symbol_index_.find(s);
    if (it == symbol_index_.end())
        throw std::invalid_argument("grammar: unknown symbol '" + s + "'");
    return it->second;
}

std::string ToyGrammar::tokens_to_text(const std::vector<int>& ids) const {
    std::ostringstream out;
    for (size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] < 0 || ids[i] >= vocab())
            throw std::invalid_argument("grammar: token id out of range");
        out << (i ? " " : "") << symbols[ids[i]];
    }
    return out.str();
}

std::vector<int> ToyGrammar::text_to_tokens(const std::string& text) const {
    std::istringstream in(text);
    std::vector<int> ids;
    std::string tok;
    while (in >> tok) ids.push_back(symbol_id(tok));
    return ids;
}

void ToyGrammar::save(const std::string& path) const {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("grammar: cannot open " + path + " for writing");
    out.precision(17);
    out << "symbols";
    for (const auto& s : symbols) out << " " << s;
    out << "\n";
    for (const auto& a : axes) {
        out << "axis " << a.name;
        for (const auto& v : a.values) out << " " << v;
        out << "\n";
    }
    out << "prefix_axis " << axes[prefix_axis].name << "\n";
    out << "lengths " << prefix_len << " " << cont_len << "\n";
    out << "prior";
    for (double p : combo_prior) out << " " << p;
    out << "\n";
    auto combo_name = [&](int c) {
        auto values = combo_values(c);
        std::string n;
        for (size_t a = 0; a < axes.size(); ++a)
            n += (a ? "," : "") + axes[a].values[values[a]];
        return n;
    };
    for (int c = 0; c < num_combos(); ++c) {
        out << "cont_init " << combo_name(c);
        for (int i = 0; i < vocab(); ++i) out << " " << cont_init[c][i];
        out << "\n";
        for (int r = 0; r < vocab(); ++r) {
            out << "cont_row " << combo_name(c) << " " << symbols[r];
            for (int i = 0; i < vocab(); ++i) out << " " << cont_trans[c](r, i);
            out << "\n";
        }
    }
    for (size_t v = 0; v < axes[prefix_axis].values.size(); ++v) {
        out << "pref_init " << axes[prefix_axis].values[v];
        for (int i = 0; i < vocab(); ++i) out << " " << pref_init[v][i];
        out << "\n";
        for (int r = 0; r < vocab(); ++r) {
            out << "pref_row " << axes[prefix_axis].values[v] << " " << symbols[r];
            for (int i = 0; i < vocab(); ++i) out << " " << pref_trans[v](r, i);
            out << "\n";
        }
    }
}

ToyGrammar ToyGrammar::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("grammar: cannot open " + path);
    ToyGrammar g;
    std::string line;
    auto parse_combo = [&](const std::string& name) {
        std::vector<int> values;
        std::istringstream cs(name);
        std::string part;
        size_t a = 0;
        while (std::getline(cs, part, ',')) {
            if (a >= g.axes.size()) throw std::runtime_error("grammar: bad combo " + name);
            const auto& vals = g.axes[a].values;
            int idx = -1;
            for (size_t i = 0; i < vals.size(); ++i)
                if (vals[i] == part) idx = static_cast<int>(i);
            if (idx < 0) throw std::runtime_error("grammar: bad combo value " + part);
            values.push_back(idx);
            ++a;
        }
        return g.combo_index(values);
    };
    auto prefix_value = [&](const std::string& name) {
        const auto& vals = g.axes[g.prefix_axis].values;
        for (size_t i = 0; i < vals.size(); ++i)
            if (vals[i] == name) return static_cast<int>(i);
        throw std::runtime_error("grammar: bad prefix value " + name);
    };
    bool sized = false;
    auto ensure_sized = [&] {
        if (sized) return;
        int C = g.num_combos();
        int V = g.vocab();
        int P = static_cast<int>(g.axes[g.prefix_axis].values.size());
        g.cont_init.assign(C, Eigen::VectorXd::Zero(V));
        g.cont_trans.assign(C, Eigen::MatrixXd::Zero(V, V));
        g.pref_init.assign(P, Eigen::VectorXd::Zero(V));
        g.pref_trans.assign(P, Eigen::MatrixXd::Zero(V, V));
        sized = true;
    };
    while (std::getline(in, line)) {
        std::istringstream ls(line);
        std::string kind;
        if (!(ls >> kind) || kind[0] == '#') continue;
        if (kind == "symbols") {
            std::string s;
            while (ls >> s) g.symbols.push_back(s);
        } else if (kind == "axis") {
            Axis a;
            ls >> a.name;
            std::string v;
            while (ls >> v) a.values.push_back(v);
            g.axes.push_back(std::move(a));
        } else if (kind == "prefix_axis") {
            std::string name;
            ls >> name;
            g.prefix_axis = g.axis_index(name);
        } else if (kind == "lengths") {
            ls >> g.prefix_len >> g.cont_len;
        } else if (kind == "prior") {
            double p;
            while (ls >> p) g.combo_prior.push_back(p);
        } else if (kind == "cont_init") {
            ensure_sized();
            std::string name;
            ls >> name;
            int c = parse_combo(name);
            for (int i = 0; i < g.vocab(); ++i) ls >> g.cont_init[c][i];
        } else if (kind == "cont_row") {
            ensure_sized();
            std::string name, sym;
            ls >> name >> sym;
            int c = parse_combo(name);
            int r = g.symbol_id(sym);
            for (int i = 0; i < g.vocab(); ++i) ls >> g.cont_trans[c](r, i);
        } else if (kind == "pref_init") {
            ensure_sized();
            std::string name;
            ls >> name;
            int v = prefix_value(name);
            for (int i = 0; i < g.vocab(); ++i) ls >> g.pref_init[v][i];
        } else if (kind == "pref_row") {
            ensure_sized();
            std::string name, sym;
            ls >> name >> sym;
            int v = prefix_value(name);
            int r = g.symbol_id(sym);
            for (int i = 0; i < g.vocab(); ++i) ls >> g.pref_trans[v](r, i);
        } else {
            throw std::runtime_error("grammar: unknown line kind '" + kind + "'");
        }
    }
    g.validate();
    return g;
}

ToyGrammar ToyGrammar::make_default(uint64_t seed) {
    ToyGrammar g;
    const int n_lex = 20;
    const int n_fill = 120;
    auto add_symbols = [&](const std::string& stem, int n) {
        std::vector<int> ids;
        for (int i = 0; i < n; ++i) {
            ids.push_back(g.vocab());
            g.symbols.push_back(stem + std::to_string(i));
        }
        return ids;
    };
    std::vector<int> lex_pos = add_symbols("pos", n_lex);
    std::vector<int> lex_neg = add_symbols("neg", n_lex);
    std::vector<int> lex_ta = add_symbols("ta", n_lex);
    std::vector<int> lex_tb = add_symbols("tb", n_lex);
    std::vector<int> fillers = add_symbols("f", n_fill);
    const int V = g.vocab();

    g.axes = {{"sentiment", {"pos", "neg"}}, {"topic", {"ta", "tb"}}};
    g.prefix_axis = 1;
    g.prefix_len = 8;
    g.cont_len = 16;
    g.combo_prior = {0.25, 0.25, 0.25, 0.25};

    Rng rng(seed);
    // per-symbol emission jitter so lexicon symbols are not interchangeable
    auto jitter = [&](const std::vector<int>& ids) {
        Eigen::VectorXd w = Eigen::VectorXd::Zero(V);
        for (int id : ids) w[id] = std::exp(0.4 * rng.normal());
        w /= w.sum();
        return w;
    };
    std::vector<Eigen::VectorXd> sent_emit = {jitter(lex_pos), jitter(lex_neg)};
    std::vector<Eigen::VectorXd> topic_emit = {jitter(lex_ta), jitter(lex_tb)};
    Eigen::VectorXd fill_uniform = Eigen::VectorXd::Zero(V);
    for (int id : fillers) fill_uniform[id] = 1.0 / n_fill;
    Eigen::VectorXd vocab_uniform = Eigen::VectorXd::Constant(V, 1.0 / V);

    // ring-structured filler chain: nearby fillers follow each other
    auto fill_from = [&](int cur) {
        Eigen::VectorXd w = Eigen::VectorXd::Zero(V);
        int base = cur - fillers[0];
        if (base < 0 || base >= n_fill) return fill_uniform;
        for (int j = 0; j < n_fill; ++j) {
            int dist = std::abs(j - base);
            dist = std::min(dist, n_fill - dist);
            w[fillers[j]] = std::exp(-dist / 4.0);
        }
        w /= w.sum();
        return w;
    };

    const int C = g.num_combos();
    g.cont_init.assign(C, Eigen::VectorXd::Zero(V));
    g.cont_trans.assign(C, Eigen::MatrixXd::Zero(V, V));
    for (int s = 0; s < 2; ++s) {
        for (int t = 0; t < 2; ++t) {
            int c = g.combo_index({s, t});
            g.cont_init[c] =
                0.25 * sent_emit[s] + 0.25 * topic_emit[t] + 0.48 * fill_uniform + 0.02 * vocab_uniform;
            for (int r = 0; r < V; ++r)
                g.cont_trans[c].row(r) = (0.25 * sent_emit[s] + 0.25 * topic_emit[t] +
                                          0.48 * fill_from(r) + 0.02 * vocab_uniform)
                                             .transpose();
        }
    }
    g.pref_init.assign(2, Eigen::VectorXd::Zero(V));
    g.pref_trans.assign(2, Eigen::MatrixXd::Zero(V, V));
    for (int t = 0; t < 2; ++t) {
        g.pref_init[t] = 0.35 * topic_emit[t] + 0.63 * fill_uniform + 0.02 * vocab_uniform;
        for (int r = 0; r < V; ++r)
            g.pref_trans[t].row(r) =
                (0.35 * topic_emit[t] + 0.63 * fill_from(r) + 0.02 * vocab_uniform).transpose();
    }
    g.validate();
    return g;
}

void write_corpus(const std::string& path, const ToyGrammar& grammar,
                  const std::vector<Record>& records) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("corpus: cannot open " + path + " for writing");
    for (const auto& rec : records) {
        out << grammar.tokens_to_text(rec.prefix) << "\t" << grammar.tokens_to_text(rec.cont);
        for (size_t a = 0; a < grammar.axes.size(); ++a)
            out << "\t" << grammar.axes[a].name << "=" << grammar.axes[a].values[rec.values[a]];
        out << "\n";
    }
}

std::vector<Record> read_corpus(const std::string& path, const ToyGrammar& grammar) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("corpus: cannot open " + path);
    std::vector<Record> records;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::vector<std::string> fields;
        std::istringstream ls(line);
        std::string field;
        while (std::getline(ls, field, '\t')) fields.push_back(field);
        if (fields.size() < 2 + grammar.axes.size())
            throw std::runtime_error("corpus: malformed line " + std::to_string(lineno));
        Record rec;
        rec.prefix = grammar.text_to_tokens(fields[0]);
        rec.cont = grammar.text_to_tokens(fields[1]);
        rec.values.resize(grammar.axes.size());
        for (size_t a = 0; a < grammar.axes.size(); ++a) {
            const std::string& pair = fields[2 + a];
            auto eq = pair.find('=');
            if (eq == std::string::npos)
                throw std::runtime_error("corpus: malformed attribute in line " +
                                         std::to_string(lineno));
            int axis = grammar.axis_index(pair.substr(0, eq));
            std::string value = pair.substr(eq + 1);
            const auto& vals = grammar.axes[axis].values;
            int idx = -1;
            for (size_t i = 0; i < vals.size(); ++i)
                if (vals[i] == value) idx = static_cast<int>(i);
            if (idx < 0) throw std::runtime_error("corpus: unknown attribute value " + value);
            rec.values[axis] = idx;
        }
        records.push_back(std::move(rec));
    }
    return records;
}

}  // namespace dglm
