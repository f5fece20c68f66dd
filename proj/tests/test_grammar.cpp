#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <fstream>

#include "dglm/grammar.hpp"

using namespace dglm;

namespace {

// tiny two-symbol, one-axis grammar with hand-checkable probabilities
ToyGrammar tiny() {
    ToyGrammar g;
    g.symbols = {"x", "y"};
    g.axes = {{"mood", {"up", "down"}}};
    g.prefix_axis = 0;
    g.prefix_len = 2;
    g.cont_len = 3;
    g.combo_prior = {0.7, 0.3};
    Eigen::VectorXd i0(2), i1(2);
    i0 << 0.9, 0.1;
    i1 << 0.2, 0.8;
    Eigen::MatrixXd t0(2, 2), t1(2, 2);
    t0 << 0.8, 0.2, 0.4, 0.6;
    t1 << 0.3, 0.7, 0.5, 0.5;
    g.cont_init = {i0, i1};
    g.cont_trans = {t0, t1};
    g.pref_init = {i0, i1};
    g.pref_trans = {t0, t1};
    g.validate();
    return g;
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("chain-rule log probability on a hand grammar") {
    ToyGrammar g = tiny();
    // sequence x,y,x under combo 0: 0.9 * 0.2 * 0.4
    double lp = g.cont_log_prob({0, 1, 0}, 0);
    CHECK(lp == doctest::Approx(std::log(0.9 * 0.2 * 0.4)).epsilon(1e-12));
    // under combo 1: 0.2 * 0.7 * 0.5
    CHECK(g.cont_log_prob({0, 1, 0}, 1) ==
          doctest::Approx(std::log(0.2 * 0.7 * 0.5)).epsilon(1e-12));
}

TEST_CASE("posterior and perplexity match the closed-form mixture") {
    ToyGrammar g = tiny();
    std::vector<int> seq = {0, 1, 0};
    double j0 = 0.7 * 0.9 * 0.2 * 0.4;
    double j1 = 0.3 * 0.2 * 0.7 * 0.5;
    Eigen::VectorXd post = g.combo_posterior(seq);
    CHECK(post[0] == doctest::Approx(j0 / (j0 + j1)).epsilon(1e-12));
    CHECK(post[1] == doctest::Approx(j1 / (j0 + j1)).epsilon(1e-12));
    CHECK(g.attribute_score(seq, 0, 0) == doctest::Approx(post[0]).epsilon(1e-12));
    double expect_ppl = std::exp(-std::log(j0 + j1) / 3.0);
    CHECK(g.true_perplexity(seq) == doctest::Approx(expect_ppl).epsilon(1e-12));
}

TEST_CASE("validate enforces stochastic rows") {
    ToyGrammar g = tiny();
    g.cont_trans[0](0, 0) = 0.5;  // row no longer sums to 1
    CHECK_THROWS(g.validate());
}

TEST_CASE("default grammar is valid and deterministic") {
    ToyGrammar a = ToyGrammar::make_default(7);
    a.validate();
    ToyGrammar b = ToyGrammar::make_default(7);
    ToyGrammar c = ToyGrammar::make_default(8);
    std::string pa = "/tmp/dglm_test_ga.txt", pb = "/tmp/dglm_test_gb.txt",
                pc = "/tmp/dglm_test_gc.txt";
    a.save(pa);
    b.save(pb);
    c.save(pc);
    CHECK(slurp(pa) == slurp(pb));
    CHECK(slurp(pa) != slurp(pc));
    for (const auto& p : {pa, pb, pc}) std::remove(p.c_str());
    CHECK(a.vocab() == 200);
    CHECK(a.num_combos() == 4);
}

TEST_CASE("corpus generation is seed-deterministic") {
    ToyGrammar g = ToyGrammar::make_default(3);
    Rng r1(5), r2(5);
    auto c1 = g.gen_corpus(50, r1);
    auto c2 = g.gen_corpus(50, r2);
    REQUIRE(c1.size() == c2.size());
    for (size_t i = 0; i < c1.size(); ++i) {
        CHECK(c1[i].prefix == c2[i].prefix);
        CHECK(c1[i].cont == c2[i].cont);
        CHECK(c1[i].values == c2[i].values);
    }
}

TEST_CASE("attribute marginals stay near the uniform prior") {
    ToyGrammar g = ToyGrammar::make_default(13);
    Rng rng(17);
    auto corpus = g.gen_corpus(10000, rng);
    std::vector<double> sentiment(2, 0.0), topic(2, 0.0);
    for (const auto& r : corpus) {
        sentiment[r.values[0]] += 1.0;
        topic[r.values[1]] += 1.0;
    }
    for (double s : sentiment) CHECK(s / corpus.size() == doctest::Approx(0.5).epsilon(0.04));
    for (double t : topic) CHECK(t / corpus.size() == doctest::Approx(0.5).epsilon(0.04));
}

TEST_CASE("attribute-revealing symbols make the oracle confident") {
    ToyGrammar g = ToyGrammar::make_default(19);
    Rng rng(23);
    int checked = 0;
    for (int i = 0; i < 200; ++i) {
        Record r = g.sample_record(rng);
        double score = g.attribute_score(r.cont, 0, r.values[0]);
        if (score > 0.5) ++checked;
    }
    // the true sentiment should usually win the posterior
    CHECK(checked > 140);
}

TEST_CASE("grammar text round trip preserves everything") {
    ToyGrammar g = ToyGrammar::make_default(29);
    std::string path = "/tmp/dglm_test_grammar.txt";
    g.save(path);
    ToyGrammar h = ToyGrammar::load(path);
    CHECK(h.vocab() == g.vocab());
    CHECK(h.num_combos() == g.num_combos());
    // and saving the reload is byte-identical
    std::string path2 = "/tmp/dglm_test_grammar2.txt";
    h.save(path2);
    CHECK(slurp(path) == slurp(path2));
    std::remove(path.c_str());
    std::remove(path2.c_str());
}

TEST_CASE("token/text round trip") {
    ToyGrammar g = ToyGrammar::make_default(31);
    std::vector<int> ids = {0, 20, 45, 199};
    CHECK(g.text_to_tokens(g.tokens_to_text(ids)) == ids);
    CHECK_THROWS(g.symbol_id("not_a_symbol"));
}

TEST_CASE("corpus TSV round trip") {
    ToyGrammar g = ToyGrammar::make_default(37);
    Rng rng(41);
    auto records = g.gen_corpus(20, rng);
    std::string path = "/tmp/dglm_test_corpus.tsv";
    write_corpus(path, g, records);
    auto back = read_corpus(path, g);
    REQUIRE(back.size() == records.size());
    for (size_t i = 0; i < records.size(); ++i) {
        CHECK(back[i].prefix == records[i].prefix);
        CHECK(back[i].cont == records[i].cont);
        CHECK(back[i].values == records[i].values);
    }
    std::remove(path.c_str());
}
