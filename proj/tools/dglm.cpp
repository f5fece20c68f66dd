#include <fstream>
#include <iostream>
#include <memory>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "dglm/pipeline.hpp"

using namespace dglm;

namespace {

RunConfig load_config(const std::string& path, uint64_t seed_flag, bool seed_set) {
    RunConfig cfg = path.empty() ? RunConfig() : RunConfig::from_file(path);
    if (seed_set) cfg.set("seed", std::to_string(seed_flag));
    cfg.apply_env();
    return cfg;
}

std::string read_text_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path);
    std::string s((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    while (!s.empty() && (s.back() == '\n' || s.back() == '\r')) s.pop_back();
    return s;
}

std::vector<Record> prompt_records(const std::vector<Record>& corpus, int num_prompts) {
    std::vector<Record> prompts;
    std::set<std::vector<int>> seen;
    for (const auto& r : corpus) {
        if (static_cast<int>(prompts.size()) >= num_prompts) break;
        if (seen.insert(r.prefix).second) prompts.push_back(r);
    }
    if (prompts.empty()) throw std::runtime_error("no prompts available in corpus");
    return prompts;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"diffusion-guided toy language modeling toolkit"};
    app.require_subcommand(1);

    std::string config_path;
    uint64_t seed_flag = 0;
    app.add_option("--config", config_path, "key=value config file")->capture_default_str();
    auto* seed_opt = app.add_option("--seed", seed_flag, "run seed (overrides SEED env)");

    // gen-corpus
    auto* gen_corpus = app.add_subcommand("gen-corpus", "sample a labeled corpus");
    std::string gc_out = "corpus.tsv", gc_grammar_out;
    int gc_size = 4000;
    gen_corpus->add_option("--out", gc_out, "corpus TSV path")->capture_default_str();
    gen_corpus->add_option("--grammar-out", gc_grammar_out, "also write the grammar spec");
    gen_corpus->add_option("--size", gc_size, "number of records")->capture_default_str();

    // train-decoder
    auto* train_dec = app.add_subcommand("train-decoder", "train the soft-prompt decoder");
    std::string td_corpus, td_out = "decoder.ckpt";
    train_dec->add_option("--corpus", td_corpus, "corpus TSV")->required();
    train_dec->add_option("--out", td_out, "checkpoint path")->capture_default_str();

    // train-diffusion
    auto* train_diff = app.add_subcommand("train-diffusion", "train the proposal denoiser");
    std::string tf_corpus, tf_out = "denoiser.ckpt";
    train_diff->add_option("--corpus", tf_corpus, "corpus TSV")->required();
    train_diff->add_option("--out", tf_out, "checkpoint path")->capture_default_str();

    // train-classifier
    auto* train_clf = app.add_subcommand("train-classifier", "fit an attribute classifier");
    std::string tc_corpus, tc_axis, tc_out = "classifier.ckpt";
    train_clf->add_option("--corpus", tc_corpus, "corpus TSV")->required();
    train_clf->add_option("--axis", tc_axis, "attribute axis name")->required();
    train_clf->add_option("--out", tc_out, "checkpoint path")->capture_default_str();

    // generate
    auto* gen = app.add_subcommand("generate", "guided proposal generation + decoding");
    std::string g_corpus, g_decoder, g_denoiser, g_out = "generations.tsv";
    std::vector<std::string> g_classifiers, g_targets;
    double g_cfg_w = 1.0, g_guidance_s = 0.0, g_noise = 0.05;
    int g_mc_n = 32, g_steps = 50, g_num = 25, g_max_tokens = 32, g_num_prompts = 5;
    std::string g_mc_form = "loss_softmax", g_jacobian = "full", g_proposal_from;
    std::string g_score_axis;
    std::string g_score_value;
    gen->add_option("--corpus", g_corpus, "corpus TSV supplying prompts")->required();
    gen->add_option("--decoder", g_decoder, "decoder checkpoint")->required();
    gen->add_option("--diffusion", g_denoiser, "denoiser checkpoint");
    gen->add_option("--classifier", g_classifiers, "classifier checkpoint (repeatable)");
    gen->add_option("--target", g_targets, "target class name, paired with --classifier");
    gen->add_option("--cfg-w", g_cfg_w, "classifier-free guidance weight")->capture_default_str();
    gen->add_option("--guidance-s", g_guidance_s, "guidance scale")->capture_default_str();
    gen->add_option("--mc-n", g_mc_n, "Monte-Carlo sample count")->capture_default_str();
    gen->add_option("--steps", g_steps, "sampling steps")->capture_default_str();
    gen->add_option("--mc-form", g_mc_form, "loss_softmax|likelihood_mean")
        ->capture_default_str();
    gen->add_option("--jacobian", g_jacobian, "full|scaled_identity")->capture_default_str();
    gen->add_option("--noise", g_noise, "decoder conditioning noise variance")
        ->capture_default_str();
    gen->add_option("--proposal-from", g_proposal_from,
                    "file with text; its embedding replaces the diffusion proposal");
    gen->add_option("--num", g_num, "continuations per prompt")->capture_default_str();
    gen->add_option("--max-tokens", g_max_tokens, "continuation length cap")
        ->capture_default_str();
    gen->add_option("--num-prompts", g_num_prompts, "distinct prompts to use")
        ->capture_default_str();
    gen->add_option("--score-axis", g_score_axis, "oracle-score generations on this axis");
    gen->add_option("--score-value", g_score_value, "axis value counted as positive");
    gen->add_option("--out", g_out, "generation file")->capture_default_str();
    std::string g_grammar;
    gen->add_option("--grammar", g_grammar, "grammar spec file")->required();

    // eval
    auto* eval = app.add_subcommand("eval", "metrics report for a generation file");
    std::string e_generations, e_grammar, e_report = "report.tsv";
    eval->add_option("--generations", e_generations, "generation file")->required();
    eval->add_option("--grammar", e_grammar, "grammar spec file")->required();
    eval->add_option("--report", e_report, "report path")->capture_default_str();

    // verify-oracle
    app.add_subcommand("verify-oracle", "analytic-mixture sampling verification");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        RunConfig cfg = load_config(config_path, seed_flag, seed_opt->count() > 0);

        if (gen_corpus->parsed()) {
            ToyGrammar grammar = grammar_from_config(cfg);
            Rng rng(cfg.get_u64("grammar.seed", 1234) ^ 0xc0de);
            auto records = grammar.gen_corpus(gc_size, rng);
            write_corpus(gc_out, grammar, records);
            if (!gc_grammar_out.empty()) grammar.save(gc_grammar_out);
            std::cout << "wrote " << records.size() << " records to " << gc_out << "\n";
        } else if (train_dec->parsed()) {
            ToyGrammar grammar = grammar_from_config(cfg);
            auto records = read_corpus(td_corpus, grammar);
            Embedder emb = embedder_from_config(cfg, grammar);
            auto corpus = embed_corpus(emb, grammar, records);
            auto lm = train_decoder(cfg, grammar, corpus, &std::cout);
            lm->save(td_out);
            std::cout << "saved decoder to " << td_out << "\n";
        } else if (train_diff->parsed()) {
            ToyGrammar grammar = grammar_from_config(cfg);
            auto records = read_corpus(tf_corpus, grammar);
            Embedder emb = embedder_from_config(cfg, grammar);
            auto corpus = embed_corpus(emb, grammar, records);
            auto net = train_denoiser(cfg, corpus, &std::cout);
            net->save(tf_out);
            std::cout << "saved denoiser to " << tf_out << "\n";
        } else if (train_clf->parsed()) {
            ToyGrammar grammar = grammar_from_config(cfg);
            auto records = read_corpus(tc_corpus, grammar);
            Embedder emb = embedder_from_config(cfg, grammar);
            auto corpus = embed_corpus(emb, grammar, records);
            int axis = grammar.axis_index(tc_axis);
            auto clf = train_axis_classifier(cfg, grammar, corpus, axis);
            clf.save(tc_out);
            std::cout << "saved classifier to " << tc_out << "\n";
        } else if (gen->parsed()) {
            if (g_classifiers.size() != g_targets.size())
                throw std::runtime_error("--classifier and --target must be paired");
            TrainedSystem sys;
            sys.grammar = ToyGrammar::load(g_grammar);
            sys.embedder = embedder_from_config(cfg, sys.grammar);
            sys.schedule = schedule_from_config(cfg);
            sys.decoder =
                std::make_shared<SoftPromptLM<float>>(SoftPromptLM<float>::load(g_decoder));
            if (!g_denoiser.empty())
                sys.denoiser =
                    std::make_shared<DenoiserNet<float>>(DenoiserNet<float>::load(g_denoiser));

            GenerateOptions opt;
            opt.guidance.cfg_w = g_cfg_w;
            opt.guidance.guidance_s = g_guidance_s;
            opt.guidance.mc_n = g_mc_n;
            opt.guidance.steps = g_steps;
            opt.guidance.mc_form = mc_form_from_string(g_mc_form);
            opt.guidance.jacobian = jacobian_from_string(g_jacobian);
            opt.noise_var = g_noise;
            opt.num = g_num;
            opt.max_tokens = g_max_tokens;
            opt.seed = cfg.get_u64("seed", 0);
            if (!g_score_axis.empty()) {
                opt.score_axis = sys.grammar.axis_index(g_score_axis);
                const auto& vals = sys.grammar.axes[opt.score_axis].values;
                auto it = std::find(vals.begin(), vals.end(), g_score_value);
                if (it == vals.end())
                    throw std::runtime_error("unknown value '" + g_score_value + "' for axis " +
                                             g_score_axis);
                opt.score_value = static_cast<int>(it - vals.begin());
            }

            std::vector<LinearAttributeClassifier> clfs;
            clfs.reserve(g_classifiers.size());
            for (size_t i = 0; i < g_classifiers.size(); ++i) {
                clfs.push_back(LinearAttributeClassifier::load(g_classifiers[i]));
                std::string axis = "clf" + std::to_string(i);
                int cls = clfs.back().class_id(g_targets[i]);
                sys.classifiers[axis] = clfs.back();
                opt.targets.emplace_back(axis, cls);
            }

            auto records = read_corpus(g_corpus, sys.grammar);
            auto prompts = prompt_records(records, g_num_prompts);

            GenerationSet result;
            if (!g_proposal_from.empty()) {
                // fixed proposal: embed the given text, skip diffusion
                std::vector<int> toks =
                    sys.grammar.text_to_tokens(read_text_file(g_proposal_from));
                Eigen::VectorXd proposal = sys.embedder.embed(toks);
                Rng root(opt.seed);
                result.groups.resize(prompts.size());
                for (size_t p = 0; p < prompts.size(); ++p) {
                    auto& grp = result.groups[p];
                    grp.prompt = prompts[p].prefix;
                    for (int i = 0; i < opt.num; ++i) {
                        Rng rng = root.derive(p * 1000003ULL + i);
                        grp.continuations.push_back(sys.decoder->generate(
                            prompts[p].prefix, proposal, opt.noise_var, rng, opt.max_tokens));
                        grp.proposals.push_back(proposal);
                        if (opt.score_axis >= 0)
                            grp.scores.push_back(sys.grammar.attribute_score(
                                grp.continuations.back(), opt.score_axis, opt.score_value));
                    }
                }
                result.validate();
            } else {
                if (!sys.denoiser)
                    throw std::runtime_error("generate needs --diffusion or --proposal-from");
                result = generate_set(sys, prompts, opt);
            }
            write_generation_file(g_out, result, [&](const std::vector<int>& t) {
                return sys.grammar.tokens_to_text(t);
            });
            std::cout << "wrote " << g_out << "\n";
        } else if (eval->parsed()) {
            ToyGrammar grammar = ToyGrammar::load(e_grammar);
            GenerationSet gs = read_generation_file(e_generations, [&](const std::string& s) {
                return grammar.text_to_tokens(s);
            });
            std::vector<std::vector<int>> all;
            for (const auto& g : gs.groups)
                for (const auto& c : g.continuations) all.push_back(c);
            std::vector<std::pair<std::string, double>> metrics;
            metrics.emplace_back("div", div_metric(all));
            metrics.emplace_back("dist3", dist_n(gs, 3));
            metrics.emplace_back("perplexity", mean_oracle_perplexity(grammar, gs));
            bool have_scores = true;
            for (const auto& g : gs.groups)
                if (g.scores.empty()) have_scores = false;
            // attribute stats straight from the scores recorded at generation time
            if (have_scores) {
                double avg_max = 0.0, rate = 0.0;
                int64_t pos = 0, total = 0;
                for (const auto& g : gs.groups) {
                    double mx = 0.0;
                    bool any = false;
                    for (double s : g.scores) {
                        mx = std::max(mx, s);
                        if (s >= 0.5) {
                            ++pos;
                            any = true;
                        }
                        ++total;
                    }
                    avg_max += mx;
                    rate += any ? 1.0 : 0.0;
                }
                metrics.emplace_back("avg_max", avg_max / gs.groups.size());
                metrics.emplace_back("rate", rate / gs.groups.size());
                metrics.emplace_back("mean_prop", static_cast<double>(pos) / total);
            }
            write_report(e_report, metrics, cfg.resolved());
            for (const auto& [k, v] : metrics) std::cout << k << "\t" << v << "\n";
        } else {  // verify-oracle
            auto res = verify_gmm_oracle(std::cout);
            std::cout << (res.pass ? "PASS" : "FAIL") << "\n";
            return res.pass ? 0 : 1;
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
