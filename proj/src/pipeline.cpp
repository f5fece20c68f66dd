#include "dglm/pipeline.hpp"

#include <cmath>
#include <iostream>
#include <stdexcept>

#include "dglm/diffusion.hpp"
#include "dglm/numerics.hpp"

namespace dglm {

Schedule schedule_from_config(const RunConfig& cfg) {
    Schedule s;
    s.kind = Schedule::kind_from_string(cfg.get_str("schedule.kind", "cosine"));
    s.shift = cfg.get_double("schedule.shift", 1.0);
    s.lambda_min = cfg.get_double("schedule.lambda_min", -15.0);
    s.lambda_max = cfg.get_double("schedule.lambda_max", 15.0);
    s.validate();
    return s;
}

ToyGrammar grammar_from_config(const RunConfig& cfg) {
    return ToyGrammar::make_default(cfg.get_u64("grammar.seed", 1234));
}

Embedder embedder_from_config(const RunConfig& cfg, const ToyGrammar& grammar) {
    return Embedder(grammar.vocab(), cfg.get_int("embed.dim", 64),
                    cfg.get_u64("embed.seed", 99));
}

GuidanceConfig guidance_from_config(const RunConfig& cfg) {
    GuidanceConfig g;
    g.cfg_w = cfg.get_double("sampler.cfg_w", 1.0);
    g.guidance_s = cfg.get_double("sampler.guidance_s", 0.0);
    g.mc_n = cfg.get_int("sampler.mc_n", 32);
    g.steps = cfg.get_int("sampler.steps", 50);
    g.mc_form = mc_form_from_string(cfg.get_str("sampler.mc_form", "loss_softmax"));
    g.jacobian = jacobian_from_string(cfg.get_str("sampler.jacobian", "full"));
    g.v_interp = cfg.get_double("sampler.v_interp", 0.2);
    g.validate();
    return g;
}

std::vector<EmbeddedRecord> embed_corpus(const Embedder& emb, const ToyGrammar&,
                                         const std::vector<Record>& records) {
    std::vector<EmbeddedRecord> out;
    out.reserve(records.size());
    for (const auto& r : records)
        out.push_back({r, emb.embed(r.prefix), emb.embed(r.cont)});
    return out;
}

std::shared_ptr<SoftPromptLM<float>> train_decoder(const RunConfig& cfg,
                                                   const ToyGrammar& grammar,
                                                   const std::vector<EmbeddedRecord>& corpus,
                                                   std::ostream* log) {
    if (corpus.empty()) throw std::invalid_argument("train_decoder: empty corpus");
    typename SoftPromptLM<float>::Config dc;
    dc.vocab = grammar.vocab();
    dc.width = cfg.get_int("decoder.width", 128);
    dc.layers = cfg.get_int("decoder.layers", 4);
    dc.heads = cfg.get_int("decoder.heads", 4);
    dc.mlp_hidden = cfg.get_int("decoder.mlp_hidden", 256);
    dc.k_soft = cfg.get_int("decoder.soft_tokens", 8);
    dc.max_seq = cfg.get_int("decoder.max_seq", 96);
    dc.embed_dim = cfg.get_int("embed.dim", 64);
    dc.tie_embeddings = cfg.get_bool("decoder.tie_embeddings", true);

    uint64_t seed = cfg.get_u64("seed", 0);
    auto lm = std::make_shared<SoftPromptLM<float>>(dc, seed ^ 0xdec0de);

    Schedule aug;
    aug.kind = ScheduleKind::scaled_cosine;
    aug.shift = 3.0;

    AdamW<float> opt;
    opt.lr = cfg.get_double("decoder.lr", 1e-3);
    opt.warmup_steps = cfg.get_int("decoder.warmup", 100);
    int steps = cfg.get_int("decoder.steps", 2000);
    opt.total_steps = steps;
    int batch_size = cfg.get_int("decoder.batch", 16);
    // dropping the token prefix forces the model to explain the continuation
    // through the soft prompt alone; without it the near-unique prefixes let
    // the decoder memorize continuations and never learn the conditioning
    double prefix_dropout = cfg.get_double("decoder.prefix_dropout", 0.5);

    Rng rng(seed ^ 0x7e57dec0);
    for (int s = 0; s < steps; ++s) {
        std::vector<typename SoftPromptLM<float>::Example> batch;
        batch.reserve(batch_size);
        for (int b = 0; b < batch_size; ++b) {
            const auto& er = corpus[rng.uniform_int(static_cast<int>(corpus.size()))];
            bool drop = dc.k_soft > 0 && rng.uniform() < prefix_dropout;
            batch.push_back(
                {drop ? std::vector<int>{} : er.rec.prefix, er.rec.cont, er.x_cont});
        }
        double loss = lm->train_step(batch, aug, opt, rng);
        if (log && (s % 200 == 0 || s == steps - 1))
            *log << "decoder step " << s << " loss " << loss << "\n";
    }
    return lm;
}

std::shared_ptr<DenoiserNet<float>> train_denoiser(const RunConfig& cfg,
                                                   const std::vector<EmbeddedRecord>& corpus,
                                                   std::ostream* log) {
    if (corpus.empty()) throw std::invalid_argument("train_denoiser: empty corpus");
    typename DenoiserNet<float>::Config nc;
    nc.dim = cfg.get_int("embed.dim", 64);
    nc.hidden = cfg.get_int("model.hidden", 256);
    nc.layers = cfg.get_int("model.layers", 4);
    nc.time_features = cfg.get_int("model.time_features", 32);

    uint64_t seed = cfg.get_u64("seed", 0);
    DenoiserTrainer<float> trainer(nc, seed ^ 0xd1ff);
    trainer.mask_prob = cfg.get_double("train.mask_prob", 0.1);
    trainer.wfn.kind = WeightingFn::kind_from_string(
        cfg.get_str("loss.weighting", "hybrid_cauchy_normal"));
    trainer.wfn.scale = cfg.get_double("loss.scale", 2.4);
    trainer.opt.lr = cfg.get_double("train.lr", 1e-3);
    trainer.opt.warmup_steps = cfg.get_int("train.warmup", 200);
    int steps = cfg.get_int("train.steps", 3000);
    trainer.opt.total_steps = steps;
    int batch_size = cfg.get_int("train.batch", 32);

    Rng rng(seed ^ 0xd1fff);
    for (int s = 0; s < steps; ++s) {
        std::vector<std::pair<Eigen::VectorXd, Eigen::VectorXd>> batch;
        batch.reserve(batch_size);
        for (int b = 0; b < batch_size; ++b) {
            const auto& er = corpus[rng.uniform_int(static_cast<int>(corpus.size()))];
            batch.emplace_back(er.x_cont, er.x_pref);
        }
        double loss = trainer.train_step(batch, rng);
        if (log && (s % 500 == 0 || s == steps - 1))
            *log << "denoiser step " << s << " loss " << loss << "\n";
    }
    return std::make_shared<DenoiserNet<float>>(std::move(trainer.net));
}

LinearAttributeClassifier train_axis_classifier(const RunConfig& cfg, const ToyGrammar& grammar,
                                                const std::vector<EmbeddedRecord>& corpus,
                                                int axis) {
    if (axis < 0 || axis >= static_cast<int>(grammar.axes.size()))
        throw std::invalid_argument("train_axis_classifier: bad axis");
    Eigen::MatrixXd X(corpus.size(), corpus[0].x_cont.size());
    std::vector<int> y(corpus.size());
    for (size_t i = 0; i < corpus.size(); ++i) {
        X.row(i) = corpus[i].x_cont.transpose();
        y[i] = corpus[i].rec.values[axis];
    }
    FitOptions fo;
    fo.l2 = cfg.get_double("classifier.l2", 1e-3);
    fo.balanced = cfg.get_bool("classifier.balanced", true);
    return fit_logistic(X, y, fo, grammar.axes[axis].values);
}

TrainedSystem train_system(const RunConfig& cfg, std::ostream* log) {
    TrainedSystem sys;
    sys.grammar = grammar_from_config(cfg);
    sys.embedder = embedder_from_config(cfg, sys.grammar);
    sys.schedule = schedule_from_config(cfg);
    sys.aug_schedule.kind = ScheduleKind::scaled_cosine;
    sys.aug_schedule.shift = 3.0;

    Rng corpus_rng(cfg.get_u64("grammar.seed", 1234) ^ 0xc0de);
    std::vector<Record> records =
        sys.grammar.gen_corpus(cfg.get_int("corpus.size", 4000), corpus_rng);
    auto corpus = embed_corpus(sys.embedder, sys.grammar, records);
    if (log) *log << "corpus: " << corpus.size() << " records\n";

    sys.decoder = train_decoder(cfg, sys.grammar, corpus, log);
    sys.denoiser = train_denoiser(cfg, corpus, log);
    for (size_t a = 0; a < sys.grammar.axes.size(); ++a) {
        sys.classifiers[sys.grammar.axes[a].name] =
            train_axis_classifier(cfg, sys.grammar, corpus, static_cast<int>(a));
        if (log) *log << "classifier trained: " << sys.grammar.axes[a].name << "\n";
    }
    return sys;
}

GenerationSet generate_set(TrainedSystem& sys, const std::vector<Record>& prompts,
                           const GenerateOptions& opt) {
    if (prompts.empty()) throw std::invalid_argument("generate_set: no prompts");
    LearnedDenoiser den(*sys.denoiser);
    std::vector<GuidanceTarget> targets;
    for (const auto& [axis, cls] : opt.targets) {
        auto it = sys.classifiers.find(axis);
        if (it == sys.classifiers.end())
            throw std::invalid_argument("generate_set: no classifier for axis " + axis);
        targets.push_back({&it->second, cls});
    }

    Rng root(opt.seed);
    GenerationSet gen;
    gen.groups.resize(prompts.size());
    for (size_t p = 0; p < prompts.size(); ++p) {
        auto& g = gen.groups[p];
        g.prompt = prompts[p].prefix;
        Eigen::VectorXd x_pref = sys.embedder.embed(prompts[p].prefix);
        for (int i = 0; i < opt.num; ++i) {
            Rng rng = root.derive(p * 1000003ULL + i);
            Eigen::VectorXd proposal =
                sample(den, &x_pref, targets, opt.guidance, sys.schedule, rng);
            std::vector<int> cont = sys.decoder->generate(prompts[p].prefix, proposal,
                                                          opt.noise_var, rng, opt.max_tokens);
            g.continuations.push_back(std::move(cont));
            g.proposals.push_back(proposal);
            if (opt.score_axis >= 0)
                g.scores.push_back(sys.grammar.attribute_score(g.continuations.back(),
                                                               opt.score_axis, opt.score_value));
        }
    }
    gen.validate();
    return gen;
}

double mean_oracle_perplexity(const ToyGrammar& grammar, const GenerationSet& gen) {
    double sum = 0.0;
    int64_t count = 0;
    for (const auto& g : gen.groups)
        for (const auto& c : g.continuations) {
            sum += grammar.true_perplexity(c);
            ++count;
        }
    if (count == 0) throw std::invalid_argument("mean_oracle_perplexity: empty set");
    return sum / count;
}

LabeledGmm make_gmm_fixture(int dim) {
    LabeledGmm gmm;
    gmm.weights = {0.6, 0.4};
    Eigen::VectorXd mu = Eigen::VectorXd::Zero(dim);
    mu[0] = 2.0;
    gmm.means = {mu, -mu};
    gmm.diag_vars = {Eigen::VectorXd::Ones(dim), Eigen::VectorXd::Ones(dim)};
    gmm.labels = {0, 1};
    gmm.validate();
    return gmm;
}

std::vector<double> gmm_conditional_weights(const LabeledGmm& gmm,
                                            const LinearAttributeClassifier& clf, int y,
                                            int n_mc, Rng& rng) {
    // pi_k' proportional to pi_k * E_{x ~ N_k}[ p(y|x) ]
    std::vector<double> w(gmm.components(), 0.0);
    for (int k = 0; k < gmm.components(); ++k) {
        double acc = 0.0;
        for (int i = 0; i < n_mc; ++i) {
            Eigen::VectorXd x = gmm.means[k];
            for (Eigen::Index j = 0; j < x.size(); ++j)
                x[j] += std::sqrt(gmm.diag_vars[k][j]) * rng.normal();
            acc += std::exp(clf.log_prob(x, y));
        }
        w[k] = gmm.weights[k] * acc / n_mc;
    }
    double total = 0.0;
    for (double v : w) total += v;
    for (double& v : w) v /= total;
    return w;
}

namespace {

int nearest_component(const LabeledGmm& gmm, const Eigen::VectorXd& x) {
    // responsibility argmax under the clean mixture
    int best = 0;
    double best_lp = -1e300;
    for (int k = 0; k < gmm.components(); ++k) {
        double lp = std::log(gmm.weights[k]);
        for (Eigen::Index j = 0; j < x.size(); ++j) {
            double d = x[j] - gmm.means[k][j];
            lp += -0.5 * d * d / gmm.diag_vars[k][j] - 0.5 * std::log(gmm.diag_vars[k][j]);
        }
        if (lp > best_lp) {
            best_lp = lp;
            best = k;
        }
    }
    return best;
}

double tv_distance(const std::vector<double>& p, const std::vector<double>& q) {
    double tv = 0.0;
    for (size_t i = 0; i < p.size(); ++i) tv += std::abs(p[i] - q[i]);
    return 0.5 * tv;
}

}  // namespace

GmmVerifyResult verify_gmm_oracle(std::ostream& out, int n_samples, int n_guided) {
    GmmVerifyResult res;
    LabeledGmm gmm = make_gmm_fixture(4);
    GmmScoreDenoiser den(gmm);
    Schedule sched;  // cosine

    // data mean of the mixture, for the bias check
    Eigen::VectorXd data_mean = Eigen::VectorXd::Zero(gmm.dim());
    for (int k = 0; k < gmm.components(); ++k) data_mean += gmm.weights[k] * gmm.means[k];

    GuidanceConfig unguided;
    unguided.steps = 50;
    Rng rng(20240601);
    std::vector<double> occ(gmm.components(), 0.0);
    Eigen::VectorXd mean = Eigen::VectorXd::Zero(gmm.dim());
    for (int i = 0; i < n_samples; ++i) {
        Rng r = rng.derive(i);
        Eigen::VectorXd x = sample(den, nullptr, {}, unguided, sched, r);
        occ[nearest_component(gmm, x)] += 1.0;
        mean += x;
    }
    for (double& v : occ) v /= n_samples;
    mean /= n_samples;
    res.uncond_tv = tv_distance(occ, gmm.weights);
    res.max_mean_bias = (mean - data_mean).cwiseAbs().maxCoeff();
    out << "unconditional occupancy TV " << res.uncond_tv << " (limit 0.05)\n";
    out << "max per-dimension mean bias " << res.max_mean_bias << " (limit 0.05)\n";

    // guided sampling toward class 0 at s=1 with the Bayes-aligned classifier
    LinearAttributeClassifier clf;
    bayes_linear_weights(gmm, clf.W, clf.b);
    clf.class_names = {"c0", "c1"};
    std::vector<double> ref = gmm_conditional_weights(gmm, clf, 0, 200000, rng);

    GuidanceConfig guided = unguided;
    guided.guidance_s = 1.0;
    std::vector<GuidanceTarget> targets{{&clf, 0}};
    std::vector<double> gocc(gmm.components(), 0.0);
    for (int i = 0; i < n_guided; ++i) {
        Rng r = rng.derive(1000000 + i);
        Eigen::VectorXd x = sample(den, nullptr, targets, guided, sched, r);
        gocc[nearest_component(gmm, x)] += 1.0;
    }
    for (double& v : gocc) v /= n_guided;
    res.guided_tv = tv_distance(gocc, ref);
    out << "guided occupancy TV " << res.guided_tv << " (limit 0.07), reference ("
        << ref[0] << ", " << ref[1] << ")\n";

    res.pass = res.uncond_tv < 0.05 && res.max_mean_bias < 0.05 && res.guided_tv < 0.07;
    return res;
}

}  // namespace dglm
