#pragma once

#include <cmath>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "dglm/checkpoint.hpp"
#include "dglm/diffusion.hpp"
#include "dglm/nn.hpp"
#include "dglm/numerics.hpp"
#include "dglm/rng.hpp"
#include "dglm/schedule.hpp"

namespace dglm {

// v-prediction network: residual MLP over (z || prefix || time features) with
// adaptive scale/shift conditioning on a time embedding, plus a learnable
// null embedding standing in for a masked prefix.
template <typename S>
struct DenoiserNet {
    using Vec = Eigen::Matrix<S, Eigen::Dynamic, 1>;
    using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;

    struct Config {
        int dim = 64;
        int hidden = 256;
        int layers = 4;
        int time_features = 32;  // even
        double lambda_min = -15.0;
        double lambda_max = 15.0;
    };

    Config cfg;
    ParamStore<S> params;

    DenoiserNet(const Config& c, uint64_t init_seed) : cfg(c) {
        if (cfg.time_features % 2 != 0)
            throw std::invalid_argument("denoiser: time_features must be even");
        const int d = cfg.dim, h = cfg.hidden, F = cfg.time_features;
        params.add("null_embedding", d, 1);
        params.add("time.W1", h, F);
        params.add("time.b1", h, 1);
        params.add("time.W2", h, h);
        params.add("time.b2", h, 1);
        params.add("in.W", h, 2 * d + F);
        params.add("in.b", h, 1);
        for (int l = 0; l < cfg.layers; ++l) {
            std::string p = "block" + std::to_string(l) + ".";
            params.add(p + "cond.W", 2 * h, h);
            params.add(p + "cond.b", 2 * h, 1);
            params.add(p + "W1", h, h);
            params.add(p + "b1", h, 1);
            params.add(p + "W2", h, h);
            params.add(p + "b2", h, 1);
        }
        params.add("out.W", d, h);
        params.add("out.b", d, 1);
        Rng rng(init_seed);
        params.init_normal(rng);
        // residual branches start near zero
        for (int l = 0; l < cfg.layers; ++l)
            params.value("block" + std::to_string(l) + ".W2") *= static_cast<S>(0.1);
        params.value("out.W") *= static_cast<S>(0.1);
    }

    Vec time_feats(double lambda) const {
        const int F = cfg.time_features;
        double u = (lambda - cfg.lambda_min) / (cfg.lambda_max - cfg.lambda_min);
        u = std::clamp(u, 0.0, 1.0);
        Vec f(F);
        for (int j = 0; j < F / 2; ++j) {
            double omega = M_PI * std::pow(1000.0, static_cast<double>(j) / (F / 2 - 1));
            f[2 * j] = static_cast<S>(std::sin(omega * u));
            f[2 * j + 1] = static_cast<S>(std::cos(omega * u));
        }
        return f;
    }

    struct Cache {
        Vec feats, t1_pre, t1, temb;
        Vec in;
        bool null_prefix = false;
        std::vector<Vec> block_in, scale, shift, u, a_pre, a;
        Vec h_final;
    };

    Vec forward(const Vec& z, const Vec* prefix, double lambda, Cache& c) const {
        if (z.size() != cfg.dim) throw std::invalid_argument("denoiser: z dimension mismatch");
        if (prefix && prefix->size() != cfg.dim)
            throw std::invalid_argument("denoiser: prefix dimension mismatch");
        auto& P = const_cast<ParamStore<S>&>(params);
        const int d = cfg.dim, h = cfg.hidden, F = cfg.time_features;

        c.feats = time_feats(lambda);
        c.t1_pre = P.value("time.W1") * c.feats + P.value("time.b1");
        c.t1 = c.t1_pre.unaryExpr([](S x) { return static_cast<S>(silu(x)); });
        c.temb = P.value("time.W2") * c.t1 + P.value("time.b2");

        c.null_prefix = prefix == nullptr;
        const Vec& pref = prefix ? *prefix : P.value("null_embedding").col(0);
        c.in.resize(2 * d + F);
        c.in.segment(0, d) = z;
        c.in.segment(d, d) = pref;
        c.in.segment(2 * d, F) = c.feats;

        Vec hidden = P.value("in.W") * c.in + P.value("in.b");
        c.block_in.resize(cfg.layers);
        c.scale.resize(cfg.layers);
        c.shift.resize(cfg.layers);
        c.u.resize(cfg.layers);
        c.a_pre.resize(cfg.layers);
        c.a.resize(cfg.layers);
        for (int l = 0; l < cfg.layers; ++l) {
            std::string p = "block" + std::to_string(l) + ".";
            c.block_in[l] = hidden;
            Vec st = P.value(p + "cond.W") * c.temb + P.value(p + "cond.b");
            c.scale[l] = st.segment(0, h);
            c.shift[l] = st.segment(h, h);
            c.u[l] = hidden.cwiseProduct(Vec::Ones(h) + c.scale[l]) + c.shift[l];
            c.a_pre[l] = P.value(p + "W1") * c.u[l] + P.value(p + "b1");
            c.a[l] = c.a_pre[l].unaryExpr([](S x) { return static_cast<S>(silu(x)); });
            hidden += P.value(p + "W2") * c.a[l] + P.value(p + "b2");
        }
        c.h_final = hidden;
        return P.value("out.W") * hidden + P.value("out.b");
    }

    // Backpropagates the output cotangent. Accumulates parameter gradients
    // when accum is true; always returns the gradient with respect to z.
    Vec backward(const Cache& c, const Vec& dv, bool accum) {
        const int d = cfg.dim, h = cfg.hidden;
        auto g = [&](const std::string& n) -> Mat& { return params.grad(n); };
        auto w = [&](const std::string& n) -> const Mat& { return params.value(n); };

        if (accum) {
            g("out.W") += dv * c.h_final.transpose();
            g("out.b") += dv;
        }
        Vec dh = w("out.W").transpose() * dv;
        Vec dtemb = Vec::Zero(h);
        for (int l = cfg.layers - 1; l >= 0; --l) {
            std::string p = "block" + std::to_string(l) + ".";
            if (accum) {
                g(p + "W2") += dh * c.a[l].transpose();
                g(p + "b2") += dh;
            }
            Vec da = w(p + "W2").transpose() * dh;
            Vec da_pre(h);
            for (int i = 0; i < h; ++i)
                da_pre[i] = da[i] * static_cast<S>(silu_grad(static_cast<double>(c.a_pre[l][i])));
            if (accum) {
                g(p + "W1") += da_pre * c.u[l].transpose();
                g(p + "b1") += da_pre;
            }
            Vec du = w(p + "W1").transpose() * da_pre;
            Vec ds = du.cwiseProduct(c.block_in[l]);
            Vec dst(2 * h);
            dst.segment(0, h) = ds;
            dst.segment(h, h) = du;  // shift gradient
            if (accum) {
                g(p + "cond.W") += dst * c.temb.transpose();
                g(p + "cond.b") += dst;
            }
            dtemb += w(p + "cond.W").transpose() * dst;
            dh += du.cwiseProduct(Vec::Ones(h) + c.scale[l]);
        }
        if (accum) {
            g("in.W") += dh * c.in.transpose();
            g("in.b") += dh;
            // time embedding path
            g("time.W2") += dtemb * c.t1.transpose();
            g("time.b2") += dtemb;
            Vec dt1 = w("time.W2").transpose() * dtemb;
            Vec dt1_pre(h);
            for (int i = 0; i < h; ++i)
                dt1_pre[i] =
                    dt1[i] * static_cast<S>(silu_grad(static_cast<double>(c.t1_pre[i])));
            g("time.W1") += dt1_pre * c.feats.transpose();
            g("time.b1") += dt1_pre;
        }
        Vec din = w("in.W").transpose() * dh;
        if (accum && c.null_prefix) g("null_embedding").col(0) += din.segment(d, d);
        return din.segment(0, d);
    }

    Vec predict_v(const Vec& z, const Vec* prefix, double lambda) const {
        Cache c;
        return forward(z, prefix, lambda, c);
    }

    // cot^T d(v_hat)/dz without touching parameter gradients
    Vec vjp_v_wrt_z(const Vec& z, const Vec* prefix, double lambda, const Vec& cot) {
        Cache c;
        forward(z, prefix, lambda, c);
        return backward(c, cot, false);
    }

    void save(const std::string& path) const {
        Checkpoint ckp;
        ckp.set_meta("kind", "denoiser");
        ckp.set_meta("dim", std::to_string(cfg.dim));
        ckp.set_meta("hidden", std::to_string(cfg.hidden));
        ckp.set_meta("layers", std::to_string(cfg.layers));
        ckp.set_meta("time_features", std::to_string(cfg.time_features));
        ckp.set_meta("lambda_min", std::to_string(cfg.lambda_min));
        ckp.set_meta("lambda_max", std::to_string(cfg.lambda_max));
        params.to_checkpoint(ckp);
        ckp.save(path);
    }

    static DenoiserNet load(const std::string& path) {
        Checkpoint ckp = Checkpoint::load(path);
        Config c;
        c.dim = std::stoi(ckp.meta("dim"));
        c.hidden = std::stoi(ckp.meta("hidden"));
        c.layers = std::stoi(ckp.meta("layers"));
        c.time_features = std::stoi(ckp.meta("time_features"));
        c.lambda_min = std::stod(ckp.meta("lambda_min"));
        c.lambda_max = std::stod(ckp.meta("lambda_max"));
        DenoiserNet net(c, 0);
        net.params.from_checkpoint(ckp);
        return net;
    }
};

// Training loop state: adaptive log-SNR sampling, importance-weighted DSM
// loss, AdamW updates.
template <typename S>
struct DenoiserTrainer {
    using Vec = typename DenoiserNet<S>::Vec;

    DenoiserNet<S> net;
    Schedule schedule;
    WeightingFn wfn;
    AdaptiveSamplerState adaptive;
    AdamW<S> opt;
    double mask_prob = 0.1;

    struct DrawnExample {
        Eigen::VectorXd x;
        Eigen::VectorXd prefix;
        bool masked = false;
        double lambda = 0.0;
        Eigen::VectorXd eps;
        double importance = 1.0;
    };

    DenoiserTrainer(const typename DenoiserNet<S>::Config& cfg, uint64_t init_seed)
        : net(cfg, init_seed),
          adaptive(cfg.lambda_min, cfg.lambda_max, 64, 0.99) {
        schedule.lambda_min = cfg.lambda_min;
        schedule.lambda_max = cfg.lambda_max;
    }

    DrawnExample draw(const Eigen::VectorXd& x, const Eigen::VectorXd& prefix, Rng& rng) {
        DrawnExample ex;
        ex.x = x;
        ex.prefix = prefix;
        auto [lambda, iw] = adaptive.sample(rng);
        ex.lambda = lambda;
        ex.importance = iw;
        ex.eps = rng.normal_vec(net.cfg.dim);
        ex.masked = rng.uniform() < mask_prob;
        return ex;
    }

    // Mean importance-weighted DSM loss over the drawn batch. Per-example
    // weighted losses (without the importance factor) come back through
    // raw_losses for the adaptive sampler update.
    double batch_loss(const std::vector<DrawnExample>& batch, bool accum,
                      std::vector<double>* raw_losses = nullptr) {
        if (batch.empty()) throw std::invalid_argument("denoiser: empty batch");
        const double inv_b = 1.0 / batch.size();
        double total = 0.0;
        if (raw_losses) raw_losses->resize(batch.size());
        for (size_t i = 0; i < batch.size(); ++i) {
            const auto& ex = batch[i];
            double alpha = std::sqrt(logistic(ex.lambda));
            double sigma = std::sqrt(logistic(-ex.lambda));
            Vec z = (alpha * ex.x + sigma * ex.eps).template cast<S>();
            Vec v_true = (alpha * ex.eps - sigma * ex.x).template cast<S>();
            Vec pref = ex.prefix.template cast<S>();
            typename DenoiserNet<S>::Cache cache;
            Vec v_hat = net.forward(z, ex.masked ? nullptr : &pref, ex.lambda, cache);
            Vec diff = v_hat - v_true;
            double w = wfn(ex.lambda);
            double raw = w * static_cast<double>(diff.squaredNorm());
            if (raw_losses) (*raw_losses)[i] = raw;
            total += ex.importance * raw;
            if (accum) {
                Vec dv = diff * static_cast<S>(2.0 * w * ex.importance * inv_b);
                net.backward(cache, dv, true);
            }
        }
        return total * inv_b;
    }

    double train_step(const std::vector<std::pair<Eigen::VectorXd, Eigen::VectorXd>>& batch,
                      Rng& rng) {
        if (batch.empty()) throw std::invalid_argument("denoiser: empty batch");
        std::vector<DrawnExample> drawn;
        drawn.reserve(batch.size());
        for (const auto& [x, pref] : batch) drawn.push_back(draw(x, pref, rng));
        net.params.zero_grad();
        std::vector<double> raw;
        double loss = batch_loss(drawn, true, &raw);
        if (!std::isfinite(loss))
            throw std::runtime_error("denoiser: non-finite loss at optimizer step " +
                                     std::to_string(opt.step_count));
        opt.step(net.params);
        for (size_t i = 0; i < drawn.size(); ++i) adaptive.update(drawn[i].lambda, raw[i]);
        return loss;
    }

    // Held-out loss at fixed masking, drawing noise from rng.
    double eval_loss(const std::vector<std::pair<Eigen::VectorXd, Eigen::VectorXd>>& batch,
                     bool mask_all, Rng& rng) {
        std::vector<DrawnExample> drawn;
        drawn.reserve(batch.size());
        for (const auto& [x, pref] : batch) {
            DrawnExample ex = draw(x, pref, rng);
            ex.masked = mask_all;
            ex.importance = 1.0;
            drawn.push_back(std::move(ex));
        }
        return batch_loss(drawn, false);
    }
};

}  // namespace dglm
