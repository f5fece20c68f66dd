#pragma once

#include <cmath>
#include <iostream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "dglm/checkpoint.hpp"
#include "dglm/nn.hpp"
#include "dglm/numerics.hpp"
#include "dglm/rng.hpp"
#include "dglm/schedule.hpp"

namespace dglm {

// Soft-prompt conditioned causal language model: a linear+refinement prompt
// generator turns a (noised) continuation embedding into k soft tokens, and a
// small pre-norm transformer decodes [prefix][soft tokens][continuation].
// Cross-entropy is computed on continuation positions only. Training noises
// the conditioning embedding through the forward process so that inference
// can trade adherence for fluency via the noise knob.
template <typename S>
struct SoftPromptLM {
    using Vec = Eigen::Matrix<S, Eigen::Dynamic, 1>;
    using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;

    struct Config {
        int vocab = 0;
        int width = 128;
        int heads = 4;
        int layers = 4;
        int mlp_hidden = 256;
        int k_soft = 8;  // 0 disables the soft prompt (prefix-only baseline)
        int max_seq = 96;
        int embed_dim = 64;
        int time_features = 32;
        int time_hidden = 64;
        int prompt_hidden = 128;
        int prompt_blocks = 2;
        bool tie_embeddings = true;
        double lambda_min = -15.0;
        double lambda_max = 15.0;
    };

    Config cfg;
    ParamStore<S> params;

    static constexpr double kRmsEps = 1e-6;

    SoftPromptLM(const Config& c, uint64_t init_seed) : cfg(c) {
        if (cfg.vocab < 1) throw std::invalid_argument("decoder: vocab must be positive");
        if (cfg.width % cfg.heads != 0)
            throw std::invalid_argument("decoder: width must be divisible by heads");
        if (cfg.time_features % 2 != 0)
            throw std::invalid_argument("decoder: time_features must be even");
        const int W = cfg.width, V = cfg.vocab, Hm = cfg.mlp_hidden;
        params.add("tok_embed", V, W);
        params.add("pos_embed", cfg.max_seq, W);
        for (int l = 0; l < cfg.layers; ++l) {
            std::string p = "layer" + std::to_string(l) + ".";
            params.add(p + "attn.norm", 1, W);
            params.add(p + "attn.Wq", W, W);
            params.add(p + "attn.Wk", W, W);
            params.add(p + "attn.Wv", W, W);
            params.add(p + "attn.Wo", W, W);
            params.add(p + "mlp.norm", 1, W);
            params.add(p + "mlp.W1", Hm, W);
            params.add(p + "mlp.W2", Hm, W);
            params.add(p + "mlp.W3", W, Hm);
        }
        params.add("final.norm", 1, W);
        if (!cfg.tie_embeddings) params.add("out.W", V, W);
        if (cfg.k_soft > 0) {
            const int F = cfg.time_features, Ht = cfg.time_hidden, Hp = cfg.prompt_hidden;
            params.add("prompt.in.W", cfg.k_soft * W, cfg.embed_dim);
            params.add("prompt.in.b", cfg.k_soft * W, 1);
            params.add("prompt.time.W1", Ht, F);
            params.add("prompt.time.b1", Ht, 1);
            for (int b = 0; b < cfg.prompt_blocks; ++b) {
                std::string p = "prompt.block" + std::to_string(b) + ".";
                params.add(p + "cond.W", 2 * W, Ht);
                params.add(p + "cond.b", 2 * W, 1);
                params.add(p + "W1", Hp, W);
                params.add(p + "b1", Hp, 1);
                params.add(p + "W2", W, Hp);
                params.add(p + "b2", W, 1);
            }
        }
        Rng rng(init_seed);
        params.init_normal(rng);
        for (int l = 0; l < cfg.layers; ++l) {
            std::string p = "layer" + std::to_string(l) + ".";
            params.value(p + "attn.norm").setOnes();
            params.value(p + "mlp.norm").setOnes();
            // residual branches start near zero
            params.value(p + "attn.Wo") *= static_cast<S>(0.1);
            params.value(p + "mlp.W3") *= static_cast<S>(0.1);
        }
        params.value("final.norm").setOnes();
        for (int b = 0; cfg.k_soft > 0 && b < cfg.prompt_blocks; ++b)
            params.value("prompt.block" + std::to_string(b) + ".W2") *= static_cast<S>(0.1);
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

    // ---- prompt generator ----

    struct PromptCache {
        Vec z_aug;
        Vec feats, th_pre, th;
        Mat base;  // k x W
        std::vector<Mat> blk_in, u, y, h_pre, h;
        std::vector<Vec> rms, scale, shift;
    };

    Mat prompt_forward(const Vec& z_aug, double lambda_aug, PromptCache& c) const {
        if (cfg.k_soft == 0) throw std::logic_error("decoder: no soft prompt configured");
        if (z_aug.size() != cfg.embed_dim)
            throw std::invalid_argument("decoder: proposal dimension mismatch");
        auto& P = const_cast<ParamStore<S>&>(params);
        const int k = cfg.k_soft, W = cfg.width;

        c.feats = time_feats(lambda_aug);
        c.th_pre = P.value("prompt.time.W1") * c.feats + P.value("prompt.time.b1");
        c.th = c.th_pre.unaryExpr([](S x) { return static_cast<S>(silu(x)); });

        Vec flat = P.value("prompt.in.W") * z_aug + P.value("prompt.in.b");
        c.base.resize(k, W);
        for (int j = 0; j < k; ++j) c.base.row(j) = flat.segment(j * W, W).transpose();

        const int B = cfg.prompt_blocks;
        c.blk_in.resize(B);
        c.u.resize(B);
        c.y.resize(B);
        c.h_pre.resize(B);
        c.h.resize(B);
        c.rms.resize(B);
        c.scale.resize(B);
        c.shift.resize(B);
        Mat x = c.base;
        for (int b = 0; b < B; ++b) {
            std::string p = "prompt.block" + std::to_string(b) + ".";
            c.blk_in[b] = x;
            Vec st = P.value(p + "cond.W") * c.th + P.value(p + "cond.b");
            c.scale[b] = st.segment(0, W);
            c.shift[b] = st.segment(W, W);
            c.rms[b].resize(k);
            c.u[b].resize(k, W);
            c.y[b].resize(k, W);
            for (int j = 0; j < k; ++j) {
                double ms = static_cast<double>(x.row(j).squaredNorm()) / W + kRmsEps;
                c.rms[b][j] = static_cast<S>(std::sqrt(ms));
                c.u[b].row(j) = x.row(j) / c.rms[b][j];
                c.y[b].row(j) = c.u[b].row(j).cwiseProduct(
                                    (Vec::Ones(W) + c.scale[b]).transpose()) +
                                c.shift[b].transpose();
            }
            c.h_pre[b] = c.y[b] * P.value(p + "W1").transpose();
            c.h_pre[b].rowwise() += P.value(p + "b1").col(0).transpose();
            c.h[b] = c.h_pre[b].unaryExpr([](S v) { return static_cast<S>(silu(v)); });
            Mat out = c.h[b] * P.value(p + "W2").transpose();
            out.rowwise() += P.value(p + "b2").col(0).transpose();
            x += out;
        }
        return x;
    }

    void prompt_backward(const PromptCache& c, const Mat& d_soft) {
        auto g = [&](const std::string& n) -> Mat& { return params.grad(n); };
        auto w = [&](const std::string& n) -> const Mat& { return params.value(n); };
        const int k = cfg.k_soft, W = cfg.width, Ht = cfg.time_hidden;

        Mat dx = d_soft;
        Vec dth = Vec::Zero(Ht);
        for (int b = cfg.prompt_blocks - 1; b >= 0; --b) {
            std::string p = "prompt.block" + std::to_string(b) + ".";
            // residual branch
            Mat dout = dx;
            g(p + "b2").col(0) += dout.colwise().sum().transpose();
            g(p + "W2") += dout.transpose() * c.h[b];
            Mat dh = dout * w(p + "W2");
            Mat dh_pre = dh;
            for (int j = 0; j < k; ++j)
                for (int i = 0; i < dh_pre.cols(); ++i)
                    dh_pre(j, i) *= static_cast<S>(
                        silu_grad(static_cast<double>(c.h_pre[b](j, i))));
            g(p + "b1").col(0) += dh_pre.colwise().sum().transpose();
            g(p + "W1") += dh_pre.transpose() * c.y[b];
            Mat dy = dh_pre * w(p + "W1");

            Vec dscale = Vec::Zero(W), dshift = Vec::Zero(W);
            for (int j = 0; j < k; ++j) {
                dshift += dy.row(j).transpose();
                dscale += dy.row(j).cwiseProduct(c.u[b].row(j)).transpose();
                Eigen::Matrix<S, 1, Eigen::Dynamic> du =
                    dy.row(j).cwiseProduct((Vec::Ones(W) + c.scale[b]).transpose());
                // u = x / rms
                S r = c.rms[b][j];
                S dot = du.cwiseProduct(c.blk_in[b].row(j)).sum();
                dx.row(j) += du / r -
                             c.blk_in[b].row(j) * (dot / (static_cast<S>(W) * r * r * r));
            }
            Vec dst(2 * W);
            dst.segment(0, W) = dscale;
            dst.segment(W, W) = dshift;
            g(p + "cond.W") += dst * c.th.transpose();
            g(p + "cond.b").col(0) += dst;
            dth += w(p + "cond.W").transpose() * dst;
        }
        Vec dth_pre(Ht);
        for (int i = 0; i < Ht; ++i)
            dth_pre[i] = dth[i] * static_cast<S>(silu_grad(static_cast<double>(c.th_pre[i])));
        g("prompt.time.b1").col(0) += dth_pre;
        g("prompt.time.W1") += dth_pre * c.feats.transpose();

        Vec dflat(k * W);
        for (int j = 0; j < k; ++j) dflat.segment(j * W, W) = dx.row(j).transpose();
        g("prompt.in.b").col(0) += dflat;
        g("prompt.in.W") += dflat * c.z_aug.transpose();
    }

    // ---- transformer ----

    struct LayerCache {
        Mat x_in;  // T x W, pre-attention residual stream
        Vec rms1;
        Mat A, Q, K, V;           // T x W
        std::vector<Mat> P;       // per head, T x T causal softmax
        Mat O;                    // T x W concatenated head outputs
        Mat x_mid;                // after attention residual
        Vec rms2;
        Mat Mn, Gate, Val, H;     // MLP intermediates
    };

    struct SeqCache {
        Mat X0;  // T x W input embeddings
        std::vector<LayerCache> layers;
        Mat x_fin;
        Vec rmsf;
        Mat XF;  // final-normed stream
    };

    Mat rmsnorm_rows(const Mat& X, const Mat& gain, Vec& rms_out) const {
        const int T = static_cast<int>(X.rows()), W = static_cast<int>(X.cols());
        rms_out.resize(T);
        Mat Y(T, W);
        for (int i = 0; i < T; ++i) {
            double ms = static_cast<double>(X.row(i).squaredNorm()) / W + kRmsEps;
            rms_out[i] = static_cast<S>(std::sqrt(ms));
            Y.row(i) = (X.row(i) / rms_out[i]).cwiseProduct(gain.row(0));
        }
        return Y;
    }

    // Backward of Y = rmsnorm(X) * gain; accumulates dgain, returns dX.
    Mat rmsnorm_backward(const Mat& X, const Mat& gain, const Vec& rms, const Mat& dY,
                         Mat& dgain) const {
        const int T = static_cast<int>(X.rows()), W = static_cast<int>(X.cols());
        Mat dX(T, W);
        for (int i = 0; i < T; ++i) {
            Eigen::Matrix<S, 1, Eigen::Dynamic> u = X.row(i) / rms[i];
            dgain.row(0) += dY.row(i).cwiseProduct(u);
            Eigen::Matrix<S, 1, Eigen::Dynamic> du = dY.row(i).cwiseProduct(gain.row(0));
            S dot = du.cwiseProduct(X.row(i)).sum();
            dX.row(i) = du / rms[i] -
                        X.row(i) * (dot / (static_cast<S>(W) * rms[i] * rms[i] * rms[i]));
        }
        return dX;
    }

    Mat decoder_forward(const Mat& X0, SeqCache& c) const {
        auto& P = const_cast<ParamStore<S>&>(params);
        const int T = static_cast<int>(X0.rows()), W = cfg.width, H = cfg.heads;
        const int Dh = W / H;
        const S inv_sqrt_dh = static_cast<S>(1.0 / std::sqrt(static_cast<double>(Dh)));

        c.X0 = X0;
        c.layers.resize(cfg.layers);
        Mat x = X0;
        for (int l = 0; l < cfg.layers; ++l) {
            auto& lc = c.layers[l];
            std::string p = "layer" + std::to_string(l) + ".";
            lc.x_in = x;
            lc.A = rmsnorm_rows(x, P.value(p + "attn.norm"), lc.rms1);
            lc.Q = lc.A * P.value(p + "attn.Wq").transpose();
            lc.K = lc.A * P.value(p + "attn.Wk").transpose();
            lc.V = lc.A * P.value(p + "attn.Wv").transpose();
            lc.P.resize(H);
            lc.O.resize(T, W);
            for (int h = 0; h < H; ++h) {
                auto Qh = lc.Q.middleCols(h * Dh, Dh);
                auto Kh = lc.K.middleCols(h * Dh, Dh);
                auto Vh = lc.V.middleCols(h * Dh, Dh);
                Mat scores = (Qh * Kh.transpose()) * inv_sqrt_dh;
                Mat& Pm = lc.P[h];
                Pm = Mat::Zero(T, T);
                for (int i = 0; i < T; ++i) {
                    // causal row softmax over columns 0..i
                    S mx = scores.row(i).head(i + 1).maxCoeff();
                    double denom = 0.0;
                    for (int j = 0; j <= i; ++j)
                        denom += std::exp(static_cast<double>(scores(i, j) - mx));
                    for (int j = 0; j <= i; ++j)
                        Pm(i, j) = static_cast<S>(
                            std::exp(static_cast<double>(scores(i, j) - mx)) / denom);
                }
                lc.O.middleCols(h * Dh, Dh) = Pm * Vh;
            }
            x += lc.O * P.value(p + "attn.Wo").transpose();
            lc.x_mid = x;
            lc.Mn = rmsnorm_rows(x, P.value(p + "mlp.norm"), lc.rms2);
            lc.Gate = lc.Mn * P.value(p + "mlp.W1").transpose();
            lc.Val = lc.Mn * P.value(p + "mlp.W2").transpose();
            lc.H = lc.Gate.unaryExpr([](S v) { return static_cast<S>(silu(v)); })
                       .cwiseProduct(lc.Val);
            x += lc.H * P.value(p + "mlp.W3").transpose();
        }
        c.x_fin = x;
        c.XF = rmsnorm_rows(x, P.value("final.norm"), c.rmsf);
        const Mat& E = cfg.tie_embeddings ? P.value("tok_embed") : P.value("out.W");
        return c.XF * E.transpose();  // T x vocab
    }

    // Backpropagates dlogits (T x vocab); accumulates parameter gradients and
    // returns the gradient with respect to the input embedding rows.
    Mat decoder_backward(const SeqCache& c, const Mat& dlogits) {
        auto g = [&](const std::string& n) -> Mat& { return params.grad(n); };
        auto w = [&](const std::string& n) -> const Mat& { return params.value(n); };
        const int T = static_cast<int>(c.X0.rows()), W = cfg.width, H = cfg.heads;
        const int Dh = W / H;
        const S inv_sqrt_dh = static_cast<S>(1.0 / std::sqrt(static_cast<double>(Dh)));

        const std::string ename = cfg.tie_embeddings ? "tok_embed" : "out.W";
        g(ename) += dlogits.transpose() * c.XF;
        Mat dXF = dlogits * w(ename);
        Mat dx = rmsnorm_backward(c.x_fin, w("final.norm"), c.rmsf, dXF, g("final.norm"));

        for (int l = cfg.layers - 1; l >= 0; --l) {
            const auto& lc = c.layers[l];
            std::string p = "layer" + std::to_string(l) + ".";
            // MLP branch
            Mat dH = dx * w(p + "mlp.W3");
            g(p + "mlp.W3") += dx.transpose() * lc.H;
            Mat sg = lc.Gate.unaryExpr([](S v) { return static_cast<S>(silu(v)); });
            Mat dVal = dH.cwiseProduct(sg);
            Mat dGate = dH.cwiseProduct(lc.Val);
            for (int i = 0; i < T; ++i)
                for (int j = 0; j < dGate.cols(); ++j)
                    dGate(i, j) *= static_cast<S>(
                        silu_grad(static_cast<double>(lc.Gate(i, j))));
            g(p + "mlp.W1") += dGate.transpose() * lc.Mn;
            g(p + "mlp.W2") += dVal.transpose() * lc.Mn;
            Mat dMn = dGate * w(p + "mlp.W1") + dVal * w(p + "mlp.W2");
            dx += rmsnorm_backward(lc.x_mid, w(p + "mlp.norm"), lc.rms2, dMn,
                                   g(p + "mlp.norm"));
            // attention branch
            Mat dO = dx * w(p + "attn.Wo");
            g(p + "attn.Wo") += dx.transpose() * lc.O;
            Mat dQ = Mat::Zero(T, W), dK = Mat::Zero(T, W), dV = Mat::Zero(T, W);
            for (int h = 0; h < H; ++h) {
                auto Qh = lc.Q.middleCols(h * Dh, Dh);
                auto Kh = lc.K.middleCols(h * Dh, Dh);
                auto Vh = lc.V.middleCols(h * Dh, Dh);
                auto dOh = dO.middleCols(h * Dh, Dh);
                const Mat& Pm = lc.P[h];
                Mat dP = dOh * Vh.transpose();
                dV.middleCols(h * Dh, Dh) = Pm.transpose() * dOh;
                Mat dScores(T, T);
                for (int i = 0; i < T; ++i) {
                    S dot = dP.row(i).cwiseProduct(Pm.row(i)).sum();
                    dScores.row(i) =
                        Pm.row(i).cwiseProduct(dP.row(i) - dot * Mat::Ones(1, T));
                }
                dScores *= inv_sqrt_dh;
                dQ.middleCols(h * Dh, Dh) = dScores * Kh;
                dK.middleCols(h * Dh, Dh) = dScores.transpose() * Qh;
            }
            g(p + "attn.Wq") += dQ.transpose() * lc.A;
            g(p + "attn.Wk") += dK.transpose() * lc.A;
            g(p + "attn.Wv") += dV.transpose() * lc.A;
            Mat dA = dQ * w(p + "attn.Wq") + dK * w(p + "attn.Wk") + dV * w(p + "attn.Wv");
            dx += rmsnorm_backward(lc.x_in, w(p + "attn.norm"), lc.rms1, dA,
                                   g(p + "attn.norm"));
        }
        return dx;
    }

    // ---- training ----

    struct Example {
        std::vector<int> prefix;
        std::vector<int> cont;
        Eigen::VectorXd x_cont;  // clean continuation embedding
    };

    void check_tokens(const std::vector<int>& toks) const {
        for (int t : toks)
            if (t < 0 || t >= cfg.vocab)
                throw std::invalid_argument("decoder: token id out of range");
    }

    // Mean cross-entropy over continuation positions for a single example at
    // a fixed augmentation latent and level. grad_scale multiplies the
    // accumulated parameter gradients (1/batch for batch means).
    double example_loss(const std::vector<int>& prefix, std::vector<int> cont,
                       const Eigen::VectorXd* z_aug, double lambda_aug, bool accum,
                       double grad_scale = 1.0) {
        check_tokens(prefix);
        check_tokens(cont);
        if (cont.empty()) throw std::invalid_argument("decoder: empty continuation");
        const int k = cfg.k_soft > 0 && z_aug ? cfg.k_soft : 0;
        const int Pn = static_cast<int>(prefix.size());
        if (Pn + k == 0) throw std::invalid_argument("decoder: empty conditioning context");
        int Cn = static_cast<int>(cont.size());
        if (Pn + k + Cn > cfg.max_seq) {
            std::cerr << "decoder: sequence length " << (Pn + k + Cn) << " exceeds "
                      << cfg.max_seq << ", truncating continuation\n";
            Cn = cfg.max_seq - Pn - k;
            if (Cn < 1) throw std::invalid_argument("decoder: no room for continuation");
            cont.resize(Cn);
        }
        const int T = Pn + k + Cn, W = cfg.width;

        PromptCache pc;
        Mat soft;
        if (k > 0) {
            pc.z_aug = z_aug->template cast<S>();
            soft = prompt_forward(pc.z_aug, lambda_aug, pc);
        }
        auto& P = params;
        Mat X0(T, W);
        for (int i = 0; i < Pn; ++i) X0.row(i) = P.value("tok_embed").row(prefix[i]);
        for (int j = 0; j < k; ++j) X0.row(Pn + j) = soft.row(j);
        for (int j = 0; j < Cn; ++j) X0.row(Pn + k + j) = P.value("tok_embed").row(cont[j]);
        for (int i = 0; i < T; ++i) X0.row(i) += P.value("pos_embed").row(i);

        SeqCache sc;
        Mat logits = decoder_forward(X0, sc);

        // predictions for continuation token j live at the previous position
        double loss = 0.0;
        Mat dlogits;
        if (accum) dlogits = Mat::Zero(T, cfg.vocab);
        for (int j = 0; j < Cn; ++j) {
            int row = Pn + k + j - 1;
            Eigen::VectorXd lr = logits.row(row).transpose().template cast<double>();
            std::vector<double> lv(lr.data(), lr.data() + lr.size());
            double lse = log_sum_exp(lv);
            loss += lse - lr[cont[j]];
            if (accum) {
                for (int v = 0; v < cfg.vocab; ++v)
                    dlogits(row, v) = static_cast<S>(std::exp(lr[v] - lse) / Cn * grad_scale);
                dlogits(row, cont[j]) -= static_cast<S>(grad_scale / Cn);
            }
        }
        loss /= Cn;

        if (accum) {
            Mat dX0 = decoder_backward(sc, dlogits);
            for (int i = 0; i < T; ++i) params.grad("pos_embed").row(i) += dX0.row(i);
            for (int i = 0; i < Pn; ++i)
                params.grad("tok_embed").row(prefix[i]) += dX0.row(i);
            for (int j = 0; j < Cn; ++j)
                params.grad("tok_embed").row(cont[j]) += dX0.row(Pn + k + j);
            if (k > 0) prompt_backward(pc, dX0.middleRows(Pn, k));
        }
        return loss;
    }

    struct Drawn {
        Eigen::VectorXd z;
        double lambda;
    };

    Drawn draw_augmentation(const Eigen::VectorXd& x_cont, const Schedule& aug, Rng& rng) const {
        // square the uniform draw to oversample low noise: conditioning is
        // consumed at high SNR during generation, so that region needs the
        // most training signal
        double u = rng.uniform();
        double t = u * u;
        auto [alpha, sigma] = aug.alpha_sigma(t);
        Eigen::VectorXd eps(x_cont.size());
        for (Eigen::Index i = 0; i < eps.size(); ++i) eps[i] = rng.normal();
        return {alpha * x_cont + sigma * eps, aug.lambda_of(t)};
    }

    double batch_loss(std::span<const Example> batch, const Schedule& aug, bool accum,
                      Rng& rng) {
        if (batch.empty()) throw std::invalid_argument("decoder: empty batch");
        double total = 0.0;
        for (const auto& ex : batch) {
            if (cfg.k_soft > 0) {
                Drawn d = draw_augmentation(ex.x_cont, aug, rng);
                total += example_loss(ex.prefix, ex.cont, &d.z, d.lambda, accum,
                                      1.0 / batch.size());
            } else {
                total += example_loss(ex.prefix, ex.cont, nullptr, 0.0, accum,
                                      1.0 / batch.size());
            }
        }
        return total / batch.size();
    }

    double train_step(std::span<const Example> batch, const Schedule& aug, AdamW<S>& opt,
                      Rng& rng) {
        params.zero_grad();
        double loss = batch_loss(batch, aug, true, rng);
        if (!std::isfinite(loss))
            throw std::runtime_error("decoder: non-finite loss at optimizer step " +
                                     std::to_string(opt.step_count));
        opt.step(params);
        return loss;
    }

    // Held-out loss. pure_noise replaces the augmentation latent with unit
    // Gaussian noise (the sigma^2 = 1 conditioning limit).
    double eval_loss(std::span<const Example> batch, const Schedule& aug, bool pure_noise,
                     Rng& rng) {
        if (batch.empty()) throw std::invalid_argument("decoder: empty batch");
        double total = 0.0;
        for (const auto& ex : batch) {
            if (cfg.k_soft == 0) {
                total += example_loss(ex.prefix, ex.cont, nullptr, 0.0, false);
            } else if (pure_noise) {
                Eigen::VectorXd z(cfg.embed_dim);
                for (int i = 0; i < cfg.embed_dim; ++i) z[i] = rng.normal();
                total += example_loss(ex.prefix, ex.cont, &z, cfg.lambda_min, false);
            } else {
                Drawn d = draw_augmentation(ex.x_cont, aug, rng);
                total += example_loss(ex.prefix, ex.cont, &d.z, d.lambda, false);
            }
        }
        return total / batch.size();
    }

    // ---- generation ----

    struct GenState {
        std::vector<Mat> K, V;  // per layer, rows appended as positions arrive
        int len = 0;
    };

    // Feeds one embedding row through the stack, returns logits for the next
    // token and extends the KV cache.
    Eigen::VectorXd step_one(GenState& st, const Eigen::Matrix<S, 1, Eigen::Dynamic>& x_in) {
        auto& P = params;
        const int W = cfg.width, H = cfg.heads, Dh = W / H;
        const S inv_sqrt_dh = static_cast<S>(1.0 / std::sqrt(static_cast<double>(Dh)));
        if (st.K.empty()) {
            st.K.assign(cfg.layers, Mat(cfg.max_seq, W));
            st.V.assign(cfg.layers, Mat(cfg.max_seq, W));
        }
        if (st.len >= cfg.max_seq) throw std::runtime_error("decoder: sequence length cap hit");
        Eigen::Matrix<S, 1, Eigen::Dynamic> x = x_in;
        const int t = st.len;
        for (int l = 0; l < cfg.layers; ++l) {
            std::string p = "layer" + std::to_string(l) + ".";
            double ms = static_cast<double>(x.squaredNorm()) / W + kRmsEps;
            S r = static_cast<S>(std::sqrt(ms));
            Eigen::Matrix<S, 1, Eigen::Dynamic> a =
                (x / r).cwiseProduct(P.value(p + "attn.norm").row(0));
            Eigen::Matrix<S, 1, Eigen::Dynamic> q = a * P.value(p + "attn.Wq").transpose();
            st.K[l].row(t) = a * P.value(p + "attn.Wk").transpose();
            st.V[l].row(t) = a * P.value(p + "attn.Wv").transpose();
            Eigen::Matrix<S, 1, Eigen::Dynamic> o(W);
            for (int h = 0; h < H; ++h) {
                auto Kh = st.K[l].block(0, h * Dh, t + 1, Dh);
                auto Vh = st.V[l].block(0, h * Dh, t + 1, Dh);
                Eigen::Matrix<S, 1, Eigen::Dynamic> scores =
                    (q.middleCols(h * Dh, Dh) * Kh.transpose()) * inv_sqrt_dh;
                S mx = scores.maxCoeff();
                Eigen::VectorXd w(t + 1);
                double denom = 0.0;
                for (int j = 0; j <= t; ++j) {
                    w[j] = std::exp(static_cast<double>(scores[j] - mx));
                    denom += w[j];
                }
                Eigen::Matrix<S, 1, Eigen::Dynamic> oh =
                    Eigen::Matrix<S, 1, Eigen::Dynamic>::Zero(Dh);
                for (int j = 0; j <= t; ++j)
                    oh += static_cast<S>(w[j] / denom) * Vh.row(j);
                o.middleCols(h * Dh, Dh) = oh;
            }
            x += o * P.value(p + "attn.Wo").transpose();
            double ms2 = static_cast<double>(x.squaredNorm()) / W + kRmsEps;
            S r2 = static_cast<S>(std::sqrt(ms2));
            Eigen::Matrix<S, 1, Eigen::Dynamic> m =
                (x / r2).cwiseProduct(P.value(p + "mlp.norm").row(0));
            Eigen::Matrix<S, 1, Eigen::Dynamic> gate = m * P.value(p + "mlp.W1").transpose();
            Eigen::Matrix<S, 1, Eigen::Dynamic> val = m * P.value(p + "mlp.W2").transpose();
            for (int i = 0; i < gate.cols(); ++i)
                gate[i] = static_cast<S>(silu(static_cast<double>(gate[i])));
            x += gate.cwiseProduct(val) * P.value(p + "mlp.W3").transpose();
        }
        ++st.len;
        double msf = static_cast<double>(x.squaredNorm()) / W + kRmsEps;
        S rf = static_cast<S>(std::sqrt(msf));
        Eigen::Matrix<S, 1, Eigen::Dynamic> xf =
            (x / rf).cwiseProduct(P.value("final.norm").row(0));
        const Mat& E = cfg.tie_embeddings ? P.value("tok_embed") : P.value("out.W");
        return (xf * E.transpose()).transpose().template cast<double>();
    }

    // Ancestral sampling at temperature 1. The proposal is noised to
    // sigma^2 = noise_var through the forward process before prompting.
    std::vector<int> generate(const std::vector<int>& prefix, const Eigen::VectorXd& proposal,
                              double noise_var, Rng& rng, int max_tokens) {
        check_tokens(prefix);
        if (noise_var < 0.0 || noise_var > 1.0)
            throw std::invalid_argument("decoder: noise_var must be in [0,1]");
        if (cfg.k_soft > 0 && proposal.size() != cfg.embed_dim)
            throw std::invalid_argument("decoder: proposal dimension mismatch");

        Mat soft;
        if (cfg.k_soft > 0) {
            double sigma2 = noise_var;
            double alpha = std::sqrt(1.0 - sigma2);
            Eigen::VectorXd z = alpha * proposal;
            if (sigma2 > 0.0) {
                for (Eigen::Index i = 0; i < z.size(); ++i)
                    z[i] += std::sqrt(sigma2) * rng.normal();
            }
            double lambda = sigma2 <= 0.0 ? cfg.lambda_max
                            : sigma2 >= 1.0
                                ? cfg.lambda_min
                                : std::clamp(std::log((1.0 - sigma2) / sigma2),
                                             cfg.lambda_min, cfg.lambda_max);
            PromptCache pc;
            pc.z_aug = z.template cast<S>();
            soft = prompt_forward(pc.z_aug, lambda, pc);
        }

        auto& P = params;
        GenState st;
        Eigen::VectorXd logits;
        int pos = 0;
        for (int tok : prefix) {
            Eigen::Matrix<S, 1, Eigen::Dynamic> row =
                P.value("tok_embed").row(tok) + P.value("pos_embed").row(pos);
            logits = step_one(st, row);
            ++pos;
        }
        for (int j = 0; j < cfg.k_soft; ++j) {
            Eigen::Matrix<S, 1, Eigen::Dynamic> row =
                soft.row(j) + P.value("pos_embed").row(pos);
            logits = step_one(st, row);
            ++pos;
        }
        if (pos == 0) throw std::invalid_argument("decoder: empty conditioning context");

        std::vector<int> out;
        for (int n = 0; n < max_tokens && pos < cfg.max_seq; ++n) {
            std::vector<double> lv(logits.data(), logits.data() + logits.size());
            double lse = log_sum_exp(lv);
            std::vector<double> probs(cfg.vocab);
            for (int v = 0; v < cfg.vocab; ++v) probs[v] = std::exp(lv[v] - lse);
            int tok = rng.categorical(probs);
            out.push_back(tok);
            if (static_cast<int>(out.size()) == max_tokens) break;
            Eigen::Matrix<S, 1, Eigen::Dynamic> row =
                P.value("tok_embed").row(tok) + P.value("pos_embed").row(pos);
            logits = step_one(st, row);
            ++pos;
        }
        return out;
    }

    // ---- persistence ----

    void save(const std::string& path) const {
        Checkpoint ckp;
        ckp.set_meta("kind", "decoder");
        ckp.set_meta("vocab", std::to_string(cfg.vocab));
        ckp.set_meta("width", std::to_string(cfg.width));
        ckp.set_meta("heads", std::to_string(cfg.heads));
        ckp.set_meta("layers", std::to_string(cfg.layers));
        ckp.set_meta("mlp_hidden", std::to_string(cfg.mlp_hidden));
        ckp.set_meta("k_soft", std::to_string(cfg.k_soft));
        ckp.set_meta("max_seq", std::to_string(cfg.max_seq));
        ckp.set_meta("embed_dim", std::to_string(cfg.embed_dim));
        ckp.set_meta("time_features", std::to_string(cfg.time_features));
        ckp.set_meta("time_hidden", std::to_string(cfg.time_hidden));
        ckp.set_meta("prompt_hidden", std::to_string(cfg.prompt_hidden));
        ckp.set_meta("prompt_blocks", std::to_string(cfg.prompt_blocks));
        ckp.set_meta("tie_embeddings", cfg.tie_embeddings ? "1" : "0");
        params.to_checkpoint(ckp);
        ckp.save(path);
    }

    static SoftPromptLM load(const std::string& path) {
        Checkpoint ckp = Checkpoint::load(path);
        Config c;
        c.vocab = std::stoi(ckp.meta("vocab"));
        c.width = std::stoi(ckp.meta("width"));
        c.heads = std::stoi(ckp.meta("heads"));
        c.layers = std::stoi(ckp.meta("layers"));
        c.mlp_hidden = std::stoi(ckp.meta("mlp_hidden"));
        c.k_soft = std::stoi(ckp.meta("k_soft"));
        c.max_seq = std::stoi(ckp.meta("max_seq"));
        c.embed_dim = std::stoi(ckp.meta("embed_dim"));
        c.time_features = std::stoi(ckp.meta("time_features"));
        c.time_hidden = std::stoi(ckp.meta("time_hidden"));
        c.prompt_hidden = std::stoi(ckp.meta("prompt_hidden"));
        c.prompt_blocks = std::stoi(ckp.meta("prompt_blocks"));
        c.tie_embeddings = ckp.meta("tie_embeddings") == "1";
        SoftPromptLM lm(c, 0);
        lm.params.from_checkpoint(ckp);
        return lm;
    }
};

}  // namespace dglm
