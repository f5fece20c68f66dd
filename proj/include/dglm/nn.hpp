#pragma once

#include <cmath>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "dglm/checkpoint.hpp"
#include "dglm/rng.hpp"

namespace dglm {

// Named parameter tensors with paired gradients, shared by the denoiser and
// the decoder stack. Checkpoint payloads are float32 regardless of S.
template <typename S>
struct ParamStore {
    using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;

    struct Tensor {
        std::string name;
        Mat value;
        Mat grad;
    };

    std::vector<Tensor> tensors;
    std::map<std::string, int> index;

    Mat& add(const std::string& name, int rows, int cols) {
        if (index.count(name)) throw std::runtime_error("params: duplicate tensor " + name);
        index[name] = static_cast<int>(tensors.size());
        tensors.push_back({name, Mat::Zero(rows, cols), Mat::Zero(rows, cols)});
        return tensors.back().value;
    }

    Mat& value(const std::string& name) { return tensors[at(name)].value; }
    Mat& grad(const std::string& name) { return tensors[at(name)].grad; }

    int at(const std::string& name) const {
        auto it = index.find(name);
        if (it == index.end()) throw std::runtime_error("params: missing tensor " + name);
        return it->second;
    }

    void zero_grad() {
        for (auto& t : tensors) t.grad.setZero();
    }

    int64_t count() const {
        int64_t n = 0;
        for (const auto& t : tensors) n += t.value.size();
        return n;
    }

    void init_normal(Rng& rng, double base_scale = 1.0) {
        for (auto& t : tensors) {
            if (t.value.cols() == 1) {  // bias-shaped tensors start at zero
                t.value.setZero();
                continue;
            }
            double scale = base_scale / std::sqrt(static_cast<double>(std::max<Eigen::Index>(
                               1, t.value.cols())));
            for (Eigen::Index r = 0; r < t.value.rows(); ++r)
                for (Eigen::Index c = 0; c < t.value.cols(); ++c)
                    t.value(r, c) = static_cast<S>(rng.normal() * scale);
        }
    }

    void to_checkpoint(Checkpoint& ckp, const std::string& prefix = "") const {
        for (const auto& t : tensors) {
            std::vector<float> data(t.value.size());
            for (Eigen::Index r = 0; r < t.value.rows(); ++r)
                for (Eigen::Index c = 0; c < t.value.cols(); ++c)
                    data[r * t.value.cols() + c] = static_cast<float>(t.value(r, c));
            ckp.add(prefix + t.name, {t.value.rows(), t.value.cols()}, std::move(data));
        }
    }

    // Shapes must match the already-constructed store; mismatches name the tensor.
    void from_checkpoint(const Checkpoint& ckp, const std::string& prefix = "") {
        for (auto& t : tensors) {
            const auto& src = ckp.get(prefix + t.name);
            if (src.shape.size() != 2 || src.shape[0] != t.value.rows() ||
                src.shape[1] != t.value.cols())
                throw std::runtime_error("checkpoint: shape mismatch for tensor " + prefix +
                                         t.name);
            for (Eigen::Index r = 0; r < t.value.rows(); ++r)
                for (Eigen::Index c = 0; c < t.value.cols(); ++c)
                    t.value(r, c) = static_cast<S>(src.data[r * t.value.cols() + c]);
        }
    }
};

// Decoupled weight decay Adam with warmup, cosine decay, and global-norm
// gradient clipping.
template <typename S>
struct AdamW {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
    double clip = 1.0;
    int warmup_steps = 1000;
    int total_steps = 10000;
    int step_count = 0;

    std::vector<typename ParamStore<S>::Mat> m, v;

    double current_lr() const {
        int s = step_count;
        if (s < warmup_steps) return lr * (s + 1) / static_cast<double>(warmup_steps);
        double progress = total_steps > warmup_steps
                              ? static_cast<double>(s - warmup_steps) / (total_steps - warmup_steps)
                              : 0.0;
        progress = std::min(progress, 1.0);
        return lr * 0.5 * (1.0 + std::cos(M_PI * progress));
    }

    void step(ParamStore<S>& params) {
        if (m.empty()) {
            for (auto& t : params.tensors) {
                m.push_back(ParamStore<S>::Mat::Zero(t.value.rows(), t.value.cols()));
                v.push_back(ParamStore<S>::Mat::Zero(t.value.rows(), t.value.cols()));
            }
        }
        double norm2 = 0.0;
        for (auto& t : params.tensors) norm2 += static_cast<double>(t.grad.squaredNorm());
        double scale = 1.0;
        double norm = std::sqrt(norm2);
        if (clip > 0.0 && norm > clip) scale = clip / norm;

        double lr_t = current_lr();
        ++step_count;
        double bc1 = 1.0 - std::pow(beta1, step_count);
        double bc2 = 1.0 - std::pow(beta2, step_count);
        for (size_t i = 0; i < params.tensors.size(); ++i) {
            auto& t = params.tensors[i];
            auto g = (t.grad * static_cast<S>(scale)).eval();
            m[i] = static_cast<S>(beta1) * m[i] + static_cast<S>(1.0 - beta1) * g;
            v[i] = (static_cast<S>(beta2) * v[i].array() +
                    static_cast<S>(1.0 - beta2) * g.array().square())
                       .matrix();
            auto mhat = (m[i] / static_cast<S>(bc1)).eval();
            auto vhat = (v[i] / static_cast<S>(bc2)).eval();
            t.value.array() -= static_cast<S>(lr_t) *
                               (mhat.array() / (vhat.array().sqrt() + static_cast<S>(eps)) +
                                static_cast<S>(weight_decay) * t.value.array());
        }
    }
};

}  // namespace dglm
