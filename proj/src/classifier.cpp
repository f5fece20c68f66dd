#include "dglm/classifier.hpp"

#include <cmath>
#include <deque>
#include <set>
#include <sstream>
#include <stdexcept>

#include "dglm/checkpoint.hpp"
#include "dglm/numerics.hpp"

namespace dglm {

Eigen::VectorXd LinearAttributeClassifier::logits(const Eigen::VectorXd& x) const {
    if (x.size() != dim()) throw std::invalid_argument("classifier: dimension mismatch");
    return W * x + b;
}

Eigen::VectorXd LinearAttributeClassifier::probs(const Eigen::VectorXd& x) const {
    Eigen::VectorXd l = logits(x);
    double m = l.maxCoeff();
    Eigen::VectorXd e = (l.array() - m).exp();
    return e / e.sum();
}

double LinearAttributeClassifier::log_prob(const Eigen::VectorXd& x, int y) const {
    if (y < 0 || y >= classes()) throw std::invalid_argument("classifier: unknown class id");
    Eigen::VectorXd l = logits(x);
    double m = l.maxCoeff();
    double lse = m + std::log((l.array() - m).exp().sum());
    return l[y] - lse;
}

Eigen::VectorXd LinearAttributeClassifier::loss_grad_x(const Eigen::VectorXd& x, int y) const {
    if (y < 0 || y >= classes()) throw std::invalid_argument("classifier: unknown class id");
    Eigen::VectorXd p = probs(x);
    p[y] -= 1.0;
    return W.transpose() * p;
}

int LinearAttributeClassifier::class_id(const std::string& name) const {
    for (size_t i = 0; i < class_names.size(); ++i)
        if (class_names[i] == name) return static_cast<int>(i);
    throw std::invalid_argument("classifier: unknown class name '" + name + "'");
}

void LinearAttributeClassifier::save(const std::string& path) const {
    Checkpoint ckp;
    std::vector<float> wdata(W.size());
    for (int r = 0; r < W.rows(); ++r)
        for (int c = 0; c < W.cols(); ++c) wdata[r * W.cols() + c] = static_cast<float>(W(r, c));
    ckp.add("W", {W.rows(), W.cols()}, std::move(wdata));
    std::vector<float> bdata(b.size());
    for (int i = 0; i < b.size(); ++i) bdata[i] = static_cast<float>(b[i]);
    ckp.add("b", {b.size()}, std::move(bdata));
    std::ostringstream names;
    for (size_t i = 0; i < class_names.size(); ++i) names << (i ? " " : "") << class_names[i];
    ckp.set_meta("classes", names.str());
    ckp.save(path);
}

LinearAttributeClassifier LinearAttributeClassifier::load(const std::string& path) {
    Checkpoint ckp = Checkpoint::load(path);
    const auto& wt = ckp.get("W");
    const auto& bt = ckp.get("b");
    if (wt.shape.size() != 2 || bt.shape.size() != 1 || wt.shape[0] != bt.shape[0])
        throw std::runtime_error("classifier: malformed checkpoint shapes");
    LinearAttributeClassifier clf;
    clf.W.resize(wt.shape[0], wt.shape[1]);
    for (int r = 0; r < clf.W.rows(); ++r)
        for (int c = 0; c < clf.W.cols(); ++c) clf.W(r, c) = wt.data[r * clf.W.cols() + c];
    clf.b.resize(bt.shape[0]);
    for (int i = 0; i < clf.b.size(); ++i) clf.b[i] = bt.data[i];
    std::istringstream names(ckp.meta("classes"));
    std::string n;
    while (names >> n) clf.class_names.push_back(n);
    if (static_cast<int>(clf.class_names.size()) != clf.classes())
        throw std::runtime_error("classifier: class name count mismatch");
    return clf;
}

namespace {

struct Objective {
    const Eigen::MatrixXd& X;
    const std::vector<int>& y;
    const Eigen::VectorXd& sample_w;  // normalized to mean 1
    double l2;
    int classes;

    // theta layout: [W row-major (C x d), b (C)]
    double eval(const Eigen::VectorXd& theta, Eigen::VectorXd& grad) const {
        const int N = static_cast<int>(X.rows());
        const int d = static_cast<int>(X.cols());
        const int C = classes;
        Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>
            W(theta.data(), C, d);
        Eigen::Map<const Eigen::VectorXd> b(theta.data() + C * d, C);

        grad.setZero(theta.size());
        Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> gW(
            grad.data(), C, d);
        Eigen::Map<Eigen::VectorXd> gb(grad.data() + C * d, C);

        Eigen::MatrixXd L = X * W.transpose();  // N x C
        L.rowwise() += b.transpose();
        double loss = 0.0;
        for (int i = 0; i < N; ++i) {
            Eigen::VectorXd row = L.row(i);
            double m = row.maxCoeff();
            Eigen::VectorXd e = (row.array() - m).exp();
            double Z = e.sum();
            double wi = sample_w[i];
            loss += -wi * (row[y[i]] - m - std::log(Z));
            Eigen::VectorXd p = e / Z;
            p[y[i]] -= 1.0;
            p *= wi / N;
            gW.noalias() += p * X.row(i);
            gb += p;
        }
        loss /= N;
        loss += 0.5 * l2 * W.squaredNorm();
        gW += l2 * W;
        return loss;
    }
};

}  // namespace

LinearAttributeClassifier fit_logistic(const Eigen::MatrixXd& X, const std::vector<int>& y,
                                       const FitOptions& opts,
                                       std::vector<std::string> class_names, double* final_loss) {
    const int N = static_cast<int>(X.rows());
    if (N == 0 || static_cast<int>(y.size()) != N)
        throw std::invalid_argument("fit_logistic: bad dataset shape");
    std::set<int> present(y.begin(), y.end());
    int C = *present.rbegin() + 1;
    if (!class_names.empty()) C = std::max(C, static_cast<int>(class_names.size()));
    if (present.size() < 2) throw std::invalid_argument("fit_logistic: need at least two classes");
    const int d = static_cast<int>(X.cols());

    Eigen::VectorXd sample_w = Eigen::VectorXd::Ones(N);
    if (opts.balanced) {
        std::vector<int> counts(C, 0);
        for (int v : y) counts[v]++;
        int nonempty = static_cast<int>(present.size());
        for (int i = 0; i < N; ++i)
            sample_w[i] = static_cast<double>(N) / (nonempty * counts[y[i]]);
    }

    Objective obj{X, y, sample_w, opts.l2, C};
    Eigen::VectorXd theta = Eigen::VectorXd::Zero(C * d + C);
    Eigen::VectorXd grad(theta.size());
    double loss = obj.eval(theta, grad);

    // L-BFGS with two-loop recursion and Armijo backtracking
    const int memory = 10;
    std::deque<Eigen::VectorXd> s_hist, y_hist;
    std::deque<double> rho_hist;

    for (int iter = 0; iter < opts.max_iter; ++iter) {
        if (grad.norm() < opts.grad_tol) break;

        Eigen::VectorXd q = grad;
        std::vector<double> alpha_hist(s_hist.size());
        for (int i = static_cast<int>(s_hist.size()) - 1; i >= 0; --i) {
            alpha_hist[i] = rho_hist[i] * s_hist[i].dot(q);
            q -= alpha_hist[i] * y_hist[i];
        }
        double gamma = 1.0;
        if (!s_hist.empty()) {
            gamma = s_hist.back().dot(y_hist.back()) / y_hist.back().squaredNorm();
        }
        q *= gamma;
        for (size_t i = 0; i < s_hist.size(); ++i) {
            double beta = rho_hist[i] * y_hist[i].dot(q);
            q += (alpha_hist[i] - beta) * s_hist[i];
        }
        Eigen::VectorXd dir = -q;
        double slope = grad.dot(dir);
        if (slope >= 0.0) {  // fall back to steepest descent
            dir = -grad;
            slope = -grad.squaredNorm();
        }

        double step = 1.0;
        Eigen::VectorXd theta_new, grad_new(theta.size());
        double loss_new = loss;
        bool accepted = false;
        for (int ls = 0; ls < 40; ++ls) {
            theta_new = theta + step * dir;
            loss_new = obj.eval(theta_new, grad_new);
            if (loss_new <= loss + 1e-4 * step * slope) {
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if (!accepted) break;

        Eigen::VectorXd s = theta_new - theta;
        Eigen::VectorXd yv = grad_new - grad;
        double sy = s.dot(yv);
        if (sy > 1e-12) {
            s_hist.push_back(s);
            y_hist.push_back(yv);
            rho_hist.push_back(1.0 / sy);
            if (static_cast<int>(s_hist.size()) > memory) {
                s_hist.pop_front();
                y_hist.pop_front();
                rho_hist.pop_front();
            }
        }
        theta = theta_new;
        grad = grad_new;
        loss = loss_new;
    }

    LinearAttributeClassifier clf;
    clf.W.resize(C, d);
    Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> Wm(
        theta.data(), C, d);
    clf.W = Wm;
    clf.b = theta.segment(C * d, C);
    if (class_names.empty())
        for (int c = 0; c < C; ++c) class_names.push_back("class" + std::to_string(c));
    clf.class_names = std::move(class_names);
    if (final_loss) *final_loss = loss;
    return clf;
}

}  // namespace dglm
