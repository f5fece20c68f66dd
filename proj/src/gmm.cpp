#include "dglm/gmm.hpp"

#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "dglm/numerics.hpp"

namespace dglm {

int LabeledGmm::dim() const {
    if (means.empty()) throw std::runtime_error("gmm: empty mixture");
    return static_cast<int>(means[0].size());
}

int LabeledGmm::num_classes() const {
    int c = 0;
    for (int l : labels) c = std::max(c, l + 1);
    return c;
}

void LabeledGmm::validate() const {
    if (weights.empty() || weights.size() != means.size() || weights.size() != diag_vars.size() ||
        weights.size() != labels.size())
        throw std::runtime_error("gmm: inconsistent component counts");
    double total = 0.0;
    int d = dim();
    for (size_t k = 0; k < weights.size(); ++k) {
        if (weights[k] < 0.0) throw std::runtime_error("gmm: negative weight");
        total += weights[k];
        if (means[k].size() != d || diag_vars[k].size() != d)
            throw std::runtime_error("gmm: dimension mismatch");
        if ((diag_vars[k].array() <= 0.0).any())
            throw std::runtime_error("gmm: variances must be positive");
        if (labels[k] < 0) throw std::runtime_error("gmm: negative label");
    }
    if (std::abs(total - 1.0) > 1e-12) throw std::runtime_error("gmm: weights must sum to 1");
}

namespace {

// log responsibilities of the diffused mixture at z, plus marginal log density
std::vector<double> diffused_log_joint(const LabeledGmm& gmm, const Eigen::VectorXd& z,
                                       double alpha, double sigma) {
    const int K = gmm.components();
    std::vector<double> lj(K);
    for (int k = 0; k < K; ++k) {
        Eigen::ArrayXd var = alpha * alpha * gmm.diag_vars[k].array() + sigma * sigma;
        Eigen::ArrayXd diff = z.array() - alpha * gmm.means[k].array();
        double quad = (diff * diff / var).sum();
        double logdet = var.log().sum();
        lj[k] = std::log(gmm.weights[k]) - 0.5 * (quad + logdet + z.size() * std::log(2.0 * M_PI));
    }
    return lj;
}

}  // namespace

double LabeledGmm::log_density(const Eigen::VectorXd& z, double alpha, double sigma) const {
    auto lj = diffused_log_joint(*this, z, alpha, sigma);
    return log_sum_exp(lj);
}

Eigen::VectorXd LabeledGmm::score(const Eigen::VectorXd& z, double alpha, double sigma) const {
    auto lj = diffused_log_joint(*this, z, alpha, sigma);
    double lse = log_sum_exp(lj);
    Eigen::VectorXd s = Eigen::VectorXd::Zero(z.size());
    for (int k = 0; k < components(); ++k) {
        double r = std::exp(lj[k] - lse);
        Eigen::ArrayXd var = alpha * alpha * diag_vars[k].array() + sigma * sigma;
        s.array() += r * (-(z.array() - alpha * means[k].array()) / var);
    }
    return s;
}

Eigen::VectorXd LabeledGmm::score_vjp(const Eigen::VectorXd& z, double alpha, double sigma,
                                      const Eigen::VectorXd& cot) const {
    // H = sum_k r_k (-Lambda_k + s_k s_k^T) - s s^T, with s = sum_k r_k s_k
    auto lj = diffused_log_joint(*this, z, alpha, sigma);
    double lse = log_sum_exp(lj);
    Eigen::VectorXd s = Eigen::VectorXd::Zero(z.size());
    Eigen::VectorXd hu = Eigen::VectorXd::Zero(z.size());
    std::vector<Eigen::VectorXd> sk(components());
    std::vector<double> resp(components());
    for (int k = 0; k < components(); ++k) {
        resp[k] = std::exp(lj[k] - lse);
        Eigen::ArrayXd var = alpha * alpha * diag_vars[k].array() + sigma * sigma;
        sk[k] = (-(z.array() - alpha * means[k].array()) / var).matrix();
        s += resp[k] * sk[k];
        hu.array() += resp[k] * (-cot.array() / var);
    }
    for (int k = 0; k < components(); ++k) hu += resp[k] * sk[k] * sk[k].dot(cot);
    hu -= s * s.dot(cot);
    return hu;
}

std::pair<Eigen::VectorXd, int> LabeledGmm::sample(Rng& rng) const {
    int k = rng.categorical(weights);
    Eigen::VectorXd x = means[k] + (diag_vars[k].array().sqrt() * rng.normal_vec(dim()).array()).matrix();
    return {x, labels[k]};
}

Eigen::VectorXd LabeledGmm::class_posterior(const Eigen::VectorXd& x) const {
    auto lj = diffused_log_joint(*this, x, 1.0, 0.0);
    double lse = log_sum_exp(lj);
    Eigen::VectorXd post = Eigen::VectorXd::Zero(num_classes());
    for (int k = 0; k < components(); ++k) post[labels[k]] += std::exp(lj[k] - lse);
    return post / post.sum();
}

std::string LabeledGmm::to_text() const {
    std::ostringstream out;
    out.precision(17);
    out << "dim " << dim() << "\n";
    for (int k = 0; k < components(); ++k) {
        out << "comp " << weights[k] << " " << labels[k];
        for (int i = 0; i < dim(); ++i) out << " " << means[k][i];
        for (int i = 0; i < dim(); ++i) out << " " << diag_vars[k][i];
        out << "\n";
    }
    return out.str();
}

LabeledGmm LabeledGmm::from_text(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    int d = -1;
    LabeledGmm gmm;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        std::istringstream ls(line);
        std::string kind;
        if (!(ls >> kind)) continue;
        if (kind == "dim") {
            if (!(ls >> d) || d < 1) throw std::runtime_error("gmm: bad dim line");
        } else if (kind == "comp") {
            if (d < 1) throw std::runtime_error("gmm: dim must precede components");
            double w;
            int label;
            if (!(ls >> w >> label))
                throw std::runtime_error("gmm: malformed component at line " +
                                         std::to_string(lineno));
            Eigen::VectorXd mu(d), var(d);
            for (int i = 0; i < d; ++i)
                if (!(ls >> mu[i])) throw std::runtime_error("gmm: short mean vector");
            for (int i = 0; i < d; ++i)
                if (!(ls >> var[i])) throw std::runtime_error("gmm: short variance vector");
            gmm.weights.push_back(w);
            gmm.labels.push_back(label);
            gmm.means.push_back(mu);
            gmm.diag_vars.push_back(var);
        } else {
            throw std::runtime_error("gmm: unknown line kind '" + kind + "'");
        }
    }
    gmm.validate();
    return gmm;
}

LabeledGmm LabeledGmm::from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("gmm: cannot open " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return from_text(buf.str());
}

void LabeledGmm::save(const std::string& path) const {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("gmm: cannot open " + path + " for writing");
    out << to_text();
}

void bayes_linear_weights(const LabeledGmm& gmm, Eigen::MatrixXd& W, Eigen::VectorXd& b) {
    gmm.validate();
    const int C = gmm.num_classes();
    if (gmm.components() != C)
        throw std::runtime_error("bayes_linear_weights: needs one component per class");
    for (int k = 1; k < C; ++k)
        if (!gmm.diag_vars[k].isApprox(gmm.diag_vars[0]))
            throw std::runtime_error("bayes_linear_weights: covariances must be shared");
    const int d = gmm.dim();
    W.resize(C, d);
    b.resize(C);
    for (int k = 0; k < C; ++k) {
        int y = gmm.labels[k];
        Eigen::ArrayXd inv_var = gmm.diag_vars[k].array().inverse();
        W.row(y) = (gmm.means[k].array() * inv_var).matrix().transpose();
        b[y] = std::log(gmm.weights[k]) -
               0.5 * (gmm.means[k].array().square() * inv_var).sum();
    }
}

}  // namespace dglm
