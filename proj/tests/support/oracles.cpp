#include "support/oracles.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace oracles {

Eigen::MatrixXd dense_cotan_laplacian(const specmatch::Mesh& mesh) {
    const Eigen::Index n = mesh.num_vertices();
    Eigen::MatrixXd L = Eigen::MatrixXd::Zero(n, n);
    for (Eigen::Index f = 0; f < mesh.F.rows(); ++f) {
        const int v[3] = {mesh.F(f, 0), mesh.F(f, 1), mesh.F(f, 2)};
        // Edge lengths: l[c] is the edge opposite corner c.
        double l[3];
        for (int c = 0; c < 3; ++c)
            l[c] = (mesh.V.row(v[(c + 1) % 3]) - mesh.V.row(v[(c + 2) % 3])).norm();
        const double s = 0.5 * (l[0] + l[1] + l[2]);
        const double area = std::sqrt(std::max(0.0, s * (s - l[0]) * (s - l[1]) * (s - l[2])));
        for (int c = 0; c < 3; ++c) {
            // cot of the angle at corner c from the law of cosines:
            // cos = (b^2 + c^2 - a^2) / (2bc), sin = 2*area / (bc)
            const double a = l[c], b = l[(c + 1) % 3], cc = l[(c + 2) % 3];
            double cot = (b * b + cc * cc - a * a) / (4.0 * area);
            cot = std::clamp(cot, -1e4, 1e4);
            const int p = v[(c + 1) % 3], q = v[(c + 2) % 3];
            L(p, q) -= 0.5 * cot;
            L(q, p) -= 0.5 * cot;
            L(p, p) += 0.5 * cot;
            L(q, q) += 0.5 * cot;
        }
    }
    return L;
}

std::pair<Eigen::VectorXd, Eigen::MatrixXd> dense_generalized_eig(const Eigen::MatrixXd& L,
                                                                  const Eigen::VectorXd& mass) {
    Eigen::MatrixXd A = mass.asDiagonal();
    Eigen::GeneralizedSelfAdjointEigenSolver<Eigen::MatrixXd> es(L, A);
    return {es.eigenvalues(), es.eigenvectors()};
}

double hks_entry_direct(const Eigen::MatrixXd& phi, const Eigen::VectorXd& lambda, Eigen::Index x,
                        double t) {
    double sum = 0.0;
    for (Eigen::Index i = 0; i < phi.cols(); ++i)
        sum += std::exp(-lambda[i] * t) * phi(x, i) * phi(x, i);
    return sum;
}

Eigen::MatrixXd floyd_warshall(const specmatch::Mesh& mesh) {
    const Eigen::Index n = mesh.num_vertices();
    const double inf = std::numeric_limits<double>::infinity();
    Eigen::MatrixXd d = Eigen::MatrixXd::Constant(n, n, inf);
    for (Eigen::Index i = 0; i < n; ++i) d(i, i) = 0.0;
    for (Eigen::Index f = 0; f < mesh.F.rows(); ++f)
        for (int c = 0; c < 3; ++c) {
            const int a = mesh.F(f, c), b = mesh.F(f, (c + 1) % 3);
            const double len = (mesh.V.row(a) - mesh.V.row(b)).norm();
            d(a, b) = std::min(d(a, b), len);
            d(b, a) = std::min(d(b, a), len);
        }
    for (Eigen::Index k = 0; k < n; ++k)
        for (Eigen::Index i = 0; i < n; ++i)
            for (Eigen::Index j = 0; j < n; ++j)
                if (d(i, k) + d(k, j) < d(i, j)) d(i, j) = d(i, k) + d(k, j);
    return d;
}

std::vector<int> brute_nn(const Eigen::MatrixXd& queries, const Eigen::MatrixXd& candidates) {
    std::vector<int> out(static_cast<std::size_t>(queries.rows()));
    for (Eigen::Index q = 0; q < queries.rows(); ++q) {
        int best = 0;
        double best_d = (candidates.row(0) - queries.row(q)).squaredNorm();
        for (Eigen::Index c = 1; c < candidates.rows(); ++c) {
            const double d = (candidates.row(c) - queries.row(q)).squaredNorm();
            if (d < best_d) {
                best_d = d;
                best = static_cast<int>(c);
            }
        }
        out[static_cast<std::size_t>(q)] = best;
    }
    return out;
}

std::vector<int> topk_by_sort(const Eigen::RowVectorXd& row, int p) {
    std::vector<int> idx(static_cast<std::size_t>(row.size()));
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) { return row[a] > row[b]; });
    idx.resize(static_cast<std::size_t>(p));
    return idx;
}

Eigen::MatrixXd baseline_fmap_dense(const Eigen::MatrixXd& desc_x, const Eigen::MatrixXd& desc_y,
                                    const Eigen::VectorXd& lambda_x, const Eigen::VectorXd& lambda_y,
                                    double lambda_reg) {
    const Eigen::Index k = desc_x.rows();
    // Normal equations of f(C) = ||C A - B||_F^2 + reg * sum_ij C_ij^2 d_ij^2,
    // derived entrywise: sum_l C_il (A A^T)_jl + reg d_ij^2 C_ij = (B A^T)_ij.
    const Eigen::MatrixXd gram = desc_y * desc_y.transpose();
    const Eigen::MatrixXd rhs_mat = desc_x * desc_y.transpose();  // B A^T
    Eigen::MatrixXd M = Eigen::MatrixXd::Zero(k * k, k * k);
    Eigen::VectorXd rhs(k * k);
    for (Eigen::Index i = 0; i < k; ++i)
        for (Eigen::Index j = 0; j < k; ++j) {
            const Eigen::Index row = i * k + j;
            for (Eigen::Index l = 0; l < k; ++l) M(row, i * k + l) += gram(j, l);
            const double d = lambda_x[i] - lambda_y[j];
            M(row, row) += lambda_reg * d * d;
            rhs[row] = rhs_mat(i, j);
        }
    const Eigen::VectorXd x = M.colPivHouseholderQr().solve(rhs);
    Eigen::MatrixXd c(k, k);
    for (Eigen::Index i = 0; i < k; ++i)
        for (Eigen::Index j = 0; j < k; ++j) c(i, j) = x[i * k + j];
    return c;
}

namespace {
double logsumexp(const std::vector<double>& vals) {
    double m = -std::numeric_limits<double>::infinity();
    for (double v : vals) m = std::max(m, v);
    double s = 0.0;
    for (double v : vals) s += std::exp(v - m);
    return m + std::log(s);
}
}  // namespace

double cross_loss_direct(const Eigen::MatrixXd& sim, int p, double tau) {
    double total = 0.0;
    for (Eigen::Index i = 0; i < sim.rows(); ++i) {
        const std::vector<int> top = topk_by_sort(sim.row(i), p);
        double pos = 0.0;
        for (int j : top) pos += sim(i, j);
        pos /= p;
        std::vector<bool> is_pos(static_cast<std::size_t>(sim.cols()), false);
        for (int j : top) is_pos[static_cast<std::size_t>(j)] = true;
        std::vector<double> negs;
        for (Eigen::Index j = 0; j < sim.cols(); ++j)
            if (!is_pos[static_cast<std::size_t>(j)]) negs.push_back(sim(i, j) / tau);
        total += -pos / tau + logsumexp(negs);
    }
    return total / static_cast<double>(sim.rows());
}

double self_loss_direct(const Eigen::MatrixXd& features, int p, double tau) {
    const Eigen::Index n = features.rows();
    Eigen::MatrixXd nrm = features;
    for (Eigen::Index i = 0; i < n; ++i) nrm.row(i) /= std::max(1e-12, nrm.row(i).norm());
    const Eigen::MatrixXd sim = nrm * nrm.transpose();
    double total = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
        const std::vector<int> top = topk_by_sort(sim.row(i), p);
        std::vector<bool> is_pos(static_cast<std::size_t>(n), false);
        for (int j : top) is_pos[static_cast<std::size_t>(j)] = true;
        std::vector<double> negs;
        for (Eigen::Index j = 0; j < n; ++j)
            if (!is_pos[static_cast<std::size_t>(j)]) negs.push_back(sim(i, j) / tau);
        total += logsumexp(negs);
    }
    return total / static_cast<double>(n);
}

double scalar_adam(double x0, const std::vector<double>& grads, double lr, double beta1, double beta2,
                   double eps) {
    double x = x0, m = 0.0, v = 0.0;
    int t = 0;
    for (double g : grads) {
        ++t;
        m = beta1 * m + (1.0 - beta1) * g;
        v = beta2 * v + (1.0 - beta2) * g * g;
        const double mhat = m / (1.0 - std::pow(beta1, t));
        const double vhat = v / (1.0 - std::pow(beta2, t));
        x -= lr * mhat / (std::sqrt(vhat) + eps);
    }
    return x;
}

}  // namespace oracles
