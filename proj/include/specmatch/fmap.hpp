#pragma once

#include <string>
#include <thread>
#include <vector>

#include <Eigen/Dense>

#include "specmatch/contrastive.hpp"
#include "specmatch/mesh.hpp"
#include "specmatch/spectral.hpp"
#include "specmatch/tape.hpp"

namespace specmatch {

/// Row-stochastic soft vertex correspondence Π (|V_X| x |V_Y|): row i is a
/// probability distribution over target vertices for source vertex i.
struct SoftMap {
    ad::Value pi;
    double alpha = 0.07;
};

/// Spectral correspondence C_YX (k x k): maps coefficients in Y's eigenbasis
/// to X's.
struct FunctionalMap {
    ad::Value c;
};

/// Weights of the classical regularized-solver route, kept for comparisons:
/// lambda_reg scales the spectral-commutativity regularizer, theta_bi /
/// theta_or weight the bijectivity and orthogonality losses.
struct BaselineConfig {
    double lambda_reg = 1e-3;
    double theta_bi = 1.0;
    double theta_or = 1.0;
};

inline void validate(const BaselineConfig& cfg) {
    if (cfg.lambda_reg < 0.0 || cfg.theta_bi < 0.0 || cfg.theta_or < 0.0)
        throw ConfigError("baseline config: weights must be >= 0");
}

/// Π = softmax_rows(F_X F_Yᵀ / α). Raw dot products on purpose — the
/// contrastive branch uses cosine similarity, but the soft map is defined on
/// unnormalized features; the asymmetry is intentional.
inline SoftMap soft_map(ad::Tape& tape, ad::Value fx, ad::Value fy, double alpha) {
    if (!(alpha > 0.0)) throw Error("soft_map: alpha must be > 0");
    ad::Value logits = tape.scale(tape.matmul(fx, tape.transpose(fy)), 1.0 / alpha);
    return SoftMap{tape.softmax_rows(logits), alpha};
}

/// C_YX = Φ_X† Π Φ_Y, associated as ((Φ_X†) Π) Φ_Y so intermediates stay
/// k x |V| instead of |V| x |V|.
inline FunctionalMap fmap_from_pmap(ad::Tape& tape, const SoftMap& pmap,
                                    const SpectralOperators& ops_x, const SpectralOperators& ops_y) {
    if (tape.value(pmap.pi).rows() != ops_x.num_vertices() ||
        tape.value(pmap.pi).cols() != ops_y.num_vertices())
        throw Error("fmap_from_pmap: soft map is " + std::to_string(tape.value(pmap.pi).rows()) + "x" +
                    std::to_string(tape.value(pmap.pi).cols()) + " but operators cover " +
                    std::to_string(ops_x.num_vertices()) + " and " +
                    std::to_string(ops_y.num_vertices()) + " vertices");
    ad::Value left = tape.left_mul_const(ops_x.phi_pinv, pmap.pi);  // k x |V_Y|
    return FunctionalMap{tape.right_mul_const(left, ops_y.phi)};
}

/// Consistency residual between the two map representations:
/// ‖Φ_X − Π Φ_Y C_YXᵀ‖²_F.
inline ad::Value align_loss(ad::Tape& tape, const SpectralOperators& ops_x, const SoftMap& pmap,
                            const SpectralOperators& ops_y, const FunctionalMap& fmap) {
    ad::Value mapped = tape.matmul(tape.right_mul_const(pmap.pi, ops_y.phi), tape.transpose(fmap.c));
    return tape.frobenius_sq(tape.sub(tape.constant(ops_x.phi), mapped));
}

/// Weighted training objective over the three scalar components.
inline ad::Value total_loss(ad::Tape& tape, ad::Value cross, ad::Value self_, ad::Value align,
                            const LossConfig& cfg) {
    ad::Value weighted = tape.scale(cross, cfg.theta_cross);
    weighted = tape.add(weighted, tape.scale(self_, cfg.theta_self));
    return tape.add(weighted, tape.scale(align, cfg.theta_align));
}

/// Classical route: find C minimizing ‖C·A − B‖²_F + λ Σ_ij C_ij² (λX_i − λY_j)²
/// for descriptor coefficients A = Φ_Y† F_Y (k x d) and B = Φ_X† F_X. The
/// commutativity mask decouples the rows: row i solves the SPD system
/// (AAᵀ + λ D_i) c_i = A b_iᵀ with D_i = diag((λX_i − λY_j)²_j).
inline Eigen::MatrixXd baseline_solve_fmap(const Eigen::MatrixXd& desc_x, const Eigen::MatrixXd& desc_y,
                                           const Eigen::VectorXd& lambda_x,
                                           const Eigen::VectorXd& lambda_y, double lambda_reg) {
    const Eigen::Index k = desc_x.rows();
    if (desc_y.rows() != k || lambda_x.size() != k || lambda_y.size() != k)
        throw Error("baseline_solve_fmap: inconsistent truncation orders");
    if (desc_x.cols() != desc_y.cols())
        throw Error("baseline_solve_fmap: descriptor dimensions differ");
    if (lambda_reg < 0.0) throw Error("baseline_solve_fmap: lambda_reg must be >= 0");
    const Eigen::MatrixXd gram = desc_y * desc_y.transpose();  // AAᵀ
    const Eigen::MatrixXd rhs_all = desc_y * desc_x.transpose();  // A Bᵀ, column i = A b_iᵀ
    Eigen::MatrixXd c(k, k);
    for (Eigen::Index i = 0; i < k; ++i) {
        Eigen::MatrixXd m = gram;
        m.diagonal() += lambda_reg * (lambda_x[i] - lambda_y.array()).square().matrix();
        const Eigen::VectorXd rhs = rhs_all.col(i);
        const Eigen::VectorXd ci = m.ldlt().solve(rhs);
        // LDLT does not signal rank deficiency reliably; verify the solve.
        const double resid = (m * ci - rhs).norm();
        const double scale = m.norm() * ci.norm() + rhs.norm();
        if (!ci.allFinite() || resid > 1e-8 * std::max(1.0, scale))
            throw NumericError("baseline_solve_fmap: singular system at row " + std::to_string(i) +
                               " (residual " + std::to_string(resid) +
                               "); descriptors too few or lambda_reg = 0 on a deficient Gram matrix");
        c.row(i) = ci.transpose();
    }
    return c;
}

struct BaselineLosses {
    ad::Value bi;  // ‖C_YX C_XY − I‖²_F
    ad::Value or_; // ‖C_YX C_YXᵀ − I‖²_F
    ad::Value co;  // ‖C_YX − Φ_X† Π Φ_Y‖²_F
};

/// Structural losses of the classical pipeline, for ablation/baseline
/// training modes. The coupling term reuses fmap_from_pmap, so feeding it a
/// C produced from the same Π yields exactly zero.
inline BaselineLosses baseline_losses(ad::Tape& tape, const FunctionalMap& c_yx,
                                      const FunctionalMap& c_xy, const SoftMap& pmap,
                                      const SpectralOperators& ops_x, const SpectralOperators& ops_y) {
    const Eigen::Index k = tape.value(c_yx.c).rows();
    const Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(k, k);
    BaselineLosses out;
    out.bi = tape.frobenius_sq(tape.sub(tape.matmul(c_yx.c, c_xy.c), tape.constant(eye)));
    out.or_ = tape.frobenius_sq(tape.sub(tape.matmul(c_yx.c, tape.transpose(c_yx.c)), tape.constant(eye)));
    out.co = tape.frobenius_sq(tape.sub(c_yx.c, fmap_from_pmap(tape, pmap, ops_x, ops_y).c));
    return out;
}

/// Hard correspondence from a trained C: vertex x of X maps to the row of
/// Φ_Y C_YXᵀ nearest to row x of Φ_X (exact search, squared Euclidean, ties
/// toward the lowest target index). Work is split across threads up to the
/// configured thread cap.
inline Correspondence recover_pmap(const SpectralOperators& ops_x, const SpectralOperators& ops_y,
                                   const Eigen::MatrixXd& c_yx) {
    if (c_yx.rows() != ops_x.k || c_yx.cols() != ops_y.k)
        throw Error("recover_pmap: C is " + std::to_string(c_yx.rows()) + "x" +
                    std::to_string(c_yx.cols()) + ", expected " + std::to_string(ops_x.k) + "x" +
                    std::to_string(ops_y.k));
    const Eigen::MatrixXd emb = ops_y.phi * c_yx.transpose();  // |V_Y| x k, compared against Φ_X rows
    const Eigen::Index nx = ops_x.num_vertices(), ny = ops_y.num_vertices();
    Correspondence out(static_cast<std::size_t>(nx));
    auto scan = [&](Eigen::Index begin, Eigen::Index end) {
        for (Eigen::Index x = begin; x < end; ++x) {
            int best = 0;
            double best_d = (emb.row(0) - ops_x.phi.row(x)).squaredNorm();
            for (Eigen::Index y = 1; y < ny; ++y) {
                const double d = (emb.row(y) - ops_x.phi.row(x)).squaredNorm();
                if (d < best_d) {  // strict < keeps the lowest index on ties
                    best_d = d;
                    best = static_cast<int>(y);
                }
            }
            out[static_cast<std::size_t>(x)] = best;
        }
    };
    const int threads = std::min<int>(max_threads(), static_cast<int>(nx));
    if (threads <= 1) {
        scan(0, nx);
    } else {
        std::vector<std::thread> pool;
        const Eigen::Index chunk = (nx + threads - 1) / threads;
        for (int t = 0; t < threads; ++t)
            pool.emplace_back(scan, t * chunk, std::min<Eigen::Index>(nx, (t + 1) * chunk));
        for (auto& th : pool) th.join();
    }
    return out;
}

}  // namespace specmatch
