#pragma once

#include <string>
#include <vector>

#include <Eigen/Dense>

#include "specmatch/tape.hpp"

namespace specmatch {

/// Knobs of the contrastive objective. p_c / p_s are the per-row positive
/// counts for the cross- and self-similarity splits; negatives are always
/// the full complement (no negative sampling). theta_* weight the loss terms
/// in the total objective.
struct LossConfig {
    int p_c = 30;
    int p_s = 30;
    double tau_c = 1.0;
    double tau_s = 1.0;
    double theta_cross = 1.0;
    double theta_self = 0.1;
    double theta_align = 1.0;
};

inline void validate(const LossConfig& cfg) {
    if (cfg.p_c < 1 || cfg.p_s < 1) throw ConfigError("loss config: positive counts must be >= 1");
    if (!(cfg.tau_c > 0.0) || !(cfg.tau_s > 0.0))
        throw ConfigError("loss config: temperatures must be > 0");
    if (cfg.theta_cross < 0.0 || cfg.theta_self < 0.0 || cfg.theta_align < 0.0)
        throw ConfigError("loss config: loss weights must be >= 0");
}

/// A similarity matrix split into per-row positives (the top-p entries) and
/// implicit negatives (everything else; neg_mask marks them for the masked
/// logsumexp). pos_mean is the differentiable n x 1 node of top-p means;
/// selection indices are constants.
struct SimilaritySplit {
    ad::Value sim;                               // n_x x n_y
    ad::Value pos_mean;                          // n_x x 1
    std::vector<std::vector<int>> positive_idx;  // per row, descending value
    Eigen::MatrixXd neg_mask;                    // 1.0 where negative
    int p = 0;
};

/// S = normalize_rows(F_X) · normalize_rows(F_Y)ᵀ; every entry is the cosine
/// of a cross-shape feature pair.
inline ad::Value cosine_similarity(ad::Tape& tape, ad::Value fx, ad::Value fy) {
    if (tape.value(fx).cols() != tape.value(fy).cols())
        throw Error("cosine_similarity: feature dimensions differ (" +
                    std::to_string(tape.value(fx).cols()) + " vs " +
                    std::to_string(tape.value(fy).cols()) + ")");
    ad::Value nx = tape.row_l2_normalize(fx);
    ad::Value ny = tape.row_l2_normalize(fy);
    return tape.matmul(nx, tape.transpose(ny));
}

/// Splits each row of S into its top-p entries (positives; ties toward the
/// lower column index) and the complement (negatives).
inline SimilaritySplit split_similarity(ad::Tape& tape, ad::Value sim, int p) {
    const Eigen::MatrixXd& S = tape.value(sim);
    if (p >= S.cols())
        throw Error("split_similarity: p=" + std::to_string(p) + " must be < row length " +
                    std::to_string(S.cols()));
    SimilaritySplit split;
    split.sim = sim;
    split.p = p;
    split.pos_mean = tape.mean_topk_rows(sim, p);
    split.positive_idx = tape.topk_selection(split.pos_mean);
    split.neg_mask = Eigen::MatrixXd::Ones(S.rows(), S.cols());
    for (Eigen::Index i = 0; i < S.rows(); ++i)
        for (int j : split.positive_idx[static_cast<std::size_t>(i)]) split.neg_mask(i, j) = 0.0;
    return split;
}

/// Cross-shape contrastive loss:
///   L = (1/n) Σ_i [ -mean(top-p of row i)/τ + logsumexp_{j in negatives(i)} S_ij/τ ].
/// The denominator runs over negatives only, so the loss may go negative;
/// that is the intended form, not a bug.
inline ad::Value cross_loss(ad::Tape& tape, const SimilaritySplit& split, double tau_c) {
    if (!(tau_c > 0.0)) throw Error("cross_loss: temperature must be > 0");
    const Eigen::Index n = tape.value(split.sim).rows();
    if (split.p >= tape.value(split.sim).cols())
        throw Error("cross_loss: empty negative set (p equals row length)");
    ad::Value attract = tape.scale(split.pos_mean, -1.0 / tau_c);
    ad::Value repel =
        tape.logsumexp_rows_masked(tape.scale(split.sim, 1.0 / tau_c), split.neg_mask);
    return tape.scale(tape.sum(tape.add(attract, repel)), 1.0 / static_cast<double>(n));
}

/// Self contrastive loss over one shape's own similarity S_FF: repulsion
/// only, L = (1/n) Σ_i logsumexp over the complement of row i's top-p_s
/// entries. Each vertex's top-1 is itself (cosine 1), so the diagonal never
/// lands in the negatives for p_s >= 1.
inline ad::Value self_loss(ad::Tape& tape, ad::Value f, int p_s, double tau_s) {
    if (!(tau_s > 0.0)) throw Error("self_loss: temperature must be > 0");
    const Eigen::Index n = tape.value(f).rows();
    if (p_s >= n)
        throw Error("self_loss: p_s=" + std::to_string(p_s) + " must be < |V|=" + std::to_string(n));
    ad::Value sim = cosine_similarity(tape, f, f);
    SimilaritySplit split = split_similarity(tape, sim, p_s);
    ad::Value repel =
        tape.logsumexp_rows_masked(tape.scale(split.sim, 1.0 / tau_s), split.neg_mask);
    return tape.scale(tape.sum(repel), 1.0 / static_cast<double>(n));
}

struct ContrastivePair {
    ad::Value cross;  // ½ (cross X→Y + cross Y→X)
    ad::Value self;   // ½ (self F_X + self F_Y)
};

/// Both loss families evaluated symmetrically: the X→Y and Y→X cross losses
/// are averaged (the reverse direction reuses Sᵀ), as are the two self
/// losses.
inline ContrastivePair bidirectional_contrastive(ad::Tape& tape, ad::Value fx, ad::Value fy,
                                                 const LossConfig& cfg) {
    ad::Value s_xy = cosine_similarity(tape, fx, fy);
    ad::Value s_yx = tape.transpose(s_xy);
    SimilaritySplit split_xy = split_similarity(tape, s_xy, cfg.p_c);
    SimilaritySplit split_yx = split_similarity(tape, s_yx, cfg.p_c);
    ContrastivePair out;
    out.cross = tape.scale(
        tape.add(cross_loss(tape, split_xy, cfg.tau_c), cross_loss(tape, split_yx, cfg.tau_c)), 0.5);
    out.self = tape.scale(
        tape.add(self_loss(tape, fx, cfg.p_s, cfg.tau_s), self_loss(tape, fy, cfg.p_s, cfg.tau_s)),
        0.5);
    return out;
}

}  // namespace specmatch
