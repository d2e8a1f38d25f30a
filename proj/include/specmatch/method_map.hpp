#pragma once

#include <map>
#include <string>
#include <vector>

#include "specmatch/common.hpp"

namespace specmatch {

/// One step of the matching pipeline mapped to the symbol implementing it.
/// docs/method_map.md is generated from this registry so the table cannot
/// drift from the code; the validator below is the coverage guard.
struct MethodStep {
    std::string key;      // stable role name of the step
    std::string impl;     // header symbol implementing it
    std::string summary;  // one-line description
};

/// The set of steps the documentation must cover, each exactly once.
inline const std::vector<std::string>& required_step_keys() {
    static const std::vector<std::string> keys = {
        "laplacian_assembly",     "mass_lumping",
        "truncated_eigenbasis",   "basis_pseudo_inverse",
        "heat_kernel_signature",  "spectral_diffusion",
        "feature_extractor",      "inter_similarity",
        "similarity_split",       "cross_contrastive_loss",
        "self_contrastive_loss",  "soft_pointwise_map",
        "spectral_map_projection", "alignment_loss",
        "total_objective",        "baseline_map_solver",
        "baseline_structural_losses", "pointwise_map_recovery",
        "geodesic_error_metric",
    };
    return keys;
}

inline const std::vector<MethodStep>& method_steps() {
    static const std::vector<MethodStep> steps = {
        {"laplacian_assembly", "spectral.hpp: cotan_laplacian",
         "Cotangent-weight stiffness matrix of the surface."},
        {"mass_lumping", "spectral.hpp: lumped_mass",
         "Diagonal vertex areas (one third of incident triangle areas)."},
        {"truncated_eigenbasis", "spectral.hpp: eig_k",
         "First k generalized eigenpairs of (L, A) by shift-invert subspace iteration."},
        {"basis_pseudo_inverse", "spectral.hpp: SpectralOperators::phi_pinv",
         "Area-weighted pseudo-inverse of the eigenbasis, phi_pinv = phiT A."},
        {"heat_kernel_signature", "spectral.hpp: hks",
         "Multi-scale intrinsic descriptor sum_i exp(-lambda_i t) phi_i(x)^2."},
        {"spectral_diffusion", "feature_net.hpp: diffuse",
         "Learned per-channel heat diffusion in the truncated basis."},
        {"feature_extractor", "feature_net.hpp: net_forward",
         "Diffusion-block network lifting HKS inputs to 128-dim per-vertex features."},
        {"inter_similarity", "contrastive.hpp: cosine_similarity",
         "Cosine similarity matrix between the two shapes' feature sets."},
        {"similarity_split", "contrastive.hpp: split_similarity",
         "Per-row top-p positives vs complement negatives."},
        {"cross_contrastive_loss", "contrastive.hpp: cross_loss",
         "Attract mean of top-p cross similarities, repel all remaining pairs."},
        {"self_contrastive_loss", "contrastive.hpp: self_loss",
         "Repulsion-only loss over each shape's own non-top-p similarities."},
        {"soft_pointwise_map", "fmap.hpp: soft_map",
         "Row-stochastic correspondence Pi = softmax(F_X F_Y^T / alpha)."},
        {"spectral_map_projection", "fmap.hpp: fmap_from_pmap",
         "Functional map by projection C = phi_pinv_X Pi phi_Y (no solver)."},
        {"alignment_loss", "fmap.hpp: align_loss",
         "Coupling residual ||phi_X - Pi phi_Y C^T||_F^2."},
        {"total_objective", "fmap.hpp: total_loss",
         "Weighted sum of cross, self, and alignment terms."},
        {"baseline_map_solver", "fmap.hpp: baseline_solve_fmap",
         "Classical regularized least-squares functional map (row-decoupled SPD solves)."},
        {"baseline_structural_losses", "fmap.hpp: baseline_losses",
         "Bijectivity, orthogonality, and coupling losses of the classical pipeline."},
        {"pointwise_map_recovery", "fmap.hpp: recover_pmap",
         "Exact nearest-neighbor search recovering a hard vertex map from C."},
        {"geodesic_error_metric", "eval.hpp: mean_geo_error",
         "Area-normalized mean geodesic error (x100) against ground truth."},
    };
    return steps;
}

/// Fails if any required step is missing or registered more than once.
inline void validate_method_map(const std::vector<MethodStep>& steps) {
    std::map<std::string, int> seen;
    for (const auto& s : steps) ++seen[s.key];
    for (const auto& key : required_step_keys()) {
        const auto it = seen.find(key);
        if (it == seen.end())
            throw Error("method map: required step '" + key + "' is not registered");
        if (it->second != 1)
            throw Error("method map: step '" + key + "' registered " + std::to_string(it->second) +
                        " times");
        seen.erase(it);
    }
    for (const auto& [key, _] : seen)
        throw Error("method map: unknown step '" + key + "' registered");
}

inline std::string render_method_map(const std::vector<MethodStep>& steps) {
    validate_method_map(steps);
    std::string out = "# Method-to-code map\n\n"
                      "Generated from the registry in include/specmatch/method_map.hpp; run the\n"
                      "docs generator after changing pipeline steps. Each row names one step of\n"
                      "the matching pipeline and the symbol implementing it.\n\n"
                      "| Step | Implementation | Summary |\n"
                      "|------|----------------|---------|\n";
    for (const auto& s : steps)
        out += "| " + s.key + " | `" + s.impl + "` | " + s.summary + " |\n";
    return out;
}

}  // namespace specmatch
