#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>

#include "specmatch/common.hpp"
#include "specmatch/container.hpp"
#include "specmatch/mesh.hpp"

namespace specmatch {

/// Symmetric sparse matrix in compressed-row layout (row offsets, column
/// indices, values) — Eigen's row-major sparse format is exactly that.
using SparseSym = Eigen::SparseMatrix<double, Eigen::RowMajor>;

/// Truncated spectral decomposition of a mesh's Laplace-Beltrami operator.
/// Columns of phi are generalized eigenfunctions of (L, A), ascending by
/// eigenvalue; phi_pinv = phiᵀ·A is the Moore-Penrose pseudo-inverse under
/// the area-weighted inner product.
struct SpectralOperators {
    Eigen::MatrixXd phi;        // |V| x k
    Eigen::VectorXd lambda;     // k
    Eigen::VectorXd mass_diag;  // |V|
    Eigen::MatrixXd phi_pinv;   // k x |V|
    int k = 0;

    Eigen::Index num_vertices() const { return phi.rows(); }
};

/// Stiffness matrix with cotangent weights: off-diagonal
/// w_ij = -(cot a_ij + cot b_ij)/2 over the one or two angles opposite edge
/// (i,j), diagonal the negated row sum. Cotangents are clamped to
/// [-1e4, 1e4] so near-degenerate triangles cannot destroy definiteness.
inline SparseSym cotan_laplacian(const Mesh& mesh) {
    const Eigen::Index n = mesh.num_vertices();
    std::vector<Eigen::Triplet<double>> trip;
    trip.reserve(static_cast<std::size_t>(mesh.F.rows()) * 12);
    Eigen::VectorXd diag = Eigen::VectorXd::Zero(n);
    for (Eigen::Index f = 0; f < mesh.F.rows(); ++f) {
        const int vi[3] = {mesh.F(f, 0), mesh.F(f, 1), mesh.F(f, 2)};
        for (int c = 0; c < 3; ++c) {
            const int o = vi[c], p = vi[(c + 1) % 3], q = vi[(c + 2) % 3];
            const Eigen::Vector3d u = mesh.V.row(p) - mesh.V.row(o);
            const Eigen::Vector3d w = mesh.V.row(q) - mesh.V.row(o);
            const double cot = std::clamp(u.dot(w) / u.cross(w).norm(), -1e4, 1e4);
            const double wij = -0.5 * cot;  // edge (p,q), angle at o opposite it
            trip.emplace_back(p, q, wij);
            trip.emplace_back(q, p, wij);
            diag[p] -= wij;
            diag[q] -= wij;
        }
    }
    for (Eigen::Index i = 0; i < n; ++i) trip.emplace_back(i, i, diag[i]);
    SparseSym L(n, n);
    L.setFromTriplets(trip.begin(), trip.end());
    L.makeCompressed();
    return L;
}

/// Barycentric lumped vertex areas: A_ii = (1/3) sum of incident triangle
/// areas, so the entries sum to the total surface area.
inline Eigen::VectorXd lumped_mass(const Mesh& mesh) {
    Eigen::VectorXd a = Eigen::VectorXd::Zero(mesh.num_vertices());
    for (Eigen::Index f = 0; f < mesh.F.rows(); ++f) {
        const double third =
            triangle_area(mesh.V.row(mesh.F(f, 0)), mesh.V.row(mesh.F(f, 1)), mesh.V.row(mesh.F(f, 2))) / 3.0;
        for (int c = 0; c < 3; ++c) a[mesh.F(f, c)] += third;
    }
    return a;
}

namespace detail {

/// Modified Gram-Schmidt in the A-weighted inner product, run twice for
/// stability. Columns whose norm collapses are re-seeded from the rng so the
/// basis keeps full rank (and the run stays deterministic).
inline void a_orthonormalize(Eigen::MatrixXd& X, const Eigen::VectorXd& mass, Rng& rng) {
    auto adot = [&](const Eigen::VectorXd& u, const Eigen::VectorXd& v) {
        return u.dot(mass.cwiseProduct(v));
    };
    for (int pass = 0; pass < 2; ++pass) {
        for (Eigen::Index j = 0; j < X.cols(); ++j) {
            for (Eigen::Index i = 0; i < j; ++i) X.col(j) -= adot(X.col(i), X.col(j)) * X.col(i);
            double nrm = std::sqrt(std::max(0.0, adot(X.col(j), X.col(j))));
            if (nrm < 1e-14) {
                for (Eigen::Index r = 0; r < X.rows(); ++r) X(r, j) = rng.normal();
                for (Eigen::Index i = 0; i < j; ++i) X.col(j) -= adot(X.col(i), X.col(j)) * X.col(i);
                nrm = std::sqrt(std::max(1e-300, adot(X.col(j), X.col(j))));
            }
            X.col(j) /= nrm;
        }
    }
}

}  // namespace detail

/// First k generalized eigenpairs of (L, A) by shift-invert subspace
/// iteration: factor L + 1e-8·A once, repeatedly apply its inverse to a
/// random A-orthonormal block (k plus a guard band of extra vectors), and
/// extract Ritz pairs until every kept pair has relative residual <= 1e-8
/// (absolute for the near-null first pair). A block method is used instead
/// of a single-vector Lanczos because highly symmetric meshes carry exact
/// eigenvalue multiplicities that single vectors track poorly.
///
/// Sign convention: each column's largest-magnitude entry is made positive,
/// ties resolved toward the lowest vertex index.
inline SpectralOperators eig_k(const SparseSym& L, const Eigen::VectorXd& mass, int k,
                               uint64_t seed = 0x5eedULL) {
    const Eigen::Index n = L.rows();
    if (k < 1) throw Error("eig_k: k must be >= 1");
    if (k >= n) throw Error("eig_k: k=" + std::to_string(k) + " must be < |V|=" + std::to_string(n));
    if ((mass.array() <= 0.0).any()) throw DataError("eig_k: mass entries must be positive");

    const double sigma = -1e-8;
    Eigen::SparseMatrix<double> shifted = Eigen::SparseMatrix<double>(L);
    for (Eigen::Index i = 0; i < n; ++i) shifted.coeffRef(i, i) -= sigma * mass[i];
    Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> factor(shifted);
    if (factor.info() != Eigen::Success)
        throw NumericError("eig_k: sparse factorization of the shifted operator failed");

    const int m = static_cast<int>(std::min<Eigen::Index>(n - 1, k + std::max(8, k / 2)));
    Rng rng(seed);
    Eigen::MatrixXd X(n, m);
    for (Eigen::Index j = 0; j < m; ++j)
        for (Eigen::Index i = 0; i < n; ++i) X(i, j) = rng.normal();

    const int max_iters = 100 * k;
    const double tol = 1e-8;
    Eigen::VectorXd theta;
    double worst = std::numeric_limits<double>::infinity();
    for (int iter = 0; iter < max_iters; ++iter) {
        detail::a_orthonormalize(X, mass, rng);
        Eigen::MatrixXd LX = L * X;
        Eigen::MatrixXd H = X.transpose() * LX;
        H = 0.5 * (H + H.transpose()).eval();
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(H);
        if (es.info() != Eigen::Success) throw NumericError("eig_k: dense Rayleigh-Ritz solve failed");
        X = (X * es.eigenvectors()).eval();
        LX = (LX * es.eigenvectors()).eval();
        theta = es.eigenvalues();

        worst = 0.0;
        for (int i = 0; i < k; ++i) {
            const Eigen::VectorXd ax = mass.cwiseProduct(X.col(i));
            const double rnorm = (LX.col(i) - theta[i] * ax).norm();
            const double den = std::abs(theta[i]) * ax.norm();
            worst = std::max(worst, i == 0 ? rnorm : rnorm / std::max(den, 1e-300));
        }
        if (worst <= tol) break;
        if (iter + 1 == max_iters)
            throw NumericError("eig_k: no convergence after " + std::to_string(max_iters) +
                               " iterations (worst residual " + std::to_string(worst) + ")");
        X = factor.solve(mass.asDiagonal() * X);
        if (!X.allFinite()) throw NumericError("eig_k: non-finite iterate");
    }

    SpectralOperators ops;
    ops.k = k;
    ops.mass_diag = mass;
    ops.phi = X.leftCols(k);
    ops.lambda = theta.head(k);
    const double lam_scale = std::max(1.0, std::abs(ops.lambda[k - 1]));
    for (int i = 0; i < k; ++i) {
        if (ops.lambda[i] < 0.0) {
            if (ops.lambda[i] < -1e-8 * lam_scale)
                throw NumericError("eig_k: negative eigenvalue " + std::to_string(ops.lambda[i]));
            ops.lambda[i] = 0.0;  // numerical noise on the constant mode
        }
    }
    for (int c = 0; c < k; ++c) {
        Eigen::Index arg = 0;
        double best = std::abs(ops.phi(0, c));
        for (Eigen::Index r = 1; r < n; ++r)
            if (std::abs(ops.phi(r, c)) > best) {  // strict > keeps the lowest index on ties
                best = std::abs(ops.phi(r, c));
                arg = r;
            }
        if (ops.phi(arg, c) < 0.0) ops.phi.col(c) = -ops.phi.col(c);
    }
    ops.phi_pinv = ops.phi.transpose() * mass.asDiagonal();
    return ops;
}

/// Residual magnitudes behind the SpectralOperators invariants, for tests
/// and precompute-time verification. eigen_rel excludes the first pair
/// (whose eigenvalue is ~0, making a relative measure meaningless there);
/// first_abs covers it absolutely.
struct SpectralResiduals {
    double eigen_rel;  // ‖LΦ₂..ₖ − AΦ₂..ₖΛ‖_F / ‖AΦ₂..ₖΛ‖_F
    double first_abs;  // ‖Lφ₁ − λ₁Aφ₁‖₂
    double ortho_max;  // ‖ΦᵀAΦ − I‖_max
    double pinv_max;   // ‖Φ†Φ − I‖_max
};

inline SpectralResiduals spectral_residuals(const SpectralOperators& ops, const SparseSym& L) {
    const auto& A = ops.mass_diag;
    const Eigen::MatrixXd LP = L * ops.phi;
    const Eigen::MatrixXd APL = A.asDiagonal() * ops.phi * ops.lambda.asDiagonal();
    SpectralResiduals r{};
    r.first_abs = (LP.col(0) - APL.col(0)).norm();
    if (ops.k > 1) {
        const auto tail = Eigen::seq(1, ops.k - 1);
        r.eigen_rel = (LP(Eigen::all, tail) - APL(Eigen::all, tail)).norm() / APL(Eigen::all, tail).norm();
    } else {
        r.eigen_rel = 0.0;
    }
    const Eigen::MatrixXd gram = ops.phi.transpose() * A.asDiagonal() * ops.phi;
    r.ortho_max = (gram - Eigen::MatrixXd::Identity(ops.k, ops.k)).cwiseAbs().maxCoeff();
    r.pinv_max =
        (ops.phi_pinv * ops.phi - Eigen::MatrixXd::Identity(ops.k, ops.k)).cwiseAbs().maxCoeff();
    return r;
}

/// Heat kernel signature: HKS(x, t) = Σ_i exp(-λ_i t) φ_i(x)², sampled at
/// n_times values log-spaced between 4·ln10/λ_k and 4·ln10/λ_2. Columns are
/// scaled to unit L2 norm by default (disable via unit_norm) because raw
/// magnitudes span several orders across t.
inline Eigen::MatrixXd hks(const SpectralOperators& ops, int n_times, bool unit_norm = true) {
    if (n_times < 1) throw Error("hks: n_times must be >= 1");
    if (ops.k < 2) throw Error("hks: need at least 2 eigenpairs");
    if (!(ops.lambda[1] > 0.0))
        throw DataError("hks: second eigenvalue is not positive; mesh may be disconnected");
    const double lo = std::log(4.0 * std::log(10.0) / ops.lambda[ops.k - 1]);
    const double hi = std::log(4.0 * std::log(10.0) / ops.lambda[1]);
    Eigen::MatrixXd out(ops.phi.rows(), n_times);
    const Eigen::MatrixXd phi_sq = ops.phi.cwiseProduct(ops.phi);
    for (int j = 0; j < n_times; ++j) {
        const double t = std::exp(n_times == 1 ? lo : lo + (hi - lo) * j / (n_times - 1));
        out.col(j) = phi_sq * (-t * ops.lambda.array()).exp().matrix();
    }
    if (!out.allFinite() || (out.array() < 0.0).any())
        throw NumericError("hks: non-finite or negative signature entry");
    if (unit_norm)
        for (int j = 0; j < n_times; ++j) out.col(j) /= std::max(1e-300, out.col(j).norm());
    return out;
}

/// Hash of the vertex coordinates in row-major order; guards spectra caches
/// against being replayed onto a different mesh.
inline uint64_t vertex_hash(const Mesh& mesh) {
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm = mesh.V;
    return fnv1a64(rm.data(), static_cast<std::size_t>(rm.size()) * sizeof(double));
}

inline void save_spectra(const SpectralOperators& ops, const Mesh& mesh,
                         const std::filesystem::path& path) {
    Container c;
    char hex[32];
    std::snprintf(hex, sizeof(hex), "%016llx", static_cast<unsigned long long>(vertex_hash(mesh)));
    c.meta = {{"mesh_name", mesh.name},
              {"num_vertices", mesh.num_vertices()},
              {"k", ops.k},
              {"vertex_hash", hex}};
    c.add("phi", ops.phi);
    c.add("lambda", ops.lambda);
    c.add("mass", ops.mass_diag);
    c.save(path);
}

/// Loads a spectra cache and verifies it belongs to `mesh` (vertex count and
/// coordinate hash must both match).
inline SpectralOperators load_spectra(const std::filesystem::path& path, const Mesh& mesh) {
    Container c = Container::load(path);
    const auto nv = c.meta.at("num_vertices").get<Eigen::Index>();
    if (nv != mesh.num_vertices())
        throw DataError(path.string() + ": cache is for " + std::to_string(nv) + " vertices, mesh has " +
                        std::to_string(mesh.num_vertices()));
    char hex[32];
    std::snprintf(hex, sizeof(hex), "%016llx", static_cast<unsigned long long>(vertex_hash(mesh)));
    if (c.meta.at("vertex_hash").get<std::string>() != hex)
        throw DataError(path.string() + ": vertex hash mismatch; cache was built from different geometry");
    SpectralOperators ops;
    ops.phi = c.get("phi");
    ops.lambda = c.get("lambda");
    ops.mass_diag = c.get("mass");
    ops.k = static_cast<int>(ops.phi.cols());
    if (ops.lambda.size() != ops.k || ops.mass_diag.size() != ops.phi.rows())
        throw DataError(path.string() + ": inconsistent tensor shapes in spectra cache");
    ops.phi_pinv = ops.phi.transpose() * ops.mass_diag.asDiagonal();
    return ops;
}

}  // namespace specmatch
