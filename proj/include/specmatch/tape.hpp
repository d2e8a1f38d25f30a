#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "specmatch/common.hpp"

namespace specmatch {
namespace ad {

/// Indices of the p largest entries of a row, values descending, ties broken
/// toward the lowest column index. Every ranking in the library (positive
/// splits, top-k means) goes through this one helper so selections agree.
inline std::vector<int> topk_row_indices(const Eigen::Ref<const Eigen::RowVectorXd>& row, int p) {
    const int n = static_cast<int>(row.size());
    if (p < 1 || p > n)
        throw Error("topk_row_indices: p=" + std::to_string(p) + " out of range for row of size " +
                    std::to_string(n));
    std::vector<int> idx(static_cast<std::size_t>(n));
    std::iota(idx.begin(), idx.end(), 0);
    std::partial_sort(idx.begin(), idx.begin() + p, idx.end(), [&](int a, int b) {
        return row[a] != row[b] ? row[a] > row[b] : a < b;
    });
    idx.resize(static_cast<std::size_t>(p));
    return idx;
}

/// Numerically safe scalar helpers shared by the op kernels.
inline double stable_softplus(double x) {
    return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}
inline double stable_sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

/// Handle to a node on a Tape. Plain index; cheap to copy, valid until the
/// owning tape is cleared.
struct Value {
    int idx = -1;
    bool valid() const { return idx >= 0; }
};

/// Reverse-mode differentiation over dense double matrices. Records a flat
/// list of op nodes during the forward pass (creation order doubles as a
/// topological order), then walks it backwards to accumulate exact
/// vector-Jacobian products into every node that requires gradients.
///
/// Contract highlights:
///  - every forward result is checked finite; NaN/Inf raises NumericError
///  - backward requires a 1x1 root and accumulates on repeated calls
///  - a tape is single-threaded; independent tapes may run concurrently
class Tape {
    enum class Kind {
        kInput, kConstant, kMatmul, kTranspose, kAdd, kSub, kHadamard, kScale,
        kRowL2Normalize, kSoftmaxRows, kLogsumexpRowsMasked, kMeanTopkRows, kRelu,
        kSoftplus, kSum, kFrobeniusSq, kGatherRows, kScaleCols, kRightMulConst,
        kLeftMulConst, kAddRow, kExpNegOuter, kScaleWrongGrad,
    };

    struct Node {
        Kind kind;
        int a = -1, b = -1;          // parent node indices
        double scalar = 0.0;         // scale factor / epsilon
        Eigen::MatrixXd aux;         // constant operand (K, mask, column scales, lambda)
        std::vector<int> idx;        // gather indices
        std::vector<std::vector<int>> row_idx;  // per-row top-k selections
        Eigen::MatrixXd value;
        Eigen::MatrixXd grad;        // allocated on first backward touch
        bool requires_grad = false;
    };

public:
    // ---- leaves ----

    Value input(Eigen::MatrixXd v) { return push(Kind::kInput, std::move(v), -1, -1, true); }

    Value constant(Eigen::MatrixXd v) { return push(Kind::kConstant, std::move(v), -1, -1, false); }

    // ---- ops ----

    Value matmul(Value a, Value b) {
        const auto &A = val(a, "matmul"), &B = val(b, "matmul");
        if (A.cols() != B.rows()) shape_error("matmul", A, B);
        return push(Kind::kMatmul, A * B, a.idx, b.idx);
    }

    Value transpose(Value a) { return push(Kind::kTranspose, val(a, "transpose").transpose(), a.idx); }

    Value add(Value a, Value b) {
        const auto &A = val(a, "add"), &B = val(b, "add");
        if (A.rows() != B.rows() || A.cols() != B.cols()) shape_error("add", A, B);
        return push(Kind::kAdd, A + B, a.idx, b.idx);
    }

    Value sub(Value a, Value b) {
        const auto &A = val(a, "sub"), &B = val(b, "sub");
        if (A.rows() != B.rows() || A.cols() != B.cols()) shape_error("sub", A, B);
        return push(Kind::kSub, A - B, a.idx, b.idx);
    }

    Value hadamard(Value a, Value b) {
        const auto &A = val(a, "hadamard"), &B = val(b, "hadamard");
        if (A.rows() != B.rows() || A.cols() != B.cols()) shape_error("hadamard", A, B);
        return push(Kind::kHadamard, A.cwiseProduct(B), a.idx, b.idx);
    }

    Value scale(Value a, double c) {
        Value v = push(Kind::kScale, val(a, "scale") * c, a.idx);
        nodes_[v.idx].scalar = c;
        return v;
    }

    /// Rows divided by max(eps, ||row||_2). Unit rows pass through exactly.
    Value row_l2_normalize(Value a, double eps = 1e-12) {
        if (!(eps > 0.0)) throw Error("row_l2_normalize: eps must be > 0");
        const auto& A = val(a, "row_l2_normalize");
        Eigen::MatrixXd out = A;
        for (Eigen::Index i = 0; i < A.rows(); ++i)
            out.row(i) /= std::max(eps, A.row(i).norm());
        Value v = push(Kind::kRowL2Normalize, std::move(out), a.idx);
        nodes_[v.idx].scalar = eps;
        return v;
    }

    Value softmax_rows(Value a) {
        const auto& A = val(a, "softmax_rows");
        Eigen::MatrixXd out(A.rows(), A.cols());
        for (Eigen::Index i = 0; i < A.rows(); ++i) {
            const double m = A.row(i).maxCoeff();
            out.row(i) = (A.row(i).array() - m).exp();
            out.row(i) /= out.row(i).sum();
        }
        return push(Kind::kSoftmaxRows, std::move(out), a.idx);
    }

    /// Per-row log-sum-exp over entries where mask != 0 (max-shifted, no
    /// overflow). mask is a constant 0/1 matrix; each row must keep at least
    /// one entry. Returns an n x 1 column.
    Value logsumexp_rows_masked(Value a, Eigen::MatrixXd mask) {
        const auto& A = val(a, "logsumexp_rows_masked");
        if (A.rows() != mask.rows() || A.cols() != mask.cols())
            shape_error("logsumexp_rows_masked", A, mask);
        Eigen::MatrixXd out(A.rows(), 1);
        for (Eigen::Index i = 0; i < A.rows(); ++i) {
            double m = -std::numeric_limits<double>::infinity();
            for (Eigen::Index j = 0; j < A.cols(); ++j)
                if (mask(i, j) != 0.0) m = std::max(m, A(i, j));
            if (!std::isfinite(m))
                throw Error("logsumexp_rows_masked: row " + std::to_string(i) + " fully masked");
            double s = 0.0;
            for (Eigen::Index j = 0; j < A.cols(); ++j)
                if (mask(i, j) != 0.0) s += std::exp(A(i, j) - m);
            out(i, 0) = m + std::log(s);
        }
        Value v = push(Kind::kLogsumexpRowsMasked, std::move(out), a.idx);
        nodes_[v.idx].aux = std::move(mask);
        return v;
    }

    /// Mean of each row's p largest entries (ties to the lowest column index);
    /// returns n x 1. The selected index set is treated as constant during
    /// backward, and is retrievable via topk_selection() for callers that need
    /// the split itself.
    Value mean_topk_rows(Value a, int p) {
        const auto& A = val(a, "mean_topk_rows");
        Eigen::MatrixXd out(A.rows(), 1);
        std::vector<std::vector<int>> sel(static_cast<std::size_t>(A.rows()));
        for (Eigen::Index i = 0; i < A.rows(); ++i) {
            sel[static_cast<std::size_t>(i)] = topk_row_indices(A.row(i), p);
            double s = 0.0;
            for (int j : sel[static_cast<std::size_t>(i)]) s += A(i, j);
            out(i, 0) = s / p;
        }
        Value v = push(Kind::kMeanTopkRows, std::move(out), a.idx);
        nodes_[v.idx].row_idx = std::move(sel);
        nodes_[v.idx].scalar = p;
        return v;
    }

    Value relu(Value a) { return push(Kind::kRelu, val(a, "relu").cwiseMax(0.0), a.idx); }

    Value softplus(Value a) {
        return push(Kind::kSoftplus, val(a, "softplus").unaryExpr(&stable_softplus), a.idx);
    }

    Value sum(Value a) {
        Eigen::MatrixXd out(1, 1);
        out(0, 0) = val(a, "sum").sum();
        return push(Kind::kSum, std::move(out), a.idx);
    }

    Value frobenius_sq(Value a) {
        Eigen::MatrixXd out(1, 1);
        out(0, 0) = val(a, "frobenius_sq").squaredNorm();
        return push(Kind::kFrobeniusSq, std::move(out), a.idx);
    }

    /// Row r of the result is row idx[r] of A. Duplicate indices are allowed;
    /// their gradients accumulate.
    Value gather_rows(Value a, std::vector<int> idx) {
        const auto& A = val(a, "gather_rows");
        Eigen::MatrixXd out(static_cast<Eigen::Index>(idx.size()), A.cols());
        for (std::size_t r = 0; r < idx.size(); ++r) {
            if (idx[r] < 0 || idx[r] >= A.rows())
                throw Error("gather_rows: index " + std::to_string(idx[r]) + " out of range [0, " +
                            std::to_string(A.rows()) + ")");
            out.row(static_cast<Eigen::Index>(r)) = A.row(idx[r]);
        }
        Value v = push(Kind::kGatherRows, std::move(out), a.idx);
        nodes_[v.idx].idx = std::move(idx);
        return v;
    }

    /// Column j multiplied by the constant v[j].
    Value scale_cols(Value a, Eigen::VectorXd v) {
        const auto& A = val(a, "scale_cols");
        if (A.cols() != v.size())
            throw Error("scale_cols: matrix has " + std::to_string(A.cols()) + " cols, scale vector " +
                        std::to_string(v.size()));
        Value out = push(Kind::kScaleCols, A * v.asDiagonal(), a.idx);
        nodes_[out.idx].aux = std::move(v);
        return out;
    }

    Value right_mul_const(Value a, Eigen::MatrixXd K) {
        const auto& A = val(a, "right_mul_const");
        if (A.cols() != K.rows()) shape_error("right_mul_const", A, K);
        Value v = push(Kind::kRightMulConst, A * K, a.idx);
        nodes_[v.idx].aux = std::move(K);
        return v;
    }

    Value left_mul_const(Eigen::MatrixXd K, Value a) {
        const auto& A = val(a, "left_mul_const");
        if (K.cols() != A.rows()) shape_error("left_mul_const", K, A);
        Value v = push(Kind::kLeftMulConst, K * A, a.idx);
        nodes_[v.idx].aux = std::move(K);
        return v;
    }

    /// A + broadcast of a 1 x cols row (bias addition).
    Value add_row(Value a, Value row) {
        const auto &A = val(a, "add_row"), &R = val(row, "add_row");
        if (R.rows() != 1 || R.cols() != A.cols()) shape_error("add_row", A, R);
        return push(Kind::kAddRow, A.rowwise() + R.row(0), a.idx, row.idx);
    }

    /// E(i,j) = exp(-lambda[i] * t(0,j)) for a constant spectrum lambda
    /// (k x 1) and a differentiable 1 x T row of times. This is the heat
    /// kernel weight table used by spectral diffusion.
    Value exp_neg_outer(Eigen::VectorXd lambda, Value t) {
        const auto& T = val(t, "exp_neg_outer");
        if (T.rows() != 1) throw Error("exp_neg_outer: times must be a 1 x T row");
        Eigen::MatrixXd out = (-(lambda * T.row(0))).array().exp();
        Value v = push(Kind::kExpNegOuter, std::move(out), t.idx);
        nodes_[v.idx].aux = std::move(lambda);
        return v;
    }

    /// Verification fixture: forward is c*A but backward deliberately uses
    /// c + 0.5, so any finite-difference checker worth its salt must flag it.
    Value scale_wrong_grad(Value a, double c) {
        Value v = push(Kind::kScaleWrongGrad, val(a, "scale_wrong_grad") * c, a.idx);
        nodes_[v.idx].scalar = c;
        return v;
    }

    // ---- accessors ----

    const Eigen::MatrixXd& value(Value v) const { return node(v).value; }

    /// Accumulated gradient; zero-shaped matrix until backward touches the node.
    const Eigen::MatrixXd& grad(Value v) const { return node(v).grad; }

    /// Per-row index sets chosen by a mean_topk_rows node.
    const std::vector<std::vector<int>>& topk_selection(Value v) const {
        const Node& n = node(v);
        if (n.kind != Kind::kMeanTopkRows) throw Error("topk_selection: node is not mean_topk_rows");
        return n.row_idx;
    }

    std::size_t size() const { return nodes_.size(); }

    // ---- reverse pass ----

    /// Propagates d(root)/d(node) into every requires_grad node at or below
    /// root. Repeated calls accumulate into the stored grads. Root must be 1x1.
    void backward(Value root) {
        Node& r = node(root);
        if (r.value.rows() != 1 || r.value.cols() != 1)
            throw Error("backward: root must be scalar, got " + shape_str(r.value));
        // Local adjoints keep this call's propagation separate from grads
        // accumulated by earlier backward calls.
        std::vector<Eigen::MatrixXd> adj(static_cast<std::size_t>(root.idx) + 1);
        std::vector<char> seen(static_cast<std::size_t>(root.idx) + 1, 0);
        auto touch = [&](int i, auto&& contribution) {
            if (i < 0 || !nodes_[i].requires_grad) return;
            if (!seen[i]) {
                adj[i] = Eigen::MatrixXd::Zero(nodes_[i].value.rows(), nodes_[i].value.cols());
                seen[i] = 1;
            }
            adj[i] += contribution;
        };
        adj[root.idx] = Eigen::MatrixXd::Ones(1, 1);
        seen[root.idx] = 1;
        for (int i = root.idx; i >= 0; --i) {
            if (!seen[i] || !nodes_[i].requires_grad) continue;
            const Node& n = nodes_[i];
            const Eigen::MatrixXd& g = adj[i];
            switch (n.kind) {
                case Kind::kInput:
                case Kind::kConstant:
                    break;
                case Kind::kMatmul:
                    touch(n.a, g * nodes_[n.b].value.transpose());
                    touch(n.b, nodes_[n.a].value.transpose() * g);
                    break;
                case Kind::kTranspose:
                    touch(n.a, g.transpose());
                    break;
                case Kind::kAdd:
                    touch(n.a, g);
                    touch(n.b, g);
                    break;
                case Kind::kSub:
                    touch(n.a, g);
                    touch(n.b, -g);
                    break;
                case Kind::kHadamard:
                    touch(n.a, g.cwiseProduct(nodes_[n.b].value));
                    touch(n.b, g.cwiseProduct(nodes_[n.a].value));
                    break;
                case Kind::kScale:
                    touch(n.a, g * n.scalar);
                    break;
                case Kind::kRowL2Normalize: {
                    const Eigen::MatrixXd& A = nodes_[n.a].value;
                    Eigen::MatrixXd da(A.rows(), A.cols());
                    for (Eigen::Index r2 = 0; r2 < A.rows(); ++r2) {
                        const double nrm = A.row(r2).norm();
                        if (nrm > n.scalar) {
                            const double dot = g.row(r2).dot(n.value.row(r2));
                            da.row(r2) = (g.row(r2) - dot * n.value.row(r2)) / nrm;
                        } else {
                            da.row(r2) = g.row(r2) / n.scalar;  // norm clamped: linear map
                        }
                    }
                    touch(n.a, da);
                    break;
                }
                case Kind::kSoftmaxRows: {
                    // da_ij = p_ij * (g_ij - <g_i, p_i>)
                    Eigen::MatrixXd da(n.value.rows(), n.value.cols());
                    for (Eigen::Index r2 = 0; r2 < n.value.rows(); ++r2) {
                        const double dot = g.row(r2).dot(n.value.row(r2));
                        da.row(r2) = n.value.row(r2).cwiseProduct((g.row(r2).array() - dot).matrix());
                    }
                    touch(n.a, da);
                    break;
                }
                case Kind::kLogsumexpRowsMasked: {
                    const Eigen::MatrixXd& A = nodes_[n.a].value;
                    Eigen::MatrixXd da = Eigen::MatrixXd::Zero(A.rows(), A.cols());
                    for (Eigen::Index r2 = 0; r2 < A.rows(); ++r2)
                        for (Eigen::Index c = 0; c < A.cols(); ++c)
                            if (n.aux(r2, c) != 0.0)
                                da(r2, c) = g(r2, 0) * std::exp(A(r2, c) - n.value(r2, 0));
                    touch(n.a, da);
                    break;
                }
                case Kind::kMeanTopkRows: {
                    const Eigen::MatrixXd& A = nodes_[n.a].value;
                    Eigen::MatrixXd da = Eigen::MatrixXd::Zero(A.rows(), A.cols());
                    const double inv_p = 1.0 / n.scalar;
                    for (Eigen::Index r2 = 0; r2 < A.rows(); ++r2)
                        for (int c : n.row_idx[static_cast<std::size_t>(r2)])
                            da(r2, c) += g(r2, 0) * inv_p;
                    touch(n.a, da);
                    break;
                }
                case Kind::kRelu:
                    touch(n.a, g.cwiseProduct((nodes_[n.a].value.array() > 0.0).cast<double>().matrix()));
                    break;
                case Kind::kSoftplus:
                    touch(n.a, g.cwiseProduct(nodes_[n.a].value.unaryExpr(&stable_sigmoid)));
                    break;
                case Kind::kSum:
                    touch(n.a, Eigen::MatrixXd::Constant(nodes_[n.a].value.rows(),
                                                         nodes_[n.a].value.cols(), g(0, 0)));
                    break;
                case Kind::kFrobeniusSq:
                    touch(n.a, 2.0 * g(0, 0) * nodes_[n.a].value);
                    break;
                case Kind::kGatherRows: {
                    const Eigen::MatrixXd& A = nodes_[n.a].value;
                    Eigen::MatrixXd da = Eigen::MatrixXd::Zero(A.rows(), A.cols());
                    for (std::size_t r2 = 0; r2 < n.idx.size(); ++r2)
                        da.row(n.idx[r2]) += g.row(static_cast<Eigen::Index>(r2));
                    touch(n.a, da);
                    break;
                }
                case Kind::kScaleCols:
                    touch(n.a, g * n.aux.col(0).asDiagonal());
                    break;
                case Kind::kRightMulConst:
                    touch(n.a, g * n.aux.transpose());
                    break;
                case Kind::kLeftMulConst:
                    touch(n.a, n.aux.transpose() * g);
                    break;
                case Kind::kAddRow:
                    touch(n.a, g);
                    touch(n.b, g.colwise().sum());
                    break;
                case Kind::kExpNegOuter: {
                    // dt_j = -sum_i g_ij * lambda_i * E_ij
                    Eigen::MatrixXd dt = -(g.cwiseProduct(n.value).transpose() * n.aux).transpose();
                    touch(n.a, dt);
                    break;
                }
                case Kind::kScaleWrongGrad:
                    touch(n.a, g * (n.scalar + 0.5));
                    break;
            }
        }
        for (int i = 0; i <= root.idx; ++i) {
            if (!seen[i] || !nodes_[i].requires_grad) continue;
            if (!adj[i].allFinite()) throw NumericError("backward: non-finite gradient at node " +
                                                        std::to_string(i));
            if (nodes_[i].grad.size() == 0)
                nodes_[i].grad = Eigen::MatrixXd::Zero(nodes_[i].value.rows(), nodes_[i].value.cols());
            nodes_[i].grad += adj[i];
        }
    }

    void zero_grad() {
        for (Node& n : nodes_) n.grad.resize(0, 0);
    }

    void clear() { nodes_.clear(); }

private:
    static std::string shape_str(const Eigen::MatrixXd& m) {
        return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
    }

    [[noreturn]] static void shape_error(const char* op, const Eigen::MatrixXd& a,
                                         const Eigen::MatrixXd& b) {
        throw Error(std::string(op) + ": incompatible shapes " + shape_str(a) + " and " + shape_str(b));
    }

    const Eigen::MatrixXd& val(Value v, const char* op) const {
        if (!v.valid() || v.idx >= static_cast<int>(nodes_.size()))
            throw Error(std::string(op) + ": invalid tape handle");
        return nodes_[v.idx].value;
    }

    const Node& node(Value v) const {
        if (!v.valid() || v.idx >= static_cast<int>(nodes_.size())) throw Error("invalid tape handle");
        return nodes_[v.idx];
    }
    Node& node(Value v) { return const_cast<Node&>(static_cast<const Tape*>(this)->node(v)); }

    Value push(Kind kind, Eigen::MatrixXd value, int a = -1, int b = -1, bool leaf_grad = false) {
        if (!value.allFinite()) throw NumericError("tape op produced a non-finite value");
        Node n;
        n.kind = kind;
        n.a = a;
        n.b = b;
        n.value = std::move(value);
        n.requires_grad = leaf_grad || (a >= 0 && nodes_[a].requires_grad) ||
                          (b >= 0 && nodes_[b].requires_grad);
        nodes_.push_back(std::move(n));
        return Value{static_cast<int>(nodes_.size()) - 1};
    }

    std::vector<Node> nodes_;
};

/// Compares reverse-mode gradients against central finite differences on
/// randomly probed entries of `leaf0`. `build` receives a fresh tape and the
/// leaf handle and must return a scalar root. Returns the max relative error
/// |fd - ad| / max(1e-8, |fd|, |ad|) over the probes.
template <typename BuildFn>
double grad_check(BuildFn&& build, const Eigen::MatrixXd& leaf0, int n_probes, double h, Rng& rng) {
    Tape tape;
    Value leaf = tape.input(leaf0);
    Value root = build(tape, leaf);
    if (tape.value(root).size() != 1) throw Error("grad_check: build must return a scalar");
    tape.backward(root);
    const Eigen::MatrixXd ad = tape.grad(leaf);

    auto eval = [&](const Eigen::MatrixXd& x) {
        Tape t2;
        Value l2 = t2.input(x);
        return t2.value(build(t2, l2))(0, 0);
    };
    double max_err = 0.0;
    for (int p = 0; p < n_probes; ++p) {
        const auto i = static_cast<Eigen::Index>(rng.below(static_cast<uint64_t>(leaf0.rows())));
        const auto j = static_cast<Eigen::Index>(rng.below(static_cast<uint64_t>(leaf0.cols())));
        Eigen::MatrixXd plus = leaf0, minus = leaf0;
        plus(i, j) += h;
        minus(i, j) -= h;
        const double fd = (eval(plus) - eval(minus)) / (2.0 * h);
        const double err = std::abs(fd - ad(i, j)) / std::max({1e-8, std::abs(fd), std::abs(ad(i, j))});
        max_err = std::max(max_err, err);
    }
    return max_err;
}

}  // namespace ad
}  // namespace specmatch
