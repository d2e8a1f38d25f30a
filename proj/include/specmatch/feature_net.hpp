#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "specmatch/common.hpp"
#include "specmatch/container.hpp"
#include "specmatch/spectral.hpp"
#include "specmatch/tape.hpp"

namespace specmatch {

/// Architecture of the feature extractor: input_dim descriptor channels are
/// lifted to `width`, passed through `blocks` diffusion blocks (learned
/// per-channel spectral diffusion, a two-layer pointwise MLP, and a residual
/// connection), and emitted at `width` channels.
struct NetConfig {
    int input_dim = 16;
    int width = 128;
    int blocks = 4;

    bool operator==(const NetConfig&) const = default;
};

inline void to_json(nlohmann::json& j, const NetConfig& c) {
    j = {{"input_dim", c.input_dim}, {"width", c.width}, {"blocks", c.blocks}};
}
inline void from_json(const nlohmann::json& j, NetConfig& c) {
    j.at("input_dim").get_to(c.input_dim);
    j.at("width").get_to(c.width);
    j.at("blocks").get_to(c.blocks);
}

/// Learnable parameters. Diffusion times are stored pre-softplus (t_raw), so
/// any real value maps to a strictly positive time. All matrices are stored
/// with biases as 1 x width rows to match the tape's add_row op.
struct NetParams {
    struct Block {
        Eigen::MatrixXd t_raw;   // 1 x width
        Eigen::MatrixXd w1, b1;  // width x width, 1 x width
        Eigen::MatrixXd w2, b2;
    };
    NetConfig config;
    Eigen::MatrixXd lift_w;  // input_dim x width
    Eigen::MatrixXd lift_b;  // 1 x width
    std::vector<Block> blocks;

    /// Visits every tensor in the canonical order used for initialization,
    /// checkpoints, optimizer state, and gradient staging.
    template <typename Self, typename Fn>
    static void for_each_tensor_impl(Self& self, Fn&& fn) {
        fn("lift.w", self.lift_w);
        fn("lift.b", self.lift_b);
        for (std::size_t b = 0; b < self.blocks.size(); ++b) {
            const std::string prefix = "block" + std::to_string(b) + ".";
            fn(prefix + "t_raw", self.blocks[b].t_raw);
            fn(prefix + "w1", self.blocks[b].w1);
            fn(prefix + "b1", self.blocks[b].b1);
            fn(prefix + "w2", self.blocks[b].w2);
            fn(prefix + "b2", self.blocks[b].b2);
        }
    }
    template <typename Fn>
    void for_each_tensor(Fn&& fn) {
        for_each_tensor_impl(*this, fn);
    }
    template <typename Fn>
    void for_each_tensor(Fn&& fn) const {
        for_each_tensor_impl(*this, fn);
    }

    std::int64_t parameter_count() const {
        std::int64_t n = 0;
        for_each_tensor([&](const std::string&, const Eigen::MatrixXd& t) { n += t.size(); });
        return n;
    }
};

/// Seeded initialization: linear weights uniform in ±1/sqrt(fan_in), biases
/// zero, and t_raw chosen so softplus(t_raw) spans log-spaced diffusion
/// times in [1e-3, 1e-1] across channels.
inline NetParams init_params(const NetConfig& cfg, uint64_t seed) {
    if (cfg.input_dim < 1 || cfg.width < 1) throw ConfigError("init_params: widths must be positive");
    if (cfg.blocks < 1) throw ConfigError("init_params: block count must be >= 1");
    Rng rng(seed);
    auto uniform_matrix = [&](Eigen::Index rows, Eigen::Index cols) {
        const double s = 1.0 / std::sqrt(static_cast<double>(rows));
        Eigen::MatrixXd m(rows, cols);
        for (Eigen::Index i = 0; i < rows; ++i)
            for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = rng.uniform(-s, s);
        return m;
    };
    Eigen::MatrixXd t_raw(1, cfg.width);
    for (int j = 0; j < cfg.width; ++j) {
        const double lo = std::log(1e-3), hi = std::log(1e-1);
        const double y = std::exp(cfg.width == 1 ? lo : lo + (hi - lo) * j / (cfg.width - 1));
        t_raw(0, j) = std::log(std::expm1(y));  // softplus inverse
    }
    NetParams p;
    p.config = cfg;
    p.lift_w = uniform_matrix(cfg.input_dim, cfg.width);
    p.lift_b = Eigen::MatrixXd::Zero(1, cfg.width);
    p.blocks.resize(static_cast<std::size_t>(cfg.blocks));
    for (auto& b : p.blocks) {
        b.t_raw = t_raw;
        b.w1 = uniform_matrix(cfg.width, cfg.width);
        b.b1 = Eigen::MatrixXd::Zero(1, cfg.width);
        b.w2 = uniform_matrix(cfg.width, cfg.width);
        b.b2 = Eigen::MatrixXd::Zero(1, cfg.width);
    }
    return p;
}

/// Tape handles for one staged copy of the parameters, in canonical order.
/// After backward, read gradients off the same handles.
struct ParamNodes {
    std::vector<std::string> names;
    std::vector<ad::Value> values;
};

inline ParamNodes stage_params(ad::Tape& tape, const NetParams& params) {
    ParamNodes nodes;
    params.for_each_tensor([&](const std::string& name, const Eigen::MatrixXd& t) {
        nodes.names.push_back(name);
        nodes.values.push_back(tape.input(t));
    });
    return nodes;
}

/// Spectral heat diffusion of each column of f by its own time:
/// column j -> Phi diag(exp(-lambda t_j)) Phiᵀ A f[:, j]. Differentiable in
/// both f and the (already positive) times.
inline ad::Value diffuse(ad::Tape& tape, ad::Value f, const SpectralOperators& ops, ad::Value times) {
    if (tape.value(times).cols() != tape.value(f).cols())
        throw Error("diffuse: " + std::to_string(tape.value(f).cols()) + " channels but " +
                    std::to_string(tape.value(times).cols()) + " diffusion times");
    ad::Value coeff = tape.left_mul_const(ops.phi_pinv, f);           // k x c spectral coefficients
    ad::Value weights = tape.exp_neg_outer(ops.lambda, times);        // k x c heat attenuation
    return tape.left_mul_const(ops.phi, tape.hadamard(coeff, weights));
}

/// Full forward pass over staged parameters: lift, then per block
/// [diffuse -> linear -> relu -> linear -> residual]. Returns the |V| x width
/// feature node. Non-finite activations are reported with the block index.
inline ad::Value net_forward(ad::Tape& tape, const ParamNodes& nodes, const NetConfig& cfg,
                             const Eigen::MatrixXd& descriptors, const SpectralOperators& ops) {
    if (!descriptors.allFinite()) throw NumericError("net_forward: non-finite descriptor input");
    if (descriptors.cols() != cfg.input_dim)
        throw ConfigError("net_forward: descriptors have " + std::to_string(descriptors.cols()) +
                          " channels, config expects " + std::to_string(cfg.input_dim));
    // Canonical staging order: lift.w, lift.b, then 5 tensors per block.
    auto node = [&](std::size_t i) { return nodes.values.at(i); };
    ad::Value x = tape.add_row(tape.left_mul_const(descriptors, node(0)), node(1));
    for (int b = 0; b < cfg.blocks; ++b) {
        try {
            const std::size_t base = 2 + 5 * static_cast<std::size_t>(b);
            ad::Value times = tape.softplus(node(base));
            ad::Value d = diffuse(tape, x, ops, times);
            ad::Value h = tape.relu(tape.add_row(tape.matmul(d, node(base + 1)), node(base + 2)));
            ad::Value y = tape.add_row(tape.matmul(h, node(base + 3)), node(base + 4));
            x = tape.add(x, y);
        } catch (const NumericError& e) {
            throw NumericError("net_forward: block " + std::to_string(b) + ": " + e.what());
        }
    }
    return x;
}

/// Value-only forward (no gradients): stages onto a scratch tape.
inline Eigen::MatrixXd net_forward_values(const NetParams& params, const Eigen::MatrixXd& descriptors,
                                          const SpectralOperators& ops) {
    ad::Tape tape;
    ParamNodes nodes = stage_params(tape, params);
    return tape.value(net_forward(tape, nodes, params.config, descriptors, ops));
}

// ---- checkpoints ----

struct Checkpoint {
    NetParams params;
    uint64_t seed = 0;
    int epoch = 0;
};

inline void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
    Container c;
    c.meta = {{"config", ckpt.params.config}, {"seed", ckpt.seed}, {"epoch", ckpt.epoch}};
    ckpt.params.for_each_tensor(
        [&](const std::string& name, const Eigen::MatrixXd& t) { c.add(name, t); });
    c.save(path);
}

/// Loads a checkpoint; if `expect` is given, the stored config must equal it.
inline Checkpoint load_checkpoint(const std::filesystem::path& path, const NetConfig* expect = nullptr) {
    Container c = Container::load(path);
    Checkpoint ckpt;
    ckpt.params.config = c.meta.at("config").get<NetConfig>();
    ckpt.seed = c.meta.at("seed").get<uint64_t>();
    ckpt.epoch = c.meta.at("epoch").get<int>();
    if (expect && !(ckpt.params.config == *expect))
        throw ConfigError(path.string() + ": checkpoint config (input_dim=" +
                          std::to_string(ckpt.params.config.input_dim) + ", width=" +
                          std::to_string(ckpt.params.config.width) + ", blocks=" +
                          std::to_string(ckpt.params.config.blocks) + ") does not match the run config");
    const auto& cfg = ckpt.params.config;
    ckpt.params.blocks.resize(static_cast<std::size_t>(cfg.blocks));
    ckpt.params.for_each_tensor([&](const std::string& name, Eigen::MatrixXd& t) {
        t = c.get(name);
    });
    // Shape sanity after raw load
    ckpt.params.for_each_tensor([&](const std::string& name, const Eigen::MatrixXd& t) {
        if (!t.allFinite()) throw DataError(path.string() + ": non-finite tensor '" + name + "'");
    });
    if (ckpt.params.lift_w.rows() != cfg.input_dim || ckpt.params.lift_w.cols() != cfg.width)
        throw DataError(path.string() + ": lift weight shape does not match checkpoint config");
    return ckpt;
}

}  // namespace specmatch
