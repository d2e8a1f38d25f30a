#pragma once

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "specmatch/common.hpp"
#include "specmatch/contrastive.hpp"
#include "specmatch/feature_net.hpp"
#include "specmatch/fmap.hpp"
#include "specmatch/spectral.hpp"

namespace specmatch {

/// Everything the optimization loop needs to know. `epochs` has no sensible
/// default and must be set explicitly. pair_policy "all" walks the supplied
/// pair list in order each epoch; "random_subset" draws pairs_per_epoch
/// pairs per epoch from the seeded generator.
struct TrainConfig {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    int epochs = 0;  // required
    std::string pair_policy = "all";
    int pairs_per_epoch = 0;  // for random_subset
    uint64_t seed = 0;
    double alpha = 0.07;  // soft-map temperature
    LossConfig loss;
    bool disable_cross = false;
    bool disable_self = false;
    bool baseline_losses_mode = false;  // structural losses instead of contrastive
    BaselineConfig baseline;
    bool clip_grads = true;
    double clip_norm = 10.0;
    int checkpoint_every = 0;  // epochs between intermediate checkpoints; 0 = final only
    int parallel_pairs = 1;    // tapes evaluated concurrently per update
    NetConfig net;
};

inline void validate(const TrainConfig& cfg) {
    if (!(cfg.learning_rate > 0.0)) throw ConfigError("train config: learning_rate must be > 0");
    if (cfg.epochs < 1) throw ConfigError("train config: epochs must be >= 1");
    if (cfg.pair_policy != "all" && cfg.pair_policy != "random_subset")
        throw ConfigError("train config: pair_policy must be 'all' or 'random_subset'");
    if (cfg.pair_policy == "random_subset" && cfg.pairs_per_epoch < 1)
        throw ConfigError("train config: random_subset policy needs pairs_per_epoch >= 1");
    if (!(cfg.alpha > 0.0)) throw ConfigError("train config: alpha must be > 0");
    if (cfg.clip_grads && !(cfg.clip_norm > 0.0))
        throw ConfigError("train config: clip_norm must be > 0");
    if (cfg.parallel_pairs < 1) throw ConfigError("train config: parallel_pairs must be >= 1");
    validate(cfg.loss);
    validate(cfg.baseline);
}

/// Adam moment buffers, one pair per parameter tensor in canonical order.
struct OptimizerState {
    std::vector<Eigen::MatrixXd> m, v;
    long step = 0;
};

inline OptimizerState init_optimizer(const NetParams& params) {
    OptimizerState s;
    params.for_each_tensor([&](const std::string&, const Eigen::MatrixXd& t) {
        s.m.push_back(Eigen::MatrixXd::Zero(t.rows(), t.cols()));
        s.v.push_back(Eigen::MatrixXd::Zero(t.rows(), t.cols()));
    });
    return s;
}

/// One bias-corrected Adam update. grads follow the canonical tensor order;
/// a non-finite gradient aborts with the offending parameter's name.
inline void adam_step(NetParams& params, const std::vector<Eigen::MatrixXd>& grads,
                      OptimizerState& state, const TrainConfig& cfg) {
    state.step += 1;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
    std::size_t i = 0;
    params.for_each_tensor([&](const std::string& name, Eigen::MatrixXd& t) {
        const Eigen::MatrixXd& g = grads.at(i);
        if (g.rows() != t.rows() || g.cols() != t.cols())
            throw Error("adam_step: gradient shape mismatch for " + name);
        if (!g.allFinite()) throw NumericError("adam_step: non-finite gradient for parameter " + name);
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g.cwiseProduct(g);
        const Eigen::MatrixXd mhat = state.m[i] / bc1;
        const Eigen::MatrixXd vhat = state.v[i] / bc2;
        t -= cfg.learning_rate *
             mhat.cwiseQuotient(vhat.cwiseSqrt() + Eigen::MatrixXd::Constant(t.rows(), t.cols(),
                                                                             cfg.adam_eps));
        ++i;
    });
}

/// One mesh ready for training: cached spectral operators plus the input
/// descriptor matrix (HKS columns).
struct TrainItem {
    std::string name;
    SpectralOperators ops;
    Eigen::MatrixXd descriptors;
};

struct TrainResult {
    NetParams params;
    std::string metrics_csv;
    int iterations = 0;
};

namespace detail {

struct PairEval {
    double cross = 0.0, self = 0.0, align = 0.0, total = 0.0;
    std::vector<Eigen::MatrixXd> grads;
};

/// Forward + backward for one (X, Y) pair on a private tape. Both map
/// directions contribute; align losses are averaged. In baseline mode the
/// contrastive terms are replaced by the structural losses.
inline PairEval eval_pair(const NetParams& params, const TrainItem& x, const TrainItem& y,
                          const TrainConfig& cfg) {
    ad::Tape tape;
    ParamNodes nodes = stage_params(tape, params);
    ad::Value fx = net_forward(tape, nodes, params.config, x.descriptors, x.ops);
    ad::Value fy = net_forward(tape, nodes, params.config, y.descriptors, y.ops);

    SoftMap pi_xy = soft_map(tape, fx, fy, cfg.alpha);
    SoftMap pi_yx = soft_map(tape, fy, fx, cfg.alpha);
    FunctionalMap c_yx = fmap_from_pmap(tape, pi_xy, x.ops, y.ops);
    FunctionalMap c_xy = fmap_from_pmap(tape, pi_yx, y.ops, x.ops);
    ad::Value align = tape.scale(tape.add(align_loss(tape, x.ops, pi_xy, y.ops, c_yx),
                                          align_loss(tape, y.ops, pi_yx, x.ops, c_xy)),
                                 0.5);

    PairEval out;
    ad::Value total;
    if (cfg.baseline_losses_mode) {
        BaselineLosses bl = baseline_losses(tape, c_yx, c_xy, pi_xy, x.ops, y.ops);
        total = tape.add(tape.add(tape.scale(bl.bi, cfg.baseline.theta_bi),
                                  tape.scale(bl.or_, cfg.baseline.theta_or)),
                         tape.scale(align, cfg.loss.theta_align));
    } else {
        const bool use_cross = !cfg.disable_cross && cfg.loss.theta_cross > 0.0;
        const bool use_self = !cfg.disable_self && cfg.loss.theta_self > 0.0;
        total = tape.scale(align, cfg.loss.theta_align);
        if (use_cross || use_self) {
            ad::Value s_xy = cosine_similarity(tape, fx, fy);
            if (use_cross) {
                SimilaritySplit sp_xy = split_similarity(tape, s_xy, cfg.loss.p_c);
                SimilaritySplit sp_yx = split_similarity(tape, tape.transpose(s_xy), cfg.loss.p_c);
                ad::Value cross = tape.scale(tape.add(cross_loss(tape, sp_xy, cfg.loss.tau_c),
                                                      cross_loss(tape, sp_yx, cfg.loss.tau_c)),
                                             0.5);
                out.cross = tape.value(cross)(0, 0);
                total = tape.add(total, tape.scale(cross, cfg.loss.theta_cross));
            }
            if (use_self) {
                ad::Value self_ = tape.scale(tape.add(self_loss(tape, fx, cfg.loss.p_s, cfg.loss.tau_s),
                                                      self_loss(tape, fy, cfg.loss.p_s, cfg.loss.tau_s)),
                                             0.5);
                out.self = tape.value(self_)(0, 0);
                total = tape.add(total, tape.scale(self_, cfg.loss.theta_self));
            }
        }
    }
    out.align = tape.value(align)(0, 0);
    out.total = tape.value(total)(0, 0);
    tape.backward(total);
    out.grads.reserve(nodes.values.size());
    for (ad::Value v : nodes.values) {
        const Eigen::MatrixXd& g = tape.grad(v);
        out.grads.push_back(g.size() == 0
                                ? Eigen::MatrixXd::Zero(tape.value(v).rows(), tape.value(v).cols())
                                : g);
    }
    return out;
}

inline std::string g17(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace detail

/// Runs the full optimization loop and writes checkpoint.bin plus
/// metrics.csv into out_dir (atomically, at the end, so failures leave no
/// partial files). Single-threaded by default and bit-reproducible per seed;
/// parallel_pairs > 1 evaluates several pairs concurrently and applies their
/// summed gradients in one update (summation order is fixed by the
/// schedule, so results remain deterministic).
inline TrainResult train(const std::vector<TrainItem>& items,
                         const std::vector<std::pair<int, int>>& pair_list, const TrainConfig& cfg,
                         const std::filesystem::path& out_dir) {
    validate(cfg);
    if (items.empty()) throw DataError("train: no meshes");
    if (pair_list.empty()) throw DataError("train: no training pairs");
    for (const auto& [a, b] : pair_list)
        if (a < 0 || b < 0 || a >= static_cast<int>(items.size()) || b >= static_cast<int>(items.size()))
            throw DataError("train: pair index out of range");
    for (const auto& item : items) {
        if (item.ops.k < 2) throw DataError("train: mesh " + item.name + " has no usable spectra");
        if (item.descriptors.cols() != cfg.net.input_dim)
            throw ConfigError("train: mesh " + item.name + " has " +
                              std::to_string(item.descriptors.cols()) +
                              " descriptor channels, net expects " + std::to_string(cfg.net.input_dim));
    }

    NetParams params = init_params(cfg.net, cfg.seed);
    OptimizerState opt = init_optimizer(params);
    Rng schedule_rng(cfg.seed ^ 0x9c6ab1297d5e3af1ULL);

    std::string csv = "iter,pair,cross,self,align,total,grad_norm\n";
    int iter = 0;
    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        std::vector<std::size_t> schedule;
        if (cfg.pair_policy == "all") {
            schedule.resize(pair_list.size());
            for (std::size_t i = 0; i < schedule.size(); ++i) schedule[i] = i;
        } else {
            for (int i = 0; i < cfg.pairs_per_epoch; ++i)
                schedule.push_back(static_cast<std::size_t>(schedule_rng.below(pair_list.size())));
        }

        for (std::size_t s = 0; s < schedule.size();) {
            const std::size_t group = std::min<std::size_t>(cfg.parallel_pairs, schedule.size() - s);
            std::vector<detail::PairEval> evals(group);
            std::vector<std::string> pair_names(group);
            auto run_one = [&](std::size_t gi) {
                const auto& [ia, ib] = pair_list[schedule[s + gi]];
                pair_names[gi] = items[ia].name + "__" + items[ib].name;
                try {
                    evals[gi] = detail::eval_pair(params, items[ia], items[ib], cfg);
                } catch (const NumericError& e) {
                    throw NumericError("train: pair " + pair_names[gi] + ": " + e.what());
                }
            };
            if (group == 1) {
                run_one(0);
            } else {
                std::vector<std::thread> pool;
                std::vector<std::exception_ptr> errs(group);
                for (std::size_t gi = 0; gi < group; ++gi)
                    pool.emplace_back([&, gi] {
                        try {
                            run_one(gi);
                        } catch (...) {
                            errs[gi] = std::current_exception();
                        }
                    });
                for (auto& th : pool) th.join();
                for (auto& e : errs)
                    if (e) std::rethrow_exception(e);
            }

            std::vector<Eigen::MatrixXd> grads = std::move(evals[0].grads);
            for (std::size_t gi = 1; gi < group; ++gi)
                for (std::size_t t = 0; t < grads.size(); ++t) grads[t] += evals[gi].grads[t];

            double norm_sq = 0.0;
            for (const auto& g : grads) norm_sq += g.squaredNorm();
            const double grad_norm = std::sqrt(norm_sq);
            if (cfg.clip_grads && grad_norm > cfg.clip_norm)
                for (auto& g : grads) g *= cfg.clip_norm / grad_norm;
            adam_step(params, grads, opt, cfg);

            for (std::size_t gi = 0; gi < group; ++gi) {
                const auto& ev = evals[gi];
                csv += std::to_string(iter) + "," + pair_names[gi] + "," + detail::g17(ev.cross) + "," +
                       detail::g17(ev.self) + "," + detail::g17(ev.align) + "," + detail::g17(ev.total) +
                       "," + detail::g17(grad_norm) + "\n";
            }
            ++iter;
            s += group;
        }

        params.for_each_tensor([&](const std::string& name, const Eigen::MatrixXd& t) {
            if (!t.allFinite())
                throw NumericError("train: parameter " + name + " became non-finite in epoch " +
                                   std::to_string(epoch));
        });
        if (cfg.checkpoint_every > 0 && epoch % cfg.checkpoint_every == 0 && epoch != cfg.epochs)
            save_checkpoint({params, cfg.seed, epoch},
                            out_dir / ("checkpoint_epoch" + std::to_string(epoch) + ".bin"));
    }

    std::filesystem::create_directories(out_dir);
    save_checkpoint({params, cfg.seed, cfg.epochs}, out_dir / "checkpoint.bin");
    atomic_write_file(out_dir / "metrics.csv", csv);
    return TrainResult{std::move(params), std::move(csv), iter};
}

}  // namespace specmatch
