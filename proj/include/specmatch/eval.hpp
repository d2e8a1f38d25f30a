#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <queue>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "specmatch/common.hpp"
#include "specmatch/mesh.hpp"
#include "specmatch/shapes.hpp"

namespace specmatch {

/// All-pairs graph geodesic distances over a mesh's vertex-edge graph.
struct GeodesicTable {
    Eigen::MatrixXd dist;  // |V| x |V|, symmetric, zero diagonal
    std::string mesh_name;
};

/// Dijkstra from every source over the edge graph with Euclidean edge
/// lengths. Sources are distributed across threads up to the configured cap.
/// An unreachable vertex (disconnected mesh) is an error.
inline GeodesicTable geodesic_table(const Mesh& mesh) {
    const Eigen::Index n = mesh.num_vertices();
    std::vector<std::vector<std::pair<int, double>>> adj(static_cast<std::size_t>(n));
    auto add_edge = [&](int a, int b) {
        const double len = (mesh.V.row(a) - mesh.V.row(b)).norm();
        adj[static_cast<std::size_t>(a)].emplace_back(b, len);
    };
    for (Eigen::Index f = 0; f < mesh.F.rows(); ++f)
        for (int c = 0; c < 3; ++c) {
            const int a = mesh.F(f, c), b = mesh.F(f, (c + 1) % 3);
            add_edge(a, b);
            add_edge(b, a);
        }

    GeodesicTable table;
    table.mesh_name = mesh.name;
    table.dist.resize(n, n);
    auto run_sources = [&](Eigen::Index begin, Eigen::Index end) {
        using Entry = std::pair<double, int>;  // (distance, vertex)
        std::vector<double> d(static_cast<std::size_t>(n));
        for (Eigen::Index src = begin; src < end; ++src) {
            std::fill(d.begin(), d.end(), std::numeric_limits<double>::infinity());
            d[static_cast<std::size_t>(src)] = 0.0;
            std::priority_queue<Entry, std::vector<Entry>, std::greater<>> heap;
            heap.emplace(0.0, static_cast<int>(src));
            while (!heap.empty()) {
                const auto [du, u] = heap.top();
                heap.pop();
                if (du > d[static_cast<std::size_t>(u)]) continue;
                for (const auto& [v, len] : adj[static_cast<std::size_t>(u)]) {
                    const double cand = du + len;
                    if (cand < d[static_cast<std::size_t>(v)]) {
                        d[static_cast<std::size_t>(v)] = cand;
                        heap.emplace(cand, v);
                    }
                }
            }
            for (Eigen::Index v = 0; v < n; ++v) {
                if (!std::isfinite(d[static_cast<std::size_t>(v)]))
                    throw DataError("geodesic_table: vertex " + std::to_string(v) +
                                    " unreachable from vertex " + std::to_string(src) +
                                    "; mesh appears disconnected");
                table.dist(src, v) = d[static_cast<std::size_t>(v)];
            }
        }
    };
    const int threads = std::min<int>(max_threads(), static_cast<int>(n));
    if (threads <= 1) {
        run_sources(0, n);
    } else {
        std::vector<std::thread> pool;
        const Eigen::Index chunk = (n + threads - 1) / threads;
        for (int t = 0; t < threads; ++t)
            pool.emplace_back(run_sources, t * chunk, std::min<Eigen::Index>(n, (t + 1) * chunk));
        for (auto& th : pool) th.join();
    }
    return table;
}

/// Mean geodesic error, scaled by 100 and normalized by the square root of
/// the target's surface area (the usual way correspondence benchmarks
/// normalize for shape size): (100/|V_X|) Σ_x dist(pred(x), gt(x)) / sqrt(area).
inline double mean_geo_error(const Correspondence& pred, const Correspondence& gt,
                             const GeodesicTable& table, double target_area) {
    if (pred.size() != gt.size())
        throw DataError("mean_geo_error: prediction has " + std::to_string(pred.size()) +
                        " entries, ground truth " + std::to_string(gt.size()));
    if (!(target_area > 0.0)) throw DataError("mean_geo_error: target area must be positive");
    const double norm = std::sqrt(target_area);
    double total = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        if (pred[i] < 0 || pred[i] >= table.dist.rows() || gt[i] < 0 || gt[i] >= table.dist.rows())
            throw DataError("mean_geo_error: correspondence index out of range at row " +
                            std::to_string(i));
        total += table.dist(pred[i], gt[i]) / norm;
    }
    return 100.0 * total / static_cast<double>(pred.size());
}

/// Fraction of vertices whose normalized geodesic error is within each
/// threshold; nondecreasing in the threshold.
inline std::vector<std::pair<double, double>> pck_curve(const Correspondence& pred,
                                                        const Correspondence& gt,
                                                        const GeodesicTable& table, double target_area,
                                                        const std::vector<double>& thresholds) {
    for (std::size_t i = 1; i < thresholds.size(); ++i)
        if (thresholds[i] < thresholds[i - 1]) throw Error("pck_curve: thresholds must ascend");
    const double norm = std::sqrt(target_area);
    std::vector<std::pair<double, double>> curve;
    curve.reserve(thresholds.size());
    for (double th : thresholds) {
        std::size_t hits = 0;
        for (std::size_t i = 0; i < pred.size(); ++i)
            if (table.dist(pred[i], gt[i]) / norm <= th) ++hits;
        curve.emplace_back(th, static_cast<double>(hits) / static_cast<double>(pred.size()));
    }
    return curve;
}

// ---- pair manifests ----

struct PairEntry {
    std::filesystem::path source, target;
    std::optional<std::filesystem::path> gt;
};

/// A dataset description: mesh pairs plus a train/test role tag. Paths in
/// the JSON file are resolved relative to the manifest's directory.
struct PairManifest {
    std::vector<PairEntry> pairs;
    std::string role;  // "train" | "test"
};

inline PairManifest load_manifest(const std::filesystem::path& path) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(read_file(path));
    } catch (const nlohmann::json::exception& e) {
        throw DataError(path.string() + ": bad manifest JSON: " + e.what());
    }
    for (const auto& [key, _] : j.items())
        if (key != "pairs" && key != "role")
            throw DataError(path.string() + ": unknown manifest key '" + key + "'");
    PairManifest m;
    m.role = j.at("role").get<std::string>();
    if (m.role != "train" && m.role != "test")
        throw DataError(path.string() + ": role must be 'train' or 'test'");
    const auto base = path.has_parent_path() ? path.parent_path() : std::filesystem::path(".");
    for (const auto& entry : j.at("pairs")) {
        for (const auto& [key, _] : entry.items())
            if (key != "source" && key != "target" && key != "gt")
                throw DataError(path.string() + ": unknown pair key '" + key + "'");
        PairEntry pe;
        pe.source = base / entry.at("source").get<std::string>();
        pe.target = base / entry.at("target").get<std::string>();
        if (entry.contains("gt")) pe.gt = base / entry.at("gt").get<std::string>();
        for (const auto& p : {pe.source, pe.target})
            if (!std::filesystem::exists(p))
                throw DataError(path.string() + ": referenced mesh does not exist: " + p.string());
        if (pe.gt && !std::filesystem::exists(*pe.gt))
            throw DataError(path.string() + ": referenced ground truth does not exist: " + pe.gt->string());
        m.pairs.push_back(std::move(pe));
    }
    if (m.pairs.empty()) throw DataError(path.string() + ": manifest lists no pairs");
    return m;
}

inline void save_manifest(const PairManifest& m, const std::filesystem::path& path) {
    nlohmann::json pairs = nlohmann::json::array();
    const auto base = path.has_parent_path() ? path.parent_path() : std::filesystem::path(".");
    for (const auto& pe : m.pairs) {
        nlohmann::json e = {{"source", std::filesystem::relative(pe.source, base).generic_string()},
                            {"target", std::filesystem::relative(pe.target, base).generic_string()}};
        if (pe.gt) e["gt"] = std::filesystem::relative(*pe.gt, base).generic_string();
        pairs.push_back(e);
    }
    atomic_write_file(path, nlohmann::json{{"pairs", pairs}, {"role", m.role}}.dump(2) + "\n");
}

// ---- synthetic near-isometric pairs ----

enum class SynthFamily { bent_cylinder, bumpy_sphere };

inline SynthFamily synth_family_from_string(const std::string& s) {
    if (s == "bent_cylinder") return SynthFamily::bent_cylinder;
    if (s == "bumpy_sphere") return SynthFamily::bumpy_sphere;
    throw ConfigError("unknown synthetic family '" + s + "' (expected bent_cylinder or bumpy_sphere)");
}

struct SynthPair {
    Mesh source, target;
    Correspondence gt;  // identity by construction
};

namespace detail {

/// Largest per-edge length ratio distortion between two meshes with shared
/// connectivity, as max(r, 1/r) - 1 over edges.
inline double edge_distortion(const Mesh& a, const Mesh& b) {
    double worst = 0.0;
    for (Eigen::Index f = 0; f < a.F.rows(); ++f)
        for (int c = 0; c < 3; ++c) {
            const int i = a.F(f, c), j = a.F(f, (c + 1) % 3);
            const double la = (a.V.row(i) - a.V.row(j)).norm();
            const double lb = (b.V.row(i) - b.V.row(j)).norm();
            const double r = lb / la;
            worst = std::max(worst, std::max(r, 1.0 / r) - 1.0);
        }
    return worst;
}

/// Cylinder whose cross-section radius varies along and around the axis,
/// deterministically from the seed. The angular variation makes the shape
/// asymmetric so intrinsic descriptors can tell vertices apart.
inline Mesh irregular_cylinder(int n_seg, int n_rings, double length, Rng& rng) {
    const double base_r = 0.45;
    // Low-frequency random profile, fixed per seed.
    const double a1 = rng.uniform(0.04, 0.10), p1 = rng.uniform(0.0, 6.28318);
    const double a2 = rng.uniform(0.03, 0.08), p2 = rng.uniform(0.0, 6.28318);
    const double b1 = rng.uniform(0.05, 0.11), q1 = rng.uniform(0.0, 6.28318);
    Mesh m = shapes::capped_cylinder(n_seg, n_rings, length, base_r);
    for (Eigen::Index i = 0; i < m.V.rows(); ++i) {
        const double x = m.V(i, 0), y = m.V(i, 1);
        const double r = std::hypot(x, y);
        if (r < 1e-12) continue;  // cap centres stay on the axis
        const double t = m.V(i, 2) / length;
        const double th = std::atan2(y, x);
        const double scale = 1.0 + a1 * std::sin(2.0 * 3.14159265358979324 * t + p1) +
                             a2 * std::sin(4.0 * 3.14159265358979324 * t + p2) +
                             b1 * std::sin(th + q1) * t;
        m.V(i, 0) = x * scale;
        m.V(i, 1) = y * scale;
    }
    return m;
}

/// Bends a cylinder-like mesh: the z axis is wrapped onto a circular arc of
/// total angle `angle`, cross-sections rotating rigidly with the tangent.
/// Near-isometric for moderate angles (fiber strain ~ radius * angle / length).
inline void bend_along_arc(Mesh& m, double length, double angle) {
    if (std::abs(angle) < 1e-12) return;
    const double arc_r = length / angle;
    for (Eigen::Index i = 0; i < m.V.rows(); ++i) {
        const double x = m.V(i, 0), z = m.V(i, 2);
        const double phi = angle * (z / length);
        // Point at axial height z and offset x bends around a circle of
        // radius arc_r centred at (-arc_r, *, 0).
        m.V(i, 0) = (arc_r + x) * std::cos(phi) - arc_r;
        m.V(i, 2) = (arc_r + x) * std::sin(phi);
    }
}

/// Sphere with a deterministic field of Gaussian radial bumps.
inline void apply_bumps(Mesh& m, Rng& rng, int n_bumps, double amp_lo, double amp_hi) {
    std::vector<Eigen::Vector3d> centers;
    std::vector<double> amps, sigmas;
    for (int b = 0; b < n_bumps; ++b) {
        Eigen::Vector3d c(rng.normal(), rng.normal(), rng.normal());
        centers.push_back(c.normalized());
        amps.push_back(rng.uniform(amp_lo, amp_hi) * (rng.uniform() < 0.5 ? -1.0 : 1.0));
        sigmas.push_back(rng.uniform(0.35, 0.6));
    }
    for (Eigen::Index i = 0; i < m.V.rows(); ++i) {
        const Eigen::Vector3d p = m.V.row(i).normalized();
        double scale = 1.0;
        for (int b = 0; b < n_bumps; ++b)
            scale += amps[b] * std::exp(-(p - centers[b]).squaredNorm() / (sigmas[b] * sigmas[b]));
        m.V.row(i) = m.V.row(i) * scale;
    }
}

}  // namespace detail

/// Generates a source mesh and a smoothly deformed target with identical
/// connectivity (ground truth = identity). `deform` controls the bend angle
/// (radians) for bent_cylinder and the bump amplitude for bumpy_sphere;
/// zero means the target equals the source. Parameters whose per-edge
/// length distortion exceeds 15% are rejected.
inline SynthPair synth_pair(SynthFamily family, int resolution, double deform, uint64_t seed) {
    if (resolution < 100) throw ConfigError("synth_pair: resolution must be >= 100");
    Rng rng(seed ^ 0xc2f7a94be15d6803ULL);
    SynthPair out;
    if (family == SynthFamily::bent_cylinder) {
        // 2 + n_seg * n_rings vertices; pick a roughly square grid.
        const int n_seg = std::max(8, static_cast<int>(std::round(std::sqrt(resolution / 2.2))));
        const int n_rings = std::max(4, (resolution - 2 + n_seg - 1) / n_seg);
        const double length = 3.0;
        out.source = detail::irregular_cylinder(n_seg, n_rings, length, rng);
        out.target = out.source;
        detail::bend_along_arc(out.target, length, deform);
    } else {
        const int n_seg = std::max(8, static_cast<int>(std::round(std::sqrt(2.0 * resolution))));
        const int n_rings = std::max(4, (resolution - 2 + n_seg - 1) / n_seg + 1);
        out.source = shapes::uv_sphere(n_seg, n_rings);
        detail::apply_bumps(out.source, rng, 6, 0.06, 0.14);  // fixed asymmetry, shared by the pair
        out.target = out.source;
        if (deform != 0.0) {
            Rng bump_rng(seed ^ 0x51b392c4d87fe621ULL);
            detail::apply_bumps(out.target, bump_rng, 4, 0.5 * deform, deform);
        }
    }
    const std::string tag = (family == SynthFamily::bent_cylinder ? "bent_cylinder_" : "bumpy_sphere_") +
                            std::to_string(seed);
    out.source.name = tag + "_a";
    out.target.name = tag + "_b";
    validate_mesh(out.source, "synth_pair source");
    validate_mesh(out.target, "synth_pair target");
    const double distortion = detail::edge_distortion(out.source, out.target);
    if (distortion > 0.15)
        throw ConfigError("synth_pair: deform parameters give edge distortion " +
                          std::to_string(distortion) + " > 0.15; reduce deform");
    out.gt.resize(static_cast<std::size_t>(out.source.num_vertices()));
    for (std::size_t i = 0; i < out.gt.size(); ++i) out.gt[i] = static_cast<int>(i);
    return out;
}

}  // namespace specmatch
