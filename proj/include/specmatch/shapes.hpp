#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <numbers>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "specmatch/mesh.hpp"

namespace specmatch {
namespace shapes {

/// Regular tetrahedron with unit edge length (total surface area sqrt(3)).
inline Mesh tetrahedron() {
    Mesh m;
    const double s = 1.0 / (2.0 * std::sqrt(2.0));
    m.V.resize(4, 3);
    m.V << s, s, s, s, -s, -s, -s, s, -s, -s, -s, s;
    m.F.resize(4, 3);
    m.F << 0, 1, 2, 0, 2, 3, 0, 3, 1, 1, 3, 2;  // outward-oriented
    m.name = "tetrahedron";
    return m;
}

/// Unit icosphere: regular icosahedron refined `subdivisions` times, each
/// level splitting every triangle in four and projecting new vertices onto
/// the sphere. Vertex count is 10*4^s + 2 (12, 42, 162, 642, ...).
inline Mesh icosphere(int subdivisions) {
    const double t = (1.0 + std::sqrt(5.0)) / 2.0;
    std::vector<Eigen::Vector3d> verts = {
        {-1, t, 0}, {1, t, 0}, {-1, -t, 0}, {1, -t, 0}, {0, -1, t},  {0, 1, t},
        {0, -1, -t}, {0, 1, -t}, {t, 0, -1}, {t, 0, 1}, {-t, 0, -1}, {-t, 0, 1}};
    for (auto& v : verts) v.normalize();
    std::vector<Eigen::Vector3i> faces = {
        {0, 11, 5}, {0, 5, 1},  {0, 1, 7},   {0, 7, 10}, {0, 10, 11}, {1, 5, 9},  {5, 11, 4},
        {11, 10, 2}, {10, 7, 6}, {7, 1, 8},  {3, 9, 4},  {3, 4, 2},   {3, 2, 6},  {3, 6, 8},
        {3, 8, 9},  {4, 9, 5},  {2, 4, 11}, {6, 2, 10},  {8, 6, 7},  {9, 8, 1}};
    for (int level = 0; level < subdivisions; ++level) {
        std::map<std::pair<int, int>, int> midpoint;
        auto mid = [&](int a, int b) {
            auto key = std::minmax(a, b);
            auto it = midpoint.find(key);
            if (it != midpoint.end()) return it->second;
            const int idx = static_cast<int>(verts.size());
            verts.push_back((verts[a] + verts[b]).normalized());
            midpoint[key] = idx;
            return idx;
        };
        std::vector<Eigen::Vector3i> next;
        next.reserve(faces.size() * 4);
        for (const auto& f : faces) {
            const int ab = mid(f[0], f[1]), bc = mid(f[1], f[2]), ca = mid(f[2], f[0]);
            next.push_back({f[0], ab, ca});
            next.push_back({f[1], bc, ab});
            next.push_back({f[2], ca, bc});
            next.push_back({ab, bc, ca});
        }
        faces = std::move(next);
    }
    Mesh m;
    m.V.resize(static_cast<Eigen::Index>(verts.size()), 3);
    for (std::size_t i = 0; i < verts.size(); ++i) m.V.row(static_cast<Eigen::Index>(i)) = verts[i];
    m.F.resize(static_cast<Eigen::Index>(faces.size()), 3);
    for (std::size_t i = 0; i < faces.size(); ++i) m.F.row(static_cast<Eigen::Index>(i)) = faces[i];
    m.name = "icosphere" + std::to_string(subdivisions);
    return m;
}

/// Planar strip of `w` unit quads, each split into two triangles. Vertices
/// 0..w form the bottom row at y=0 (so the graph geodesic from vertex 0 to
/// vertex j is exactly j), vertices w+1..2w+1 the top row at y=1.
inline Mesh strip(int w) {
    Mesh m;
    m.V.resize(2 * (w + 1), 3);
    for (int j = 0; j <= w; ++j) {
        m.V.row(j) << j, 0.0, 0.0;
        m.V.row(w + 1 + j) << j, 1.0, 0.0;
    }
    m.F.resize(2 * w, 3);
    for (int j = 0; j < w; ++j) {
        const int bl = j, br = j + 1, tl = w + 1 + j, tr = w + 2 + j;
        m.F.row(2 * j) << bl, br, tr;
        m.F.row(2 * j + 1) << bl, tr, tl;
    }
    m.name = "strip" + std::to_string(w);
    return m;
}

/// Latitude/longitude sphere: two poles plus (n_rings-1) rings of n_seg
/// vertices. Less symmetric than the icosphere (pole fans), handy when a
/// test wants a sphere without the icosahedral eigenvalue multiplicities.
inline Mesh uv_sphere(int n_seg, int n_rings, double radius = 1.0) {
    using std::numbers::pi;
    Mesh m;
    const int n_inner = n_rings - 1;
    m.V.resize(2 + n_inner * n_seg, 3);
    m.V.row(0) << 0, 0, radius;
    for (int r = 0; r < n_inner; ++r) {
        const double phi = pi * (r + 1) / n_rings;
        for (int s = 0; s < n_seg; ++s) {
            const double th = 2.0 * pi * s / n_seg;
            m.V.row(1 + r * n_seg + s) << radius * std::sin(phi) * std::cos(th),
                radius * std::sin(phi) * std::sin(th), radius * std::cos(phi);
        }
    }
    const int south = 1 + n_inner * n_seg;
    m.V.row(south) << 0, 0, -radius;
    std::vector<Eigen::Vector3i> faces;
    auto ring = [&](int r, int s) { return 1 + r * n_seg + (s % n_seg); };
    for (int s = 0; s < n_seg; ++s) faces.push_back({0, ring(0, s), ring(0, s + 1)});
    for (int r = 0; r + 1 < n_inner; ++r)
        for (int s = 0; s < n_seg; ++s) {
            faces.push_back({ring(r, s), ring(r + 1, s), ring(r + 1, s + 1)});
            faces.push_back({ring(r, s), ring(r + 1, s + 1), ring(r, s + 1)});
        }
    for (int s = 0; s < n_seg; ++s) faces.push_back({south, ring(n_inner - 1, s + 1), ring(n_inner - 1, s)});
    m.F.resize(static_cast<Eigen::Index>(faces.size()), 3);
    for (std::size_t i = 0; i < faces.size(); ++i) m.F.row(static_cast<Eigen::Index>(i)) = faces[i];
    m.name = "uv_sphere";
    return m;
}

/// Closed cylinder along +z with `n_rings` cross-section rings and pole-
/// centred caps. The cross-section radius at normalized height t in [0,1]
/// is radius_of(t), which lets callers shape the profile.
template <typename RadiusFn>
Mesh capped_cylinder(int n_seg, int n_rings, double length, RadiusFn&& radius_of) {
    using std::numbers::pi;
    Mesh m;
    m.V.resize(2 + n_rings * n_seg, 3);
    m.V.row(0) << 0, 0, 0;  // bottom cap centre
    for (int r = 0; r < n_rings; ++r) {
        const double t = n_rings == 1 ? 0.5 : static_cast<double>(r) / (n_rings - 1);
        const double rad = radius_of(t);
        for (int s = 0; s < n_seg; ++s) {
            const double th = 2.0 * pi * s / n_seg;
            m.V.row(1 + r * n_seg + s) << rad * std::cos(th), rad * std::sin(th), t * length;
        }
    }
    const int top = 1 + n_rings * n_seg;
    m.V.row(top) << 0, 0, length;
    std::vector<Eigen::Vector3i> faces;
    auto ring = [&](int r, int s) { return 1 + r * n_seg + (s % n_seg); };
    for (int s = 0; s < n_seg; ++s) faces.push_back({0, ring(0, s + 1), ring(0, s)});
    for (int r = 0; r + 1 < n_rings; ++r)
        for (int s = 0; s < n_seg; ++s) {
            faces.push_back({ring(r, s), ring(r, s + 1), ring(r + 1, s + 1)});
            faces.push_back({ring(r, s), ring(r + 1, s + 1), ring(r + 1, s)});
        }
    for (int s = 0; s < n_seg; ++s) faces.push_back({top, ring(n_rings - 1, s), ring(n_rings - 1, s + 1)});
    m.F.resize(static_cast<Eigen::Index>(faces.size()), 3);
    for (std::size_t i = 0; i < faces.size(); ++i) m.F.row(static_cast<Eigen::Index>(i)) = faces[i];
    m.name = "capped_cylinder";
    return m;
}

inline Mesh capped_cylinder(int n_seg, int n_rings, double length, double radius) {
    return capped_cylinder(n_seg, n_rings, length, [radius](double) { return radius; });
}

}  // namespace shapes
}  // namespace specmatch
