#pragma once

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cstdio>
#include <filesystem>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "specmatch/common.hpp"

namespace specmatch {

/// Triangle mesh: vertex positions (n x 3) and triangle indices (m x 3, 0-based).
struct Mesh {
    Eigen::MatrixX3d V;
    Eigen::MatrixX3i F;
    std::string name;  // stem of the source file, or a generator tag

    Eigen::Index num_vertices() const { return V.rows(); }
    Eigen::Index num_triangles() const { return F.rows(); }
};

/// Vertex-to-vertex correspondence: row i maps source vertex i to target
/// vertex rows[i]. Stored on disk as one 0-based integer per line.
using Correspondence = std::vector<int>;

inline double triangle_area(const Eigen::Vector3d& a, const Eigen::Vector3d& b,
                            const Eigen::Vector3d& c) {
    return 0.5 * (b - a).cross(c - a).norm();
}

inline double total_area(const Mesh& m) {
    double area = 0.0;
    for (Eigen::Index f = 0; f < m.F.rows(); ++f)
        area += triangle_area(m.V.row(m.F(f, 0)), m.V.row(m.F(f, 1)), m.V.row(m.F(f, 2)));
    return area;
}

/// Validates the structural invariants every mesh must satisfy after load or
/// construction: at least 4 vertices and 1 triangle, indices in range and
/// pairwise distinct within each triangle, every triangle area above 1e-12,
/// and all coordinates finite.
inline void validate_mesh(const Mesh& m, const std::string& what) {
    if (m.V.rows() < 4) throw DataError(what + ": mesh has " + std::to_string(m.V.rows()) + " vertices, need >= 4");
    if (m.F.rows() < 1) throw DataError(what + ": mesh has no triangles");
    if (!m.V.allFinite()) throw DataError(what + ": non-finite vertex coordinate");
    const int n = static_cast<int>(m.V.rows());
    for (Eigen::Index f = 0; f < m.F.rows(); ++f) {
        const int i = m.F(f, 0), j = m.F(f, 1), k = m.F(f, 2);
        if (i < 0 || j < 0 || k < 0 || i >= n || j >= n || k >= n)
            throw DataError(what + ": triangle " + std::to_string(f) + " has out-of-range vertex index");
        if (i == j || j == k || i == k)
            throw DataError(what + ": triangle " + std::to_string(f) + " has repeated vertex indices");
        const double area = triangle_area(m.V.row(i), m.V.row(j), m.V.row(k));
        if (!(area > 1e-12))
            throw DataError(what + ": triangle " + std::to_string(f) + " is degenerate (area " +
                            std::to_string(area) + ")");
    }
}

namespace detail {

/// Line-oriented tokenizer that strips comments and tracks line numbers so
/// parse errors can point at the offending line.
class LineReader {
public:
    LineReader(const std::string& text, std::string what, char comment)
        : text_(text), what_(std::move(what)), comment_(comment) {}

    // Next non-empty line with comments removed; false at EOF.
    bool next_line(std::vector<std::string>& tokens) {
        tokens.clear();
        while (pos_ < text_.size()) {
            std::size_t eol = text_.find('\n', pos_);
            if (eol == std::string::npos) eol = text_.size();
            std::string line = text_.substr(pos_, eol - pos_);
            pos_ = eol + 1;
            ++lineno_;
            if (std::size_t h = line.find(comment_); h != std::string::npos) line.resize(h);
            std::istringstream ss(line);
            std::string tok;
            while (ss >> tok) tokens.push_back(tok);
            if (!tokens.empty()) return true;
        }
        return false;
    }

    [[noreturn]] void fail(const std::string& msg) const {
        throw DataError(what_ + ":" + std::to_string(lineno_) + ": " + msg);
    }

    double parse_double(const std::string& tok) const {
        try {
            std::size_t used = 0;
            double v = std::stod(tok, &used);
            if (used != tok.size()) fail("bad number '" + tok + "'");
            return v;
        } catch (const std::logic_error&) {
            fail("bad number '" + tok + "'");
        }
    }

    long parse_int(const std::string& tok) const {
        long v = 0;
        auto [p, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
        if (ec != std::errc{} || p != tok.data() + tok.size()) fail("bad integer '" + tok + "'");
        return v;
    }

    int lineno() const { return lineno_; }

private:
    const std::string& text_;
    std::string what_;
    char comment_;
    std::size_t pos_ = 0;
    int lineno_ = 0;
};

inline Mesh parse_off(const std::string& text, const std::string& what) {
    LineReader rd(text, what, '#');
    std::vector<std::string> t;
    if (!rd.next_line(t)) rd.fail("empty file");
    // The OFF keyword may share a line with the counts.
    if (t[0] != "OFF" && t[0] != "off") rd.fail("missing OFF header");
    t.erase(t.begin());
    if (t.empty() && !rd.next_line(t)) rd.fail("missing vertex/face counts");
    if (t.size() < 2) rd.fail("expected vertex and face counts");
    const long nv = rd.parse_int(t[0]);
    const long nf = rd.parse_int(t[1]);
    if (nv < 0 || nf < 0) rd.fail("negative counts");
    Mesh m;
    m.V.resize(nv, 3);
    m.F.resize(nf, 3);
    for (long i = 0; i < nv; ++i) {
        if (!rd.next_line(t)) rd.fail("unexpected end of file in vertex list");
        if (t.size() < 3) rd.fail("vertex needs 3 coordinates");
        for (int c = 0; c < 3; ++c) m.V(i, c) = rd.parse_double(t[c]);
    }
    for (long f = 0; f < nf; ++f) {
        if (!rd.next_line(t)) rd.fail("unexpected end of file in face list");
        const long arity = rd.parse_int(t[0]);
        if (arity != 3) rd.fail("only triangle faces supported, got face of size " + std::to_string(arity));
        if (t.size() < 4) rd.fail("face needs 3 vertex indices");
        for (int c = 0; c < 3; ++c) m.F(f, c) = static_cast<int>(rd.parse_int(t[c + 1]));
    }
    return m;
}

inline Mesh parse_obj(const std::string& text, const std::string& what) {
    LineReader rd(text, what, '#');
    std::vector<std::string> t;
    std::vector<Eigen::Vector3d> verts;
    std::vector<Eigen::Vector3i> tris;
    while (rd.next_line(t)) {
        if (t[0] == "v") {
            if (t.size() < 4) rd.fail("vertex needs 3 coordinates");
            verts.emplace_back(rd.parse_double(t[1]), rd.parse_double(t[2]), rd.parse_double(t[3]));
        } else if (t[0] == "f") {
            if (t.size() != 4) rd.fail("only triangle faces supported, got face of size " +
                                       std::to_string(t.size() - 1));
            Eigen::Vector3i tri;
            for (int c = 0; c < 3; ++c) {
                // "f v", "f v/vt", "f v/vt/vn", "f v//vn" — keep the vertex index only
                std::string tok = t[c + 1];
                if (std::size_t slash = tok.find('/'); slash != std::string::npos) tok.resize(slash);
                long idx = rd.parse_int(tok);
                if (idx < 0) idx = static_cast<long>(verts.size()) + idx + 1;  // negative = relative
                if (idx < 1) rd.fail("face index out of range");
                tri[c] = static_cast<int>(idx - 1);  // 1-based to 0-based
            }
            tris.push_back(tri);
        }
        // vn/vt/usemtl/etc. are ignored
    }
    Mesh m;
    m.V.resize(static_cast<Eigen::Index>(verts.size()), 3);
    for (std::size_t i = 0; i < verts.size(); ++i) m.V.row(static_cast<Eigen::Index>(i)) = verts[i];
    m.F.resize(static_cast<Eigen::Index>(tris.size()), 3);
    for (std::size_t i = 0; i < tris.size(); ++i) m.F.row(static_cast<Eigen::Index>(i)) = tris[i];
    return m;
}

inline Mesh parse_ply(const std::string& text, const std::string& what) {
    LineReader rd(text, what, '\0');
    std::vector<std::string> t;
    if (!rd.next_line(t) || t[0] != "ply") rd.fail("missing ply header");
    long nv = -1, nf = -1;
    std::string current_element;
    int vertex_props = 0;        // properties declared before x/y/z check
    int xi = -1, yi = -1, zi = -1;
    bool header_done = false;
    while (rd.next_line(t)) {
        if (t[0] == "format") {
            if (t.size() < 2 || t[1] != "ascii")
                rd.fail("binary ply is not supported; convert to ascii");
        } else if (t[0] == "element") {
            if (t.size() < 3) rd.fail("bad element declaration");
            current_element = t[1];
            if (t[1] == "vertex") nv = rd.parse_int(t[2]);
            else if (t[1] == "face") nf = rd.parse_int(t[2]);
        } else if (t[0] == "property") {
            if (current_element == "vertex" && t.size() >= 3 && t[1] != "list") {
                if (t[2] == "x") xi = vertex_props;
                if (t[2] == "y") yi = vertex_props;
                if (t[2] == "z") zi = vertex_props;
                ++vertex_props;
            }
        } else if (t[0] == "end_header") {
            header_done = true;
            break;
        }
        // comment/obj_info ignored
    }
    if (!header_done) rd.fail("missing end_header");
    if (nv < 0) rd.fail("missing vertex element");
    if (nf < 0) rd.fail("missing face element");
    if (xi < 0 || yi < 0 || zi < 0) rd.fail("vertex element lacks x/y/z properties");
    Mesh m;
    m.V.resize(nv, 3);
    m.F.resize(nf, 3);
    for (long i = 0; i < nv; ++i) {
        if (!rd.next_line(t)) rd.fail("unexpected end of file in vertex list");
        if (static_cast<int>(t.size()) < vertex_props) rd.fail("short vertex line");
        m.V(i, 0) = rd.parse_double(t[xi]);
        m.V(i, 1) = rd.parse_double(t[yi]);
        m.V(i, 2) = rd.parse_double(t[zi]);
    }
    for (long f = 0; f < nf; ++f) {
        if (!rd.next_line(t)) rd.fail("unexpected end of file in face list");
        const long arity = rd.parse_int(t[0]);
        if (arity != 3) rd.fail("only triangle faces supported, got face of size " + std::to_string(arity));
        if (t.size() < 4) rd.fail("face needs 3 vertex indices");
        for (int c = 0; c < 3; ++c) m.F(f, c) = static_cast<int>(rd.parse_int(t[c + 1]));
    }
    return m;
}

inline std::string lower_ext(const std::filesystem::path& path) {
    std::string ext = path.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return ext;
}

inline std::string fmt_g17(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace detail

/// Loads a triangle mesh from .off, .obj, or ASCII .ply, chosen by extension.
/// The result is validated; errors carry the file name and, for parse
/// problems, the line number.
inline Mesh load_mesh(const std::filesystem::path& path) {
    const std::string text = read_file(path);
    const std::string ext = detail::lower_ext(path);
    Mesh m;
    if (ext == ".off") m = detail::parse_off(text, path.string());
    else if (ext == ".obj") m = detail::parse_obj(text, path.string());
    else if (ext == ".ply") m = detail::parse_ply(text, path.string());
    else throw DataError(path.string() + ": unsupported mesh extension '" + ext + "'");
    m.name = path.stem().string();
    validate_mesh(m, path.string());
    return m;
}

/// Writes a mesh in the format implied by the extension. Coordinates are
/// printed with %.17g so a load/save round trip preserves positions to
/// double precision.
inline void write_mesh(const Mesh& m, const std::filesystem::path& path) {
    const std::string ext = detail::lower_ext(path);
    std::string out;
    out.reserve(static_cast<std::size_t>(m.V.rows()) * 48 + static_cast<std::size_t>(m.F.rows()) * 24);
    auto vline = [&](Eigen::Index i, const char* prefix) {
        out += prefix;
        for (int c = 0; c < 3; ++c) {
            out += detail::fmt_g17(m.V(i, c));
            out += c < 2 ? " " : "\n";
        }
    };
    if (ext == ".off") {
        out += "OFF\n";
        out += std::to_string(m.V.rows()) + " " + std::to_string(m.F.rows()) + " 0\n";
        for (Eigen::Index i = 0; i < m.V.rows(); ++i) vline(i, "");
        for (Eigen::Index f = 0; f < m.F.rows(); ++f)
            out += "3 " + std::to_string(m.F(f, 0)) + " " + std::to_string(m.F(f, 1)) + " " +
                   std::to_string(m.F(f, 2)) + "\n";
    } else if (ext == ".obj") {
        for (Eigen::Index i = 0; i < m.V.rows(); ++i) vline(i, "v ");
        for (Eigen::Index f = 0; f < m.F.rows(); ++f)
            out += "f " + std::to_string(m.F(f, 0) + 1) + " " + std::to_string(m.F(f, 1) + 1) + " " +
                   std::to_string(m.F(f, 2) + 1) + "\n";
    } else if (ext == ".ply") {
        out += "ply\nformat ascii 1.0\n";
        out += "element vertex " + std::to_string(m.V.rows()) + "\n";
        out += "property double x\nproperty double y\nproperty double z\n";
        out += "element face " + std::to_string(m.F.rows()) + "\n";
        out += "property list uchar int vertex_indices\nend_header\n";
        for (Eigen::Index i = 0; i < m.V.rows(); ++i) vline(i, "");
        for (Eigen::Index f = 0; f < m.F.rows(); ++f)
            out += "3 " + std::to_string(m.F(f, 0)) + " " + std::to_string(m.F(f, 1)) + " " +
                   std::to_string(m.F(f, 2)) + "\n";
    } else {
        throw DataError(path.string() + ": unsupported mesh extension '" + ext + "'");
    }
    atomic_write_file(path, out);
}

/// Correspondence files hold one 0-based target vertex index per line.
inline Correspondence load_correspondence(const std::filesystem::path& path) {
    const std::string text = read_file(path);
    detail::LineReader rd(text, path.string(), '#');
    std::vector<std::string> t;
    Correspondence corr;
    while (rd.next_line(t)) {
        if (t.size() != 1) rd.fail("expected one index per line");
        const long idx = rd.parse_int(t[0]);
        if (idx < 0) rd.fail("negative vertex index");
        corr.push_back(static_cast<int>(idx));
    }
    if (corr.empty()) throw DataError(path.string() + ": empty correspondence file");
    return corr;
}

inline void write_correspondence(const Correspondence& corr, const std::filesystem::path& path) {
    std::string out;
    out.reserve(corr.size() * 7);
    for (int idx : corr) out += std::to_string(idx) + "\n";
    atomic_write_file(path, out);
}

}  // namespace specmatch
