#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "specmatch/common.hpp"

namespace specmatch {

static_assert(std::endian::native == std::endian::little,
              "container payloads are little-endian float64; big-endian hosts unsupported");

/// Binary tensor container: an 8-byte magic, a u64 header length, a JSON
/// header, then densely packed little-endian float64 payloads. The header
/// carries format_version, arbitrary metadata, and a tensor directory with
/// per-tensor {name, rows, cols, offset} where offset counts doubles from the
/// start of the payload section. Tensors are stored row-major.
class Container {
public:
    static constexpr char kMagic[8] = {'S', 'P', 'M', 'T', 'N', 'S', 'R', '1'};
    static constexpr int kFormatVersion = 1;

    nlohmann::json meta;  // header fields besides format_version/tensors

    void add(const std::string& name, const Eigen::MatrixXd& t) {
        if (index_.count(name)) throw DataError("container: duplicate tensor '" + name + "'");
        index_[name] = tensors_.size();
        tensors_.push_back({name, t});
    }

    bool has(const std::string& name) const { return index_.count(name) != 0; }

    const Eigen::MatrixXd& get(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw DataError("container: missing tensor '" + name + "'");
        return tensors_[it->second].data;
    }

    std::vector<std::string> names() const {
        std::vector<std::string> out;
        out.reserve(tensors_.size());
        for (const auto& t : tensors_) out.push_back(t.name);
        return out;
    }

    std::string serialize() const {
        nlohmann::json header = meta;
        header["format_version"] = kFormatVersion;
        nlohmann::json dir = nlohmann::json::array();
        std::uint64_t offset = 0;
        for (const auto& t : tensors_) {
            dir.push_back({{"name", t.name},
                           {"rows", t.data.rows()},
                           {"cols", t.data.cols()},
                           {"offset", offset}});
            offset += static_cast<std::uint64_t>(t.data.size());
        }
        header["tensors"] = dir;
        const std::string hjson = header.dump();

        std::string out;
        out.reserve(sizeof(kMagic) + 8 + hjson.size() + offset * 8);
        out.append(kMagic, sizeof(kMagic));
        std::uint64_t hlen = hjson.size();
        out.append(reinterpret_cast<const char*>(&hlen), 8);
        out.append(hjson);
        for (const auto& t : tensors_) {
            // row-major on disk regardless of Eigen's default column-major storage
            Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm = t.data;
            out.append(reinterpret_cast<const char*>(rm.data()),
                       static_cast<std::size_t>(rm.size()) * 8);
        }
        return out;
    }

    void save(const std::filesystem::path& path) const { atomic_write_file(path, serialize()); }

    static Container deserialize(const std::string& bytes, const std::string& what) {
        Container c;
        if (bytes.size() < sizeof(kMagic) + 8 || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0)
            throw DataError(what + ": not a tensor container");
        std::uint64_t hlen = 0;
        std::memcpy(&hlen, bytes.data() + sizeof(kMagic), 8);
        std::size_t payload_start = sizeof(kMagic) + 8 + hlen;
        if (payload_start > bytes.size()) throw DataError(what + ": truncated header");
        nlohmann::json header;
        try {
            header = nlohmann::json::parse(bytes.substr(sizeof(kMagic) + 8, hlen));
        } catch (const nlohmann::json::exception& e) {
            throw DataError(what + ": bad header JSON: " + e.what());
        }
        if (!header.contains("format_version") || header["format_version"].get<int>() != kFormatVersion)
            throw DataError(what + ": unsupported format_version");
        for (const auto& entry : header["tensors"]) {
            const std::string name = entry["name"].get<std::string>();
            const auto rows = entry["rows"].get<Eigen::Index>();
            const auto cols = entry["cols"].get<Eigen::Index>();
            const auto offset = entry["offset"].get<std::uint64_t>();
            const std::size_t begin = payload_start + offset * 8;
            const std::size_t count = static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols);
            if (begin + count * 8 > bytes.size()) throw DataError(what + ": truncated payload for '" + name + "'");
            Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm(rows, cols);
            std::memcpy(rm.data(), bytes.data() + begin, count * 8);
            c.add(name, rm);
        }
        header.erase("tensors");
        header.erase("format_version");
        c.meta = header;
        return c;
    }

    static Container load(const std::filesystem::path& path) {
        return deserialize(read_file(path), path.string());
    }

private:
    struct Tensor {
        std::string name;
        Eigen::MatrixXd data;
    };
    std::vector<Tensor> tensors_;
    std::map<std::string, std::size_t> index_;
};

}  // namespace specmatch
