#pragma once

// Model checkpoints.
//
// Layout: magic "PENC", u32 format version, u32 JSON header length, the JSON
// header {num_frames, hidden, dim, context, neighborhood, energy}, then the
// filter banks W_1..W_N followed by Wz as raw little-endian float64, row-major
// within each matrix. Doubles are stored by bit pattern, so save/load
// round-trips are bit-exact.

#include <filesystem>
#include <string>

#include <json.hpp>

#include "penc/io_util.hpp"
#include "penc/model.hpp"

namespace penc {

inline constexpr std::uint32_t kCheckpointFormatVersion = 1;
inline constexpr char kCheckpointMagic[5] = "PENC";

struct Checkpoint {
    ModelParams params;
    NeighborhoodSpec neighborhood;
    EnergyConfig energy;
};

namespace detail {

inline void append_matrix_rowmajor(std::string& out, const Matrix& m) {
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j = 0; j < m.cols(); ++j) append_f64(out, m(i, j));
}

inline Matrix read_matrix_rowmajor(ByteReader& reader, Eigen::Index rows, Eigen::Index cols) {
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i)
        for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = reader.take_f64("matrix data");
    return m;
}

} // namespace detail

inline std::string serialize_checkpoint(const Checkpoint& ckpt) {
    ckpt.params.validate();
    ckpt.neighborhood.validate();
    ckpt.energy.validate();
    if (ckpt.neighborhood.num_frames() != ckpt.params.num_frames())
        throw InconsistentShapes("checkpoint: neighborhood frame count must match params");

    nlohmann::json header;
    header["num_frames"] = ckpt.params.num_frames();
    header["hidden"] = ckpt.params.hidden_dim();
    header["dim"] = ckpt.params.frame_dim();
    header["context"] = ckpt.params.context_dim();
    header["neighborhood"] = ckpt.neighborhood.neighbors;
    header["energy"] = {{"lambda", ckpt.energy.lambda}, {"l1_eps", ckpt.energy.l1_eps}};
    const std::string header_bytes = header.dump();

    std::string out;
    out.append(kCheckpointMagic, 4);
    append_u32(out, kCheckpointFormatVersion);
    append_u32(out, static_cast<std::uint32_t>(header_bytes.size()));
    out += header_bytes;
    for (const auto& Wt : ckpt.params.W) detail::append_matrix_rowmajor(out, Wt);
    detail::append_matrix_rowmajor(out, ckpt.params.Wz);
    return out;
}

inline Checkpoint deserialize_checkpoint(const std::string& bytes) {
    ByteReader reader(bytes);
    if (reader.take(4, "magic") != std::string(kCheckpointMagic, 4))
        throw IoError("not a PENC checkpoint (bad magic)");
    const std::uint32_t version = reader.take_u32("format version");
    if (version != kCheckpointFormatVersion)
        throw IoError("unsupported checkpoint version " + std::to_string(version));
    const std::uint32_t header_len = reader.take_u32("header length");

    nlohmann::json header;
    try {
        header = nlohmann::json::parse(reader.take(header_len, "JSON header"));
    } catch (const nlohmann::json::exception& e) {
        throw IoError(std::string("checkpoint header parse error: ") + e.what());
    }

    Checkpoint ckpt;
    try {
        const int n = header.at("num_frames").get<int>();
        const auto hidden = header.at("hidden").get<Eigen::Index>();
        const auto dim = header.at("dim").get<Eigen::Index>();
        const auto context = header.at("context").get<Eigen::Index>();
        ckpt.neighborhood.neighbors = header.at("neighborhood").get<std::vector<std::vector<int>>>();
        ckpt.energy.lambda = header.at("energy").at("lambda").get<double>();
        ckpt.energy.l1_eps = header.at("energy").at("l1_eps").get<double>();
        if (n < 2 || hidden < 1 || dim < 1 || context < 1)
            throw IoError("checkpoint header has non-positive shape");
        ckpt.params.W.reserve(static_cast<std::size_t>(n));
        for (int t = 0; t < n; ++t)
            ckpt.params.W.push_back(detail::read_matrix_rowmajor(reader, hidden, dim));
        ckpt.params.Wz = detail::read_matrix_rowmajor(reader, hidden, context);
    } catch (const nlohmann::json::exception& e) {
        throw IoError(std::string("checkpoint header field error: ") + e.what());
    }
    if (reader.remaining() != 0) throw IoError("checkpoint has trailing bytes");
    ckpt.params.validate();
    ckpt.neighborhood.validate();
    ckpt.energy.validate();
    if (ckpt.neighborhood.num_frames() != ckpt.params.num_frames())
        throw IoError("checkpoint neighborhood frame count mismatch");
    return ckpt;
}

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
    atomic_write_file(path, serialize_checkpoint(ckpt));
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
    return deserialize_checkpoint(read_file_bytes(path));
}

} // namespace penc
