#pragma once

// On-disk containers.
//
// Dataset: magic "PSEQ", u32 format version, u32 JSON header length, header
// {m, N, D, schema}, m*N*D little-endian float64 frame values (sequence-major,
// then frame, then pixel), then one JSON label line per sequence.
//
// Images: binary PGM (P5). Reading accepts 8- and 16-bit (16-bit samples are
// big-endian per the format); writing always emits 8-bit. Pixel values are
// scaled to [0, 1] on read.
//
// All writes are atomic (temp file + rename).

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <filesystem>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "penc/datagen.hpp"
#include "penc/io_util.hpp"
#include "penc/model.hpp"

namespace penc {

inline constexpr std::uint32_t kDatasetFormatVersion = 1;
inline constexpr char kDatasetMagic[5] = "PSEQ";

struct StoredDataset {
    std::vector<FrameSequence> sequences;
    std::vector<nlohmann::json> labels; // one object per sequence
    std::string schema;                 // "transform" | "chirp" | "none"
};

inline nlohmann::json to_label_json(const TransformLabel& label) {
    switch (label.kind) {
        case TransformLabel::Kind::translation:
            return {{"kind", "translation"}, {"dx", label.dx}, {"dy", label.dy}};
        case TransformLabel::Kind::rotation:
            return {{"kind", "rotation"}, {"dtheta", label.dtheta}};
        case TransformLabel::Kind::scaling:
            return {{"kind", "scaling"}, {"ratio", label.ratio}};
    }
    throw InvalidArgument("to_label_json: unknown label kind");
}

inline TransformLabel transform_label_from_json(const nlohmann::json& j) {
    TransformLabel label;
    const std::string kind = j.at("kind").get<std::string>();
    if (kind == "translation") {
        label.kind = TransformLabel::Kind::translation;
        label.dx = j.at("dx").get<double>();
        label.dy = j.at("dy").get<double>();
    } else if (kind == "rotation") {
        label.kind = TransformLabel::Kind::rotation;
        label.dtheta = j.at("dtheta").get<double>();
    } else if (kind == "scaling") {
        label.kind = TransformLabel::Kind::scaling;
        label.ratio = j.at("ratio").get<double>();
    } else {
        throw IoError("unknown transform label kind: " + kind);
    }
    return label;
}

inline nlohmann::json to_label_json(const ChirpSequence& chirp) {
    return {{"kind", "chirp"}, {"f0", chirp.f0}, {"f1", chirp.f1}, {"phase", chirp.phase}};
}

inline std::string serialize_dataset(const StoredDataset& ds) {
    const std::size_t m = ds.sequences.size();
    if (ds.labels.size() != m)
        throw InconsistentShapes("serialize_dataset: one label per sequence required");
    int n_frames = 0;
    Eigen::Index dim = 0;
    if (m > 0) {
        n_frames = ds.sequences.front().size();
        dim = ds.sequences.front().dim();
    }
    for (const auto& seq : ds.sequences) {
        seq.validate();
        if (!seq.fully_observed())
            throw InvalidArgument("serialize_dataset: sequences must be fully observed");
        if (seq.size() != n_frames || seq.dim() != dim)
            throw InconsistentShapes("serialize_dataset: sequences must share frame count and dim");
    }

    nlohmann::json header;
    header["m"] = m;
    header["N"] = n_frames;
    header["D"] = dim;
    header["schema"] = ds.schema;
    const std::string header_bytes = header.dump();

    std::string out;
    out.append(kDatasetMagic, 4);
    append_u32(out, kDatasetFormatVersion);
    append_u32(out, static_cast<std::uint32_t>(header_bytes.size()));
    out += header_bytes;
    for (const auto& seq : ds.sequences)
        for (const auto& frame : seq.frames)
            for (Eigen::Index i = 0; i < frame.size(); ++i) append_f64(out, frame(i));
    for (const auto& label : ds.labels) {
        out += label.dump();
        out += '\n';
    }
    return out;
}

inline StoredDataset deserialize_dataset(const std::string& bytes) {
    ByteReader reader(bytes);
    if (reader.take(4, "magic") != std::string(kDatasetMagic, 4))
        throw IoError("not a PSEQ dataset (bad magic)");
    const std::uint32_t version = reader.take_u32("format version");
    if (version != kDatasetFormatVersion)
        throw IoError("unsupported dataset version " + std::to_string(version));
    const std::uint32_t header_len = reader.take_u32("header length");

    StoredDataset ds;
    std::size_t m = 0;
    int n_frames = 0;
    Eigen::Index dim = 0;
    try {
        const nlohmann::json header = nlohmann::json::parse(reader.take(header_len, "JSON header"));
        m = header.at("m").get<std::size_t>();
        n_frames = header.at("N").get<int>();
        dim = header.at("D").get<Eigen::Index>();
        ds.schema = header.at("schema").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
        throw IoError(std::string("dataset header error: ") + e.what());
    }
    if (m > 0 && (n_frames < 1 || dim < 1)) throw IoError("dataset header has non-positive shape");

    ds.sequences.reserve(m);
    for (std::size_t s = 0; s < m; ++s) {
        FrameSequence seq;
        seq.frames.assign(static_cast<std::size_t>(n_frames), Vector(dim));
        for (int t = 0; t < n_frames; ++t)
            for (Eigen::Index i = 0; i < dim; ++i)
                seq.frames[static_cast<std::size_t>(t)](i) = reader.take_f64("frame data");
        seq.observed.assign(static_cast<std::size_t>(n_frames), 1);
        ds.sequences.push_back(std::move(seq));
    }

    std::istringstream lines(reader.take(reader.remaining(), "label lines"));
    std::string line;
    while (std::getline(lines, line)) {
        if (line.empty()) continue;
        try {
            ds.labels.push_back(nlohmann::json::parse(line));
        } catch (const nlohmann::json::exception& e) {
            throw IoError(std::string("dataset label parse error: ") + e.what());
        }
    }
    if (ds.labels.size() != m) throw IoError("dataset label count does not match header");
    return ds;
}

inline void save_dataset(const std::filesystem::path& path, const StoredDataset& ds) {
    atomic_write_file(path, serialize_dataset(ds));
}

inline StoredDataset load_dataset(const std::filesystem::path& path) {
    return deserialize_dataset(read_file_bytes(path));
}

namespace detail {

inline void skip_pgm_whitespace(const std::string& bytes, std::size_t& pos) {
    while (pos < bytes.size()) {
        const char c = bytes[pos];
        if (c == '#') {
            while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
        } else if (std::isspace(static_cast<unsigned char>(c))) {
            ++pos;
        } else {
            break;
        }
    }
}

inline long read_pgm_int(const std::string& bytes, std::size_t& pos) {
    skip_pgm_whitespace(bytes, pos);
    std::size_t start = pos;
    while (pos < bytes.size() && std::isdigit(static_cast<unsigned char>(bytes[pos]))) ++pos;
    if (pos == start) throw IoError("PGM header: expected integer");
    return std::stol(bytes.substr(start, pos - start));
}

} // namespace detail

/// Reads a binary PGM (P5). Returns pixel values scaled to [0, 1].
inline Image read_pgm(const std::filesystem::path& path) {
    const std::string bytes = read_file_bytes(path);
    if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '5')
        throw IoError("not a binary PGM (P5): " + path.string());
    std::size_t pos = 2;
    const long width = detail::read_pgm_int(bytes, pos);
    const long height = detail::read_pgm_int(bytes, pos);
    const long maxval = detail::read_pgm_int(bytes, pos);
    if (width < 1 || height < 1 || maxval < 1 || maxval > 65535)
        throw IoError("PGM header out of range: " + path.string());
    if (pos >= bytes.size() || !std::isspace(static_cast<unsigned char>(bytes[pos])))
        throw IoError("PGM header: missing separator: " + path.string());
    ++pos; // single whitespace byte before the raster

    const bool wide = maxval > 255;
    const std::size_t need = static_cast<std::size_t>(width) * static_cast<std::size_t>(height) *
                             (wide ? 2 : 1);
    if (bytes.size() - pos < need) throw IoError("PGM raster truncated: " + path.string());

    Image img(height, width);
    for (long r = 0; r < height; ++r)
        for (long c = 0; c < width; ++c) {
            long v;
            if (wide) {
                // 16-bit samples are big-endian.
                v = (static_cast<long>(static_cast<unsigned char>(bytes[pos])) << 8) |
                    static_cast<long>(static_cast<unsigned char>(bytes[pos + 1]));
                pos += 2;
            } else {
                v = static_cast<unsigned char>(bytes[pos]);
                ++pos;
            }
            img(r, c) = static_cast<double>(v) / static_cast<double>(maxval);
        }
    return img;
}

/// Writes an 8-bit binary PGM. Values are expected in [0, 255]; they are
/// rounded to nearest and clamped.
inline void write_pgm(const std::filesystem::path& path, const Image& img) {
    if (img.rows() < 1 || img.cols() < 1) throw InvalidArgument("write_pgm: empty image");
    std::string out = "P5\n" + std::to_string(img.cols()) + " " + std::to_string(img.rows()) +
                      "\n255\n";
    out.reserve(out.size() + static_cast<std::size_t>(img.size()));
    for (Eigen::Index r = 0; r < img.rows(); ++r)
        for (Eigen::Index c = 0; c < img.cols(); ++c) {
            const double v = std::min(255.0, std::max(0.0, std::round(img(r, c))));
            out.push_back(static_cast<char>(static_cast<unsigned char>(v)));
        }
    atomic_write_file(path, out);
}

/// Loads every .pgm in a directory, sorted by filename for determinism.
inline std::vector<Image> load_image_bank(const std::filesystem::path& dir) {
    if (!std::filesystem::is_directory(dir))
        throw IoError("image bank is not a directory: " + dir.string());
    std::vector<std::filesystem::path> files;
    for (const auto& entry : std::filesystem::directory_iterator(dir))
        if (entry.is_regular_file() && entry.path().extension() == ".pgm")
            files.push_back(entry.path());
    if (files.empty()) throw EmptyImageBank("no .pgm files in " + dir.string());
    std::sort(files.begin(), files.end());
    std::vector<Image> bank;
    bank.reserve(files.size());
    for (const auto& f : files) bank.push_back(read_pgm(f));
    return bank;
}

/// %.17g rendering; round-trips every double exactly.
inline std::string format_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

/// RFC 4180 field quoting.
inline std::string csv_escape(const std::string& field) {
    if (field.find_first_of(",\"\n\r") == std::string::npos) return field;
    std::string out = "\"";
    for (char c : field) {
        if (c == '"') out += "\"\"";
        else out.push_back(c);
    }
    out += '"';
    return out;
}

inline std::string csv_from_rows(const std::vector<std::vector<std::string>>& rows) {
    std::string out;
    for (const auto& row : rows) {
        for (std::size_t i = 0; i < row.size(); ++i) {
            if (i) out += ',';
            out += csv_escape(row[i]);
        }
        out += '\n';
    }
    return out;
}

inline void write_csv(const std::filesystem::path& path,
                      const std::vector<std::vector<std::string>>& rows) {
    atomic_write_file(path, csv_from_rows(rows));
}

} // namespace penc
