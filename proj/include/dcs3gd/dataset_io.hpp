#pragma once

// Dataset persistence. The binary layout (all integers and floats
// little-endian, IEEE-754 binary64) is documented in docs/dataset_format.md:
//
//   offset  size  field
//   0       8     magic "DCS3DATA"
//   8       4     u32 version (1)
//   12      4     u32 label kind (0 = regression target, 1 = class index)
//   16      8     u64 sample count n
//   24      8     u64 feature dimension d
//   32      8     u64 class count (0 for regression)
//   40      8*n*d f64 features, row-major
//   ...     n*4   i32 labels            (label kind 1)
//           n*8   f64 targets           (label kind 0)

#include <algorithm>
#include <array>
#include <bit>
#include <charconv>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <type_traits>
#include <vector>

#include <fmt/format.h>

#include "dcs3gd/errors.hpp"
#include "dcs3gd/models.hpp"

namespace dcs3gd {

struct DatasetFile {
    Dataset samples;
    bool classification = true;
    std::size_t dimension = 0;
    std::size_t n_classes = 0;
};

namespace detail {

inline constexpr std::array<char, 8> kDatasetMagic{'D', 'C', 'S', '3', 'D', 'A', 'T', 'A'};

template <typename T>
void put_le(std::ostream& out, T value) {
    static_assert(std::is_trivially_copyable_v<T>);
    std::array<unsigned char, sizeof(T)> bytes{};
    std::memcpy(bytes.data(), &value, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
    out.write(reinterpret_cast<const char*>(bytes.data()), sizeof(T));
}

template <typename T>
T get_le(std::istream& in) {
    std::array<unsigned char, sizeof(T)> bytes{};
    if (!in.read(reinterpret_cast<char*>(bytes.data()), sizeof(T)))
        throw IoError("dataset file truncated");
    if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
    T value;
    std::memcpy(&value, bytes.data(), sizeof(T));
    return value;
}

inline double parse_double(std::string_view text, std::size_t line) {
    double v = 0.0;
    const auto* end = text.data() + text.size();
    auto [ptr, ec] = std::from_chars(text.data(), end, v);
    if (ec != std::errc{} || ptr != end)
        throw IoError("CSV line " + std::to_string(line) + ": bad number '" + std::string(text) + "'");
    return v;
}

}  // namespace detail

inline void write_dataset_binary(const DatasetFile& file, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    out.write(detail::kDatasetMagic.data(), detail::kDatasetMagic.size());
    detail::put_le<std::uint32_t>(out, 1);
    detail::put_le<std::uint32_t>(out, file.classification ? 1 : 0);
    detail::put_le<std::uint64_t>(out, file.samples.size());
    detail::put_le<std::uint64_t>(out, file.dimension);
    detail::put_le<std::uint64_t>(out, file.classification ? file.n_classes : 0);
    for (const auto& s : file.samples) {
        if (s.features.size() != file.dimension) throw LengthMismatch(file.dimension, s.features.size());
        for (double x : s.features) detail::put_le<double>(out, x);
    }
    for (const auto& s : file.samples) {
        if (file.classification)
            detail::put_le<std::int32_t>(out, s.label);
        else
            detail::put_le<double>(out, s.target);
    }
    if (!out) throw IoError("write failed: " + path.string());
}

inline DatasetFile read_dataset_binary(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::array<char, 8> magic{};
    if (!in.read(magic.data(), magic.size()) || magic != detail::kDatasetMagic)
        throw IoError(path.string() + ": not a dataset file (bad magic)");
    if (detail::get_le<std::uint32_t>(in) != 1) throw IoError(path.string() + ": unsupported version");
    DatasetFile file;
    const auto kind = detail::get_le<std::uint32_t>(in);
    if (kind > 1) throw IoError(path.string() + ": bad label kind");
    file.classification = kind == 1;
    const auto n = detail::get_le<std::uint64_t>(in);
    file.dimension = detail::get_le<std::uint64_t>(in);
    file.n_classes = detail::get_le<std::uint64_t>(in);
    // Check the header against the file size before allocating anything.
    const std::uint64_t label_bytes = file.classification ? 4 : 8;
    const std::uint64_t actual = std::filesystem::file_size(path);
    if (file.dimension != 0 && n > (actual / 8) / file.dimension)
        throw IoError(path.string() + ": header counts exceed the file size");
    if (40 + n * file.dimension * 8 + n * label_bytes != actual)
        throw IoError(path.string() + ": file size does not match header counts");
    file.samples.resize(n);
    for (auto& s : file.samples) {
        s.features.resize(file.dimension);
        for (double& x : s.features) x = detail::get_le<double>(in);
    }
    for (auto& s : file.samples) {
        if (file.classification) {
            s.label = detail::get_le<std::int32_t>(in);
            if (s.label < 0 || static_cast<std::size_t>(s.label) >= file.n_classes)
                throw IoError(path.string() + ": label out of range");
        } else {
            s.target = detail::get_le<double>(in);
        }
    }
    if (in.peek() != std::char_traits<char>::eof()) throw IoError(path.string() + ": trailing bytes");
    return file;
}

/// CSV with header f0..f{d-1},label (or target); shortest round-trip floats.
inline void write_dataset_csv(const DatasetFile& file, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    for (std::size_t k = 0; k < file.dimension; ++k) out << 'f' << k << ',';
    out << (file.classification ? "label" : "target") << '\n';
    for (const auto& s : file.samples) {
        for (double x : s.features) out << fmt::format("{},", x);
        if (file.classification)
            out << s.label << '\n';
        else
            out << fmt::format("{}\n", s.target);
    }
    if (!out) throw IoError("write failed: " + path.string());
}

inline DatasetFile read_dataset_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    std::string line;
    if (!std::getline(in, line)) throw IoError(path.string() + ": empty CSV");
    DatasetFile file;
    std::vector<std::string> header;
    {
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) header.push_back(cell);
    }
    if (header.empty() || (header.back() != "label" && header.back() != "target"))
        throw IoError(path.string() + ": last CSV column must be 'label' or 'target'");
    file.classification = header.back() == "label";
    file.dimension = header.size() - 1;
    std::size_t line_no = 1;
    int max_label = -1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        Sample s;
        std::stringstream ss(line);
        std::string cell;
        std::vector<std::string> cells;
        while (std::getline(ss, cell, ',')) cells.push_back(cell);
        if (cells.size() != header.size())
            throw IoError("CSV line " + std::to_string(line_no) + ": expected " + std::to_string(header.size()) +
                          " columns");
        for (std::size_t k = 0; k < file.dimension; ++k) s.features.push_back(detail::parse_double(cells[k], line_no));
        const double last = detail::parse_double(cells.back(), line_no);
        if (file.classification) {
            s.label = static_cast<int>(last);
            if (s.label < 0 || static_cast<double>(s.label) != last)
                throw IoError("CSV line " + std::to_string(line_no) + ": label must be a non-negative integer");
            max_label = std::max(max_label, s.label);
        } else {
            s.target = last;
        }
        file.samples.push_back(std::move(s));
    }
    file.n_classes = file.classification ? static_cast<std::size_t>(max_label + 1) : 0;
    return file;
}

/// Dispatches on extension: ".csv" is CSV, anything else binary.
inline DatasetFile read_dataset(const std::filesystem::path& path) {
    return path.extension() == ".csv" ? read_dataset_csv(path) : read_dataset_binary(path);
}

inline void write_dataset(const DatasetFile& file, const std::filesystem::path& path) {
    if (path.extension() == ".csv")
        write_dataset_csv(file, path);
    else
        write_dataset_binary(file, path);
}

}  // namespace dcs3gd
