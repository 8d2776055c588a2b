#pragma once

#include <bit>
#include <charconv>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "plumekit/cube.hpp"
#include "plumekit/masks.hpp"
#include "plumekit/raster.hpp"
#include "plumekit/spectral.hpp"

namespace plumekit {

namespace detail {

inline std::vector<char> read_all_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw std::runtime_error("cannot open file: " + path.string());
    in.seekg(0, std::ios::end);
    const auto size = in.tellg();
    in.seekg(0, std::ios::beg);
    std::vector<char> bytes(static_cast<std::size_t>(size));
    if (size > 0)
        in.read(bytes.data(), size);
    if (!in)
        throw std::runtime_error("failed to read file: " + path.string());
    return bytes;
}

inline void write_all_bytes(const std::filesystem::path& path, const char* data,
                            std::size_t size) {
    if (path.has_parent_path())
        std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out)
        throw std::runtime_error("cannot open file for writing: " + path.string());
    out.write(data, static_cast<std::streamsize>(size));
    out.flush();
    if (!out)
        throw std::runtime_error("failed to write file: " + path.string());
}

inline std::vector<float> decode_f32le(const std::vector<char>& bytes) {
    std::vector<float> values(bytes.size() / 4);
    if constexpr (std::endian::native == std::endian::little) {
        std::memcpy(values.data(), bytes.data(), values.size() * 4);
    } else {
        for (std::size_t i = 0; i < values.size(); ++i) {
            const auto* p = reinterpret_cast<const unsigned char*>(bytes.data() + 4 * i);
            const std::uint32_t u = static_cast<std::uint32_t>(p[0]) |
                                    (static_cast<std::uint32_t>(p[1]) << 8) |
                                    (static_cast<std::uint32_t>(p[2]) << 16) |
                                    (static_cast<std::uint32_t>(p[3]) << 24);
            values[i] = std::bit_cast<float>(u);
        }
    }
    return values;
}

inline std::vector<char> encode_f32le(const std::vector<float>& values) {
    std::vector<char> bytes(values.size() * 4);
    if constexpr (std::endian::native == std::endian::little) {
        std::memcpy(bytes.data(), values.data(), bytes.size());
    } else {
        for (std::size_t i = 0; i < values.size(); ++i) {
            const std::uint32_t u = std::bit_cast<std::uint32_t>(values[i]);
            auto* p = reinterpret_cast<unsigned char*>(bytes.data() + 4 * i);
            p[0] = static_cast<unsigned char>(u & 0xff);
            p[1] = static_cast<unsigned char>((u >> 8) & 0xff);
            p[2] = static_cast<unsigned char>((u >> 16) & 0xff);
            p[3] = static_cast<unsigned char>((u >> 24) & 0xff);
        }
    }
    return bytes;
}

inline nlohmann::json parse_json_file(const std::filesystem::path& path) {
    const std::vector<char> bytes = read_all_bytes(path);
    try {
        return nlohmann::json::parse(bytes.begin(), bytes.end());
    } catch (const nlohmann::json::parse_error& e) {
        throw std::runtime_error("invalid JSON in " + path.string() + ": " + e.what());
    }
}

inline std::filesystem::path payload_path_for(const std::filesystem::path& header_path) {
    std::filesystem::path p = header_path;
    p.replace_extension(".f32");
    return p;
}

inline std::vector<float> load_payload(const std::filesystem::path& header_path,
                                       const std::string& payload_rel,
                                       std::size_t expected_count) {
    const std::filesystem::path payload = header_path.parent_path() / payload_rel;
    const std::vector<char> bytes = read_all_bytes(payload);
    if (bytes.size() != expected_count * 4)
        throw std::runtime_error("payload size mismatch for " + payload.string() + ": got " +
                                 std::to_string(bytes.size()) + " bytes, expected " +
                                 std::to_string(expected_count * 4));
    return decode_f32le(bytes);
}

inline std::size_t get_count(const nlohmann::json& j, const char* key,
                             const std::filesystem::path& path) {
    if (!j.contains(key) || !j[key].is_number_unsigned())
        throw std::runtime_error("header " + path.string() + ": missing or invalid \"" +
                                 key + "\"");
    return j[key].get<std::size_t>();
}

inline void require_field(const nlohmann::json& j, const char* key, const std::string& expect,
                          const std::filesystem::path& path) {
    if (!j.contains(key) || j[key] != expect)
        throw std::runtime_error("header " + path.string() + ": expected \"" +
                                 std::string(key) + "\": \"" + expect + "\"");
}

// Calibration matrices serialize either as cols x bands arrays-of-arrays
// or as one shared per-band vector expanded on load.
inline Eigen::MatrixXd parse_calib_matrix(const nlohmann::json& j, std::size_t cols,
                                          std::size_t bands, const char* key,
                                          const std::filesystem::path& path) {
    if (!j.contains(key) || !j[key].is_array() || j[key].empty())
        throw std::runtime_error("header " + path.string() + ": missing \"" +
                                 std::string(key) + "\"");
    const auto& arr = j[key];
    Eigen::MatrixXd m(cols, bands);
    if (arr[0].is_array()) {
        if (arr.size() != cols)
            throw std::runtime_error("header " + path.string() + ": \"" + key +
                                     "\" has wrong column count");
        for (std::size_t c = 0; c < cols; ++c) {
            if (arr[c].size() != bands)
                throw std::runtime_error("header " + path.string() + ": \"" + key +
                                         "\" has wrong band count in column " +
                                         std::to_string(c));
            for (std::size_t b = 0; b < bands; ++b)
                m(c, b) = arr[c][b].get<double>();
        }
    } else {
        if (arr.size() != bands)
            throw std::runtime_error("header " + path.string() + ": shared \"" + key +
                                     "\" vector has wrong band count");
        Eigen::VectorXd v(bands);
        for (std::size_t b = 0; b < bands; ++b)
            v[b] = arr[b].get<double>();
        m = v.transpose().replicate(cols, 1);
    }
    return m;
}

inline nlohmann::ordered_json calib_matrix_to_json(const Eigen::MatrixXd& m) {
    // Shared shorthand when every column carries the same vector.
    bool shared = true;
    for (Eigen::Index c = 1; c < m.rows() && shared; ++c)
        shared = (m.row(c) == m.row(0));
    nlohmann::ordered_json out = nlohmann::ordered_json::array();
    if (shared) {
        for (Eigen::Index b = 0; b < m.cols(); ++b)
            out.push_back(m(0, b));
    } else {
        for (Eigen::Index c = 0; c < m.rows(); ++c) {
            nlohmann::ordered_json row = nlohmann::ordered_json::array();
            for (Eigen::Index b = 0; b < m.cols(); ++b)
                row.push_back(m(c, b));
            out.push_back(std::move(row));
        }
    }
    return out;
}

} // namespace detail

// ---- hyperspectral cubes ----

inline void save_cube(const HyperCube& cube, const std::filesystem::path& header_path) {
    validate(cube);
    const std::filesystem::path payload = detail::payload_path_for(header_path);
    const std::vector<char> bytes = detail::encode_f32le(cube.data);
    detail::write_all_bytes(payload, bytes.data(), bytes.size());

    nlohmann::ordered_json j;
    j["rows"] = cube.rows;
    j["cols"] = cube.cols;
    j["bands"] = cube.bands;
    j["dtype"] = "f32le";
    j["interleave"] = "bsq";
    j["wavelengths_nm"] = detail::calib_matrix_to_json(cube.calib.centers);
    j["fwhm_nm"] = detail::calib_matrix_to_json(cube.calib.fwhm);
    j["payload"] = payload.filename().string();
    const std::string text = j.dump(2) + "\n";
    detail::write_all_bytes(header_path, text.data(), text.size());
}

inline HyperCube load_cube(const std::filesystem::path& header_path) {
    const nlohmann::json j = detail::parse_json_file(header_path);
    HyperCube cube;
    cube.rows = detail::get_count(j, "rows", header_path);
    cube.cols = detail::get_count(j, "cols", header_path);
    cube.bands = detail::get_count(j, "bands", header_path);
    detail::require_field(j, "dtype", "f32le", header_path);
    detail::require_field(j, "interleave", "bsq", header_path);
    cube.calib.centers =
        detail::parse_calib_matrix(j, cube.cols, cube.bands, "wavelengths_nm", header_path);
    cube.calib.fwhm = detail::parse_calib_matrix(j, cube.cols, cube.bands, "fwhm_nm", header_path);
    if (!j.contains("payload") || !j["payload"].is_string())
        throw std::runtime_error("header " + header_path.string() + ": missing \"payload\"");
    cube.data = detail::load_payload(header_path, j["payload"].get<std::string>(),
                                     cube.rows * cube.cols * cube.bands);
    validate(cube);
    return cube;
}

// ---- 2-D maps ----

namespace detail {

inline void save_map_impl(const Raster2d& map, const char* units,
                          const std::filesystem::path& header_path) {
    const std::filesystem::path payload = payload_path_for(header_path);
    const std::vector<char> bytes = encode_f32le(map.values);
    write_all_bytes(payload, bytes.data(), bytes.size());

    nlohmann::ordered_json j;
    j["rows"] = map.rows;
    j["cols"] = map.cols;
    j["dtype"] = "f32le";
    j["units"] = units;
    j["payload"] = payload.filename().string();
    const std::string text = j.dump(2) + "\n";
    write_all_bytes(header_path, text.data(), text.size());
}

template <class MapT>
MapT load_map_impl(const char* units, const std::filesystem::path& header_path) {
    const nlohmann::json j = parse_json_file(header_path);
    MapT map;
    map.rows = get_count(j, "rows", header_path);
    map.cols = get_count(j, "cols", header_path);
    require_field(j, "dtype", "f32le", header_path);
    require_field(j, "units", units, header_path);
    if (!j.contains("payload") || !j["payload"].is_string())
        throw std::runtime_error("header " + header_path.string() + ": missing \"payload\"");
    map.values =
        load_payload(header_path, j["payload"].get<std::string>(), map.rows * map.cols);
    validate(map);
    return map;
}

} // namespace detail

inline void save_map(const EnhancementMap& map, const std::filesystem::path& path) {
    validate(map);
    detail::save_map_impl(map, "ppb", path);
}

inline void save_map(const ProbabilityMap& map, const std::filesystem::path& path) {
    validate(map);
    detail::save_map_impl(map, "probability", path);
}

inline EnhancementMap load_enhancement_map(const std::filesystem::path& path) {
    return detail::load_map_impl<EnhancementMap>("ppb", path);
}

inline ProbabilityMap load_probability_map(const std::filesystem::path& path) {
    return detail::load_map_impl<ProbabilityMap>("probability", path);
}

// ---- instance masks ----

inline void save_masks(const InstanceMaskSet& set, const std::filesystem::path& path) {
    validate(set);
    nlohmann::ordered_json j;
    j["rows"] = set.rows;
    j["cols"] = set.cols;
    nlohmann::ordered_json instances = nlohmann::ordered_json::array();
    for (const MaskInstance& inst : set.instances) {
        nlohmann::ordered_json ji;
        ji["id"] = inst.id;
        nlohmann::ordered_json rle = nlohmann::ordered_json::array();
        for (const Run& run : inst.rle)
            rle.push_back({run.start, run.len});
        ji["rle"] = std::move(rle);
        instances.push_back(std::move(ji));
    }
    j["instances"] = std::move(instances);
    const std::string text = j.dump(2) + "\n";
    detail::write_all_bytes(path, text.data(), text.size());
}

inline InstanceMaskSet load_masks(const std::filesystem::path& path) {
    const nlohmann::json j = detail::parse_json_file(path);
    InstanceMaskSet set;
    set.rows = detail::get_count(j, "rows", path);
    set.cols = detail::get_count(j, "cols", path);
    if (!j.contains("instances") || !j["instances"].is_array())
        throw std::runtime_error("mask file " + path.string() + ": missing \"instances\"");
    for (const auto& ji : j["instances"]) {
        MaskInstance inst;
        if (!ji.contains("id") || !ji["id"].is_number_integer())
            throw std::runtime_error("mask file " + path.string() + ": instance without id");
        inst.id = ji["id"].get<int>();
        for (const auto& jr : ji.at("rle")) {
            if (!jr.is_array() || jr.size() != 2)
                throw std::runtime_error("mask file " + path.string() + ": malformed run");
            inst.rle.push_back({jr[0].get<std::uint64_t>(), jr[1].get<std::uint64_t>()});
        }
        set.instances.push_back(std::move(inst));
    }
    validate(set);
    refresh_bboxes(set);
    return set;
}

// ---- CSV tables ----

namespace detail {

inline std::string format_double(double v) {
    char buf[32];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

inline double parse_double(const std::string& field, const std::filesystem::path& path,
                           std::size_t line_no) {
    double v = 0.0;
    const char* begin = field.data();
    const char* end = begin + field.size();
    while (begin != end && (*begin == ' ' || *begin == '\t'))
        ++begin;
    const auto res = std::from_chars(begin, end, v);
    if (res.ec != std::errc() || res.ptr != end)
        throw std::runtime_error("bad number \"" + field + "\" in " + path.string() + ":" +
                                 std::to_string(line_no));
    return v;
}

inline std::vector<std::vector<std::string>> read_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in)
        throw std::runtime_error("cannot open file: " + path.string());
    std::vector<std::vector<std::string>> rows;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r')
            line.pop_back();
        if (line.empty())
            continue;
        std::vector<std::string> fields;
        std::size_t start = 0;
        for (;;) {
            const std::size_t comma = line.find(',', start);
            if (comma == std::string::npos) {
                fields.push_back(line.substr(start));
                break;
            }
            fields.push_back(line.substr(start, comma - start));
            start = comma + 1;
        }
        rows.push_back(std::move(fields));
    }
    return rows;
}

} // namespace detail

inline SpectralTable load_table(const std::filesystem::path& path) {
    const auto rows = detail::read_csv(path);
    if (rows.size() < 3)
        throw std::runtime_error("table " + path.string() + ": needs header plus >= 2 rows");
    SpectralTable t;
    for (std::size_t i = 1; i < rows.size(); ++i) {
        if (rows[i].size() != 2)
            throw std::runtime_error("table " + path.string() + ":" + std::to_string(i + 1) +
                                     ": expected 2 columns");
        t.wavelength_nm.push_back(detail::parse_double(rows[i][0], path, i + 1));
        t.value.push_back(detail::parse_double(rows[i][1], path, i + 1));
    }
    validate(t);
    return t;
}

inline void save_table(const SpectralTable& t, const std::filesystem::path& path,
                       const std::string& value_name = "value") {
    validate(t);
    std::string text = "wavelength_nm," + value_name + "\n";
    for (std::size_t i = 0; i < t.wavelength_nm.size(); ++i)
        text += detail::format_double(t.wavelength_nm[i]) + "," +
                detail::format_double(t.value[i]) + "\n";
    detail::write_all_bytes(path, text.data(), text.size());
}

inline UnitAbsorptionSpectrum load_jacobian(const std::filesystem::path& path) {
    const auto rows = detail::read_csv(path);
    if (rows.size() < 2)
        throw std::runtime_error("jacobian " + path.string() + ": empty table");
    std::vector<double> k(rows.size() - 1,
                          std::numeric_limits<double>::quiet_NaN());
    for (std::size_t i = 1; i < rows.size(); ++i) {
        if (rows[i].size() != 2)
            throw std::runtime_error("jacobian " + path.string() + ":" + std::to_string(i + 1) +
                                     ": expected 2 columns");
        const double idx_d = detail::parse_double(rows[i][0], path, i + 1);
        const std::size_t idx = static_cast<std::size_t>(idx_d);
        if (idx_d != static_cast<double>(idx) || idx >= k.size())
            throw std::runtime_error("jacobian " + path.string() + ": band index out of order");
        k[idx] = detail::parse_double(rows[i][1], path, i + 1);
    }
    UnitAbsorptionSpectrum out;
    out.k_per_ppb.resize(static_cast<Eigen::Index>(k.size()));
    for (std::size_t i = 0; i < k.size(); ++i) {
        if (std::isnan(k[i]))
            throw std::runtime_error("jacobian " + path.string() + ": missing band " +
                                     std::to_string(i));
        out.k_per_ppb[static_cast<Eigen::Index>(i)] = k[i];
    }
    return out;
}

inline void save_jacobian(const UnitAbsorptionSpectrum& k, const std::filesystem::path& path) {
    std::string text = "band_index,k_per_ppb\n";
    for (Eigen::Index b = 0; b < k.k_per_ppb.size(); ++b)
        text += std::to_string(b) + "," + detail::format_double(k.k_per_ppb[b]) + "\n";
    detail::write_all_bytes(path, text.data(), text.size());
}

} // namespace plumekit
