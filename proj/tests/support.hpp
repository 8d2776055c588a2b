#pragma once

// Shared test helpers: scratch directories and small data generators.

#include <atomic>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include <unistd.h>

#include <plumekit/cube.hpp>
#include <plumekit/raster.hpp>

namespace testutil {

// Self-deleting scratch directory.
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        static std::atomic<unsigned> counter{0};
        path_ = std::filesystem::temp_directory_path() /
                ("plumekit_" + tag + "_" + std::to_string(::getpid()) + "_" +
                 std::to_string(counter++));
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
    std::filesystem::path path_;
};

inline plumekit::SpectralCalibration shared_calibration(std::size_t cols, std::size_t bands,
                                                        double start_nm = 1600.0,
                                                        double step_nm = 10.0,
                                                        double fwhm_nm = 12.0) {
    plumekit::SpectralCalibration cal;
    cal.centers.resize(cols, bands);
    cal.fwhm.resize(cols, bands);
    for (std::size_t c = 0; c < cols; ++c)
        for (std::size_t b = 0; b < bands; ++b) {
            cal.centers(c, b) = start_nm + step_nm * static_cast<double>(b);
            cal.fwhm(c, b) = fwhm_nm;
        }
    return cal;
}

inline plumekit::HyperCube random_cube(std::size_t rows, std::size_t cols, std::size_t bands,
                                       std::uint64_t seed) {
    plumekit::HyperCube cube;
    cube.rows = rows;
    cube.cols = cols;
    cube.bands = bands;
    cube.data.resize(rows * cols * bands);
    std::mt19937_64 eng(seed);
    std::uniform_real_distribution<float> dist(0.1f, 10.0f);
    for (float& v : cube.data)
        v = dist(eng);
    cube.calib = shared_calibration(cols, bands);
    return cube;
}

inline plumekit::EnhancementMap random_map(std::size_t rows, std::size_t cols,
                                           std::uint64_t seed, float lo = -50.0f,
                                           float hi = 50.0f) {
    auto map = plumekit::EnhancementMap::zeros(rows, cols);
    std::mt19937_64 eng(seed);
    std::uniform_real_distribution<float> dist(lo, hi);
    for (float& v : map.values)
        v = dist(eng);
    return map;
}

} // namespace testutil
