#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace plumekit {

// Per-detector-column spectral response parameters. Pushbroom sensors
// carry one calibration per across-track column.
struct SpectralCalibration {
    Eigen::MatrixXd centers; // cols x bands, nm
    Eigen::MatrixXd fwhm;    // cols x bands, nm
};

// Radiance cube, band-sequential layout: index = (band * rows + row) * cols + col.
// rows run along-track, cols across-track (one detector column each).
struct HyperCube {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::size_t bands = 0;
    std::vector<float> data;
    SpectralCalibration calib;

    std::size_t index(std::size_t r, std::size_t c, std::size_t b) const {
        return (b * rows + r) * cols + c;
    }
    float at(std::size_t r, std::size_t c, std::size_t b) const {
        return data[index(r, c, b)];
    }
    float& at(std::size_t r, std::size_t c, std::size_t b) {
        return data[index(r, c, b)];
    }
};

inline void validate(const HyperCube& cube) {
    if (cube.rows == 0 || cube.cols == 0 || cube.bands == 0)
        throw std::invalid_argument("HyperCube: empty dimension");
    if (cube.data.size() != cube.rows * cube.cols * cube.bands)
        throw std::invalid_argument("HyperCube: data length " +
                                    std::to_string(cube.data.size()) + " != rows*cols*bands " +
                                    std::to_string(cube.rows * cube.cols * cube.bands));
    for (float v : cube.data) {
        if (!std::isfinite(v))
            throw std::invalid_argument("HyperCube: non-finite radiance");
        if (v < 0.0f)
            throw std::invalid_argument("HyperCube: negative radiance");
    }
    const auto& cal = cube.calib;
    if (cal.centers.rows() != static_cast<Eigen::Index>(cube.cols) ||
        cal.centers.cols() != static_cast<Eigen::Index>(cube.bands))
        throw std::invalid_argument("HyperCube: calibration centers shape mismatch");
    if (cal.fwhm.rows() != cal.centers.rows() || cal.fwhm.cols() != cal.centers.cols())
        throw std::invalid_argument("HyperCube: calibration fwhm shape mismatch");
    for (Eigen::Index c = 0; c < cal.centers.rows(); ++c) {
        for (Eigen::Index b = 0; b < cal.centers.cols(); ++b) {
            if (!std::isfinite(cal.centers(c, b)))
                throw std::invalid_argument("HyperCube: non-finite wavelength center");
            if (!(cal.fwhm(c, b) > 0.0))
                throw std::invalid_argument("HyperCube: fwhm must be > 0");
            if (b > 0 && !(cal.centers(c, b) > cal.centers(c, b - 1)))
                throw std::invalid_argument(
                    "HyperCube: wavelengths not strictly increasing in column " +
                    std::to_string(c));
        }
    }
}

// All spectra of one detector column as a rows x bands matrix.
inline Eigen::MatrixXd column_spectra(const HyperCube& cube, std::size_t col) {
    if (col >= cube.cols)
        throw std::invalid_argument("column_spectra: column " + std::to_string(col) +
                                    " out of range (cols=" + std::to_string(cube.cols) + ")");
    Eigen::MatrixXd out(cube.rows, cube.bands);
    for (std::size_t b = 0; b < cube.bands; ++b)
        for (std::size_t r = 0; r < cube.rows; ++r)
            out(r, b) = cube.data[(b * cube.rows + r) * cube.cols + col];
    return out;
}

} // namespace plumekit
