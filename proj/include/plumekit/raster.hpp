#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace plumekit {

// Row-major 2-D grid of 32-bit floats. Serves as the common layout for
// enhancement and probability maps; payload files hold exactly `values`.
struct Raster2d {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<float> values;

    std::size_t size() const { return rows * cols; }
    std::size_t index(std::size_t r, std::size_t c) const { return r * cols + c; }

    float& at(std::size_t r, std::size_t c) { return values[r * cols + c]; }
    float at(std::size_t r, std::size_t c) const { return values[r * cols + c]; }

    bool in_bounds(std::ptrdiff_t r, std::ptrdiff_t c) const {
        return r >= 0 && c >= 0 && static_cast<std::size_t>(r) < rows &&
               static_cast<std::size_t>(c) < cols;
    }
};

// XCH4 enhancement above background, ppb. Negative values are expected
// matched-filter noise.
struct EnhancementMap : Raster2d {
    static EnhancementMap zeros(std::size_t rows, std::size_t cols) {
        EnhancementMap m;
        m.rows = rows;
        m.cols = cols;
        m.values.assign(rows * cols, 0.0f);
        return m;
    }
};

// Per-pixel plume probability in [0, 1].
struct ProbabilityMap : Raster2d {
    static ProbabilityMap zeros(std::size_t rows, std::size_t cols) {
        ProbabilityMap m;
        m.rows = rows;
        m.cols = cols;
        m.values.assign(rows * cols, 0.0f);
        return m;
    }
};

inline void validate_shape(const Raster2d& m, const char* what) {
    if (m.rows == 0 || m.cols == 0)
        throw std::invalid_argument(std::string(what) + ": empty grid");
    if (m.values.size() != m.rows * m.cols)
        throw std::invalid_argument(std::string(what) + ": values length " +
                                    std::to_string(m.values.size()) + " != rows*cols " +
                                    std::to_string(m.rows * m.cols));
}

inline void validate(const EnhancementMap& m) {
    validate_shape(m, "EnhancementMap");
    for (float v : m.values)
        if (!std::isfinite(v))
            throw std::invalid_argument("EnhancementMap: non-finite value");
}

inline void validate(const ProbabilityMap& m) {
    validate_shape(m, "ProbabilityMap");
    for (float v : m.values)
        if (!(v >= 0.0f && v <= 1.0f))
            throw std::invalid_argument("ProbabilityMap: value outside [0,1]: " +
                                        std::to_string(v));
}

} // namespace plumekit
