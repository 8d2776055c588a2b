#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "plumekit/cube.hpp"

namespace plumekit {

// Two-column lookup table on a strictly increasing wavelength grid.
// Carries transmittance spectra and methane cross sections.
struct SpectralTable {
    std::vector<double> wavelength_nm;
    std::vector<double> value;
};

inline void validate(const SpectralTable& t) {
    if (t.wavelength_nm.size() != t.value.size())
        throw std::invalid_argument("SpectralTable: column length mismatch");
    if (t.wavelength_nm.size() < 2)
        throw std::invalid_argument("SpectralTable: needs at least 2 samples");
    for (std::size_t i = 0; i < t.wavelength_nm.size(); ++i) {
        if (!std::isfinite(t.wavelength_nm[i]) || !std::isfinite(t.value[i]))
            throw std::invalid_argument("SpectralTable: non-finite entry");
        if (i > 0 && !(t.wavelength_nm[i] > t.wavelength_nm[i - 1]))
            throw std::invalid_argument("SpectralTable: wavelengths not strictly increasing");
    }
}

// Linear interpolation, constant beyond the table ends.
inline double interp_table(const SpectralTable& t, double wavelength_nm) {
    const auto& x = t.wavelength_nm;
    if (wavelength_nm <= x.front())
        return t.value.front();
    if (wavelength_nm >= x.back())
        return t.value.back();
    const auto it = std::upper_bound(x.begin(), x.end(), wavelength_nm);
    const std::size_t i = static_cast<std::size_t>(it - x.begin());
    const double w = (wavelength_nm - x[i - 1]) / (x[i] - x[i - 1]);
    return t.value[i - 1] + w * (t.value[i] - t.value[i - 1]);
}

// Top-of-atmosphere radiance sampled on a fine wavelength grid.
struct ReferenceSpectrum {
    std::vector<double> grid;     // nm, strictly increasing
    std::vector<double> radiance; // same units as cube radiance
};

using EnvelopeFn = std::function<double(double)>;

// Smooth solar-like envelope: Planck radiance at 5800 K, normalized to 1
// at 1600 nm so typical SWIR fixtures stay O(1).
inline double solar_envelope(double wavelength_nm) {
    const auto planck = [](double nm) {
        const double lambda = nm * 1e-9;
        const double hc_over_kT = 1.43877688e-2 / 5800.0; // m
        return 1.0 / (std::pow(lambda, 5) * (std::exp(hc_over_kT / lambda) - 1.0));
    };
    static const double norm = planck(1600.0);
    return planck(wavelength_nm) / norm;
}

inline EnvelopeFn unit_envelope() {
    return [](double) { return 1.0; };
}

// radiance(lambda) = solar_scale * E(lambda) * T(lambda) on the table grid.
// Stand-in for a full radiative transfer simulation.
inline ReferenceSpectrum simulate_reference(const SpectralTable& transmittance,
                                            double solar_scale,
                                            const EnvelopeFn& envelope = solar_envelope) {
    validate(transmittance);
    if (!(solar_scale > 0.0) || !std::isfinite(solar_scale))
        throw std::invalid_argument("simulate_reference: solar_scale must be positive");
    ReferenceSpectrum ref;
    ref.grid = transmittance.wavelength_nm;
    ref.radiance.resize(ref.grid.size());
    for (std::size_t i = 0; i < ref.grid.size(); ++i) {
        const double t = transmittance.value[i];
        if (!(t >= 0.0 && t <= 1.0))
            throw std::invalid_argument("simulate_reference: transmittance outside [0,1]");
        ref.radiance[i] = solar_scale * envelope(ref.grid[i]) * t;
    }
    return ref;
}

inline void validate(const ReferenceSpectrum& ref) {
    if (ref.grid.size() != ref.radiance.size() || ref.grid.size() < 2)
        throw std::invalid_argument("ReferenceSpectrum: bad shape");
    for (std::size_t i = 0; i < ref.grid.size(); ++i) {
        if (!std::isfinite(ref.grid[i]) || !std::isfinite(ref.radiance[i]) ||
            ref.radiance[i] < 0.0)
            throw std::invalid_argument("ReferenceSpectrum: invalid entry");
        if (i > 0 && !(ref.grid[i] > ref.grid[i - 1]))
            throw std::invalid_argument("ReferenceSpectrum: grid not strictly increasing");
    }
}

namespace detail {

constexpr double fwhm_to_sigma = 1.0 / 2.3548200450309493; // 1 / (2 sqrt(2 ln 2))

// Normalized Gaussian-weighted trapezoid average of `f` over the grid,
// truncated at +-4 sigma around `center`.
inline double srf_average(const std::vector<double>& grid, const std::vector<double>& f,
                          double center, double fwhm) {
    if (!(fwhm > 0.0))
        throw std::invalid_argument("convolve_srf: fwhm must be > 0");
    if (center - 3.0 * fwhm < grid.front() || center + 3.0 * fwhm > grid.back())
        throw std::invalid_argument("convolve_srf: center " + std::to_string(center) +
                                    " nm too close to grid edge");
    const double sigma = fwhm * fwhm_to_sigma;
    const double lo = center - 4.0 * sigma;
    const double hi = center + 4.0 * sigma;
    auto first = std::lower_bound(grid.begin(), grid.end(), lo);
    auto last = std::upper_bound(grid.begin(), grid.end(), hi);
    const std::size_t i0 = static_cast<std::size_t>(first - grid.begin());
    const std::size_t i1 = static_cast<std::size_t>(last - grid.begin());
    if (i1 - i0 < 2)
        throw std::invalid_argument("convolve_srf: fine grid coarser than the SRF support");
    double num = 0.0, den = 0.0;
    double prev_g = 0.0, prev_fg = 0.0, prev_x = 0.0;
    for (std::size_t i = i0; i < i1; ++i) {
        const double x = grid[i];
        if (i > i0 && x - prev_x > fwhm / 10.0 * (1.0 + 1e-9))
            throw std::invalid_argument(
                "convolve_srf: fine grid must have >= 10 samples per FWHM");
        const double z = (x - center) / sigma;
        const double g = std::exp(-0.5 * z * z);
        if (i > i0) {
            const double h = 0.5 * (x - prev_x);
            num += h * (prev_fg + f[i] * g);
            den += h * (prev_g + g);
        }
        prev_x = x;
        prev_g = g;
        prev_fg = f[i] * g;
    }
    return num / den;
}

} // namespace detail

// Simulated at-sensor band values: Gaussian SRF averages of the reference
// spectrum at the given centers and widths.
inline Eigen::VectorXd convolve_srf(const ReferenceSpectrum& ref, const Eigen::VectorXd& centers,
                                    const Eigen::VectorXd& fwhm) {
    if (centers.size() != fwhm.size())
        throw std::invalid_argument("convolve_srf: centers/fwhm length mismatch");
    Eigen::VectorXd out(centers.size());
    for (Eigen::Index b = 0; b < centers.size(); ++b)
        out[b] = detail::srf_average(ref.grid, ref.radiance, centers[b], fwhm[b]);
    return out;
}

// Fractional radiance change per ppb of added methane, one value per band.
// Negative wherever methane absorbs.
struct UnitAbsorptionSpectrum {
    Eigen::VectorXd k_per_ppb;
};

// Single-column recalibration outcome.
struct ColumnRecalibration {
    double delta_nm = 0.0;
    double residual = 0.0;
    bool ok = false;
    std::string message;
};

struct RecalibrationResult {
    std::vector<ColumnRecalibration> columns;

    std::size_t failed_count() const {
        std::size_t n = 0;
        for (const auto& c : columns)
            if (!c.ok)
                ++n;
        return n;
    }
};

namespace detail {

// Sum of squared differences between mean-normalized spectra. Infinity
// when the simulated spectrum cannot be evaluated at this offset.
inline double recal_distance(const Eigen::VectorXd& observed_norm, const ReferenceSpectrum& ref,
                             const Eigen::VectorXd& centers, const Eigen::VectorXd& fwhm,
                             double delta) {
    Eigen::VectorXd sim;
    try {
        sim = convolve_srf(ref, (centers.array() + delta).matrix(), fwhm);
    } catch (const std::invalid_argument&) {
        return std::numeric_limits<double>::infinity();
    }
    const double m = sim.mean();
    if (!(m > 0.0) || !sim.allFinite())
        return std::numeric_limits<double>::infinity();
    return (observed_norm - sim / m).squaredNorm();
}

} // namespace detail

// Fit the wavelength offset of one detector column by matching its mean
// observed spectrum against the simulated reference. Coarse 0.1 nm grid
// search over [-half_width, +half_width] followed by parabolic refinement
// on the best triple. Per-spectrum mean normalization makes the criterion
// insensitive to albedo and solar scale.
inline ColumnRecalibration recalibrate_column(const Eigen::VectorXd& observed_mean,
                                              const ReferenceSpectrum& ref,
                                              const Eigen::VectorXd& centers,
                                              const Eigen::VectorXd& fwhm, double half_width) {
    if (!(half_width > 0.0))
        throw std::invalid_argument("recalibrate_column: half_width must be > 0");
    if (observed_mean.size() != centers.size() || centers.size() != fwhm.size())
        throw std::invalid_argument("recalibrate_column: band count mismatch");
    if (!observed_mean.allFinite())
        throw std::invalid_argument("recalibrate_column: non-finite observed spectrum");
    const double obs_mean = observed_mean.mean();
    if (!(obs_mean > 0.0))
        throw std::invalid_argument("recalibrate_column: observed spectrum mean must be > 0");
    const Eigen::VectorXd observed_norm = observed_mean / obs_mean;

    constexpr double step = 0.1;
    std::vector<double> deltas;
    for (double d = -half_width; d < half_width - 1e-12; d += step)
        deltas.push_back(d);
    deltas.push_back(half_width);

    std::vector<double> dist(deltas.size());
    std::size_t best = 0;
    bool any_finite = false;
    for (std::size_t i = 0; i < deltas.size(); ++i) {
        dist[i] = detail::recal_distance(observed_norm, ref, centers, fwhm, deltas[i]);
        if (std::isfinite(dist[i]) && (!any_finite || dist[i] < dist[best])) {
            best = i;
            any_finite = true;
        }
    }
    if (!any_finite)
        throw std::runtime_error("recalibrate_column: no finite distance evaluation");

    double delta_star = deltas[best];
    double d_star = dist[best];
    if (best > 0 && best + 1 < deltas.size() && std::isfinite(dist[best - 1]) &&
        std::isfinite(dist[best + 1])) {
        // Parabola through the best triple; vertex clamped to the bracket.
        const double dl = dist[best - 1], dm = dist[best], dr = dist[best + 1];
        const double denom = dl - 2.0 * dm + dr;
        if (denom > 0.0) {
            double vertex = deltas[best] + step * 0.5 * (dl - dr) / denom;
            vertex = std::clamp(vertex, deltas[best] - step, deltas[best] + step);
            vertex = std::clamp(vertex, -half_width, half_width);
            const double dv = detail::recal_distance(observed_norm, ref, centers, fwhm, vertex);
            if (dv < d_star) {
                delta_star = vertex;
                d_star = dv;
            }
        }
    }
    return {delta_star, d_star, true, ""};
}

// Column-by-column offset fit on the cube's mean spectra. Failed columns
// are flagged, never fatal.
inline RecalibrationResult recalibrate_cube(const HyperCube& cube, const ReferenceSpectrum& ref,
                                            double half_width) {
    validate(cube);
    RecalibrationResult result;
    result.columns.resize(cube.cols);
    for (std::size_t c = 0; c < cube.cols; ++c) {
        const Eigen::VectorXd mean_spec = column_spectra(cube, c).colwise().mean().transpose();
        try {
            result.columns[c] =
                recalibrate_column(mean_spec, ref, cube.calib.centers.row(c).transpose(),
                                   cube.calib.fwhm.row(c).transpose(), half_width);
        } catch (const std::exception& e) {
            result.columns[c] = {0.0, std::numeric_limits<double>::infinity(), false, e.what()};
        }
    }
    return result;
}

// Finite-difference methane Jacobian through the toy transfer model
// T(lambda; X) = T0(lambda) * exp(-X * xsec(lambda)) with X in ppb:
//   k_b = (s_b(delta) - s_b(0)) / (delta * s_b(0)).
inline UnitAbsorptionSpectrum methane_jacobian(const SpectralTable& transmittance,
                                               const SpectralTable& cross_section,
                                               const Eigen::VectorXd& centers,
                                               const Eigen::VectorXd& fwhm, double delta_ppb,
                                               const EnvelopeFn& envelope = solar_envelope) {
    if (!(delta_ppb > 0.0))
        throw std::invalid_argument("methane_jacobian: delta_ppb must be > 0");
    validate(cross_section);
    for (double s : cross_section.value)
        if (s < 0.0)
            throw std::invalid_argument("methane_jacobian: cross section must be >= 0");

    const ReferenceSpectrum base = simulate_reference(transmittance, 1.0, envelope);
    ReferenceSpectrum perturbed = base;
    for (std::size_t i = 0; i < perturbed.grid.size(); ++i) {
        const double sigma = interp_table(cross_section, perturbed.grid[i]);
        perturbed.radiance[i] *= std::exp(-delta_ppb * sigma);
    }

    const Eigen::VectorXd s0 = convolve_srf(base, centers, fwhm);
    const Eigen::VectorXd s1 = convolve_srf(perturbed, centers, fwhm);
    UnitAbsorptionSpectrum out;
    out.k_per_ppb.resize(centers.size());
    for (Eigen::Index b = 0; b < centers.size(); ++b) {
        if (!(s0[b] > 0.0))
            throw std::runtime_error("methane_jacobian: zero base radiance at band " +
                                     std::to_string(b));
        out.k_per_ppb[b] = (s1[b] - s0[b]) / (delta_ppb * s0[b]);
    }
    return out;
}

} // namespace plumekit
