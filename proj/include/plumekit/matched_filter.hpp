#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "plumekit/cube.hpp"
#include "plumekit/raster.hpp"
#include "plumekit/spectral.hpp"

namespace plumekit {

// Fill value for columns whose covariance or target degenerates. Finite
// and far outside any physical enhancement, so maps stay NaN-free.
constexpr float degenerate_fill_ppb = -1.0e30f;

// Raised when a single detector column cannot produce a valid filter.
// retrieve_xch4 converts it into a flagged report entry.
struct DegenerateColumnError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Per-column sample statistics of the windowed spectra.
struct ColumnStats {
    Eigen::VectorXd mu;    // per-band mean
    Eigen::MatrixXd sigma; // band x band covariance, population (1/n) normalization
    std::size_t n = 0;
};

inline ColumnStats column_stats(const Eigen::MatrixXd& spectra) {
    const auto rows = spectra.rows();
    if (rows < 2)
        throw std::invalid_argument("column_stats: needs >= 2 rows, got " +
                                    std::to_string(rows));
    ColumnStats s;
    s.n = static_cast<std::size_t>(rows);
    s.mu = spectra.colwise().mean().transpose();
    const Eigen::MatrixXd centered = spectra.rowwise() - s.mu.transpose();
    s.sigma = centered.adjoint() * centered / static_cast<double>(rows);
    return s;
}

// Expected radiance change per ppb: t = mu (elementwise) k.
struct TargetSignature {
    Eigen::VectorXd t;
};

inline TargetSignature build_target(const Eigen::VectorXd& mu, const UnitAbsorptionSpectrum& k) {
    if (mu.size() != k.k_per_ppb.size())
        throw std::invalid_argument("build_target: mu and k length mismatch (" +
                                    std::to_string(mu.size()) + " vs " +
                                    std::to_string(k.k_per_ppb.size()) + ")");
    return {mu.cwiseProduct(k.k_per_ppb)};
}

// Sigma_tilde = (1 - lambda) Sigma + lambda (trace/d) I.
inline Eigen::MatrixXd shrink_covariance(const Eigen::MatrixXd& sigma, double shrinkage) {
    if (!(shrinkage >= 0.0 && shrinkage < 1.0))
        throw std::invalid_argument("shrink_covariance: shrinkage must be in [0,1)");
    const double d = static_cast<double>(sigma.rows());
    const double ridge = sigma.trace() / d;
    Eigen::MatrixXd out = (1.0 - shrinkage) * sigma;
    out.diagonal().array() += shrinkage * ridge;
    return out;
}

// Factorized matched filter for one column: alpha(x) = (x-mu)' w / (t' w)
// with w = Sigma_tilde^-1 t obtained from a Cholesky solve, never an
// explicit inverse.
class MatchedFilter {
public:
    MatchedFilter(const ColumnStats& stats, const TargetSignature& target, double shrinkage)
        : mu_(stats.mu) {
        const Eigen::Index d = stats.sigma.rows();
        if (stats.sigma.cols() != d || stats.mu.size() != d || target.t.size() != d)
            throw std::invalid_argument("MatchedFilter: dimension mismatch");
        const Eigen::MatrixXd sigma_tilde = shrink_covariance(stats.sigma, shrinkage);
        Eigen::LLT<Eigen::MatrixXd> llt(sigma_tilde);
        if (llt.info() != Eigen::Success)
            throw DegenerateColumnError("covariance not positive definite after shrinkage");
        weights_ = llt.solve(target.t);
        denom_ = target.t.dot(weights_);
        if (!std::isfinite(denom_) || denom_ <= 0.0 ||
            denom_ < 1e-12 * target.t.squaredNorm())
            throw DegenerateColumnError("degenerate target: t' Sigma^-1 t = " +
                                        std::to_string(denom_));
    }

    double alpha(const Eigen::VectorXd& x) const { return (x - mu_).dot(weights_) / denom_; }

    Eigen::VectorXd alpha_rows(const Eigen::MatrixXd& spectra) const {
        return ((spectra.rowwise() - mu_.transpose()) * weights_) / denom_;
    }

    // Analytic matched-filter noise std in ppb for white-pre-whitened data:
    // 1 / sqrt(t' Sigma^-1 t).
    double alpha_std() const { return 1.0 / std::sqrt(denom_); }

    const Eigen::VectorXd& mu() const { return mu_; }

private:
    Eigen::VectorXd mu_;
    Eigen::VectorXd weights_; // Sigma_tilde^-1 t
    double denom_ = 0.0;      // t' Sigma_tilde^-1 t
};

// Per-row enhancements for one column of spectra.
inline Eigen::VectorXd matched_filter_column(const Eigen::MatrixXd& spectra,
                                             const TargetSignature& target, double shrinkage) {
    const MatchedFilter mf(column_stats(spectra), target, shrinkage);
    return mf.alpha_rows(spectra);
}

// Half-open band range [first, last).
struct BandWindow {
    std::size_t first = 0;
    std::size_t last = 0;

    std::size_t width() const { return last - first; }
};

struct ColumnReport {
    bool degenerate = false;
    double condition = 0.0; // eigenvalue ratio of Sigma_tilde
    std::string message;
};

struct RetrievalReport {
    double shrinkage = 0.0;
    BandWindow window;
    std::vector<ColumnReport> columns;

    std::size_t degenerate_count() const {
        std::size_t n = 0;
        for (const auto& c : columns)
            if (c.degenerate)
                ++n;
        return n;
    }
};

struct RetrievalOutput {
    EnhancementMap map;
    RetrievalReport report;
};

namespace detail {

inline void retrieve_column(const HyperCube& cube, std::size_t col,
                            const Eigen::VectorXd& k_window, double shrinkage,
                            const BandWindow& window, EnhancementMap& map,
                            ColumnReport& report) {
    const std::size_t w = window.width();
    Eigen::MatrixXd spectra(cube.rows, w);
    for (std::size_t b = 0; b < w; ++b)
        for (std::size_t r = 0; r < cube.rows; ++r)
            spectra(r, b) = cube.data[((window.first + b) * cube.rows + r) * cube.cols + col];
    try {
        const ColumnStats stats = column_stats(spectra);
        const TargetSignature target = build_target(stats.mu, {k_window});
        const MatchedFilter mf(stats, target, shrinkage);
        const Eigen::VectorXd alpha = mf.alpha_rows(spectra);
        for (std::size_t r = 0; r < cube.rows; ++r)
            map.values[r * cube.cols + col] = static_cast<float>(alpha[r]);
        const Eigen::MatrixXd sigma_tilde = shrink_covariance(stats.sigma, shrinkage);
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(sigma_tilde,
                                                           Eigen::EigenvaluesOnly);
        const double lo = eig.eigenvalues().minCoeff();
        const double hi = eig.eigenvalues().maxCoeff();
        report.condition = lo > 0.0 ? hi / lo : std::numeric_limits<double>::infinity();
        report.degenerate = false;
    } catch (const std::exception& e) {
        report.degenerate = true;
        report.message = e.what();
        report.condition = std::numeric_limits<double>::infinity();
        for (std::size_t r = 0; r < cube.rows; ++r)
            map.values[r * cube.cols + col] = degenerate_fill_ppb;
    }
}

} // namespace detail

// Scene retrieval: an independent matched filter per detector column.
// k_for_column supplies the (already windowed) unit absorption spectrum of
// each column. Columns are distributed over n_threads workers; each worker
// writes disjoint output slots, so the result is identical for any thread
// count.
template <class KForColumn>
RetrievalOutput retrieve_xch4_percolumn(const HyperCube& cube, KForColumn&& k_for_column,
                                        double shrinkage, BandWindow window,
                                        unsigned n_threads = 1) {
    validate(cube);
    if (window.last == 0 && window.first == 0)
        window = {0, cube.bands};
    if (window.first >= window.last || window.last > cube.bands)
        throw std::invalid_argument("retrieve_xch4: band window out of range");
    if (window.width() < 2)
        throw std::invalid_argument("retrieve_xch4: band window too narrow");
    if (!(shrinkage >= 0.0 && shrinkage < 1.0))
        throw std::invalid_argument("retrieve_xch4: shrinkage must be in [0,1)");

    RetrievalOutput out;
    out.map = EnhancementMap::zeros(cube.rows, cube.cols);
    out.report.shrinkage = shrinkage;
    out.report.window = window;
    out.report.columns.resize(cube.cols);

    if (n_threads == 0)
        n_threads = std::max(1u, std::thread::hardware_concurrency());
    n_threads = std::min<unsigned>(n_threads, static_cast<unsigned>(cube.cols));

    auto worker = [&](std::size_t begin, std::size_t end) {
        for (std::size_t c = begin; c < end; ++c) {
            const Eigen::VectorXd k_window = k_for_column(c);
            detail::retrieve_column(cube, c, k_window, shrinkage, window, out.map,
                                    out.report.columns[c]);
        }
    };

    if (n_threads <= 1) {
        worker(0, cube.cols);
    } else {
        std::vector<std::thread> pool;
        const std::size_t chunk = (cube.cols + n_threads - 1) / n_threads;
        for (unsigned i = 0; i < n_threads; ++i) {
            const std::size_t begin = i * chunk;
            const std::size_t end = std::min(cube.cols, begin + chunk);
            if (begin < end)
                pool.emplace_back(worker, begin, end);
        }
        for (auto& th : pool)
            th.join();
    }
    return out;
}

// Shared unit absorption spectrum for every column.
inline RetrievalOutput retrieve_xch4(const HyperCube& cube, const UnitAbsorptionSpectrum& k,
                                     double shrinkage, BandWindow window = {},
                                     unsigned n_threads = 1) {
    if (window.last == 0 && window.first == 0)
        window = {0, cube.bands};
    if (k.k_per_ppb.size() != static_cast<Eigen::Index>(cube.bands))
        throw std::invalid_argument("retrieve_xch4: jacobian length != cube bands");
    if (window.first >= window.last || window.last > cube.bands)
        throw std::invalid_argument("retrieve_xch4: band window out of range");
    const Eigen::VectorXd k_win =
        k.k_per_ppb.segment(window.first, window.last - window.first);
    return retrieve_xch4_percolumn(
        cube, [&](std::size_t) { return k_win; }, shrinkage, window, n_threads);
}

// Per-column jacobians as a cols x bands matrix, e.g. from recalibrated
// per-column centers.
inline RetrievalOutput retrieve_xch4(const HyperCube& cube, const Eigen::MatrixXd& k_per_column,
                                     double shrinkage, BandWindow window = {},
                                     unsigned n_threads = 1) {
    if (window.last == 0 && window.first == 0)
        window = {0, cube.bands};
    if (k_per_column.rows() != static_cast<Eigen::Index>(cube.cols) ||
        k_per_column.cols() != static_cast<Eigen::Index>(cube.bands))
        throw std::invalid_argument("retrieve_xch4: per-column jacobian shape mismatch");
    if (window.first >= window.last || window.last > cube.bands)
        throw std::invalid_argument("retrieve_xch4: band window out of range");
    return retrieve_xch4_percolumn(
        cube,
        [&](std::size_t c) {
            return Eigen::VectorXd(k_per_column.row(c)
                                       .segment(window.first, window.last - window.first)
                                       .transpose());
        },
        shrinkage, window, n_threads);
}

} // namespace plumekit
