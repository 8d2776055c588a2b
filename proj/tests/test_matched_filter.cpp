#include <catch2/catch_amalgamated.hpp>

#include <plumekit/matched_filter.hpp>
#include <plumekit/rng.hpp>

#include <cmath>

#include "support.hpp"

using namespace plumekit;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

Eigen::MatrixXd random_spectra(std::size_t rows, std::size_t bands, Rng& rng,
                               double base = 5.0, double noise = 1.0) {
    Eigen::MatrixXd m(rows, bands);
    for (Eigen::Index r = 0; r < m.rows(); ++r)
        for (Eigen::Index b = 0; b < m.cols(); ++b)
            m(r, b) = base + noise * rng.normal();
    return m;
}

// Naive reference path: explicit matrix inverse, straight from the
// definition alpha = (x-mu)' S^-1 t / (t' S^-1 t).
Eigen::VectorXd naive_alpha(const Eigen::MatrixXd& spectra, const Eigen::VectorXd& t,
                            double shrinkage) {
    const Eigen::Index n = spectra.rows();
    const Eigen::RowVectorXd mu = spectra.colwise().mean();
    const Eigen::MatrixXd centered = spectra.rowwise() - mu;
    Eigen::MatrixXd sigma = centered.adjoint() * centered / static_cast<double>(n);
    const double ridge = shrinkage * sigma.trace() / static_cast<double>(sigma.rows());
    sigma *= (1.0 - shrinkage);
    sigma.diagonal().array() += ridge;
    const Eigen::MatrixXd inv = sigma.inverse();
    const double denom = t.dot(inv * t);
    Eigen::VectorXd alpha(n);
    for (Eigen::Index r = 0; r < n; ++r)
        alpha[r] = (spectra.row(r).transpose() - mu.transpose()).dot(inv * t) / denom;
    return alpha;
}

HyperCube noise_cube(std::size_t rows, std::size_t cols, std::size_t bands, double base,
                     double noise_std, std::uint64_t seed) {
    HyperCube cube;
    cube.rows = rows;
    cube.cols = cols;
    cube.bands = bands;
    cube.data.resize(rows * cols * bands);
    Rng rng(seed);
    for (float& v : cube.data)
        v = static_cast<float>(base + noise_std * rng.normal());
    cube.calib = testutil::shared_calibration(cols, bands);
    return cube;
}

} // namespace

TEST_CASE("column_stats means and population covariance") {
    SECTION("identical rows give zero covariance") {
        Eigen::MatrixXd spectra(3, 2);
        spectra << 4.0, 7.0, 4.0, 7.0, 4.0, 7.0;
        const ColumnStats s = column_stats(spectra);
        REQUIRE(s.mu[0] == 4.0);
        REQUIRE(s.mu[1] == 7.0);
        REQUIRE(s.sigma.norm() == 0.0);
        REQUIRE(s.n == 3);
    }
    SECTION("hand-computed two-row case") {
        Eigen::MatrixXd spectra(2, 2);
        spectra << 0.0, 0.0, 2.0, 2.0;
        const ColumnStats s = column_stats(spectra);
        REQUIRE(s.mu[0] == 1.0);
        REQUIRE(s.mu[1] == 1.0);
        for (int i = 0; i < 2; ++i)
            for (int j = 0; j < 2; ++j)
                REQUIRE(s.sigma(i, j) == 1.0);
    }
    SECTION("random matrix gives symmetric positive semidefinite sigma") {
        Rng rng(31);
        const Eigen::MatrixXd spectra = random_spectra(50, 4, rng);
        const ColumnStats s = column_stats(spectra);
        REQUIRE((s.sigma - s.sigma.transpose()).norm() < 1e-12 * s.sigma.norm());
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(s.sigma, Eigen::EigenvaluesOnly);
        REQUIRE(eig.eigenvalues().minCoeff() >= -1e-10 * s.sigma.trace());
    }
    SECTION("fewer than two rows rejected") {
        REQUIRE_THROWS(column_stats(Eigen::MatrixXd::Ones(1, 3)));
    }
}

TEST_CASE("build_target is the elementwise product") {
    UnitAbsorptionSpectrum k;
    SECTION("unit mean passes k through") {
        k.k_per_ppb.resize(2);
        k.k_per_ppb << 0.1, -0.2;
        const TargetSignature t = build_target(Eigen::VectorXd::Ones(2), k);
        REQUIRE(t.t[0] == 0.1);
        REQUIRE(t.t[1] == -0.2);
    }
    SECTION("hand product") {
        k.k_per_ppb.resize(3);
        k.k_per_ppb << -1e-4, -2e-4, 0.0;
        Eigen::VectorXd mu(3);
        mu << 100.0, 200.0, 300.0;
        const TargetSignature t = build_target(mu, k);
        REQUIRE_THAT(t.t[0], WithinRel(-0.01, 1e-15));
        REQUIRE_THAT(t.t[1], WithinRel(-0.04, 1e-15));
        REQUIRE(t.t[2] == 0.0);
    }
    SECTION("zero k flags degenerate downstream") {
        k.k_per_ppb = Eigen::VectorXd::Zero(3);
        const TargetSignature t = build_target(Eigen::VectorXd::Ones(3), k);
        Rng rng(3);
        const Eigen::MatrixXd spectra = random_spectra(20, 3, rng);
        REQUIRE_THROWS_AS(matched_filter_column(spectra, t, 0.05), DegenerateColumnError);
    }
    SECTION("length mismatch") {
        k.k_per_ppb = Eigen::VectorXd::Zero(3);
        REQUIRE_THROWS(build_target(Eigen::VectorXd::Ones(2), k));
    }
}

TEST_CASE("matched_filter_column") {
    SECTION("spectra equal to the mean give zero alpha") {
        Eigen::MatrixXd spectra(4, 3);
        for (int r = 0; r < 4; ++r)
            spectra.row(r) << 2.0, 3.0, 4.0;
        // all rows identical -> sigma = 0 -> not positive definite
        TargetSignature t{Eigen::VectorXd::Ones(3)};
        REQUIRE_THROWS_AS(matched_filter_column(spectra, t, 0.05), DegenerateColumnError);
        // with a touch of variation alpha must vanish at rows equal to mu
        spectra(0, 0) += 0.01;
        spectra(1, 0) -= 0.01;
        const Eigen::VectorXd alpha = matched_filter_column(spectra, t, 0.05);
        REQUIRE_THAT(alpha[2], WithinAbs(0.0, 1e-12));
        REQUIRE_THAT(alpha[3], WithinAbs(0.0, 1e-12));
    }

    SECTION("two-band unit-covariance case solves by hand") {
        ColumnStats stats;
        stats.mu = Eigen::VectorXd::Ones(2);
        stats.sigma = Eigen::MatrixXd::Identity(2, 2);
        stats.n = 16;
        TargetSignature t{Eigen::VectorXd(2)};
        t.t << 0.1, -0.2;
        const MatchedFilter mf(stats, t, 0.0);
        Eigen::VectorXd x(2);
        x << 1.1, 0.8;
        REQUIRE_THAT(mf.alpha(x), WithinRel(1.0, 1e-12));

        // binary-exact variant of the same identity
        TargetSignature texact{Eigen::VectorXd(2)};
        texact.t << 0.25, -0.5;
        const MatchedFilter mfe(stats, texact, 0.0);
        Eigen::VectorXd xe(2);
        xe << 1.25, 0.5;
        REQUIRE(mfe.alpha(xe) == 1.0);
    }

    SECTION("injection at a known row is recovered within 3 analytic sigma") {
        Rng rng(12345);
        const std::size_t rows = 400, bands = 8;
        Eigen::MatrixXd spectra(rows, bands);
        Eigen::VectorXd mu0 = Eigen::VectorXd::Constant(bands, 10.0);
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t b = 0; b < bands; ++b)
                spectra(r, b) = mu0[b] + rng.normal();
        TargetSignature t{Eigen::VectorXd(bands)};
        for (std::size_t b = 0; b < bands; ++b)
            t.t[b] = -1e-3 * mu0[b];
        spectra.row(137) += 3.0 * t.t.transpose();

        const MatchedFilter mf(column_stats(spectra), t, 0.0);
        const Eigen::VectorXd alpha = mf.alpha_rows(spectra);
        REQUIRE_THAT(alpha[137], WithinAbs(3.0, 3.0 * mf.alpha_std()));
    }

    SECTION("mean of alpha over rows is zero") {
        Rng rng(9);
        const Eigen::MatrixXd spectra = random_spectra(64, 6, rng);
        TargetSignature t{Eigen::VectorXd::Constant(6, -0.01)};
        const Eigen::VectorXd alpha = matched_filter_column(spectra, t, 0.05);
        const double std_alpha = std::sqrt(alpha.squaredNorm() / alpha.size());
        REQUIRE(std::abs(alpha.mean()) <= 1e-8 * std_alpha);
    }

    SECTION("invalid shrinkage rejected") {
        Rng rng(2);
        const Eigen::MatrixXd spectra = random_spectra(8, 3, rng);
        TargetSignature t{Eigen::VectorXd::Ones(3)};
        REQUIRE_THROWS(matched_filter_column(spectra, t, 1.0));
        REQUIRE_THROWS(matched_filter_column(spectra, t, -0.1));
    }
}

TEST_CASE("factorized solve equals the explicit-inverse reference") {
    Rng rng(777);
    for (int trial = 0; trial < 25; ++trial) {
        const std::size_t bands = 2 + rng.uniform_index(15);                // <= 16
        const std::size_t rows = bands + 2 + rng.uniform_index(63 - bands); // <= 64
        const Eigen::MatrixXd spectra = random_spectra(rows, bands, rng);
        Eigen::VectorXd kvec(bands);
        for (std::size_t b = 0; b < bands; ++b)
            kvec[b] = -rng.uniform(1e-4, 1e-2);
        const ColumnStats stats = column_stats(spectra);
        const TargetSignature t = build_target(stats.mu, {kvec});
        const double shrinkage = rng.uniform(0.0, 0.3);

        const Eigen::VectorXd fast = matched_filter_column(spectra, t, shrinkage);
        const Eigen::VectorXd slow = naive_alpha(spectra, t.t, shrinkage);
        REQUIRE((fast - slow).norm() <= 1e-8 * slow.norm());
    }
}

TEST_CASE("alpha invariances") {
    Rng rng(4242);
    const Eigen::MatrixXd spectra = random_spectra(48, 8, rng);
    const ColumnStats stats = column_stats(spectra);
    Eigen::VectorXd kvec = Eigen::VectorXd::Constant(8, -5e-3);
    const TargetSignature t = build_target(stats.mu, {kvec});
    const Eigen::VectorXd alpha = matched_filter_column(spectra, t, 0.05);

    SECTION("radiance scale invariance") {
        const double c = 37.5;
        const Eigen::MatrixXd scaled = c * spectra;
        const TargetSignature t2{(c * t.t).eval()};
        const Eigen::VectorXd alpha2 = matched_filter_column(scaled, t2, 0.05);
        REQUIRE((alpha2 - alpha).norm() <= 1e-8 * alpha.norm());
    }

    SECTION("constant spectral shift invariance") {
        Eigen::MatrixXd shifted = spectra;
        Eigen::RowVectorXd offset(8);
        for (int b = 0; b < 8; ++b)
            offset[b] = rng.uniform(-3.0, 3.0);
        shifted.rowwise() += offset;
        const Eigen::VectorXd alpha2 = matched_filter_column(shifted, t, 0.05);
        REQUIRE((alpha2 - alpha).norm() <= 1e-8 * alpha.norm());
    }
}

TEST_CASE("retrieve_xch4 per-column retrieval") {
    const std::size_t bands = 16;
    UnitAbsorptionSpectrum k;
    k.k_per_ppb = Eigen::VectorXd::Constant(bands, -1e-4);

    SECTION("white-noise cube: zero mean, analytic std within 15%") {
        const HyperCube cube = noise_cube(100, 32, bands, 1.0, 0.02, 555);
        const RetrievalOutput out = retrieve_xch4(cube, k, 0.05);
        REQUIRE(out.report.degenerate_count() == 0);

        double sum = 0.0, sum2 = 0.0;
        for (float v : out.map.values) {
            sum += v;
            sum2 += static_cast<double>(v) * v;
        }
        const double n = static_cast<double>(out.map.size());
        const double mean = sum / n;
        const double std_map = std::sqrt(sum2 / n - mean * mean);
        // analytic: t ~ -1e-4 * mu, sigma ~ noise^2 I
        const double t_norm = 1e-4 * 1.0 * std::sqrt(static_cast<double>(bands));
        const double analytic_std = 0.02 / t_norm;
        REQUIRE(std::abs(mean) < 0.05 * analytic_std);
        REQUIRE_THAT(std_map, WithinRel(analytic_std, 0.15));
    }

    SECTION("block injection recovered within 10%") {
        HyperCube cube = noise_cube(200, 40, bands, 1.0, 0.02, 808);
        const double c = 1000.0;
        for (std::size_t r = 100; r < 105; ++r)
            for (std::size_t col = 18; col < 23; ++col)
                for (std::size_t b = 0; b < bands; ++b)
                    cube.at(r, col, b) += static_cast<float>(c * 1.0 * k.k_per_ppb[b]);
        const RetrievalOutput out = retrieve_xch4(cube, k, 0.05);
        double block_mean = 0.0;
        for (std::size_t r = 100; r < 105; ++r)
            for (std::size_t col = 18; col < 23; ++col)
                block_mean += out.map.at(r, col);
        block_mean /= 25.0;
        REQUIRE_THAT(block_mean, WithinRel(c, 0.10));
    }

    SECTION("per-column jacobians are honored independently") {
        HyperCube cube = noise_cube(60, 2, bands, 1.0, 0.02, 99);
        for (std::size_t r = 0; r < cube.rows; ++r)
            for (std::size_t b = 0; b < bands; ++b)
                cube.at(r, 1, b) = cube.at(r, 0, b); // identical data, different k
        Eigen::MatrixXd k_cols(2, bands);
        k_cols.row(0) = Eigen::RowVectorXd::Constant(bands, -1e-4);
        k_cols.row(1) = Eigen::RowVectorXd::Constant(bands, -2e-4);
        const RetrievalOutput out = retrieve_xch4(cube, k_cols, 0.05);
        for (std::size_t r = 0; r < cube.rows; ++r) {
            const double a0 = out.map.at(r, 0);
            const double a1 = out.map.at(r, 1);
            if (std::abs(a0) > 1e-6)
                REQUIRE_THAT(a1, WithinRel(0.5 * a0, 1e-6));
        }
    }

    SECTION("degenerate column flagged and filled with the sentinel") {
        HyperCube cube = noise_cube(30, 3, bands, 1.0, 0.02, 7);
        for (std::size_t r = 0; r < cube.rows; ++r)
            for (std::size_t b = 0; b < bands; ++b)
                cube.at(r, 1, b) = 2.5f; // constant column, zero covariance
        const RetrievalOutput out = retrieve_xch4(cube, k, 0.05);
        REQUIRE(out.report.degenerate_count() == 1);
        REQUIRE(out.report.columns[1].degenerate);
        for (std::size_t r = 0; r < cube.rows; ++r)
            REQUIRE(out.map.at(r, 1) == degenerate_fill_ppb);
        REQUIRE_FALSE(out.report.columns[0].degenerate);
        REQUIRE(out.report.columns[0].condition >= 1.0);
    }

    SECTION("band window restricts the filter") {
        const HyperCube cube = noise_cube(50, 4, bands, 1.0, 0.02, 21);
        const RetrievalOutput full = retrieve_xch4(cube, k, 0.05);
        const RetrievalOutput windowed = retrieve_xch4(cube, k, 0.05, {4, 12});
        REQUIRE(windowed.report.window.first == 4);
        REQUIRE(windowed.report.window.last == 12);
        REQUIRE(full.map.values != windowed.map.values);
        REQUIRE_THROWS(retrieve_xch4(cube, k, 0.05, {12, 4}));
        REQUIRE_THROWS(retrieve_xch4(cube, k, 0.05, {0, bands + 1}));
    }

    SECTION("thread count does not change output bytes") {
        const HyperCube cube = noise_cube(64, 24, bands, 1.0, 0.02, 33);
        const RetrievalOutput serial = retrieve_xch4(cube, k, 0.05, {}, 1);
        const RetrievalOutput threaded = retrieve_xch4(cube, k, 0.05, {}, 6);
        REQUIRE(serial.map.values == threaded.map.values);
    }
}
