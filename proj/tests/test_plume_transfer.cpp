#include <catch2/catch_amalgamated.hpp>

#include <plumekit/plume_transfer.hpp>
#include <plumekit/rng.hpp>

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <set>

#include "support.hpp"

using namespace plumekit;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

PlumeTemplate l_shape_template() {
    PlumeTemplate tpl;
    tpl.pixels = {{0, 0}, {1, 0}, {2, 0}, {2, 1}, {2, 2}};
    tpl.values = {100.0, 150.0, 200.0, 250.0, 300.0};
    tpl.source_id = "test-L";
    return tpl;
}

EnhancementMap noisy_background(std::size_t rows, std::size_t cols, double std_dev,
                                std::uint64_t seed) {
    auto map = EnhancementMap::zeros(rows, cols);
    Rng rng(seed);
    for (float& v : map.values)
        v = static_cast<float>(rng.normal(0.0, std_dev));
    return map;
}

// Independent restatement of the placement rule for the oracle check:
// round the rotated offset about the centroid, duplicates keep max.
std::map<std::pair<int, int>, double> rotate_oracle(const PlumeTemplate& tpl, double deg) {
    const double th = deg * std::numbers::pi / 180.0;
    double cr = 0.0, cc = 0.0;
    for (const auto& p : tpl.pixels) {
        cr += p.row;
        cc += p.col;
    }
    cr /= static_cast<double>(tpl.pixels.size());
    cc /= static_cast<double>(tpl.pixels.size());
    std::map<std::pair<int, int>, double> out;
    for (std::size_t i = 0; i < tpl.pixels.size(); ++i) {
        const double dr = tpl.pixels[i].row - cr;
        const double dc = tpl.pixels[i].col - cc;
        const int r = static_cast<int>(std::llround(cr + std::cos(th) * dr - std::sin(th) * dc));
        const int c = static_cast<int>(std::llround(cc + std::sin(th) * dr + std::cos(th) * dc));
        auto [it, fresh] = out.try_emplace({r, c}, tpl.values[i]);
        if (!fresh)
            it->second = std::max(it->second, tpl.values[i]);
    }
    return out;
}

} // namespace

TEST_CASE("fit_gamma method of moments") {
    SECTION("mean 4 variance 8 gives shape 2 scale 2") {
        const double s = 2.0 * std::sqrt(2.0);
        const GammaParams p = fit_gamma({4.0 - s, 4.0 + s});
        REQUIRE_THAT(p.shape, WithinRel(2.0, 1e-12));
        REQUIRE_THAT(p.scale, WithinRel(2.0, 1e-12));
    }
    SECTION("large-sample fit recovers the generator") {
        const std::vector<double> draws = sample_gamma({3.0, 150.0}, 100000, 42);
        const GammaParams p = fit_gamma(draws);
        REQUIRE_THAT(p.shape, WithinRel(3.0, 0.05));
        REQUIRE_THAT(p.scale, WithinRel(150.0, 0.05));
    }
    SECTION("degenerate inputs rejected") {
        REQUIRE_THROWS_WITH(fit_gamma({1.0, 1.0, 1.0}),
                            Catch::Matchers::ContainsSubstring("zero variance"));
        REQUIRE_THROWS(fit_gamma({1.0}));
        REQUIRE_THROWS(fit_gamma({1.0, -2.0}));
        REQUIRE_THROWS(fit_gamma({0.0, 2.0}));
    }
}

TEST_CASE("sample_gamma determinism and distribution") {
    SECTION("same seed gives identical sequences") {
        REQUIRE(sample_gamma({2.0, 2.0}, 1000, 7) == sample_gamma({2.0, 2.0}, 1000, 7));
        REQUIRE(sample_gamma({2.0, 2.0}, 1000, 7) != sample_gamma({2.0, 2.0}, 1000, 8));
    }
    SECTION("moments of a million draws") {
        const std::vector<double> draws = sample_gamma({2.0, 2.0}, 1000000, 11);
        double mean = 0.0;
        for (double v : draws)
            mean += v;
        mean /= static_cast<double>(draws.size());
        double var = 0.0;
        for (double v : draws)
            var += (v - mean) * (v - mean);
        var /= static_cast<double>(draws.size());
        REQUIRE_THAT(mean, WithinAbs(4.0, 0.02));
        REQUIRE_THAT(var, WithinAbs(8.0, 0.1));
    }
    SECTION("shape 1 matches the exponential distribution (KS < 0.01)") {
        std::vector<double> draws = sample_gamma({1.0, 3.0}, 100000, 13);
        std::sort(draws.begin(), draws.end());
        double ks = 0.0;
        const double n = static_cast<double>(draws.size());
        for (std::size_t i = 0; i < draws.size(); ++i) {
            const double cdf = 1.0 - std::exp(-draws[i] / 3.0);
            ks = std::max(ks, std::abs(cdf - static_cast<double>(i + 1) / n));
            ks = std::max(ks, std::abs(cdf - static_cast<double>(i) / n));
        }
        REQUIRE(ks < 0.01);
    }
    SECTION("shape below one still has correct mean") {
        const std::vector<double> draws = sample_gamma({0.5, 10.0}, 200000, 17);
        double mean = 0.0;
        for (double v : draws) {
            REQUIRE(v > 0.0);
            mean += v;
        }
        mean /= static_cast<double>(draws.size());
        REQUIRE_THAT(mean, WithinRel(5.0, 0.02));
    }
}

TEST_CASE("histogram_specify rank remapping") {
    SECTION("basic rank mapping") {
        REQUIRE(histogram_specify({3.0, 1.0, 2.0}, {10.0, 20.0, 30.0}) ==
                std::vector<double>{30.0, 10.0, 20.0});
    }
    SECTION("identity when targets equal source") {
        const std::vector<double> src = {5.0, 2.0, 9.0, 2.5};
        REQUIRE(histogram_specify(src, src) == src);
    }
    SECTION("stable tie-break by original index") {
        REQUIRE(histogram_specify({5.0, 5.0, 1.0}, {7.0, 8.0, 9.0}) ==
                std::vector<double>{8.0, 9.0, 7.0});
    }
    SECTION("rank preservation on random data") {
        Rng rng(23);
        std::vector<double> src(200), tgt(200);
        for (std::size_t i = 0; i < src.size(); ++i) {
            src[i] = rng.uniform(0.0, 1000.0);
            tgt[i] = rng.gamma(2.0, 100.0);
        }
        const std::vector<double> out = histogram_specify(src, tgt);
        for (std::size_t i = 0; i < src.size(); ++i)
            for (std::size_t j = 0; j < src.size(); ++j)
                if (src[i] < src[j])
                    REQUIRE(out[i] <= out[j]);
    }
    SECTION("length mismatch rejected") {
        REQUIRE_THROWS(histogram_specify({1.0, 2.0}, {1.0}));
    }
}

TEST_CASE("transform_plume geometry") {
    const PlumeTemplate tpl = l_shape_template();

    SECTION("identity transform keeps pixels") {
        const PlacedPlume placed = transform_plume(tpl, 0.0, {0, 0}, 30, 30, 1);
        std::vector<std::uint64_t> expected;
        for (const auto& p : tpl.pixels)
            expected.push_back(static_cast<std::uint64_t>(p.row) * 30 + p.col);
        std::sort(expected.begin(), expected.end());
        REQUIRE(placed.pixels == expected);
        // values follow their pixels
        for (std::size_t i = 0; i < placed.pixels.size(); ++i) {
            const auto p = placed.pixels[i];
            for (std::size_t j = 0; j < tpl.pixels.size(); ++j)
                if (static_cast<std::uint64_t>(tpl.pixels[j].row) * 30 + tpl.pixels[j].col == p)
                    REQUIRE(placed.values[i] == tpl.values[j]);
        }
    }

    SECTION("180 degrees is a point reflection through the centroid") {
        const PlacedPlume placed = transform_plume(tpl, 180.0, {10, 10}, 30, 30, 2);
        // closed form for R = -I: target = round(2c - p)
        double cr = 0.0, cc = 0.0;
        for (const auto& p : tpl.pixels) {
            cr += p.row;
            cc += p.col;
        }
        cr /= 5.0;
        cc /= 5.0;
        std::set<std::uint64_t> expected;
        for (const auto& p : tpl.pixels) {
            const long r = std::lround(2.0 * cr - p.row) + 10;
            const long c = std::lround(2.0 * cc - p.col) + 10;
            expected.insert(static_cast<std::uint64_t>(r) * 30 + c);
        }
        REQUIRE(std::set<std::uint64_t>(placed.pixels.begin(), placed.pixels.end()) == expected);
        REQUIRE(placed.pixels.size() == tpl.pixels.size()); // no collisions for this shape
    }

    SECTION("rotation matches the independent oracle, collisions keep max") {
        PlumeTemplate square;
        square.pixels = {{0, 0}, {0, 1}, {1, 0}, {1, 1}};
        square.values = {1.0, 2.0, 3.0, 4.0};
        square.source_id = "sq";
        for (double deg : {45.0, 30.0, 135.0, 222.5}) {
            const auto oracle = rotate_oracle(square, deg);
            const PlacedPlume placed = transform_plume(square, deg, {8, 8}, 32, 32, 3);
            REQUIRE(placed.pixels.size() == oracle.size());
            for (std::size_t i = 0; i < placed.pixels.size(); ++i) {
                const int r = static_cast<int>(placed.pixels[i] / 32) - 8;
                const int c = static_cast<int>(placed.pixels[i] % 32) - 8;
                REQUIRE(oracle.count({r, c}) == 1);
                REQUIRE(placed.values[i] == oracle.at({r, c}));
            }
        }
    }

    SECTION("out-of-bounds placement resamples deterministically") {
        const PlacedPlume a = transform_plume(tpl, 0.0, {-5, -5}, 30, 30, 77);
        const PlacedPlume b = transform_plume(tpl, 0.0, {-5, -5}, 30, 30, 77);
        REQUIRE(a.pixels == b.pixels);
        REQUIRE_FALSE(a.pixels.empty());
    }

    SECTION("template larger than the map exhausts the retry cap") {
        PlumeTemplate big;
        for (int r = 0; r < 50; ++r)
            for (int c = 0; c < 50; ++c) {
                big.pixels.push_back({r, c});
                big.values.push_back(1.0);
            }
        big.source_id = "big";
        REQUIRE_THROWS_WITH(transform_plume(big, 0.0, {0, 0}, 20, 20, 5),
                            Catch::Matchers::ContainsSubstring("retry cap"));
    }
}

TEST_CASE("composite_additive") {
    const EnhancementMap bg = noisy_background(16, 16, 25.0, 3);

    SECTION("empty placement returns the background bit for bit") {
        PlacedPlume none;
        none.rows = 16;
        none.cols = 16;
        const EnhancementMap out = composite_additive(bg, none);
        REQUIRE(out.values == bg.values);
    }

    SECTION("zero background carries the plume values") {
        const EnhancementMap zeros = EnhancementMap::zeros(16, 16);
        PlacedPlume placed;
        placed.rows = placed.cols = 16;
        placed.pixels = {17, 18, 33};
        placed.values = {100.0, 200.0, 300.0};
        const EnhancementMap out = composite_additive(zeros, placed);
        REQUIRE(out.values[17] == 100.0f);
        REQUIRE(out.values[18] == 200.0f);
        REQUIRE(out.values[33] == 300.0f);
        std::size_t nonzero = 0;
        for (float v : out.values)
            if (v != 0.0f)
                ++nonzero;
        REQUIRE(nonzero == 3);
    }

    SECTION("overlapping composites add both contributions") {
        const EnhancementMap zeros = EnhancementMap::zeros(16, 16);
        PlacedPlume a, b;
        a.rows = a.cols = b.rows = b.cols = 16;
        a.pixels = {40, 41};
        a.values = {10.0, 20.0};
        b.pixels = {41, 42};
        b.values = {5.0, 7.0};
        const EnhancementMap out = composite_additive(composite_additive(zeros, a), b);
        REQUIRE(out.values[40] == 10.0f);
        REQUIRE(out.values[41] == 25.0f);
        REQUIRE(out.values[42] == 7.0f);
    }
}

TEST_CASE("compute_sbr") {
    SECTION("plume mean 100 over background std 50 gives exactly 2") {
        // checkerboard +-50 background has population std exactly 50
        EnhancementMap bg = EnhancementMap::zeros(30, 30);
        for (std::size_t r = 0; r < 30; ++r)
            for (std::size_t c = 0; c < 30; ++c)
                bg.at(r, c) = ((r + c) % 2 == 0) ? 50.0f : -50.0f;
        PlacedPlume placed;
        placed.rows = placed.cols = 30;
        placed.pixels = {15 * 30 + 14, 15 * 30 + 15};
        placed.values = {80.0, 120.0};
        const double sbr = compute_sbr(bg, placed);
        REQUIRE_THAT(sbr, WithinRel(2.0, 1e-3));
    }

    SECTION("constant background is a zero-std error") {
        EnhancementMap bg = EnhancementMap::zeros(30, 30);
        PlacedPlume placed;
        placed.rows = placed.cols = 30;
        placed.pixels = {15 * 30 + 15};
        placed.values = {100.0};
        REQUIRE_THROWS_WITH(compute_sbr(bg, placed),
                            Catch::Matchers::ContainsSubstring("zero background std"));
    }

    SECTION("too small a window is an error") {
        const EnhancementMap bg = noisy_background(4, 4, 10.0, 9);
        PlacedPlume placed;
        placed.rows = placed.cols = 4;
        placed.pixels = {5};
        placed.values = {100.0};
        REQUIRE_THROWS_WITH(compute_sbr(bg, placed),
                            Catch::Matchers::ContainsSubstring("background pixels"));
    }

    SECTION("gaussian background converges to mean/std") {
        const double sigma = 30.0;
        const EnhancementMap bg = noisy_background(60, 60, sigma, 31);
        PlacedPlume placed;
        placed.rows = placed.cols = 60;
        for (std::uint64_t i = 0; i < 4; ++i) {
            placed.pixels.push_back(30 * 60 + 28 + i);
            placed.values.push_back(240.0);
        }
        const double sbr = compute_sbr(bg, placed); // window >= 500 background px
        REQUIRE_THAT(sbr, WithinRel(240.0 / sigma, 0.10));
    }
}

TEST_CASE("extract_templates from mask plus enhancement map") {
    InstanceMaskSet masks;
    masks.rows = 8;
    masks.cols = 8;
    masks.instances.push_back(make_instance(4, {2 * 8 + 3, 2 * 8 + 4, 3 * 8 + 3}, 8));
    EnhancementMap values = EnhancementMap::zeros(8, 8);
    values.at(2, 3) = 111.0f;
    values.at(2, 4) = 222.0f;
    values.at(3, 3) = 333.0f;

    const auto templates = extract_templates(masks, values, "donor");
    REQUIRE(templates.size() == 1);
    REQUIRE(templates[0].source_id == "donor#4");
    REQUIRE(templates[0].pixels ==
            std::vector<PixelRC>{{0, 0}, {0, 1}, {1, 0}}); // offsets from bbox origin
    REQUIRE(templates[0].values == std::vector<double>{111.0, 222.0, 333.0});

    SECTION("non-positive enhancement at a plume pixel is an error") {
        values.at(3, 3) = 0.0f;
        REQUIRE_THROWS_WITH(extract_templates(masks, values, "donor"),
                            Catch::Matchers::ContainsSubstring("non-positive"));
    }
}

TEST_CASE("generate_sample") {
    const std::vector<PlumeTemplate> templates = {l_shape_template()};
    const std::vector<EnhancementMap> backgrounds = {noisy_background(48, 48, 25.0, 1000),
                                                     noisy_background(48, 48, 40.0, 1001)};
    GammaPrior prior;
    prior.entries = {{4.0, 100.0}, {2.0, 200.0}};

    SECTION("sbr_min zero accepts the first draw for every plume") {
        const SyntheticSample s = generate_sample(templates, backgrounds, prior, 0.0, 3, 5);
        REQUIRE(s.truth.instances.size() == 3);
        REQUIRE(s.sbr.size() == 3);
        REQUIRE(s.warnings.empty());
    }

    SECTION("same seed gives a bit-identical sample") {
        const SyntheticSample a = generate_sample(templates, backgrounds, prior, 1.0, 4, 99);
        const SyntheticSample b = generate_sample(templates, backgrounds, prior, 1.0, 4, 99);
        REQUIRE(a.map.values == b.map.values);
        REQUIRE(a.truth == b.truth);
        REQUIRE(a.sbr == b.sbr);
        const SyntheticSample c = generate_sample(templates, backgrounds, prior, 1.0, 4, 100);
        REQUIRE(a.map.values != c.map.values);
    }

    SECTION("recorded SBR respects the acceptance threshold") {
        for (std::uint64_t seed = 0; seed < 20; ++seed) {
            const SyntheticSample s =
                generate_sample(templates, backgrounds, prior, 3.0, 3, seed);
            for (double sbr : s.sbr)
                REQUIRE(sbr >= 3.0);
        }
    }

    SECTION("background pixels outside the truth masks are untouched") {
        const SyntheticSample s = generate_sample(templates, backgrounds, prior, 0.0, 3, 7);
        // reproduce the background pick: stream 0 selects the background
        Rng pick(derive_seed(7, 0));
        const EnhancementMap& bg = backgrounds[pick.uniform_index(backgrounds.size())];
        const std::vector<std::uint8_t> covered = union_bitmap(s.truth);
        for (std::size_t i = 0; i < s.map.values.size(); ++i) {
            if (!covered[i])
                REQUIRE(s.map.values[i] == bg.values[i]);
            else
                REQUIRE(s.map.values[i] != bg.values[i]);
        }
    }

    SECTION("truth masks match the placed pixel sets and never overlap") {
        const SyntheticSample s = generate_sample(templates, backgrounds, prior, 0.0, 6, 21);
        std::set<std::uint64_t> seen;
        for (const MaskInstance& inst : s.truth.instances) {
            // rotation may merge pixels (max rule), never grow the set
            REQUIRE(pixel_count(inst) <= templates[0].n_pix());
            REQUIRE(pixel_count(inst) >= 1);
            for (std::uint64_t p : decode_rle(inst.rle)) {
                REQUIRE(seen.count(p) == 0);
                seen.insert(p);
            }
        }
    }

    SECTION("impossible SBR threshold skips plumes with warnings") {
        const SyntheticSample s =
            generate_sample(templates, backgrounds, prior, 1e9, 2, 3);
        REQUIRE(s.truth.instances.empty());
        REQUIRE(s.warnings.size() == 2);
    }

    SECTION("empty inputs rejected") {
        REQUIRE_THROWS(generate_sample({}, backgrounds, prior, 0.0, 1, 1));
        REQUIRE_THROWS(generate_sample(templates, {}, prior, 0.0, 1, 1));
        REQUIRE_THROWS(generate_sample(templates, backgrounds, GammaPrior{}, 0.0, 1, 1));
    }
}
