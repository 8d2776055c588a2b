#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <numbers>
#include <numeric>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "plumekit/masks.hpp"
#include "plumekit/raster.hpp"
#include "plumekit/rng.hpp"

namespace plumekit {

// ---- gamma model of in-plume enhancement values ----

struct GammaParams {
    double shape = 0.0; // dimensionless
    double scale = 0.0; // ppb
};

inline void validate(const GammaParams& p) {
    if (!(p.shape > 0.0) || !std::isfinite(p.shape) || !(p.scale > 0.0) ||
        !std::isfinite(p.scale))
        throw std::invalid_argument("GammaParams: shape and scale must be finite and > 0");
}

// Method-of-moments fit: shape = mean^2/var, scale = var/mean, with the
// population (1/n) variance.
inline GammaParams fit_gamma(const std::vector<double>& values) {
    if (values.size() < 2)
        throw std::invalid_argument("fit_gamma: needs >= 2 samples");
    double mean = 0.0;
    for (double v : values) {
        if (!(v > 0.0) || !std::isfinite(v))
            throw std::invalid_argument("fit_gamma: samples must be finite and > 0");
        mean += v;
    }
    mean /= static_cast<double>(values.size());
    double var = 0.0;
    for (double v : values)
        var += (v - mean) * (v - mean);
    var /= static_cast<double>(values.size());
    if (!(var > 0.0))
        throw std::invalid_argument("fit_gamma: zero variance");
    return {mean * mean / var, var / mean};
}

inline std::vector<double> sample_gamma(const GammaParams& params, std::size_t n,
                                        std::uint64_t seed) {
    validate(params);
    if (n == 0)
        throw std::invalid_argument("sample_gamma: n must be >= 1");
    Rng rng(seed);
    std::vector<double> out(n);
    for (double& v : out)
        v = rng.gamma(params.shape, params.scale);
    return out;
}

// Empirical bag of fitted per-plume parameters, sampled uniformly at
// generation time.
struct GammaPrior {
    std::vector<GammaParams> entries;
};

inline void validate(const GammaPrior& prior) {
    if (prior.entries.empty())
        throw std::invalid_argument("GammaPrior: empty");
    for (const auto& p : prior.entries)
        validate(p);
}

// ---- histogram specification ----

// Rank remapping: output[i] = sorted(targets)[rank of source[i]], source
// ties broken by original index order.
inline std::vector<double> histogram_specify(const std::vector<double>& source,
                                             const std::vector<double>& target_samples) {
    if (source.size() != target_samples.size())
        throw std::invalid_argument("histogram_specify: length mismatch");
    std::vector<std::size_t> order(source.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return source[a] < source[b]; });
    std::vector<double> sorted_targets = target_samples;
    std::sort(sorted_targets.begin(), sorted_targets.end());
    std::vector<double> out(source.size());
    for (std::size_t rank = 0; rank < order.size(); ++rank)
        out[order[rank]] = sorted_targets[rank];
    return out;
}

// ---- donor templates and placement ----

struct PixelRC {
    int row = 0;
    int col = 0;

    friend bool operator==(const PixelRC&, const PixelRC&) = default;
};

// Donor plume shape: pixel offsets relative to the bounding-box origin
// plus per-pixel enhancements.
struct PlumeTemplate {
    std::vector<PixelRC> pixels;
    std::vector<double> values; // ppb, > 0
    std::string source_id;

    std::size_t n_pix() const { return pixels.size(); }
};

inline void validate(const PlumeTemplate& tpl) {
    if (tpl.pixels.empty() || tpl.pixels.size() != tpl.values.size())
        throw std::invalid_argument("PlumeTemplate: empty or mismatched pixels/values");
    for (double v : tpl.values)
        if (!(v > 0.0) || !std::isfinite(v))
            throw std::invalid_argument("PlumeTemplate: values must be finite and > 0");
    std::vector<PixelRC> sorted = tpl.pixels;
    std::sort(sorted.begin(), sorted.end(), [](const PixelRC& a, const PixelRC& b) {
        return a.row != b.row ? a.row < b.row : a.col < b.col;
    });
    if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end())
        throw std::invalid_argument("PlumeTemplate: duplicate pixels");
}

// One template per mask instance: offsets relative to the instance bbox,
// values read from the companion enhancement map.
inline std::vector<PlumeTemplate> extract_templates(const InstanceMaskSet& masks,
                                                    const EnhancementMap& values_map,
                                                    const std::string& source_id) {
    validate(masks);
    validate(values_map);
    if (masks.rows != values_map.rows || masks.cols != values_map.cols)
        throw std::invalid_argument("extract_templates: mask/map shape mismatch");
    std::vector<PlumeTemplate> out;
    for (const MaskInstance& inst : masks.instances) {
        const BBox box = bbox_of_pixels(decode_rle(inst.rle), masks.cols);
        PlumeTemplate tpl;
        tpl.source_id = source_id + "#" + std::to_string(inst.id);
        for (std::uint64_t p : decode_rle(inst.rle)) {
            const std::size_t r = static_cast<std::size_t>(p / masks.cols);
            const std::size_t c = static_cast<std::size_t>(p % masks.cols);
            const double v = values_map.at(r, c);
            if (!(v > 0.0))
                throw std::invalid_argument("extract_templates: non-positive enhancement at "
                                            "plume pixel in " + tpl.source_id);
            tpl.pixels.push_back({static_cast<int>(r - box.row0), static_cast<int>(c - box.col0)});
            tpl.values.push_back(v);
        }
        out.push_back(std::move(tpl));
    }
    return out;
}

// A template placed on a concrete grid: absolute row-major pixel indices,
// sorted, with the carried values.
struct PlacedPlume {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<std::uint64_t> pixels;
    std::vector<double> values;
    double rotation_deg = 0.0;
    PixelRC position; // translation applied to the rotated offsets
};

namespace detail {

inline double snap_trig(double v) {
    if (std::abs(v) < 1e-12)
        return 0.0;
    if (std::abs(v - 1.0) < 1e-12)
        return 1.0;
    if (std::abs(v + 1.0) < 1e-12)
        return -1.0;
    return v;
}

// Nearest-neighbor rotation about the offset centroid. Targets collide on
// coarse shapes; the max value wins so enhancements stay positive and the
// mask stays binary.
inline std::vector<std::pair<PixelRC, double>> rotate_offsets(const PlumeTemplate& tpl,
                                                              double rotation_deg) {
    const double theta = rotation_deg * std::numbers::pi / 180.0;
    const double ct = snap_trig(std::cos(theta));
    const double st = snap_trig(std::sin(theta));
    double crow = 0.0, ccol = 0.0;
    for (const PixelRC& p : tpl.pixels) {
        crow += p.row;
        ccol += p.col;
    }
    crow /= static_cast<double>(tpl.pixels.size());
    ccol /= static_cast<double>(tpl.pixels.size());

    std::map<std::pair<int, int>, double> merged;
    for (std::size_t i = 0; i < tpl.pixels.size(); ++i) {
        const double dr = tpl.pixels[i].row - crow;
        const double dc = tpl.pixels[i].col - ccol;
        const int tr = static_cast<int>(std::llround(crow + ct * dr - st * dc));
        const int tc = static_cast<int>(std::llround(ccol + st * dr + ct * dc));
        auto [it, inserted] = merged.try_emplace({tr, tc}, tpl.values[i]);
        if (!inserted)
            it->second = std::max(it->second, tpl.values[i]);
    }
    std::vector<std::pair<PixelRC, double>> out;
    out.reserve(merged.size());
    for (const auto& [rc, v] : merged)
        out.push_back({{rc.first, rc.second}, v});
    return out;
}

inline bool place_offsets(const std::vector<std::pair<PixelRC, double>>& offsets,
                          PixelRC position, std::size_t rows, std::size_t cols,
                          PlacedPlume& out) {
    out.pixels.clear();
    out.values.clear();
    for (const auto& [p, v] : offsets) {
        const long r = static_cast<long>(p.row) + position.row;
        const long c = static_cast<long>(p.col) + position.col;
        if (r < 0 || c < 0 || static_cast<std::size_t>(r) >= rows ||
            static_cast<std::size_t>(c) >= cols)
            return false;
        out.pixels.push_back(static_cast<std::uint64_t>(r) * cols + c);
        out.values.push_back(v);
    }
    // map iteration is (row, col)-ordered, which is row-major order
    out.position = position;
    return true;
}

} // namespace detail

// Rotate about the centroid, translate to `position`, keep values. When
// the result leaves the grid, rotation and position are redrawn from the
// seeded stream until it fits or the retry cap trips.
inline PlacedPlume transform_plume(const PlumeTemplate& tpl, double rotation_deg,
                                   PixelRC position, std::size_t rows, std::size_t cols,
                                   std::uint64_t seed, int max_retries = 100) {
    validate(tpl);
    if (rows == 0 || cols == 0)
        throw std::invalid_argument("transform_plume: empty bounds");
    PlacedPlume placed;
    placed.rows = rows;
    placed.cols = cols;
    placed.rotation_deg = rotation_deg;
    Rng rng(seed);
    for (int attempt = 0; attempt <= max_retries; ++attempt) {
        const auto offsets = detail::rotate_offsets(tpl, rotation_deg);
        if (detail::place_offsets(offsets, position, rows, cols, placed)) {
            placed.rotation_deg = rotation_deg;
            return placed;
        }
        rotation_deg = rng.uniform(0.0, 360.0);
        position = {static_cast<int>(rng.uniform_index(rows)),
                    static_cast<int>(rng.uniform_index(cols))};
    }
    throw std::runtime_error("transform_plume: retry cap exhausted, template does not fit");
}

// out = background + plume on the placed pixels; everything else is the
// background bit for bit.
inline EnhancementMap composite_additive(const EnhancementMap& background,
                                         const PlacedPlume& placed) {
    validate(background);
    if (placed.rows != background.rows || placed.cols != background.cols)
        throw std::invalid_argument("composite_additive: shape mismatch");
    EnhancementMap out = background;
    for (std::size_t i = 0; i < placed.pixels.size(); ++i) {
        const std::uint64_t p = placed.pixels[i];
        if (p >= out.values.size())
            throw std::invalid_argument("composite_additive: pixel out of bounds");
        out.values[p] += static_cast<float>(placed.values[i]);
    }
    return out;
}

// Signal-to-background ratio: mean placed enhancement over the population
// std of background values in the bbox window dilated by `dilation`,
// excluding the plume pixels themselves.
inline double compute_sbr(const EnhancementMap& background, const PlacedPlume& placed,
                          std::size_t dilation = 10, std::size_t min_background = 30) {
    if (placed.pixels.empty())
        throw std::invalid_argument("compute_sbr: empty plume");
    if (placed.rows != background.rows || placed.cols != background.cols)
        throw std::invalid_argument("compute_sbr: shape mismatch");
    const BBox box = bbox_of_pixels(placed.pixels, background.cols);
    const std::size_t r0 = box.row0 > dilation ? box.row0 - dilation : 0;
    const std::size_t c0 = box.col0 > dilation ? box.col0 - dilation : 0;
    const std::size_t r1 = std::min(background.rows - 1, box.row1 + dilation);
    const std::size_t c1 = std::min(background.cols - 1, box.col1 + dilation);

    std::vector<std::uint8_t> is_plume((r1 - r0 + 1) * (c1 - c0 + 1), 0);
    const std::size_t wcols = c1 - c0 + 1;
    for (std::uint64_t p : placed.pixels) {
        const std::size_t r = static_cast<std::size_t>(p / background.cols);
        const std::size_t c = static_cast<std::size_t>(p % background.cols);
        is_plume[(r - r0) * wcols + (c - c0)] = 1;
    }

    double sum = 0.0, sum2 = 0.0;
    std::size_t n = 0;
    for (std::size_t r = r0; r <= r1; ++r) {
        for (std::size_t c = c0; c <= c1; ++c) {
            if (is_plume[(r - r0) * wcols + (c - c0)])
                continue;
            const double v = background.at(r, c);
            sum += v;
            sum2 += v * v;
            ++n;
        }
    }
    if (n < min_background)
        throw std::runtime_error("compute_sbr: only " + std::to_string(n) +
                                 " background pixels in window, need >= " +
                                 std::to_string(min_background));
    const double mean_bg = sum / static_cast<double>(n);
    const double var_bg = sum2 / static_cast<double>(n) - mean_bg * mean_bg;
    if (!(var_bg > 0.0))
        throw std::runtime_error("compute_sbr: zero background std");
    const double mean_plume =
        std::accumulate(placed.values.begin(), placed.values.end(), 0.0) /
        static_cast<double>(placed.values.size());
    return mean_plume / std::sqrt(var_bg);
}

// ---- sample generation ----

struct SyntheticSample {
    EnhancementMap map;
    InstanceMaskSet truth;
    std::vector<double> sbr; // per accepted instance, same order as truth
    std::uint64_t rng_seed = 0;
    std::vector<std::string> warnings;
};

// Transfer n_plumes donors onto one background. Pure function of the
// inputs and seed. Placements that leave the grid or would overlap an
// already accepted instance are redrawn; gamma draws that miss the SBR
// criterion are redrawn with fresh sub-seeds up to 20 tries, after which
// the plume is skipped with a warning. Ground-truth instances never
// overlap.
inline SyntheticSample generate_sample(const std::vector<PlumeTemplate>& templates,
                                       const std::vector<EnhancementMap>& backgrounds,
                                       const GammaPrior& prior, double sbr_min,
                                       std::size_t n_plumes, std::uint64_t seed) {
    if (templates.empty())
        throw std::invalid_argument("generate_sample: no templates");
    if (backgrounds.empty())
        throw std::invalid_argument("generate_sample: no backgrounds");
    validate(prior);
    if (!(sbr_min >= 0.0))
        throw std::invalid_argument("generate_sample: sbr_min must be >= 0");

    constexpr int gamma_tries = 20;
    constexpr int placement_tries = 20;

    SyntheticSample sample;
    sample.rng_seed = seed;
    {
        Rng pick(derive_seed(seed, 0));
        sample.map = backgrounds[pick.uniform_index(backgrounds.size())];
        validate(sample.map);
    }
    sample.truth.rows = sample.map.rows;
    sample.truth.cols = sample.map.cols;

    std::vector<std::uint8_t> occupied(sample.map.size(), 0);

    for (std::size_t i = 0; i < n_plumes; ++i) {
        Rng rng(derive_seed(seed, 1 + i));
        const PlumeTemplate& tpl = templates[rng.uniform_index(templates.size())];
        const GammaParams params = prior.entries[rng.uniform_index(prior.entries.size())];

        // Geometry first: values do not affect the pixel set.
        PlacedPlume placed;
        bool have_placement = false;
        for (int attempt = 0; attempt < placement_tries && !have_placement; ++attempt) {
            const double rot = rng.uniform(0.0, 360.0);
            const PixelRC pos{static_cast<int>(rng.uniform_index(sample.map.rows)),
                              static_cast<int>(rng.uniform_index(sample.map.cols))};
            try {
                placed = transform_plume(tpl, rot, pos, sample.map.rows, sample.map.cols,
                                         derive_seed(seed, 1 + i, 100 + attempt));
            } catch (const std::runtime_error&) {
                break; // template cannot fit this grid at all
            }
            have_placement = true;
            for (std::uint64_t p : placed.pixels) {
                if (occupied[p]) {
                    have_placement = false;
                    break;
                }
            }
        }
        if (!have_placement) {
            sample.warnings.push_back("plume " + std::to_string(i) + " (" + tpl.source_id +
                                      "): no non-overlapping placement found, skipped");
            continue;
        }

        bool accepted = false;
        bool aborted = false;
        for (int t = 0; t < gamma_tries && !accepted && !aborted; ++t) {
            const std::vector<double> draws =
                sample_gamma(params, tpl.n_pix(), derive_seed(seed, 1 + i, t));
            const std::vector<double> specified = histogram_specify(tpl.values, draws);
            PlumeTemplate revalued = tpl;
            revalued.values = specified;
            const PlacedPlume candidate =
                transform_plume(revalued, placed.rotation_deg, placed.position, sample.map.rows,
                                sample.map.cols, derive_seed(seed, 1 + i, 999));
            double sbr;
            try {
                sbr = compute_sbr(sample.map, candidate);
            } catch (const std::runtime_error& e) {
                sample.warnings.push_back("plume " + std::to_string(i) + ": " +
                                          std::string(e.what()) + ", skipped");
                aborted = true;
                continue;
            }
            if (sbr >= sbr_min) {
                sample.map = composite_additive(sample.map, candidate);
                const int id = static_cast<int>(sample.truth.instances.size()) + 1;
                sample.truth.instances.push_back(
                    make_instance(id, candidate.pixels, sample.map.cols));
                sample.sbr.push_back(sbr);
                for (std::uint64_t p : candidate.pixels)
                    occupied[p] = 1;
                accepted = true;
            }
        }
        if (!accepted && !aborted)
            sample.warnings.push_back("plume " + std::to_string(i) +
                                      ": SBR criterion not met after " +
                                      std::to_string(gamma_tries) + " draws, skipped");
    }
    return sample;
}

} // namespace plumekit
