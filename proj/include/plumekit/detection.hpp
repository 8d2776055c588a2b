#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

#include "plumekit/masks.hpp"
#include "plumekit/raster.hpp"

namespace plumekit {

struct HysteresisParams {
    double low = 0.0;
    double high = 0.0;
};

inline void validate(const HysteresisParams& p) {
    if (!(p.low >= 0.0 && p.low <= p.high && p.high <= 1.0))
        throw std::invalid_argument("HysteresisParams: need 0 <= low <= high <= 1");
}

// Keep each connected component of {p >= low} that contains at least one
// pixel with p >= high. Detects the whole plume, not just the bright core
// near the source. Instance ids follow the first row-major pixel order.
inline InstanceMaskSet hysteresis_threshold(const ProbabilityMap& prob,
                                            const HysteresisParams& params, int connectivity) {
    validate(prob);
    validate(params);
    std::vector<std::uint8_t> above_low(prob.size(), 0);
    for (std::size_t i = 0; i < prob.size(); ++i)
        above_low[i] = prob.values[i] >= params.low ? 1 : 0;

    InstanceMaskSet out;
    out.rows = prob.rows;
    out.cols = prob.cols;
    int id = 1;
    for (auto& comp : connected_components(above_low, prob.rows, prob.cols, connectivity)) {
        const bool seeded = std::any_of(comp.begin(), comp.end(), [&](std::uint64_t p) {
            return prob.values[p] >= params.high;
        });
        if (seeded)
            out.instances.push_back(make_instance(id++, std::move(comp), prob.cols));
    }
    return out;
}

// CNN surrogate so the pipeline runs end to end without a model: robust
// z-score of the enhancement map squashed through a logistic centered at
// z = 3. Median/MAD keep plume pixels from contaminating the statistics.
inline ProbabilityMap baseline_probability(const EnhancementMap& map) {
    validate(map);
    if (map.size() < 100)
        throw std::invalid_argument("baseline_probability: needs >= 100 pixels");

    std::vector<double> sorted(map.values.begin(), map.values.end());
    std::sort(sorted.begin(), sorted.end());
    const auto median_of = [](const std::vector<double>& v) {
        const std::size_t n = v.size();
        return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
    };
    const double median = median_of(sorted);
    std::vector<double> abs_dev(sorted.size());
    for (std::size_t i = 0; i < sorted.size(); ++i)
        abs_dev[i] = std::abs(sorted[i] - median);
    std::sort(abs_dev.begin(), abs_dev.end());
    const double mad = median_of(abs_dev);
    if (!(mad > 0.0))
        throw std::runtime_error("baseline_probability: zero MAD");

    const double robust_std = 1.4826 * mad;
    ProbabilityMap prob = ProbabilityMap::zeros(map.rows, map.cols);
    for (std::size_t i = 0; i < map.size(); ++i) {
        const double z = (map.values[i] - median) / robust_std;
        prob.values[i] = static_cast<float>(1.0 / (1.0 + std::exp(-(z - 3.0))));
    }
    return prob;
}

} // namespace plumekit
