#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "plumekit/detection.hpp"
#include "plumekit/masks.hpp"
#include "plumekit/raster.hpp"

namespace plumekit {

struct MatchCounts {
    std::size_t n_pred = 0;
    std::size_t n_true = 0;
    std::size_t tp_pred = 0;      // predictions touching >= 1 truth instance
    std::size_t matched_true = 0; // truth instances touched by >= 1 prediction
};

struct EvalReport {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    double iou = 0.0;
    double miou = 0.0;
    MatchCounts counts;
    // Vacuous conventions (no predictions / no truth) report 1.0 with the
    // flag set, so CSV output stays numeric and the reader is warned.
    bool precision_vacuous = false;
    bool recall_vacuous = false;
    bool miou_vacuous = false;
};

namespace detail {

inline void require_same_grid(const InstanceMaskSet& a, const InstanceMaskSet& b,
                              const char* what) {
    if (a.rows != b.rows || a.cols != b.cols)
        throw std::invalid_argument(std::string(what) + ": grid shape mismatch");
}

} // namespace detail

// Mask-basis matching: a prediction is a true positive if it intersects
// any ground-truth mask.
inline MatchCounts match_masks(const InstanceMaskSet& pred, const InstanceMaskSet& truth) {
    detail::require_same_grid(pred, truth, "match_masks");
    MatchCounts counts;
    counts.n_pred = pred.instances.size();
    counts.n_true = truth.instances.size();

    const std::vector<std::uint8_t> truth_union = union_bitmap(truth);
    for (const MaskInstance& p : pred.instances) {
        bool hit = false;
        for (const Run& run : p.rle) {
            for (std::uint64_t i = run.start; i < run.start + run.len && !hit; ++i)
                hit = truth_union[i] != 0;
            if (hit)
                break;
        }
        if (hit)
            ++counts.tp_pred;
    }
    const std::vector<std::uint8_t> pred_union = union_bitmap(pred);
    for (const MaskInstance& t : truth.instances) {
        bool hit = false;
        for (const Run& run : t.rle) {
            for (std::uint64_t i = run.start; i < run.start + run.len && !hit; ++i)
                hit = pred_union[i] != 0;
            if (hit)
                break;
        }
        if (hit)
            ++counts.matched_true;
    }
    return counts;
}

// Pooled pixel IoU over the unions of all instances. 1.0 when both sides
// are empty.
inline double pixel_iou(const InstanceMaskSet& pred, const InstanceMaskSet& truth) {
    detail::require_same_grid(pred, truth, "pixel_iou");
    const std::vector<std::uint8_t> p = union_bitmap(pred);
    const std::vector<std::uint8_t> t = union_bitmap(truth);
    std::uint64_t inter = 0, uni = 0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        inter += (p[i] & t[i]);
        uni += (p[i] | t[i]);
    }
    return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

namespace detail {

// IoU of one truth instance against the union of the predicted instances
// that intersect it. Exactly matched instances score 1 regardless of what
// is predicted elsewhere; undetected instances score 0, which is what
// drags mIoU below IoU when small plumes are missed.
inline double instance_iou(const MaskInstance& g,
                           const std::vector<std::vector<std::uint64_t>>& pred_pixel_sets,
                           std::vector<std::uint8_t>& scratch) {
    std::uint64_t g_pixels = 0;
    for (const Run& run : g.rle) {
        g_pixels += run.len;
        for (std::uint64_t i = run.start; i < run.start + run.len; ++i)
            scratch[i] = 1;
    }
    std::uint64_t inter = 0, extra = 0;
    for (const auto& pixels : pred_pixel_sets) {
        bool touches = false;
        for (std::uint64_t p : pixels) {
            if (scratch[p]) {
                touches = true;
                break;
            }
        }
        if (!touches)
            continue;
        for (std::uint64_t p : pixels) {
            if (scratch[p] == 1) {
                scratch[p] = 2; // counted intersection pixel
                ++inter;
            } else if (scratch[p] == 0) {
                scratch[p] = 3; // counted prediction-only pixel
                ++extra;
            }
        }
    }
    // reset scratch
    for (const Run& run : g.rle)
        for (std::uint64_t i = run.start; i < run.start + run.len; ++i)
            scratch[i] = 0;
    for (const auto& pixels : pred_pixel_sets)
        for (std::uint64_t p : pixels)
            scratch[p] = 0;
    const std::uint64_t uni = g_pixels + extra;
    return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

} // namespace detail

// Mean over ground-truth instances of IoU(instance, union of the
// predictions intersecting it).
inline double mean_iou(const InstanceMaskSet& pred, const InstanceMaskSet& truth) {
    detail::require_same_grid(pred, truth, "mean_iou");
    if (truth.instances.empty())
        return 1.0;
    std::vector<std::vector<std::uint64_t>> pred_pixel_sets;
    pred_pixel_sets.reserve(pred.instances.size());
    for (const MaskInstance& p : pred.instances)
        pred_pixel_sets.push_back(decode_rle(p.rle));
    std::vector<std::uint8_t> scratch(truth.rows * truth.cols, 0);
    double sum = 0.0;
    for (const MaskInstance& g : truth.instances)
        sum += detail::instance_iou(g, pred_pixel_sets, scratch);
    return sum / static_cast<double>(truth.instances.size());
}

inline EvalReport evaluate(const InstanceMaskSet& pred, const InstanceMaskSet& truth) {
    EvalReport r;
    r.counts = match_masks(pred, truth);
    if (r.counts.n_pred == 0) {
        r.precision = 1.0;
        r.precision_vacuous = true;
    } else {
        r.precision = static_cast<double>(r.counts.tp_pred) / r.counts.n_pred;
    }
    if (r.counts.n_true == 0) {
        r.recall = 1.0;
        r.recall_vacuous = true;
        r.miou_vacuous = true;
    } else {
        r.recall = static_cast<double>(r.counts.matched_true) / r.counts.n_true;
    }
    r.f1 = (r.precision + r.recall) > 0.0
               ? 2.0 * r.precision * r.recall / (r.precision + r.recall)
               : 0.0;
    r.iou = pixel_iou(pred, truth);
    r.miou = mean_iou(pred, truth);
    return r;
}

// Micro-averaged dataset evaluation: counts and pixel tallies are summed
// over scenes before any ratio is taken.
class DatasetAccumulator {
public:
    void add(const InstanceMaskSet& pred, const InstanceMaskSet& truth) {
        const MatchCounts c = match_masks(pred, truth);
        counts_.n_pred += c.n_pred;
        counts_.n_true += c.n_true;
        counts_.tp_pred += c.tp_pred;
        counts_.matched_true += c.matched_true;

        const std::vector<std::uint8_t> p = union_bitmap(pred);
        const std::vector<std::uint8_t> t = union_bitmap(truth);
        for (std::size_t i = 0; i < p.size(); ++i) {
            inter_ += (p[i] & t[i]);
            union_ += (p[i] | t[i]);
        }
        std::vector<std::vector<std::uint64_t>> pred_pixel_sets;
        pred_pixel_sets.reserve(pred.instances.size());
        for (const MaskInstance& pi : pred.instances)
            pred_pixel_sets.push_back(decode_rle(pi.rle));
        std::vector<std::uint8_t> scratch(truth.rows * truth.cols, 0);
        for (const MaskInstance& g : truth.instances) {
            miou_sum_ += detail::instance_iou(g, pred_pixel_sets, scratch);
            ++miou_count_;
        }
    }

    EvalReport report() const {
        EvalReport r;
        r.counts = counts_;
        if (counts_.n_pred == 0) {
            r.precision = 1.0;
            r.precision_vacuous = true;
        } else {
            r.precision = static_cast<double>(counts_.tp_pred) / counts_.n_pred;
        }
        if (counts_.n_true == 0) {
            r.recall = 1.0;
            r.recall_vacuous = true;
        } else {
            r.recall = static_cast<double>(counts_.matched_true) / counts_.n_true;
        }
        r.f1 = (r.precision + r.recall) > 0.0
                   ? 2.0 * r.precision * r.recall / (r.precision + r.recall)
                   : 0.0;
        r.iou = union_ == 0 ? 1.0 : static_cast<double>(inter_) / static_cast<double>(union_);
        if (miou_count_ == 0) {
            r.miou = 1.0;
            r.miou_vacuous = true;
        } else {
            r.miou = miou_sum_ / static_cast<double>(miou_count_);
        }
        return r;
    }

private:
    MatchCounts counts_;
    std::uint64_t inter_ = 0;
    std::uint64_t union_ = 0;
    double miou_sum_ = 0.0;
    std::size_t miou_count_ = 0;
};

struct SweepRow {
    double low = 0.0;
    double high = 0.0;
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    double iou = 0.0;
    double miou = 0.0;
    std::size_t n_pred = 0;
    std::size_t n_true = 0;
};

// Hysteresis threshold sweep over a dataset; one row per (low, high) pair
// with low <= high, metrics micro-averaged over all scenes.
inline std::vector<SweepRow> sweep(const std::vector<ProbabilityMap>& probs,
                                   const std::vector<InstanceMaskSet>& truths,
                                   const std::vector<double>& low_grid,
                                   const std::vector<double>& high_grid, int connectivity) {
    if (probs.size() != truths.size())
        throw std::invalid_argument("sweep: probability/truth list length mismatch");
    if (probs.empty())
        throw std::invalid_argument("sweep: empty dataset");
    for (double v : low_grid)
        if (!(v >= 0.0 && v <= 1.0))
            throw std::invalid_argument("sweep: low grid value outside [0,1]");
    for (double v : high_grid)
        if (!(v >= 0.0 && v <= 1.0))
            throw std::invalid_argument("sweep: high grid value outside [0,1]");

    std::vector<SweepRow> rows;
    for (double low : low_grid) {
        for (double high : high_grid) {
            if (high < low)
                continue;
            DatasetAccumulator acc;
            for (std::size_t i = 0; i < probs.size(); ++i) {
                const InstanceMaskSet pred =
                    hysteresis_threshold(probs[i], {low, high}, connectivity);
                acc.add(pred, truths[i]);
            }
            const EvalReport r = acc.report();
            rows.push_back({low, high, r.precision, r.recall, r.f1, r.iou, r.miou,
                            r.counts.n_pred, r.counts.n_true});
        }
    }
    return rows;
}

// Best row by IoU or F1; ties favor the larger high, then the larger low.
inline SweepRow select_best(const std::vector<SweepRow>& table, const std::string& criterion) {
    if (table.empty())
        throw std::invalid_argument("select_best: empty table");
    if (criterion != "iou" && criterion != "f1")
        throw std::invalid_argument("select_best: criterion must be \"iou\" or \"f1\"");
    const auto key = [&](const SweepRow& r) { return criterion == "iou" ? r.iou : r.f1; };
    const SweepRow* best = &table.front();
    for (const SweepRow& r : table) {
        const double kr = key(r), kb = key(*best);
        if (kr > kb || (kr == kb && (r.high > best->high ||
                                     (r.high == best->high && r.low > best->low))))
            best = &r;
    }
    return *best;
}

} // namespace plumekit
