#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <vector>

namespace plumekit {

// One run of consecutive pixels in row-major order.
struct Run {
    std::uint64_t start = 0;
    std::uint64_t len = 0;

    friend bool operator==(const Run&, const Run&) = default;
};

// Tight bounding box, inclusive on both ends.
struct BBox {
    std::size_t row0 = 0, col0 = 0, row1 = 0, col1 = 0;

    friend bool operator==(const BBox&, const BBox&) = default;
};

struct MaskInstance {
    int id = 0;
    std::vector<Run> rle; // over row-major pixel order, sorted, non-overlapping
    BBox bbox;            // derived from the runs, never serialized

    friend bool operator==(const MaskInstance& a, const MaskInstance& b) {
        return a.id == b.id && a.rle == b.rle;
    }
};

struct InstanceMaskSet {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<MaskInstance> instances;

    friend bool operator==(const InstanceMaskSet&, const InstanceMaskSet&) = default;
};

inline std::vector<std::uint64_t> decode_rle(const std::vector<Run>& rle) {
    std::vector<std::uint64_t> pixels;
    for (const Run& run : rle)
        for (std::uint64_t i = 0; i < run.len; ++i)
            pixels.push_back(run.start + i);
    return pixels;
}

// Canonical RLE of a sorted, duplicate-free pixel index list: runs sorted
// by start, maximal (adjacent pixels merged).
inline std::vector<Run> encode_rle(const std::vector<std::uint64_t>& sorted_pixels) {
    std::vector<Run> rle;
    for (std::uint64_t p : sorted_pixels) {
        if (!rle.empty() && rle.back().start + rle.back().len == p)
            ++rle.back().len;
        else
            rle.push_back({p, 1});
    }
    return rle;
}

inline BBox bbox_of_pixels(const std::vector<std::uint64_t>& pixels, std::size_t cols) {
    BBox b{std::numeric_limits<std::size_t>::max(), std::numeric_limits<std::size_t>::max(), 0, 0};
    for (std::uint64_t p : pixels) {
        const std::size_t r = static_cast<std::size_t>(p / cols);
        const std::size_t c = static_cast<std::size_t>(p % cols);
        b.row0 = std::min(b.row0, r);
        b.col0 = std::min(b.col0, c);
        b.row1 = std::max(b.row1, r);
        b.col1 = std::max(b.col1, c);
    }
    return b;
}

inline MaskInstance make_instance(int id, std::vector<std::uint64_t> pixels, std::size_t cols) {
    std::sort(pixels.begin(), pixels.end());
    pixels.erase(std::unique(pixels.begin(), pixels.end()), pixels.end());
    MaskInstance inst;
    inst.id = id;
    inst.rle = encode_rle(pixels);
    inst.bbox = bbox_of_pixels(pixels, cols);
    return inst;
}

inline void validate(const InstanceMaskSet& set) {
    if (set.rows == 0 || set.cols == 0)
        throw std::invalid_argument("InstanceMaskSet: empty grid");
    const std::uint64_t npix = static_cast<std::uint64_t>(set.rows) * set.cols;
    for (const MaskInstance& inst : set.instances) {
        if (inst.rle.empty())
            throw std::invalid_argument("InstanceMaskSet: instance with no pixels");
        std::uint64_t prev_end = 0;
        bool first = true;
        for (const Run& run : inst.rle) {
            if (run.len == 0)
                throw std::invalid_argument("InstanceMaskSet: zero-length run");
            if (run.start >= npix || run.len > npix - run.start)
                throw std::invalid_argument("InstanceMaskSet: run beyond grid");
            if (!first && run.start < prev_end)
                throw std::invalid_argument("InstanceMaskSet: overlapping runs in one instance");
            prev_end = run.start + run.len;
            first = false;
        }
    }
}

// Recompute every instance's bounding box from its runs.
inline void refresh_bboxes(InstanceMaskSet& set) {
    for (MaskInstance& inst : set.instances)
        inst.bbox = bbox_of_pixels(decode_rle(inst.rle), set.cols);
}

// Union of all instances as a dense row-major bitmap.
inline std::vector<std::uint8_t> union_bitmap(const InstanceMaskSet& set) {
    std::vector<std::uint8_t> grid(set.rows * set.cols, 0);
    for (const MaskInstance& inst : set.instances)
        for (const Run& run : inst.rle)
            for (std::uint64_t i = 0; i < run.len; ++i)
                grid[run.start + i] = 1;
    return grid;
}

inline std::uint64_t pixel_count(const MaskInstance& inst) {
    std::uint64_t n = 0;
    for (const Run& run : inst.rle)
        n += run.len;
    return n;
}

// Connected components of a dense bitmap, 4- or 8-connectivity. Components
// come back ordered by their first row-major pixel, each pixel list sorted.
inline std::vector<std::vector<std::uint64_t>>
connected_components(const std::vector<std::uint8_t>& grid, std::size_t rows, std::size_t cols,
                     int connectivity) {
    if (connectivity != 4 && connectivity != 8)
        throw std::invalid_argument("connected_components: connectivity must be 4 or 8");
    if (grid.size() != rows * cols)
        throw std::invalid_argument("connected_components: grid size mismatch");

    static constexpr int dr8[] = {-1, -1, -1, 0, 0, 1, 1, 1};
    static constexpr int dc8[] = {-1, 0, 1, -1, 1, -1, 0, 1};
    static constexpr int dr4[] = {-1, 0, 0, 1};
    static constexpr int dc4[] = {0, -1, 1, 0};
    const int* drs = connectivity == 8 ? dr8 : dr4;
    const int* dcs = connectivity == 8 ? dc8 : dc4;
    const int nn = connectivity;

    std::vector<std::uint8_t> visited(grid.size(), 0);
    std::vector<std::vector<std::uint64_t>> components;
    std::vector<std::uint64_t> stack;
    for (std::uint64_t start = 0; start < grid.size(); ++start) {
        if (!grid[start] || visited[start])
            continue;
        std::vector<std::uint64_t> comp;
        stack.assign(1, start);
        visited[start] = 1;
        while (!stack.empty()) {
            const std::uint64_t p = stack.back();
            stack.pop_back();
            comp.push_back(p);
            const std::ptrdiff_t r = static_cast<std::ptrdiff_t>(p / cols);
            const std::ptrdiff_t c = static_cast<std::ptrdiff_t>(p % cols);
            for (int k = 0; k < nn; ++k) {
                const std::ptrdiff_t rr = r + drs[k];
                const std::ptrdiff_t cc = c + dcs[k];
                if (rr < 0 || cc < 0 || rr >= static_cast<std::ptrdiff_t>(rows) ||
                    cc >= static_cast<std::ptrdiff_t>(cols))
                    continue;
                const std::uint64_t q = static_cast<std::uint64_t>(rr) * cols + cc;
                if (grid[q] && !visited[q]) {
                    visited[q] = 1;
                    stack.push_back(q);
                }
            }
        }
        std::sort(comp.begin(), comp.end());
        components.push_back(std::move(comp));
    }
    return components;
}

} // namespace plumekit
