#pragma once

// Methane plume retrieval and detection toolkit for pushbroom
// hyperspectral radiance cubes: per-column matched filtering, spectral
// recalibration, synthetic plume transfer, and detection metrics.

#include "plumekit/cube.hpp"
#include "plumekit/detection.hpp"
#include "plumekit/io.hpp"
#include "plumekit/masks.hpp"
#include "plumekit/matched_filter.hpp"
#include "plumekit/metrics.hpp"
#include "plumekit/plume_transfer.hpp"
#include "plumekit/raster.hpp"
#include "plumekit/rng.hpp"
#include "plumekit/scene_sim.hpp"
#include "plumekit/spectral.hpp"

namespace plumekit {

inline constexpr const char* version = "0.1.0";

} // namespace plumekit
