#pragma once

#include <string>

#include "vpipe/simulator.hpp"

namespace vpipe {

// Renders a timeline as an SVG document: one row per device with the
// compute stream on top and a thin communication sub-row below, fixed
// color per pass kind, legend embedded. Purely presentational.
// pixels_per_unit <= 0 auto-fits the makespan to a 1200px-wide canvas.
std::string render_timeline_svg(const Timeline& timeline,
                                double pixels_per_unit = 0.0);

}  // namespace vpipe
