// Contour extraction and SVG rendering of bands and confidence regions.
#pragma once

#include "scb/core.hpp"
#include "scb/inverse_sets.hpp"

#include <array>
#include <string>
#include <vector>

namespace scb {

using Point2 = std::array<double, 2>;

/// One contour crossing inside a grid cell. Edge ids identify the cell edge
/// each endpoint lies on: horizontal edge (ix, iy)-(ix+1, iy) has id
/// 2 * (iy * nx + ix), vertical edge (ix, iy)-(ix, iy+1) has id 2 * (iy * nx + ix) + 1.
struct ContourSegment {
    Point2 a;
    Point2 b;
    std::size_t edge_a = 0;
    std::size_t edge_b = 0;
};

struct Polyline {
    std::vector<Point2> points;
    bool closed = false;
};

/// Marching squares over a [ny, nx] row-major field sampled at (x[ix], y[iy]).
/// A vertex is inside when its value is >= level. Saddles are resolved by
/// comparing the cell average with the level; cells touching a masked vertex
/// produce nothing.
std::vector<ContourSegment> contour_segments(const Field& field, const std::vector<double>& x,
                                             const std::vector<double>& y, double level, const Mask* mask = nullptr);

/// Segments joined through shared edges into maximal chains.
std::vector<Polyline> marching_squares(const Field& field, const std::vector<double>& x, const std::vector<double>& y,
                                       double level, const Mask* mask = nullptr);

/// Named color ramps: "Spectral", "Viridis", "Greys".
const std::vector<std::string>& palette_stops(const std::string& name);
std::string palette_color(const std::string& name, double u); // u in [0, 1]

struct PlotSpec {
    ThresholdSpec thresholds;
    bool together = true;
    std::string xlab = "x";
    std::string ylab = "y";
    std::string title;
    std::string palette = "Spectral";
    bool level_label = true;
    std::size_t min_size = 5;       // minimum contour point count for a level label
    std::string label_color = "#000000";
    int width = 640;
    int height = 480;

    void validate() const;
};

/// One SVG document per level when together is false, otherwise one.
std::vector<std::string> render_plot(const SCBand& band, const PlotSpec& spec);

/// Writes render_plot output. A single document goes to `path`; per-level
/// documents go to `<stem>_level<k>.svg` (k from 1). Returns the paths.
std::vector<std::string> write_plot(const SCBand& band, const PlotSpec& spec, const std::string& path);

} // namespace scb
