#include "scb/plot.hpp"

#include "scb/band_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <limits>
#include <map>

namespace scb {

namespace {

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.3f", v == 0.0 ? 0.0 : v); // avoid "-0.000" from negative zero
    std::string s = buf;
    if (s == "-0.000") s = "0.000";
    return s;
}

std::string escape_xml(const std::string& text) {
    std::string out;
    for (char c : text) {
        switch (c) {
        case '&': out += "&amp;"; break;
        case '<': out += "&lt;"; break;
        case '>': out += "&gt;"; break;
        case '"': out += "&quot;"; break;
        default: out += c;
        }
    }
    return out;
}

std::string level_text(const Level& l, SetType type) {
    if (type == SetType::interval) return "[" + format_real(l.low) + ", " + format_real(l.high) + "]";
    return format_real(l.low);
}

constexpr const char* kInner = "#d7191c";    // red
constexpr const char* kEstimate = "#f2c500"; // yellow (1D)
constexpr const char* kOuter = "#2b83ba";    // blue
constexpr const char* kEstimate2d = "#1a9641"; // green (2D)

struct Frame {
    double left = 70, right = 20, top = 40, bottom = 55;
    double w = 640, h = 480;
    double x0 = 0, x1 = 1, y0 = 0, y1 = 1;
    double px(double x) const { return left + (x - x0) / (x1 - x0) * (w - left - right); }
    double py(double y) const { return h - bottom - (y - y0) / (y1 - y0) * (h - top - bottom); }
};

void pad_range(double& lo, double& hi) {
    if (!(hi > lo)) {
        const double c = lo;
        const double d = std::max(1.0, std::abs(c)) * 0.5;
        lo = c - d;
        hi = c + d;
        return;
    }
    const double d = (hi - lo) * 0.05;
    lo -= d;
    hi += d;
}

std::string svg_open(const Frame& f) {
    return "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + std::to_string(static_cast<int>(f.w)) + "\" height=\"" +
           std::to_string(static_cast<int>(f.h)) + "\" viewBox=\"0 0 " + std::to_string(static_cast<int>(f.w)) + " " +
           std::to_string(static_cast<int>(f.h)) + "\">\n<rect x=\"0\" y=\"0\" width=\"" + std::to_string(static_cast<int>(f.w)) +
           "\" height=\"" + std::to_string(static_cast<int>(f.h)) + "\" fill=\"#ffffff\"/>\n";
}

std::string text_el(double x, double y, const std::string& s, const char* anchor, const std::string& color = "#000000",
                    int size = 12, const std::string& extra = "") {
    return "<text x=\"" + fmt(x) + "\" y=\"" + fmt(y) + "\" font-family=\"sans-serif\" font-size=\"" + std::to_string(size) +
           "\" text-anchor=\"" + anchor + "\" fill=\"" + color + "\"" + extra + ">" + escape_xml(s) + "</text>\n";
}

std::string axes(const Frame& f, const PlotSpec& spec, const std::vector<std::pair<double, std::string>>* xticks = nullptr) {
    std::string s;
    s += "<rect x=\"" + fmt(f.left) + "\" y=\"" + fmt(f.top) + "\" width=\"" + fmt(f.w - f.left - f.right) + "\" height=\"" +
         fmt(f.h - f.top - f.bottom) + "\" fill=\"none\" stroke=\"#000000\" stroke-width=\"1\"/>\n";
    const auto tick_values = [](double lo, double hi) {
        std::vector<double> v;
        for (int k = 0; k <= 4; ++k) v.push_back(lo + (hi - lo) * k / 4.0);
        return v;
    };
    if (xticks) {
        for (const auto& [x, label] : *xticks) s += text_el(f.px(x), f.h - f.bottom + 16, label, "middle", "#000000", 10);
    } else {
        for (double x : tick_values(f.x0, f.x1)) s += text_el(f.px(x), f.h - f.bottom + 16, fmt(x), "middle", "#000000", 10);
    }
    for (double y : tick_values(f.y0, f.y1)) s += text_el(f.left - 6, f.py(y) + 4, fmt(y), "end", "#000000", 10);
    s += text_el((f.left + f.w - f.right) / 2, f.h - 12, spec.xlab, "middle");
    s += text_el(16, (f.top + f.h - f.bottom) / 2, spec.ylab, "middle", "#000000", 12,
                 " transform=\"rotate(-90 16 " + fmt((f.top + f.h - f.bottom) / 2) + ")\"");
    if (!spec.title.empty()) s += text_el(f.w / 2, 22, spec.title, "middle", "#000000", 14);
    return s;
}

// ---------------------------------------------------------------------------
// 1D

std::string render_1d(const SCBand& band, const PlotSpec& spec, const std::vector<RegionSet>& regions) {
    const Domain& d = band.domain;
    const std::size_t n = d.size();
    std::vector<double> xs(n);
    std::vector<std::pair<double, std::string>> ticks;
    const bool discrete = d.kind() == DomainKind::discrete;
    for (std::size_t i = 0; i < n; ++i) {
        xs[i] = discrete ? static_cast<double>(i) : d.x()[i];
        if (discrete) ticks.emplace_back(xs[i], d.labels()[i]);
    }
    Frame f;
    f.w = spec.width;
    f.h = spec.height;
    f.x0 = xs.front();
    f.x1 = xs.back();
    if (!(f.x1 > f.x0)) {
        f.x0 -= 0.5;
        f.x1 += 0.5;
    } else if (discrete) {
        f.x0 -= 0.5;
        f.x1 += 0.5;
    }
    double lo = std::numeric_limits<double>::infinity();
    double hi = -lo;
    for (std::size_t i = 0; i < n; ++i) {
        if (!d.included(i)) continue;
        lo = std::min({lo, band.scb_low[i], band.eta_hat[i]});
        hi = std::max({hi, band.scb_up[i], band.eta_hat[i]});
    }
    for (const auto& r : regions) {
        lo = std::min(lo, r.level.low);
        hi = std::max(hi, r.level.high);
    }
    pad_range(lo, hi);
    f.y0 = lo;
    f.y1 = hi;

    // Cell i spans the midpoints to its neighbours so runs tile the axis.
    std::vector<double> edge(n + 1);
    edge[0] = f.x0;
    edge[n] = f.x1;
    for (std::size_t i = 1; i < n; ++i) edge[i] = (xs[i - 1] + xs[i]) / 2;
    if (n >= 2 && !discrete) {
        edge[0] = xs.front();
        edge[n] = xs.back();
    }

    std::string s = svg_open(f);
    // Band polygon over each run of included cells.
    std::size_t i = 0;
    while (i < n) {
        if (!d.included(i)) {
            ++i;
            continue;
        }
        std::size_t j = i;
        while (j < n && d.included(j)) ++j;
        std::string up;
        std::string down;
        std::string est;
        for (std::size_t k = i; k < j; ++k) {
            up += fmt(f.px(xs[k])) + "," + fmt(f.py(band.scb_up[k])) + " ";
            est += fmt(f.px(xs[k])) + "," + fmt(f.py(band.eta_hat[k])) + " ";
        }
        for (std::size_t k = j; k-- > i;) down += fmt(f.px(xs[k])) + "," + fmt(f.py(band.scb_low[k])) + " ";
        up.pop_back();
        est.pop_back();
        down.pop_back();
        s += "<polygon points=\"" + up + " " + down + "\" fill=\"#bdbdbd\" fill-opacity=\"0.6\" stroke=\"none\"/>\n";
        s += "<polyline points=\"" + est + "\" fill=\"none\" stroke=\"#000000\" stroke-width=\"1.5\"/>\n";
        i = j;
    }

    // Region segments per level; for two-sided sets the lower set sits just below the line.
    for (const auto& r : regions) {
        const double y = r.set_type == SetType::interval ? (r.level.low + r.level.high) / 2 : r.level.low;
        const bool lower_of_pair = r.set_type == SetType::lower && spec.thresholds.set_type == SetType::two_sided;
        const double yoff = spec.thresholds.set_type == SetType::two_sided ? (lower_of_pair ? 3.0 : -3.0) : 0.0;
        s += "<line x1=\"" + fmt(f.left) + "\" y1=\"" + fmt(f.py(y)) + "\" x2=\"" + fmt(f.w - f.right) + "\" y2=\"" +
             fmt(f.py(y)) + "\" stroke=\"#000000\" stroke-width=\"0.5\" stroke-dasharray=\"4,3\"/>\n";
        const auto cls = [&](std::size_t k) -> int {
            if (r.inner[k]) return 1;
            if (r.estimate[k]) return 2;
            if (r.outer[k]) return 3;
            return 0;
        };
        std::size_t k = 0;
        while (k < n) {
            const int c = cls(k);
            std::size_t m = k;
            while (m < n && cls(m) == c) ++m;
            if (c != 0) {
                const char* color = c == 1 ? kInner : c == 2 ? kEstimate : kOuter;
                double xa = edge[k];
                double xb = edge[m];
                if (xb <= xa) { // a single isolated grid point
                    xa = f.px(xs[k]) - 2;
                    xb = f.px(xs[k]) + 2;
                } else {
                    xa = f.px(xa);
                    xb = f.px(xb);
                }
                s += "<line x1=\"" + fmt(xa) + "\" y1=\"" + fmt(f.py(y) + yoff) + "\" x2=\"" + fmt(xb) + "\" y2=\"" +
                     fmt(f.py(y) + yoff) + "\" stroke=\"" + color + "\" stroke-width=\"4\"/>\n";
            }
            k = m;
        }
        if (spec.level_label) {
            s += text_el(f.w - f.right - 4, f.py(y) - 6, level_text(r.level, r.set_type), "end", spec.label_color, 10);
        }
    }
    s += axes(f, spec, discrete ? &ticks : nullptr);
    s += "</svg>\n";
    return s;
}

// ---------------------------------------------------------------------------
// 2D

std::string polyline_el(const Frame& f, const Polyline& p, const char* color) {
    std::string pts;
    for (const auto& q : p.points) pts += fmt(f.px(q[0])) + "," + fmt(f.py(q[1])) + " ";
    if (!pts.empty()) pts.pop_back();
    return std::string(p.closed ? "<polygon" : "<polyline") + " points=\"" + pts + "\" fill=\"none\" stroke=\"" + color +
           "\" stroke-width=\"1.5\"/>\n";
}

struct ContourJob {
    const Field* field;
    double level;
    const char* color;
    bool labelled;
};

std::string render_2d(const SCBand& band, const PlotSpec& spec, const std::vector<RegionSet>& regions) {
    const Domain& d = band.domain;
    const auto& xs = d.x();
    const auto& ys = d.y();
    const std::size_t nx = d.nx();
    const std::size_t ny = d.ny();
    Frame f;
    f.w = spec.width;
    f.h = spec.height;
    f.right = 80;
    const auto cell_edges = [](const std::vector<double>& v) {
        std::vector<double> e(v.size() + 1);
        if (v.size() == 1) {
            e[0] = v[0] - 0.5;
            e[1] = v[0] + 0.5;
            return e;
        }
        for (std::size_t i = 1; i < v.size(); ++i) e[i] = (v[i - 1] + v[i]) / 2;
        e[0] = v[0] - (e[1] - v[0]);
        e[v.size()] = v.back() + (v.back() - e[v.size() - 1]);
        return e;
    };
    const auto ex = cell_edges(xs);
    const auto ey = cell_edges(ys);
    f.x0 = ex.front();
    f.x1 = ex.back();
    f.y0 = ey.front();
    f.y1 = ey.back();

    double lo = std::numeric_limits<double>::infinity();
    double hi = -lo;
    for (std::size_t i = 0; i < d.size(); ++i) {
        if (!d.included(i)) continue;
        lo = std::min(lo, band.eta_hat[i]);
        hi = std::max(hi, band.eta_hat[i]);
    }
    std::string s = svg_open(f);
    for (std::size_t iy = 0; iy < ny; ++iy) {
        for (std::size_t ix = 0; ix < nx; ++ix) {
            const std::size_t c = d.index(iy, ix);
            const std::string color =
                d.included(c) ? palette_color(spec.palette, hi > lo ? (band.eta_hat[c] - lo) / (hi - lo) : 0.5) : "#e0e0e0";
            const double x0 = f.px(ex[ix]);
            const double x1 = f.px(ex[ix + 1]);
            const double y0 = f.py(ey[iy + 1]);
            const double y1 = f.py(ey[iy]);
            s += "<rect x=\"" + fmt(x0) + "\" y=\"" + fmt(y0) + "\" width=\"" + fmt(x1 - x0) + "\" height=\"" + fmt(y1 - y0) +
                 "\" fill=\"" + color + "\" stroke=\"none\"/>\n";
        }
    }

    const Mask* mask = d.has_mask() ? &d.mask() : nullptr;
    for (const auto& r : regions) {
        std::vector<ContourJob> jobs;
        const auto add = [&](double level, bool upper_like) {
            // upper_like: {field >= level} sets, contours of up (outer) and low (inner).
            jobs.push_back({upper_like ? &band.scb_up : &band.scb_low, level, kOuter, false});
            jobs.push_back({&band.eta_hat, level, kEstimate2d, true});
            jobs.push_back({upper_like ? &band.scb_low : &band.scb_up, level, kInner, false});
        };
        if (r.set_type == SetType::interval) {
            add(r.level.low, true);
            add(r.level.high, false);
        } else {
            add(r.level.low, r.set_type == SetType::upper);
        }
        for (const auto& job : jobs) {
            const auto lines = marching_squares(*job.field, xs, ys, job.level, mask);
            for (const auto& p : lines) s += polyline_el(f, p, job.color);
            if (job.labelled && spec.level_label && !lines.empty()) {
                const auto longest = std::max_element(lines.begin(), lines.end(), [](const Polyline& a, const Polyline& b) {
                    return a.points.size() < b.points.size();
                });
                if (longest->points.size() >= spec.min_size && !longest->points.empty()) {
                    const Point2& m = longest->points[longest->points.size() / 2];
                    s += text_el(f.px(m[0]), f.py(m[1]) - 3, format_real(job.level), "middle", spec.label_color, 10);
                }
            }
        }
    }
    // Color bar.
    const double bx = f.w - f.right + 15;
    const double btop = f.top;
    const double bh = f.h - f.top - f.bottom;
    for (int k = 0; k < 50; ++k) {
        const double u = (k + 0.5) / 50.0;
        s += "<rect x=\"" + fmt(bx) + "\" y=\"" + fmt(btop + bh * (1 - (k + 1) / 50.0)) + "\" width=\"14\" height=\"" +
             fmt(bh / 50.0 + 0.2) + "\" fill=\"" + palette_color(spec.palette, u) + "\" stroke=\"none\"/>\n";
    }
    if (std::isfinite(lo)) {
        s += text_el(bx + 18, btop + bh, fmt(lo), "start", "#000000", 10);
        s += text_el(bx + 18, btop + 8, fmt(hi), "start", "#000000", 10);
    }
    s += axes(f, spec);
    s += "</svg>\n";
    return s;
}

} // namespace

// ---------------------------------------------------------------------------
// Marching squares

std::vector<ContourSegment> contour_segments(const Field& field, const std::vector<double>& x,
                                             const std::vector<double>& y, double level, const Mask* mask) {
    const std::size_t nx = x.size();
    const std::size_t ny = y.size();
    if (field.size() != nx * ny) throw Error("shape_mismatch", "field does not match the contour grid");
    if (mask && !mask->empty() && mask->size() != field.size()) throw Error("shape_mismatch", "mask does not match the field");
    std::vector<ContourSegment> out;
    if (nx < 2 || ny < 2) return out;
    const auto idx = [nx](std::size_t ix, std::size_t iy) { return iy * nx + ix; };
    const auto masked = [&](std::size_t i) { return mask && !mask->empty() && (*mask)[i] == 0; };
    const auto hedge = [nx](std::size_t ix, std::size_t iy) { return 2 * (iy * nx + ix); };
    const auto vedge = [nx](std::size_t ix, std::size_t iy) { return 2 * (iy * nx + ix) + 1; };

    for (std::size_t iy = 0; iy + 1 < ny; ++iy) {
        for (std::size_t ix = 0; ix + 1 < nx; ++ix) {
            // Corners counter-clockwise from the lower left.
            const std::size_t c[4] = {idx(ix, iy), idx(ix + 1, iy), idx(ix + 1, iy + 1), idx(ix, iy + 1)};
            if (masked(c[0]) || masked(c[1]) || masked(c[2]) || masked(c[3])) continue;
            const double v[4] = {field[c[0]], field[c[1]], field[c[2]], field[c[3]]};
            const Point2 p[4] = {{x[ix], y[iy]}, {x[ix + 1], y[iy]}, {x[ix + 1], y[iy + 1]}, {x[ix], y[iy + 1]}};
            int code = 0;
            for (int k = 0; k < 4; ++k) {
                if (v[k] >= level) code |= 1 << k;
            }
            if (code == 0 || code == 15) continue;
            // Edge k joins corner k and corner (k+1) % 4.
            const std::size_t edge_id[4] = {hedge(ix, iy), vedge(ix + 1, iy), hedge(ix, iy + 1), vedge(ix, iy)};
            const auto cross = [&](int k) {
                const int a = k;
                const int b = (k + 1) % 4;
                const double t = (level - v[a]) / (v[b] - v[a]);
                return Point2{p[a][0] + t * (p[b][0] - p[a][0]), p[a][1] + t * (p[b][1] - p[a][1])};
            };
            const auto emit = [&](int e1, int e2) {
                out.push_back({cross(e1), cross(e2), edge_id[e1], edge_id[e2]});
            };
            std::vector<int> crossed;
            for (int k = 0; k < 4; ++k) {
                const bool ia = (code >> k) & 1;
                const bool ib = (code >> ((k + 1) % 4)) & 1;
                if (ia != ib) crossed.push_back(k);
            }
            if (crossed.size() == 2) {
                emit(crossed[0], crossed[1]);
            } else {
                // Saddle: corners 0 and 2 agree, 1 and 3 agree.
                const bool center_in = (v[0] + v[1] + v[2] + v[3]) / 4.0 >= level;
                const bool zero_in = code & 1;
                if (center_in == zero_in) {
                    // Corner 0's class joins the center: cut off corners 1 and 3.
                    emit(0, 1);
                    emit(2, 3);
                } else {
                    // Cut off corners 0 and 2.
                    emit(3, 0);
                    emit(1, 2);
                }
            }
        }
    }
    return out;
}

std::vector<Polyline> marching_squares(const Field& field, const std::vector<double>& x, const std::vector<double>& y,
                                       double level, const Mask* mask) {
    const auto segs = contour_segments(field, x, y, level, mask);
    std::map<std::size_t, std::vector<std::size_t>> by_edge;
    std::map<std::size_t, Point2> point_of;
    for (std::size_t k = 0; k < segs.size(); ++k) {
        by_edge[segs[k].edge_a].push_back(k);
        by_edge[segs[k].edge_b].push_back(k);
        point_of[segs[k].edge_a] = segs[k].a;
        point_of[segs[k].edge_b] = segs[k].b;
    }
    std::vector<std::uint8_t> used(segs.size(), 0);
    std::vector<Polyline> out;
    const auto walk = [&](std::size_t start_seg, std::size_t start_edge) {
        Polyline line;
        line.points.push_back(point_of[start_edge]);
        std::size_t seg = start_seg;
        std::size_t edge = start_edge;
        for (;;) {
            used[seg] = 1;
            const std::size_t next_edge = segs[seg].edge_a == edge ? segs[seg].edge_b : segs[seg].edge_a;
            line.points.push_back(point_of[next_edge]);
            if (next_edge == start_edge) {
                line.closed = true;
                line.points.pop_back();
                break;
            }
            std::size_t next_seg = segs.size();
            for (std::size_t cand : by_edge[next_edge]) {
                if (!used[cand]) next_seg = cand;
            }
            if (next_seg == segs.size()) break;
            seg = next_seg;
            edge = next_edge;
        }
        out.push_back(std::move(line));
    };
    // Open chains start at edges shared by a single segment.
    for (const auto& [edge, list] : by_edge) {
        if (list.size() == 1 && !used[list.front()]) walk(list.front(), edge);
    }
    for (std::size_t k = 0; k < segs.size(); ++k) {
        if (!used[k]) walk(k, segs[k].edge_a);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Palettes

const std::vector<std::string>& palette_stops(const std::string& name) {
    static const std::map<std::string, std::vector<std::string>> ramps = {
        {"Spectral",
         {"#9e0142", "#d53e4f", "#f46d43", "#fdae61", "#fee08b", "#ffffbf", "#e6f598", "#abdda4", "#66c2a5", "#3288bd",
          "#5e4fa2"}},
        {"Viridis",
         {"#440154", "#482878", "#3e4989", "#31688e", "#26828e", "#1f9e89", "#35b779", "#6ece58", "#b5de2b", "#fde725"}},
        {"Greys", {"#ffffff", "#f0f0f0", "#d9d9d9", "#bdbdbd", "#969696", "#737373", "#525252", "#252525", "#000000"}},
    };
    const auto it = ramps.find(name);
    if (it == ramps.end()) throw Error("invalid_argument", "unknown palette '" + name + "'");
    return it->second;
}

std::string palette_color(const std::string& name, double u) {
    const auto& stops = palette_stops(name);
    u = std::clamp(std::isfinite(u) ? u : 0.0, 0.0, 1.0);
    const double pos = u * static_cast<double>(stops.size() - 1);
    const auto k = std::min(static_cast<std::size_t>(pos), stops.size() - 2);
    const double t = pos - static_cast<double>(k);
    const auto parse = [](const std::string& hex, int off) { return std::stoi(hex.substr(static_cast<std::size_t>(1 + off), 2), nullptr, 16); };
    char buf[8];
    int rgb[3];
    for (int ch = 0; ch < 3; ++ch) {
        const double a = parse(stops[k], 2 * ch);
        const double b = parse(stops[k + 1], 2 * ch);
        rgb[ch] = static_cast<int>(std::lround(a + t * (b - a)));
    }
    std::snprintf(buf, sizeof buf, "#%02x%02x%02x", rgb[0], rgb[1], rgb[2]);
    return buf;
}

// ---------------------------------------------------------------------------
// Documents

void PlotSpec::validate() const {
    thresholds.validate();
    (void)palette_stops(palette);
    if (width < 100 || height < 100) throw Error("invalid_argument", "plot size must be at least 100x100");
}

std::vector<std::string> render_plot(const SCBand& band, const PlotSpec& spec) {
    spec.validate();
    validate_band(band);
    const bool two_d = band.domain.kind() == DomainKind::grid2d;
    const auto render = [&](const std::vector<RegionSet>& regions) {
        return two_d ? render_2d(band, spec, regions) : render_1d(band, spec, regions);
    };
    const std::vector<RegionSet> all = invert(band, spec.thresholds);
    if (spec.together) return {render(all)};
    std::vector<std::string> docs;
    const std::size_t per = spec.thresholds.set_type == SetType::two_sided ? 2 : 1;
    for (std::size_t k = 0; k < all.size(); k += per) {
        docs.push_back(render(std::vector<RegionSet>(all.begin() + static_cast<std::ptrdiff_t>(k),
                                                     all.begin() + static_cast<std::ptrdiff_t>(k + per))));
    }
    return docs;
}

std::vector<std::string> write_plot(const SCBand& band, const PlotSpec& spec, const std::string& path) {
    const auto docs = render_plot(band, spec);
    std::vector<std::string> paths;
    if (docs.size() == 1 && spec.together) {
        write_text_file(path, docs.front());
        paths.push_back(path);
        return paths;
    }
    const std::filesystem::path p(path);
    const std::string stem = (p.parent_path() / p.stem()).string();
    for (std::size_t k = 0; k < docs.size(); ++k) {
        const std::string out = stem + "_level" + std::to_string(k + 1) + ".svg";
        write_text_file(out, docs[k]);
        paths.push_back(out);
    }
    return paths;
}

} // namespace scb
