#pragma once

/**
 * Dependency-free SVG rendering of 2-D decision regions.
 *
 * Two panels share one data window: the classifier before editing and the
 * classifier after. Each panel rasterizes the predicted class over a square
 * grid, merges equal-class runs per row into single rectangles, then draws
 * the training points, the flipped-label disk outline, and the edit points
 * on top.
 */

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "common.hpp"
#include "synthetic.hpp"
#include "tensor.hpp"

namespace grace {

using PointClassifier = std::function<std::size_t(double, double)>;

struct SvgOptions {
    std::size_t grid = 200;       // cells per panel side
    double panel_px = 400.0;      // panel edge length in pixels
    double margin_frac = 0.12;    // data window padding around the points
};

namespace detail {

inline std::string svg_num(double v) {
    // Two decimals keep the file small; pixel coordinates need no more.
    const double r = std::round(v * 100.0) / 100.0;
    std::ostringstream s;
    s << r;
    return s.str();
}

inline const char* region_fill(std::size_t label) {
    static const char* fills[] = {"#c9ddf2", "#f9ddc0", "#d9f2c9", "#ecd0f0"};
    return fills[label % 4];
}

inline const char* point_fill(std::size_t label) {
    static const char* fills[] = {"#1f5fa8", "#d2691e", "#3e8e24", "#8e3ea0"};
    return fills[label % 4];
}

struct DataWindow {
    double xmin, xmax, ymin, ymax;
};

inline DataWindow window_around(const SyntheticData& data, double margin_frac) {
    DataWindow w{-1.0, 1.0, -1.0, 1.0};
    bool first = true;
    auto take = [&](const LabeledDataset& ds) {
        for (const Var& p : ds.inputs) {
            const double x = p->data[0], y = p->data[1];
            if (first) {
                w = DataWindow{x, x, y, y};
                first = false;
                continue;
            }
            w.xmin = std::min(w.xmin, x);
            w.xmax = std::max(w.xmax, x);
            w.ymin = std::min(w.ymin, y);
            w.ymax = std::max(w.ymax, y);
        }
    };
    take(data.train);
    take(data.edits.candidates);
    const double mx = (w.xmax - w.xmin) * margin_frac + 1e-9;
    const double my = (w.ymax - w.ymin) * margin_frac + 1e-9;
    return DataWindow{w.xmin - mx, w.xmax + mx, w.ymin - my, w.ymax + my};
}

// One panel: rasterized regions, then the overlays. ox is the panel's left
// edge in page coordinates.
inline void render_panel(std::ostringstream& out, const PointClassifier& classify,
                         const SyntheticData& data, const SyntheticSpec& spec, const DataWindow& w,
                         const SvgOptions& opt, double ox, double oy, const std::string& title) {
    const double cell = opt.panel_px / static_cast<double>(opt.grid);
    const double dx = (w.xmax - w.xmin) / static_cast<double>(opt.grid);
    const double dy = (w.ymax - w.ymin) / static_cast<double>(opt.grid);
    auto px = [&](double x) { return ox + (x - w.xmin) / (w.xmax - w.xmin) * opt.panel_px; };
    auto py = [&](double y) { return oy + (w.ymax - y) / (w.ymax - w.ymin) * opt.panel_px; };

    out << "<text x=\"" << svg_num(ox + opt.panel_px / 2) << "\" y=\"" << svg_num(oy - 12)
        << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"16\">" << title << "</text>\n";

    for (std::size_t j = 0; j < opt.grid; ++j) {
        const double y = w.ymax - (static_cast<double>(j) + 0.5) * dy;
        std::size_t run_start = 0;
        std::size_t run_label = classify(w.xmin + 0.5 * dx, y);
        auto flush = [&](std::size_t end) {
            out << "<rect x=\"" << svg_num(ox + static_cast<double>(run_start) * cell) << "\" y=\""
                << svg_num(oy + static_cast<double>(j) * cell) << "\" width=\""
                << svg_num(static_cast<double>(end - run_start) * cell) << "\" height=\"" << svg_num(cell)
                << "\" fill=\"" << region_fill(run_label) << "\"/>\n";
        };
        for (std::size_t i = 1; i < opt.grid; ++i) {
            const std::size_t label = classify(w.xmin + (static_cast<double>(i) + 0.5) * dx, y);
            if (label != run_label) {
                flush(i);
                run_start = i;
                run_label = label;
            }
        }
        flush(opt.grid);
    }

    for (std::size_t i = 0; i < data.train.size(); ++i) {
        const Var& p = data.train.inputs[i];
        out << "<circle cx=\"" << svg_num(px(p->data[0])) << "\" cy=\"" << svg_num(py(p->data[1]))
            << "\" r=\"2.5\" fill=\"" << point_fill(data.train.labels[i]) << "\" fill-opacity=\"0.8\"/>\n";
    }

    // The flipped-label disk, drawn to scale with the data window.
    out << "<circle cx=\"" << svg_num(px(spec.flip_center[0])) << "\" cy=\"" << svg_num(py(spec.flip_center[1]))
        << "\" r=\"" << svg_num(spec.flip_radius / (w.xmax - w.xmin) * opt.panel_px)
        << "\" fill=\"none\" stroke=\"#333\" stroke-width=\"1.5\" stroke-dasharray=\"5,3\"/>\n";

    for (std::size_t i = 0; i < data.edits.candidates.size(); ++i) {
        const Var& p = data.edits.candidates.inputs[i];
        out << "<circle cx=\"" << svg_num(px(p->data[0])) << "\" cy=\"" << svg_num(py(p->data[1]))
            << "\" r=\"3.5\" fill=\"" << point_fill(data.edits.candidates.labels[i])
            << "\" stroke=\"#000\" stroke-width=\"1\"/>\n";
    }

    out << "<rect x=\"" << svg_num(ox) << "\" y=\"" << svg_num(oy) << "\" width=\"" << svg_num(opt.panel_px)
        << "\" height=\"" << svg_num(opt.panel_px)
        << "\" fill=\"none\" stroke=\"#555\" stroke-width=\"1\"/>\n";
}

}  // namespace detail

// Writes the before/after comparison for one run. Classifiers take raw 2-D
// coordinates so the caller decides what "before" and "after" mean.
inline void write_decision_svg(const std::string& path, const PointClassifier& before,
                               const PointClassifier& after, const SyntheticData& data,
                               const SyntheticSpec& spec, const SvgOptions& opt = SvgOptions{}) {
    if (opt.grid < 2) throw ConfigError("write_decision_svg: grid must be at least 2");
    if (data.train.size() == 0) throw ArgumentError("write_decision_svg: no training points");

    const detail::DataWindow w = detail::window_around(data, opt.margin_frac);
    const double gap = 40.0, margin = 20.0, top = 40.0;
    const double width = margin * 2 + opt.panel_px * 2 + gap;
    const double height = top + opt.panel_px + margin;

    std::ostringstream out;
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << detail::svg_num(width) << "\" height=\""
        << detail::svg_num(height) << "\" viewBox=\"0 0 " << detail::svg_num(width) << ' '
        << detail::svg_num(height) << "\">\n";
    out << "<rect width=\"100%\" height=\"100%\" fill=\"#ffffff\"/>\n";
    detail::render_panel(out, before, data, spec, w, opt, margin, top, "before editing");
    detail::render_panel(out, after, data, spec, w, opt, margin + opt.panel_px + gap, top, "after editing");
    out << "</svg>\n";

    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("write_decision_svg: cannot open " + path);
    f << out.str();
    if (!f) throw IoError("write_decision_svg: write failed for " + path);
}

}  // namespace grace
