#include "fasp/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>

namespace fasp {

namespace {

std::string fmt(const char* spec, double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), spec, v);
    return buf;
}

// modes in order of first appearance, each with its points sorted by target
std::vector<std::pair<std::string, std::vector<sweep_point>>> by_mode(
    const std::vector<sweep_point>& points) {
    std::vector<std::pair<std::string, std::vector<sweep_point>>> out;
    for (const auto& p : points) {
        auto it = std::find_if(out.begin(), out.end(),
                               [&](const auto& e) { return e.first == p.mode; });
        if (it == out.end()) {
            out.push_back({p.mode, {p}});
        } else {
            it->second.push_back(p);
        }
    }
    for (auto& [mode, pts] : out) {
        std::stable_sort(pts.begin(), pts.end(), [](const sweep_point& a, const sweep_point& b) {
            return a.target_sparsity < b.target_sparsity;
        });
    }
    return out;
}

}  // namespace

std::string sweep_csv(const std::vector<sweep_point>& points) {
    std::string out = "mode,target_sparsity,achieved_sparsity,perplexity,params_removed\n";
    for (const auto& p : points) {
        out += p.mode;
        out += ',' + fmt("%.10g", p.target_sparsity);
        out += ',' + fmt("%.10g", p.achieved_sparsity);
        out += ',' + fmt("%.10g", p.perplexity);
        out += ',' + std::to_string(p.params_removed) + '\n';
    }
    return out;
}

std::string sweep_markdown(const std::vector<sweep_point>& points) {
    std::string out =
        "| mode | target sparsity | achieved sparsity | perplexity | params removed |\n"
        "|---|---:|---:|---:|---:|\n";
    for (const auto& p : points) {
        out += "| " + p.mode + " | " + fmt("%.2f", p.target_sparsity) + " | " +
               fmt("%.4f", p.achieved_sparsity) + " | " + fmt("%.4f", p.perplexity) + " | " +
               std::to_string(p.params_removed) + " |\n";
    }
    return out;
}

std::string sweep_svg(const std::vector<sweep_point>& points) {
    constexpr double width = 640.0;
    constexpr double height = 400.0;
    constexpr double ml = 64.0, mr = 20.0, mt = 20.0, mb = 48.0;
    const double pw = width - ml - mr;
    const double ph = height - mt - mb;

    double x_max = 0.0;
    double y_min = points.empty() ? 0.0 : points.front().perplexity;
    double y_max = y_min;
    for (const auto& p : points) {
        x_max = std::max(x_max, p.target_sparsity);
        y_min = std::min(y_min, p.perplexity);
        y_max = std::max(y_max, p.perplexity);
    }
    if (x_max <= 0.0) x_max = 1.0;
    if (!(y_max > y_min)) {  // flat or empty: pad so the scale stays finite
        y_min -= 1.0;
        y_max += 1.0;
    }
    const double y_pad = 0.05 * (y_max - y_min);
    y_min -= y_pad;
    y_max += y_pad;

    const auto sx = [&](double s) { return ml + pw * (s / x_max); };
    const auto sy = [&](double p) { return mt + ph * (1.0 - (p - y_min) / (y_max - y_min)); };

    static const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c",
                                    "#9467bd", "#ff7f0e", "#8c564b"};
    constexpr size_t n_colors = sizeof(palette) / sizeof(palette[0]);

    std::string svg =
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"640\" height=\"400\" "
        "viewBox=\"0 0 640 400\" font-family=\"sans-serif\" font-size=\"12\">\n"
        "<rect width=\"640\" height=\"400\" fill=\"white\"/>\n";

    // axes and ticks
    svg += "<line x1=\"" + fmt("%.1f", ml) + "\" y1=\"" + fmt("%.1f", mt + ph) + "\" x2=\"" +
           fmt("%.1f", ml + pw) + "\" y2=\"" + fmt("%.1f", mt + ph) +
           "\" stroke=\"black\"/>\n";
    svg += "<line x1=\"" + fmt("%.1f", ml) + "\" y1=\"" + fmt("%.1f", mt) + "\" x2=\"" +
           fmt("%.1f", ml) + "\" y2=\"" + fmt("%.1f", mt + ph) + "\" stroke=\"black\"/>\n";
    for (int t = 0; t <= 4; ++t) {
        const double fx = x_max * t / 4.0;
        const double px = sx(fx);
        svg += "<line x1=\"" + fmt("%.1f", px) + "\" y1=\"" + fmt("%.1f", mt + ph) + "\" x2=\"" +
               fmt("%.1f", px) + "\" y2=\"" + fmt("%.1f", mt + ph + 5) +
               "\" stroke=\"black\"/>\n";
        svg += "<text x=\"" + fmt("%.1f", px) + "\" y=\"" + fmt("%.1f", mt + ph + 20) +
               "\" text-anchor=\"middle\">" + fmt("%.2f", fx) + "</text>\n";
        const double fy = y_min + (y_max - y_min) * t / 4.0;
        const double py = sy(fy);
        svg += "<line x1=\"" + fmt("%.1f", ml - 5) + "\" y1=\"" + fmt("%.1f", py) + "\" x2=\"" +
               fmt("%.1f", ml) + "\" y2=\"" + fmt("%.1f", py) + "\" stroke=\"black\"/>\n";
        svg += "<text x=\"" + fmt("%.1f", ml - 8) + "\" y=\"" + fmt("%.1f", py + 4) +
               "\" text-anchor=\"end\">" + fmt("%.3g", fy) + "</text>\n";
    }
    svg += "<text x=\"" + fmt("%.1f", ml + pw / 2) + "\" y=\"" + fmt("%.1f", height - 8) +
           "\" text-anchor=\"middle\">target sparsity</text>\n";
    svg += "<text x=\"14\" y=\"" + fmt("%.1f", mt + ph / 2) +
           "\" text-anchor=\"middle\" transform=\"rotate(-90 14 " + fmt("%.1f", mt + ph / 2) +
           ")\">perplexity</text>\n";

    const auto groups = by_mode(points);
    for (size_t g = 0; g < groups.size(); ++g) {
        const char* color = palette[g % n_colors];
        const auto& pts = groups[g].second;
        if (pts.size() > 1) {
            std::string poly = "<polyline fill=\"none\" stroke=\"";
            poly += color;
            poly += "\" stroke-width=\"2\" points=\"";
            for (const auto& p : pts) {
                poly += fmt("%.1f", sx(p.target_sparsity)) + "," +
                        fmt("%.1f", sy(p.perplexity)) + " ";
            }
            poly.back() = '"';
            svg += poly + "/>\n";
        }
        for (const auto& p : pts) {
            svg += "<circle cx=\"" + fmt("%.1f", sx(p.target_sparsity)) + "\" cy=\"" +
                   fmt("%.1f", sy(p.perplexity)) + "\" r=\"3\" fill=\"" + color + "\"/>\n";
        }
        const double ly = mt + 16.0 + 16.0 * static_cast<double>(g);
        svg += "<line x1=\"" + fmt("%.1f", ml + 12) + "\" y1=\"" + fmt("%.1f", ly - 4) +
               "\" x2=\"" + fmt("%.1f", ml + 36) + "\" y2=\"" + fmt("%.1f", ly - 4) +
               "\" stroke=\"" + color + "\" stroke-width=\"2\"/>\n";
        svg += "<text x=\"" + fmt("%.1f", ml + 42) + "\" y=\"" + fmt("%.1f", ly) + "\">" +
               groups[g].first + "</text>\n";
    }
    svg += "</svg>\n";
    return svg;
}

std::vector<std::string> sweep_warnings(const std::vector<sweep_point>& points) {
    std::vector<std::string> out;
    for (const auto& [mode, pts] : by_mode(points)) {
        for (size_t i = 1; i < pts.size(); ++i) {
            if (pts[i].perplexity < pts[i - 1].perplexity * (1.0 - 1e-12)) {
                out.push_back("mode " + mode + ": perplexity fell from " +
                              fmt("%.6g", pts[i - 1].perplexity) + " at sparsity " +
                              fmt("%.4g", pts[i - 1].target_sparsity) + " to " +
                              fmt("%.6g", pts[i].perplexity) + " at sparsity " +
                              fmt("%.4g", pts[i].target_sparsity) +
                              " (expected nondecreasing)");
            }
        }
    }
    return out;
}

}  // namespace fasp
