// Copyright 2026 The aqobench Authors.
//
//    Licensed under the Apache License, Version 2.0 (the "License");
//    you may not use this file except in compliance with the License.
//    You may obtain a copy of the License at
//
//        http://www.apache.org/licenses/LICENSE-2.0
//
//    Unless required by applicable law or agreed to in writing, software
//    distributed under the License is distributed on an "AS IS" BASIS,
//    WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
//    See the License for the specific language governing permissions and
//    limitations under the License.

// Aggregate CSV and static SVG plots.  Every drawn point carries its exact
// aggregate values as data attributes so the plot can be checked against
// the CSV files.

#include <algorithm>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

#include "aqo/bench.hpp"

namespace aqo {
namespace {

namespace fs = std::filesystem;

constexpr const char* kQuantities[] = {"g_min", "s_star", "matel", "t_a", "wall_time_s"};

bool is_solver(Method m) { return m == Method::treedp || m == Method::brute; }

std::string fmt(const char* format, ...) {
    char buf[512];
    va_list args;
    va_start(args, format);
    std::vsnprintf(buf, sizeof buf, format, args);
    va_end(args);
    return buf;
}

std::string exact_number(double x) { return std::isnan(x) ? "" : fmt("%.17g", x); }

std::string escape(const std::string& s) {
    std::string out;
    for (char ch : s) {
        switch (ch) {
            case '&': out += "&amp;"; break;
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '"': out += "&quot;"; break;
            default: out += ch;
        }
    }
    return out;
}

const char* color(Method m) {
    switch (m) {
        case Method::exact: return "#1f77b4";
        case Method::qmc: return "#d62728";
        case Method::treedp: return "#2ca02c";
        case Method::brute: return "#9467bd";
    }
    return "#000000";
}

struct Series {
    std::string label;
    Method method;
    std::vector<Aggregate> points;
};

struct Plot {
    std::string title;
    std::string y_label;
    std::vector<Series> series;
    std::vector<TemperatureLine> lines;
};

constexpr double kWidth = 760, kHeight = 500;
constexpr double kLeft = 90, kRight = 190, kTop = 50, kBottom = 80;

std::string render_svg(const Plot& plot) {
    std::vector<int> sizes;
    double y_min = INFINITY, y_max = -INFINITY;
    for (const Series& s : plot.series) {
        for (const Aggregate& a : s.points) {
            sizes.push_back(a.size);
            y_min = std::min(y_min, a.p40);
            y_max = std::max(y_max, a.p60);
        }
    }
    for (const auto& line : plot.lines) {
        y_min = std::min(y_min, line.ghz);
        y_max = std::max(y_max, line.ghz);
    }
    std::sort(sizes.begin(), sizes.end());
    sizes.erase(std::unique(sizes.begin(), sizes.end()), sizes.end());
    if (!(y_min > 0) || !std::isfinite(y_max)) y_min = 1e-3, y_max = 1.0;
    int lo = static_cast<int>(std::floor(std::log10(y_min)));
    int hi = static_cast<int>(std::ceil(std::log10(y_max)));
    if (hi <= lo) hi = lo + 1;
    const double x0 = sizes.empty() ? 0 : sizes.front(), x1 = sizes.empty() ? 1 : sizes.back();
    const double span = x1 > x0 ? x1 - x0 : 1.0;
    const double plot_w = kWidth - kLeft - kRight, plot_h = kHeight - kTop - kBottom;
    auto px = [&](double size) {
        if (x1 <= x0) return kLeft + plot_w / 2;
        return kLeft + plot_w * (0.06 + 0.88 * (size - x0) / span);
    };
    auto py = [&](double y) { return kTop + plot_h * (hi - std::log10(y)) / (hi - lo); };

    std::ostringstream out;
    out << fmt("<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"%.0f\" height=\"%.0f\" viewBox=\"0 0 %.0f %.0f\" "
               "font-family=\"sans-serif\" font-size=\"12\">\n",
               kWidth, kHeight, kWidth, kHeight);
    out << fmt("<rect width=\"%.0f\" height=\"%.0f\" fill=\"white\"/>\n", kWidth, kHeight);
    out << fmt("<text x=\"%.1f\" y=\"24\" font-size=\"15\" text-anchor=\"middle\">%s</text>\n",
               kLeft + plot_w / 2, escape(plot.title).c_str());
    out << fmt("<rect x=\"%.1f\" y=\"%.1f\" width=\"%.1f\" height=\"%.1f\" fill=\"none\" stroke=\"black\"/>\n", kLeft,
               kTop, plot_w, plot_h);
    for (int k = lo; k <= hi; ++k) {
        const double y = py(std::pow(10.0, k));
        out << fmt("<line x1=\"%.1f\" y1=\"%.2f\" x2=\"%.1f\" y2=\"%.2f\" stroke=\"#dddddd\"/>\n", kLeft, y,
                   kLeft + plot_w, y);
        out << fmt("<text x=\"%.1f\" y=\"%.2f\" text-anchor=\"end\">1e%d</text>\n", kLeft - 6, y + 4, k);
    }
    for (int size : sizes) {
        const double x = px(size);
        out << fmt("<line x1=\"%.2f\" y1=\"%.1f\" x2=\"%.2f\" y2=\"%.1f\" stroke=\"black\"/>\n", x, kTop + plot_h, x,
                   kTop + plot_h + 5);
        out << fmt("<text x=\"%.2f\" y=\"%.1f\" text-anchor=\"middle\">%d</text>\n", x, kTop + plot_h + 19, size);
    }
    out << fmt("<text x=\"%.1f\" y=\"%.1f\" text-anchor=\"middle\">problem size (variables)</text>\n",
               kLeft + plot_w / 2, kTop + plot_h + 38);
    out << fmt("<text x=\"20\" y=\"%.1f\" text-anchor=\"middle\" transform=\"rotate(-90 20 %.1f)\">%s</text>\n",
               kTop + plot_h / 2, kTop + plot_h / 2, escape(plot.y_label).c_str());

    for (const auto& line : plot.lines) {
        const double y = py(line.ghz);
        out << fmt("<g class=\"temperature\" data-label=\"%s\" data-ghz=\"%s\">", escape(line.label).c_str(),
                   exact_number(line.ghz).c_str());
        out << fmt("<line x1=\"%.1f\" y1=\"%.2f\" x2=\"%.1f\" y2=\"%.2f\" stroke=\"#555555\" stroke-dasharray=\"6 4\"/>",
                   kLeft, y, kLeft + plot_w, y);
        out << fmt("<text x=\"%.1f\" y=\"%.2f\" fill=\"#555555\">%s (%g GHz)</text></g>\n", kLeft + plot_w + 6, y + 4,
                   escape(line.label).c_str(), line.ghz);
    }

    double legend_y = kTop + 10;
    for (const Series& s : plot.series) {
        const char* c = color(s.method);
        std::string path;
        for (const Aggregate& a : s.points) path += fmt("%s%.2f,%.2f", path.empty() ? "" : " ", px(a.size), py(a.median));
        out << fmt("<g class=\"series\" data-method=\"%s\" data-quantity=\"%s\">\n", to_string(s.method).c_str(),
                   s.points.empty() ? "" : s.points.front().quantity.c_str());
        if (s.points.size() > 1) {
            out << fmt("<polyline points=\"%s\" fill=\"none\" stroke=\"%s\"/>\n", path.c_str(), c);
        }
        for (const Aggregate& a : s.points) {
            const double x = px(a.size);
            out << fmt("<line x1=\"%.2f\" y1=\"%.2f\" x2=\"%.2f\" y2=\"%.2f\" stroke=\"%s\"/>", x, py(a.p40), x,
                       py(a.p60), c);
            out << fmt("<circle cx=\"%.2f\" cy=\"%.2f\" r=\"4\" fill=\"%s\" data-size=\"%d\" data-median=\"%s\" "
                       "data-p40=\"%s\" data-p60=\"%s\" data-count=\"%d\"/>\n",
                       x, py(a.median), c, a.size, exact_number(a.median).c_str(), exact_number(a.p40).c_str(),
                       exact_number(a.p60).c_str(), a.count);
        }
        out << "</g>\n";
        out << fmt("<rect x=\"%.1f\" y=\"%.1f\" width=\"12\" height=\"12\" fill=\"%s\"/>", kLeft + plot_w + 6,
                   legend_y + 40, c);
        out << fmt("<text x=\"%.1f\" y=\"%.1f\">%s</text>\n", kLeft + plot_w + 24, legend_y + 50,
                   escape(s.label).c_str());
        legend_y += 18;
    }
    out << fmt("<text x=\"%.1f\" y=\"%.1f\" font-size=\"10\" fill=\"#555555\">points: medians; bars: 40th to 60th "
               "percentiles (interpolated order statistics), not a confidence interval of the median</text>\n",
               kLeft, kHeight - 12);
    out << "</svg>\n";
    return out.str();
}

std::vector<Aggregate> usable(std::vector<Aggregate> all, Method m) {
    std::erase_if(all, [&](const Aggregate& a) { return a.method != m || a.count == 0; });
    return all;
}

void write_file(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << text;
}

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    std::stringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

}  // namespace

void render_report(std::span<const ResultRow> rows, const ExperimentConfig& config, const fs::path& dir) {
    if (rows.empty()) throw std::invalid_argument("render_report: no result rows");
    std::map<std::string, std::vector<Aggregate>> aggregates;
    for (const char* q : kQuantities) aggregates[q] = aggregate(rows, q);

    std::ostringstream csv;
    csv << "size,method,quantity,median,p40,p60,count,excluded\n";
    for (const char* q : kQuantities) {
        for (const Aggregate& a : aggregates[q]) {
            if (is_solver(a.method) && a.quantity != "wall_time_s") continue;
            csv << a.size << ',' << to_string(a.method) << ',' << a.quantity << ',' << exact_number(a.median) << ','
                << exact_number(a.p40) << ',' << exact_number(a.p60) << ',' << a.count << ',' << a.excluded << '\n';
        }
    }
    write_file(dir / "aggregate.csv", csv.str());

    Plot gap{"Median minimum gap", "minimum gap (GHz)", {}, config.temperature_lines};
    Plot time{"Median time to solution", "time (s)", {}, {}};
    for (Method m : {Method::exact, Method::qmc}) {
        if (auto pts = usable(aggregates["g_min"], m); !pts.empty()) gap.series.push_back({to_string(m), m, pts});
        if (auto pts = usable(aggregates["t_a"], m); !pts.empty()) {
            time.series.push_back({to_string(m) + " adiabatic time", m, pts});
        }
    }
    for (Method m : {Method::treedp, Method::brute}) {
        if (auto pts = usable(aggregates["wall_time_s"], m); !pts.empty()) {
            time.series.push_back({to_string(m) + " wall time", m, pts});
        }
    }
    write_file(dir / "gap_vs_size.svg", render_svg(gap));
    write_file(dir / "time_vs_size.svg", render_svg(time));
}

void render_report(const fs::path& dir) {
    const auto rows = parse_results_csv(read_file(dir / "raw.csv"));
    const ExperimentConfig config = parse_experiment_config(read_file(dir / "config.json"));
    render_report(rows, config, dir);
}

}  // namespace aqo
