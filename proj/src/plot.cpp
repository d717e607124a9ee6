#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "erl/errors.hpp"
#include "erl/harness.hpp"

namespace erl::harness {

namespace {

constexpr int kWidth = 900;
constexpr int kHeight = 520;
constexpr int kMarginLeft = 60;
constexpr int kMarginRight = 170;
constexpr int kMarginTop = 30;
constexpr int kMarginBottom = 50;

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"};

struct Series {
    std::vector<double> x;
    std::vector<double> y;
};

}  // namespace

void write_plot_svg(const std::string& metrics_csv, const std::string& out_svg, int window) {
    const auto rows = load_metrics(metrics_csv);
    if (rows.empty()) throw Error("plot: metrics file has no rows");

    std::map<std::string, Series> series;  // "split/phase" -> curve
    double x_min = 1e300, x_max = -1e300;
    for (const auto& row : rows) {
        auto& s = series[row.split + "/" + row.phase];
        s.x.push_back(static_cast<double>(row.iteration));
        s.y.push_back(row.mean_reward);
        x_min = std::min(x_min, static_cast<double>(row.iteration));
        x_max = std::max(x_max, static_cast<double>(row.iteration));
    }
    if (x_max <= x_min) x_max = x_min + 1.0;

    const double plot_w = kWidth - kMarginLeft - kMarginRight;
    const double plot_h = kHeight - kMarginTop - kMarginBottom;
    const auto sx = [&](double x) { return kMarginLeft + (x - x_min) / (x_max - x_min) * plot_w; };
    const auto sy = [&](double y) { return kMarginTop + (1.0 - y) * plot_h; };  // reward in [0,1]

    std::ostringstream svg;
    svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\""
        << kHeight << "\" viewBox=\"0 0 " << kWidth << " " << kHeight << "\">\n";
    svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";

    // Axes and gridlines.
    for (int i = 0; i <= 5; ++i) {
        const double y = i / 5.0;
        svg << "<line x1=\"" << kMarginLeft << "\" y1=\"" << sy(y) << "\" x2=\""
            << kMarginLeft + plot_w << "\" y2=\"" << sy(y)
            << "\" stroke=\"#dddddd\" stroke-width=\"1\"/>\n";
        svg << "<text x=\"" << kMarginLeft - 8 << "\" y=\"" << sy(y) + 4
            << "\" font-size=\"12\" text-anchor=\"end\" font-family=\"sans-serif\">" << y
            << "</text>\n";
    }
    for (int i = 0; i <= 6; ++i) {
        const double x = x_min + (x_max - x_min) * i / 6.0;
        svg << "<text x=\"" << sx(x) << "\" y=\"" << kMarginTop + plot_h + 20
            << "\" font-size=\"12\" text-anchor=\"middle\" font-family=\"sans-serif\">"
            << static_cast<long>(x + 0.5) << "</text>\n";
    }
    svg << "<line x1=\"" << kMarginLeft << "\" y1=\"" << kMarginTop << "\" x2=\"" << kMarginLeft
        << "\" y2=\"" << kMarginTop + plot_h << "\" stroke=\"black\"/>\n";
    svg << "<line x1=\"" << kMarginLeft << "\" y1=\"" << kMarginTop + plot_h << "\" x2=\""
        << kMarginLeft + plot_w << "\" y2=\"" << kMarginTop + plot_h << "\" stroke=\"black\"/>\n";
    svg << "<text x=\"" << kMarginLeft + plot_w / 2 << "\" y=\"" << kHeight - 10
        << "\" font-size=\"13\" text-anchor=\"middle\" font-family=\"sans-serif\">iteration</text>\n";
    svg << "<text x=\"18\" y=\"" << kMarginTop + plot_h / 2
        << "\" font-size=\"13\" text-anchor=\"middle\" font-family=\"sans-serif\" transform=\"rotate(-90 "
        << 18 << " " << kMarginTop + plot_h / 2 << ")\">mean reward</text>\n";

    int color = 0;
    int legend_y = kMarginTop + 10;
    for (const auto& [label, s] : series) {
        const auto ys = smooth(s.y, window);
        std::ostringstream points;
        for (std::size_t i = 0; i < s.x.size(); ++i) {
            if (i) points << " ";
            points << sx(s.x[i]) << "," << sy(std::clamp(ys[i], 0.0, 1.0));
        }
        const char* stroke = kPalette[color % 6];
        svg << "<polyline fill=\"none\" stroke=\"" << stroke
            << "\" stroke-width=\"1.8\" points=\"" << points.str() << "\"/>\n";
        svg << "<line x1=\"" << kMarginLeft + plot_w + 12 << "\" y1=\"" << legend_y << "\" x2=\""
            << kMarginLeft + plot_w + 36 << "\" y2=\"" << legend_y << "\" stroke=\"" << stroke
            << "\" stroke-width=\"2\"/>\n";
        svg << "<text x=\"" << kMarginLeft + plot_w + 42 << "\" y=\"" << legend_y + 4
            << "\" font-size=\"12\" font-family=\"sans-serif\">" << label << "</text>\n";
        legend_y += 18;
        ++color;
    }
    svg << "</svg>\n";

    const std::filesystem::path p(out_svg);
    if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
    std::ofstream out(out_svg);
    if (!out) throw IoError("cannot write plot: " + out_svg);
    out << svg.str();
}

}  // namespace erl::harness
