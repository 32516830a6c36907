#include "abpm/plot.hpp"

#include "abpm/error.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

namespace abpm {

std::string format_number(double v) {
    if (!std::isfinite(v)) return "";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

PlotSeries to_series(const ProfileCurve& curve) {
    PlotSeries s;
    s.name = curve.kind == CurveKind::subject ? "subject:" + curve.subject_id.value_or("") : "population";
    s.times = curve.times.points();
    s.value = curve.values;
    return s;
}

PlotSeries to_series(const PredictionBand& band) {
    PlotSeries s;
    s.name = "band";
    s.times = band.times.points();
    s.value = band.center;
    s.lower = band.lower;
    s.upper = band.upper;
    return s;
}

std::string format_plot_csv(const std::vector<PlotSeries>& series) {
    std::string out = "time,series,value,lower,upper\n";
    for (const auto& s : series) {
        for (std::size_t k = 0; k < s.times.size(); ++k) {
            const auto i = static_cast<Eigen::Index>(k);
            out += format_number(s.times[k]) + "," + s.name + "," + format_number(s.value(i)) + ",";
            if (s.lower) out += format_number((*s.lower)(i));
            out += ",";
            if (s.upper) out += format_number((*s.upper)(i));
            out += "\n";
        }
    }
    return out;
}

namespace {

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return buf;
}

std::string escape(const std::string& s) {
    std::string out;
    for (char c : s) {
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

constexpr const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2"};

}  // namespace

std::string render_svg(const std::vector<PlotSeries>& series, std::optional<double> start_hour,
                       const std::string& title) {
    constexpr double width = 800.0;
    constexpr double height = 480.0;
    constexpr double left = 60.0;
    constexpr double right = 20.0;
    constexpr double top = 40.0;
    constexpr double bottom = 50.0;

    double ymin = std::numeric_limits<double>::infinity();
    double ymax = -ymin;
    for (const auto& s : series) {
        ymin = std::min(ymin, (s.lower ? *s.lower : s.value).minCoeff());
        ymax = std::max(ymax, (s.upper ? *s.upper : s.value).maxCoeff());
    }
    if (!std::isfinite(ymin) || !std::isfinite(ymax)) {
        ymin = 0.0;
        ymax = 1.0;
    }
    if (ymax - ymin < 1e-9) {
        ymin -= 1.0;
        ymax += 1.0;
    }
    const double pad = 0.05 * (ymax - ymin);
    ymin -= pad;
    ymax += pad;
    auto px = [&](double t) { return left + (width - left - right) * t / 24.0; };
    auto py = [&](double y) { return top + (height - top - bottom) * (ymax - y) / (ymax - ymin); };

    std::string svg = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + fmt(width) + "\" height=\"" +
                      fmt(height) + "\" viewBox=\"0 0 " + fmt(width) + " " + fmt(height) + "\">\n";
    svg += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    svg += "<text x=\"" + fmt(width / 2) + "\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" "
           "font-size=\"16\">" + escape(title) + "</text>\n";

    // Axes and ticks.
    svg += "<g stroke=\"#333\" fill=\"none\"><line x1=\"" + fmt(left) + "\" y1=\"" + fmt(height - bottom) +
           "\" x2=\"" + fmt(width - right) + "\" y2=\"" + fmt(height - bottom) + "\"/><line x1=\"" + fmt(left) +
           "\" y1=\"" + fmt(top) + "\" x2=\"" + fmt(left) + "\" y2=\"" + fmt(height - bottom) + "\"/></g>\n";
    svg += "<g font-family=\"sans-serif\" font-size=\"11\" fill=\"#333\">\n";
    for (int h = 0; h <= 24; h += 3) {
        const double label = start_hour ? std::fmod(*start_hour + h, 24.0) : h;
        char buf[16];
        if (start_hour) {
            std::snprintf(buf, sizeof buf, "%02d:00", static_cast<int>(label));
        } else {
            std::snprintf(buf, sizeof buf, "%d", h);
        }
        svg += "<text x=\"" + fmt(px(h)) + "\" y=\"" + fmt(height - bottom + 16) + "\" text-anchor=\"middle\">" +
               buf + "</text>\n";
    }
    const double step = std::pow(10.0, std::floor(std::log10((ymax - ymin) / 4.0)));
    const double nice = (ymax - ymin) / step > 20 ? 5 * step : ((ymax - ymin) / step > 8 ? 2 * step : step);
    for (double y = std::ceil(ymin / nice) * nice; y <= ymax; y += nice) {
        svg += "<text x=\"" + fmt(left - 6) + "\" y=\"" + fmt(py(y) + 4) + "\" text-anchor=\"end\">" +
               format_number(std::round(y * 1e6) / 1e6) + "</text>\n";
    }
    svg += "<text x=\"" + fmt(width / 2) + "\" y=\"" + fmt(height - 12) + "\" text-anchor=\"middle\">" +
           (start_hour ? "clock hour" : "hours since start") + "</text>\n";
    svg += "</g>\n";

    for (const auto& s : series) {
        if (!s.lower || !s.upper || s.times.empty()) continue;
        std::string pts;
        for (std::size_t k = 0; k < s.times.size(); ++k) {
            pts += fmt(px(s.times[k])) + "," + fmt(py((*s.upper)(static_cast<Eigen::Index>(k)))) + " ";
        }
        for (std::size_t k = s.times.size(); k-- > 0;) {
            pts += fmt(px(s.times[k])) + "," + fmt(py((*s.lower)(static_cast<Eigen::Index>(k)))) + " ";
        }
        svg += "<polygon points=\"" + pts + "\" fill=\"#cccccc\" fill-opacity=\"0.6\" stroke=\"none\"/>\n";
    }
    std::size_t color = 0;
    for (const auto& s : series) {
        std::string stroke = "#000000";
        std::string widthattr = "2";
        if (s.name != "population" && s.name != "band") {
            stroke = kPalette[color++ % std::size(kPalette)];
            widthattr = "1.5";
        } else if (s.name == "band") {
            stroke = "#555555";
            widthattr = "1";
        }
        std::string pts;
        for (std::size_t k = 0; k < s.times.size(); ++k) {
            pts += fmt(px(s.times[k])) + "," + fmt(py(s.value(static_cast<Eigen::Index>(k)))) + " ";
        }
        svg += "<polyline points=\"" + pts + "\" fill=\"none\" stroke=\"" + stroke + "\" stroke-width=\"" +
               widthattr + "\"><title>" + escape(s.name) + "</title></polyline>\n";
    }
    svg += "</svg>\n";
    return svg;
}

}  // namespace abpm
