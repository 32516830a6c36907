#pragma once

#include "abpm/blup.hpp"

#include <optional>
#include <string>
#include <vector>

namespace abpm {

struct PlotSeries {
    std::string name;
    std::vector<double> times;
    Eigen::VectorXd value;
    std::optional<Eigen::VectorXd> lower;
    std::optional<Eigen::VectorXd> upper;
};

PlotSeries to_series(const ProfileCurve& curve);
PlotSeries to_series(const PredictionBand& band);

/// "time,series,value,lower,upper" rows; lower and upper are empty for
/// plain curves. Numbers use 17 significant digits.
std::string format_plot_csv(const std::vector<PlotSeries>& series);

/// Self-contained SVG: shaded bands, then curves. With a start hour the x axis
/// is labelled in clock hours.
std::string render_svg(const std::vector<PlotSeries>& series, std::optional<double> start_hour,
                       const std::string& title);

/// %.17g
std::string format_number(double v);

}  // namespace abpm
