#pragma once

#include <map>
#include <string>
#include <vector>

namespace mvg::plot {

// Line chart of one or more named series over step index, saved as a PNG.
void plot_curves(const std::map<std::string, std::vector<double>>& series,
                 const std::string& title, const std::string& path,
                 bool log_scale = false);

// Horizontal-axis bar chart of labelled scalar metrics.
void plot_bars(const std::vector<std::string>& labels, const std::vector<double>& values,
               const std::string& title, const std::string& path);

// Grouped bars comparing the same labelled metrics across variants.
void plot_grouped_bars(const std::vector<std::string>& labels,
                       const std::map<std::string, std::vector<double>>& variants,
                       const std::string& title, const std::string& path);

}  // namespace mvg::plot
