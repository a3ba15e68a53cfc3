#pragma once

// Diagnostics for a finished run: per-token perplexity bar charts for each
// retrained model (test examples) and anchor-degree charts for each weight
// file (training examples), with ground-truth anchors highlighted; a metrics
// table over the retrained models; a detection-quality table.

#include <filesystem>
#include <string>
#include <vector>

namespace avdg {

struct ReportBundle {
    // Paths relative to the run directory, in the order written.
    std::vector<std::string> files;
};

// Writes under <run_dir>/report/. Throws IoError listing every missing
// input artifact.
ReportBundle emit_report(const std::filesystem::path& run_dir);

struct ChartBar {
    std::size_t position = 0;
    std::string token;
    bool anchor = false;
    double value = 0.0;
};

// Standalone SVG; each bar carries data-position, data-token, data-anchor
// and data-value attributes, and its height is value times the root's
// data-scale.
std::string bar_chart_svg(const std::string& title, const std::string& y_label, const std::vector<ChartBar>& bars);

}  // namespace avdg
