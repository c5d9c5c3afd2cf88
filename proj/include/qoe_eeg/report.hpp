#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "qoe_eeg/error.hpp"
#include "qoe_eeg/io.hpp"
#include "qoe_eeg/train.hpp"
#include "qoe_eeg/types.hpp"

namespace qoe::report {

inline constexpr std::string_view kModule = "report";

namespace fs = std::filesystem;

struct Series {
  std::string name;
  std::vector<double> values;  // one per category
};

inline constexpr std::array<const char*, 6> kPalette = {"#4e79a7", "#f28e2b", "#59a14f", "#e15759", "#76b7b2", "#edc948"};

inline std::string escape(std::string_view s) {
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

inline std::string num(double v) { return io::format_fixed(v, 2); }

/// Grouped vertical bar chart. Bars for each category sit side by side, one
/// per series; the y range always includes zero.
inline std::string bar_chart(std::string_view title, std::string_view y_label, const std::vector<std::string>& categories,
                             const std::vector<Series>& series) {
  const double width = 120.0 + 90.0 * static_cast<double>(std::max<std::size_t>(categories.size(), 1)) *
                                   std::max(1.0, static_cast<double>(series.size()) / 2.0);
  const double height = 360.0, left = 70.0, right = 20.0, top = 40.0, bottom = 60.0;
  const double plot_w = width - left - right, plot_h = height - top - bottom;

  double lo = 0.0, hi = 0.0;
  for (const auto& s : series)
    for (double v : s.values) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  if (hi - lo <= 0.0) hi = lo + 1.0;
  const double span = hi - lo;
  lo -= span * 0.05 * (lo < 0.0);
  hi += span * 0.05;
  auto y_of = [&](double v) { return top + plot_h * (hi - v) / (hi - lo); };

  std::string svg;
  svg += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + num(width) + "\" height=\"" + num(height) +
         "\" viewBox=\"0 0 " + num(width) + " " + num(height) + "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  svg += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  svg += "<text x=\"" + num(width / 2) + "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" + escape(title) + "</text>\n";
  svg += "<text transform=\"translate(16," + num(top + plot_h / 2) + ") rotate(-90)\" text-anchor=\"middle\">" +
         escape(y_label) + "</text>\n";

  // Gridlines at five even steps.
  for (int i = 0; i <= 5; ++i) {
    const double v = lo + (hi - lo) * i / 5.0;
    const double y = y_of(v);
    svg += "<line x1=\"" + num(left) + "\" x2=\"" + num(left + plot_w) + "\" y1=\"" + num(y) + "\" y2=\"" + num(y) +
           "\" stroke=\"#ddd\"/>\n";
    svg += "<text x=\"" + num(left - 6) + "\" y=\"" + num(y + 4) + "\" text-anchor=\"end\">" + num(v) + "</text>\n";
  }
  const double zero = y_of(0.0);
  svg += "<line x1=\"" + num(left) + "\" x2=\"" + num(left + plot_w) + "\" y1=\"" + num(zero) + "\" y2=\"" + num(zero) +
         "\" stroke=\"#333\"/>\n";

  const double group_w = plot_w / static_cast<double>(std::max<std::size_t>(categories.size(), 1));
  const double bar_w = group_w * 0.8 / static_cast<double>(std::max<std::size_t>(series.size(), 1));
  for (std::size_t c = 0; c < categories.size(); ++c) {
    const double gx = left + group_w * static_cast<double>(c) + group_w * 0.1;
    for (std::size_t s = 0; s < series.size(); ++s) {
      const double v = series[s].values.at(c);
      const double x = gx + bar_w * static_cast<double>(s);
      const double y = std::min(y_of(v), zero);
      const double h = std::abs(y_of(v) - zero);
      svg += "<rect x=\"" + num(x) + "\" y=\"" + num(y) + "\" width=\"" + num(bar_w) + "\" height=\"" + num(h) +
             "\" fill=\"" + kPalette[s % kPalette.size()] + "\"><title>" + escape(series[s].name) + " " +
             escape(categories[c]) + ": " + num(v) + "</title></rect>\n";
    }
    svg += "<text x=\"" + num(gx + group_w * 0.4) + "\" y=\"" + num(top + plot_h + 18) + "\" text-anchor=\"middle\">" +
           escape(categories[c]) + "</text>\n";
  }
  if (series.size() > 1) {
    double lx = left;
    for (std::size_t s = 0; s < series.size(); ++s) {
      svg += "<rect x=\"" + num(lx) + "\" y=\"" + num(height - 24) + "\" width=\"12\" height=\"12\" fill=\"" +
             kPalette[s % kPalette.size()] + "\"/>\n";
      svg += "<text x=\"" + num(lx + 16) + "\" y=\"" + num(height - 14) + "\">" + escape(series[s].name) + "</text>\n";
      lx += 110.0;
    }
  }
  svg += "</svg>\n";
  return svg;
}

inline std::string table_csv(std::string_view first_column, const std::vector<std::string>& categories,
                             const std::vector<Series>& series) {
  std::string out(first_column);
  for (const auto& s : series) out += "," + s.name;
  out += "\n";
  for (std::size_t c = 0; c < categories.size(); ++c) {
    out += categories[c];
    for (const auto& s : series) out += "," + io::format_fixed(s.values.at(c), 4);
    out += "\n";
  }
  return out;
}

// Result discovery: <dir>/eval.json and <dir>/<FACTOR>/eval.json; ablation
// reports at <dir>/ablation.json and one directory level below.
struct Found {
  std::vector<std::pair<std::string, train::EvalReport>> evals;  // (label, report), factor order
  std::map<std::string, io::json> ablations;                    // kind -> report json
};

inline Found discover(const fs::path& dir) {
  Found f;
  if (!fs::is_directory(dir)) throw Error(kModule, ErrorCode::Io, dir.string() + " is not a directory");
  for (auto factor : kFactors) {
    const fs::path p = dir / std::string(to_string(factor)) / "eval.json";
    if (fs::exists(p)) f.evals.emplace_back(std::string(to_string(factor)), train::EvalReport::from_json(io::read_json(p, kModule)));
  }
  if (f.evals.empty() && fs::exists(dir / "eval.json")) {
    const auto j = io::read_json(dir / "eval.json", kModule);
    f.evals.emplace_back(j.value("factor", std::string("result")), train::EvalReport::from_json(j));
  }
  std::vector<fs::path> candidates = {dir / "ablation.json"};
  std::vector<fs::path> subdirs;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_directory()) subdirs.push_back(e.path());
  std::sort(subdirs.begin(), subdirs.end());
  for (const auto& s : subdirs) candidates.push_back(s / "ablation.json");
  for (const auto& p : candidates)
    if (fs::exists(p)) {
      const auto j = io::read_json(p, kModule);
      f.ablations.emplace(j.at("kind").get<std::string>(), j);
    }
  return f;
}

/// Renders every chart the results in `dir` support into `out`. Returns the
/// written file names; throws Io when nothing was found.
inline std::vector<std::string> render(const fs::path& dir, const fs::path& out) {
  const Found found = discover(dir);
  if (found.evals.empty() && found.ablations.empty())
    throw Error(kModule, ErrorCode::Io, "no eval.json or ablation.json under " + dir.string());
  fs::create_directories(out);
  std::vector<std::string> written;
  auto emit = [&](const std::string& name, const std::string& body) {
    io::write_atomic(out / name, body);
    written.push_back(name);
  };

  if (!found.evals.empty()) {
    std::vector<std::string> categories;
    std::vector<Series> series = {{"accuracy", {}}, {"f1", {}}, {"precision", {}}, {"recall", {}}};
    for (const auto& [label, r] : found.evals) {
      categories.push_back(label);
      series[0].values.push_back(100.0 * r.accuracy);
      series[1].values.push_back(100.0 * r.macro_f1);
      series[2].values.push_back(100.0 * r.macro_precision);
      series[3].values.push_back(100.0 * r.macro_recall);
    }
    emit("metrics.svg", bar_chart("Metrics per QoE factor", "percent", categories, series));
    emit("metrics.csv", table_csv("factor", categories, series));
  }
  for (const auto& [kind, j] : found.ablations) {
    std::vector<std::string> categories;
    Series drop{"f1_drop_points", {}};
    for (const auto& e : j.at("entries")) {
      categories.push_back(e.at("removed").get<std::string>());
      drop.values.push_back(100.0 * e.at("delta").get<double>());
    }
    const std::string title = kind == "band" ? "F1 drop per removed band" : "F1 drop per removed electrode";
    emit("ablation_" + kind + ".svg", bar_chart(title, "F1 drop (points)", categories, {drop}));
    emit("ablation_" + kind + ".csv", table_csv("removed", categories, {drop}));
  }
  return written;
}

}  // namespace qoe::report
