#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "conceptlm/cassette.hpp"
#include "conceptlm/csv.hpp"
#include "conceptlm/experiment/aggregate.hpp"

namespace conceptlm::experiment {

/// Shortest text that reads back as the same double.
inline std::string format_number(double v) { return fmt::format("{}", v); }

/// One row per model; per SCM the mean, sample standard deviation, value
/// count, not-applicable count and failed-record count.
inline std::string metric_csv(const Aggregates& agg, const std::string& key) {
  csv::Row header{"model"};
  for (const auto& scm : agg.scms) {
    for (const char* col : {"mean", "sd", "n", "excluded", "failed"}) header.push_back(scm + "." + col);
  }
  std::string out = csv::format_row(header);
  for (const auto& model : agg.models) {
    csv::Row row{model};
    for (const auto& scm : agg.scms) {
      const auto* cell = agg.cell(model, scm);
      if (!cell) {
        row.insert(row.end(), {"", "", "0", "0", "0"});
        continue;
      }
      const auto& s = cell->metrics.at(key);
      row.push_back(s.n ? format_number(s.mean) : "");
      row.push_back(s.n ? format_number(s.stddev) : "");
      row.push_back(std::to_string(s.n));
      row.push_back(std::to_string(s.excluded));
      row.push_back(std::to_string(cell->failed));
    }
    out += csv::format_row(row);
  }
  return out;
}

namespace detail {

inline std::string svg_escape(const std::string& s) {
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

// Round axis maximum: 1, 2 or 5 times a power of ten.
inline double nice_ceiling(double v) {
  if (v <= 0.0) return 1.0;
  const double p = std::pow(10.0, std::floor(std::log10(v)));
  for (double m : {1.0, 2.0, 5.0, 10.0}) {
    if (v <= m * p) return m * p;
  }
  return 10.0 * p;
}

inline constexpr const char* kPalette[] = {"#4e79a7", "#f28e2b", "#e15759", "#76b7b2", "#59a14f",
                                           "#edc948", "#b07aa1", "#ff9da7", "#9c755f", "#bab0ac"};

}  // namespace detail

/// Grouped bars: one group per model, one bar per SCM, whiskers at +/- one
/// sample standard deviation. Cells without values are marked "n/a".
inline std::string metric_svg(const Aggregates& agg, const std::string& key, const std::string& title) {
  constexpr double kWidth = 720, kHeight = 400, kLeft = 70, kRight = 150, kTop = 40, kBottom = 60;
  const double plot_w = kWidth - kLeft - kRight;
  const double plot_h = kHeight - kTop - kBottom;

  double top = 0.0;
  for (const auto& [id, cell] : agg.cells) {
    const auto& s = cell.metrics.at(key);
    if (s.n) top = std::max(top, s.mean + s.stddev);
  }
  const double axis_max = detail::nice_ceiling(top);
  auto y_of = [&](double v) { return kTop + plot_h * (1.0 - std::clamp(v / axis_max, 0.0, 1.0)); };

  std::string svg = fmt::format(
      "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
      "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"{:.0f}\" height=\"{:.0f}\" "
      "viewBox=\"0 0 {:.0f} {:.0f}\" font-family=\"sans-serif\" font-size=\"12\">\n"
      "<rect x=\"0\" y=\"0\" width=\"{:.0f}\" height=\"{:.0f}\" fill=\"#ffffff\"/>\n"
      "<text x=\"{:.2f}\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">{}</text>\n",
      kWidth, kHeight, kWidth, kHeight, kWidth, kHeight, kLeft + plot_w / 2, detail::svg_escape(title));

  for (int t = 0; t <= 5; ++t) {
    const double v = axis_max * t / 5.0;
    const double y = y_of(v);
    svg += fmt::format("<line x1=\"{:.2f}\" y1=\"{:.2f}\" x2=\"{:.2f}\" y2=\"{:.2f}\" stroke=\"#dddddd\"/>\n", kLeft, y,
                       kLeft + plot_w, y);
    svg += fmt::format("<text x=\"{:.2f}\" y=\"{:.2f}\" text-anchor=\"end\">{}</text>\n", kLeft - 6, y + 4,
                       format_number(v));
  }
  svg += fmt::format("<line x1=\"{0:.2f}\" y1=\"{1:.2f}\" x2=\"{0:.2f}\" y2=\"{2:.2f}\" stroke=\"#000000\"/>\n", kLeft,
                     kTop, kTop + plot_h);
  svg += fmt::format("<line x1=\"{0:.2f}\" y1=\"{2:.2f}\" x2=\"{1:.2f}\" y2=\"{2:.2f}\" stroke=\"#000000\"/>\n", kLeft,
                     kLeft + plot_w, kTop + plot_h);

  const auto groups = std::max<std::size_t>(1, agg.models.size());
  const auto bars = std::max<std::size_t>(1, agg.scms.size());
  const double group_w = plot_w / static_cast<double>(groups);
  const double bar_w = group_w * 0.8 / static_cast<double>(bars);
  for (std::size_t g = 0; g < agg.models.size(); ++g) {
    const double gx = kLeft + group_w * static_cast<double>(g) + group_w * 0.1;
    for (std::size_t b = 0; b < agg.scms.size(); ++b) {
      const double x = gx + bar_w * static_cast<double>(b);
      const auto* cell = agg.cell(agg.models[g], agg.scms[b]);
      if (!cell || cell->metrics.at(key).n == 0) {
        svg += fmt::format("<text x=\"{:.2f}\" y=\"{:.2f}\" text-anchor=\"middle\" font-size=\"9\">n/a</text>\n",
                           x + bar_w / 2, kTop + plot_h - 4);
        continue;
      }
      const auto& s = cell->metrics.at(key);
      const double y = y_of(s.mean);
      svg += fmt::format("<rect x=\"{:.2f}\" y=\"{:.2f}\" width=\"{:.2f}\" height=\"{:.2f}\" fill=\"{}\">"
                         "<title>{} {}: mean {} sd {} n {}</title></rect>\n",
                         x, y, bar_w * 0.9, kTop + plot_h - y, detail::kPalette[b % std::size(detail::kPalette)],
                         detail::svg_escape(agg.models[g]), detail::svg_escape(agg.scms[b]), format_number(s.mean),
                         format_number(s.stddev), s.n);
      if (s.stddev > 0.0) {
        const double cx = x + bar_w * 0.45;
        const double y_hi = y_of(s.mean + s.stddev);
        const double y_lo = y_of(s.mean - s.stddev);
        svg += fmt::format("<line x1=\"{0:.2f}\" y1=\"{1:.2f}\" x2=\"{0:.2f}\" y2=\"{2:.2f}\" stroke=\"#333333\"/>\n",
                           cx, y_hi, y_lo);
        for (double yy : {y_hi, y_lo}) {
          svg += fmt::format("<line x1=\"{0:.2f}\" y1=\"{2:.2f}\" x2=\"{1:.2f}\" y2=\"{2:.2f}\" stroke=\"#333333\"/>\n",
                             cx - 3, cx + 3, yy);
        }
      }
    }
    svg += fmt::format("<text x=\"{:.2f}\" y=\"{:.2f}\" text-anchor=\"middle\">{}</text>\n", gx + group_w * 0.4,
                       kTop + plot_h + 18, detail::svg_escape(agg.models[g]));
  }

  const double lx = kWidth - kRight + 20;
  for (std::size_t b = 0; b < agg.scms.size(); ++b) {
    const double ly = kTop + 20.0 * static_cast<double>(b);
    svg += fmt::format("<rect x=\"{:.2f}\" y=\"{:.2f}\" width=\"12\" height=\"12\" fill=\"{}\"/>\n", lx, ly,
                       detail::kPalette[b % std::size(detail::kPalette)]);
    svg += fmt::format("<text x=\"{:.2f}\" y=\"{:.2f}\">{}</text>\n", lx + 18, ly + 10, detail::svg_escape(agg.scms[b]));
  }
  svg += fmt::format("<text x=\"{:.2f}\" y=\"{:.2f}\" font-size=\"10\">whiskers: +/- 1 sample sd</text>\n", kLeft,
                     kHeight - 12);
  svg += "</svg>\n";
  return svg;
}

inline nlohmann::json to_json(const Aggregates& agg) {
  nlohmann::json cells = nlohmann::json::array();
  for (const auto& model : agg.models) {
    for (const auto& scm : agg.scms) {
      const auto* cell = agg.cell(model, scm);
      if (!cell) continue;
      nlohmann::json metrics = nlohmann::json::object();
      for (const auto& [key, s] : cell->metrics) {
        nlohmann::json sj = {{"n", s.n}, {"excluded", s.excluded}};
        if (s.n) {
          sj["mean"] = s.mean;
          sj["variance"] = s.variance;
          sj["sd"] = s.stddev;
          sj["min"] = s.min;
          sj["max"] = s.max;
        } else {
          sj["mean"] = nullptr;
        }
        metrics[key] = std::move(sj);
      }
      cells.push_back({{"model", model}, {"scm", scm}, {"records", cell->records}, {"failed", cell->failed},
                       {"metrics", std::move(metrics)}});
    }
  }
  return {{"models", agg.models}, {"scms", agg.scms}, {"cells", std::move(cells)}};
}

/// Mean of `key` for one cell as written to aggregates.json.
inline std::optional<double> reported_mean(const nlohmann::json& report, const std::string& model,
                                           const std::string& scm, const std::string& key) {
  for (const auto& cell : report.at("cells")) {
    if (cell.at("model") == model && cell.at("scm") == scm) {
      const auto& m = cell.at("metrics").at(key).at("mean");
      return m.is_null() ? std::nullopt : std::optional<double>(m.get<double>());
    }
  }
  return std::nullopt;
}

/// Writes `<key>.csv` and `<key>.svg` for each plotted metric plus
/// aggregates.json into `dir`; returns the written paths.
inline std::vector<std::filesystem::path> emit_report(const Aggregates& agg, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::vector<std::filesystem::path> written;
  for (const auto& m : kPanelMetrics) {
    auto csv_path = dir / (std::string(m.key) + ".csv");
    write_file_atomic(csv_path, metric_csv(agg, m.key));
    auto svg_path = dir / (std::string(m.key) + ".svg");
    write_file_atomic(svg_path, metric_svg(agg, m.key, m.label));
    written.push_back(csv_path);
    written.push_back(svg_path);
  }
  auto json_path = dir / "aggregates.json";
  write_file_atomic(json_path, to_json(agg).dump(2) + "\n");
  written.push_back(json_path);
  return written;
}

}  // namespace conceptlm::experiment
