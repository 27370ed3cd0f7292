#include "report/plot.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>

#include "bounds/bounds.hpp"
#include "common/error.hpp"

namespace aotmem {

BoundCurve parse_bound_curve(std::string_view s) {
  if (s == "ours") return BoundCurve::ours;
  if (s == "previous") return BoundCurve::previous;
  if (s == "chance") return BoundCurve::chance;
  throw InvalidArgument("unknown bound curve '" + std::string(s) + "' (expected ours, previous or chance)");
}

namespace {

constexpr double kWidth = 640, kHeight = 420;
constexpr double kLeft = 70, kRight = 160, kTop = 40, kBottom = 55;
const char* const kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string tick(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
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

struct Series {
  std::string label;
  std::vector<std::pair<double, double>> pts;
  std::string color;
  bool dashed = false;
  bool markers = false;
};

double y_value(const SweepRecord& r, const std::string& column) {
  if (column == "capacity") return phi_inverse(r.final_accuracy, r.N, std::pow(double(r.N), r.S));
  return record_field(r, column);
}

}  // namespace

std::string emit_plot(const PlotSpec& spec) { return emit_plot(spec, read_sweep_csv(spec.csv_path)); }

std::string emit_plot(const PlotSpec& spec, const SweepTable& table) {
  AOTMEM_REQUIRE(is_numeric_column(spec.x_column), "plot: unknown x column '" + spec.x_column + "'");
  AOTMEM_REQUIRE(spec.y_column == "capacity" || is_numeric_column(spec.y_column),
                 "plot: unknown y column '" + spec.y_column + "'");
  if (spec.group_by) record_label(SweepRecord{}, *spec.group_by);
  const bool capacity = spec.y_column == "capacity";

  std::map<std::string, std::map<double, std::pair<double, int>>> groups;
  std::map<double, const SweepRecord*> first_row;
  for (const auto& r : table) {
    if (spec.figure_id && r.figure_id != *spec.figure_id) continue;
    const double y = y_value(r, spec.y_column);
    if (!std::isfinite(y)) continue;
    const double x = record_field(r, spec.x_column);
    auto& cell = groups[spec.group_by ? record_label(r, *spec.group_by) : std::string()][x];
    cell.first += y;
    ++cell.second;
    first_row.emplace(x, &r);
  }
  if (groups.empty()) throw InvalidArgument("plot: no rows left after filtering");

  std::vector<Series> series;
  std::size_t color = 0;
  for (const auto& [label, cells] : groups) {
    Series s;
    s.label = spec.group_by ? *spec.group_by + "=" + label : spec.y_column;
    s.color = kPalette[color++ % 6];
    s.markers = true;
    for (const auto& [x, c] : cells) s.pts.emplace_back(x, c.first / c.second);
    if (spec.fit) {
      std::vector<double> xs, ys;
      for (auto [x, y] : s.pts) {
        xs.push_back(x);
        ys.push_back(y);
      }
      const FitResult fit = polyfit_ls(xs, ys, *spec.fit);
      Series f;
      f.label = std::string(to_string(*spec.fit)) + " fit, R2=" + tick(fit.r_squared);
      f.color = s.color;
      f.dashed = true;
      const double lo = xs.front(), hi = xs.back();
      for (int i = 0; i <= 100; ++i) {
        const double x = lo + (hi - lo) * i / 100.0;
        f.pts.emplace_back(x, fit.evaluate(x));
      }
      series.push_back(std::move(s));
      series.push_back(std::move(f));
    } else {
      series.push_back(std::move(s));
    }
  }

  for (BoundCurve b : spec.bounds) {
    Series s;
    s.color = b == BoundCurve::ours ? "#000000" : b == BoundCurve::previous ? "#7f7f7f" : "#bcbd22";
    s.label = b == BoundCurve::ours ? "ours: phi(H*d_h+d)" : b == BoundCurve::previous ? "previous: phi(H(d_h-1)+1)" : "chance 1/N";
    for (const auto& [x, r] : first_row) {
      const double T0 = std::pow(double(r->N), r->S);
      double X = 0.0;
      if (b == BoundCurve::ours) X = double(r->H) * r->d_h + r->d;
      if (b == BoundCurve::previous) X = double(r->H) * (r->d_h - 1) + 1;
      const double y = capacity ? std::min(X, T0) : (b == BoundCurve::chance ? 1.0 / r->N : phi(X, r->N, T0));
      s.pts.emplace_back(x, y);
    }
    series.push_back(std::move(s));
  }

  double xmin = 1e300, xmax = -1e300, ymin = 1e300, ymax = -1e300;
  for (const auto& s : series)
    for (auto [x, y] : s.pts) {
      xmin = std::min(xmin, x);
      xmax = std::max(xmax, x);
      ymin = std::min(ymin, y);
      ymax = std::max(ymax, y);
    }
  if (xmax <= xmin) xmax = xmin + 1.0;
  if (ymax <= ymin) ymax = ymin + 1.0;
  const double xpad = 0.05 * (xmax - xmin), ypad = 0.05 * (ymax - ymin);
  xmin -= xpad;
  xmax += xpad;
  ymin -= ypad;
  ymax += ypad;
  const double pw = kWidth - kLeft - kRight, ph = kHeight - kTop - kBottom;
  auto px = [&](double x) { return kLeft + (x - xmin) / (xmax - xmin) * pw; };
  auto py = [&](double y) { return kTop + (1.0 - (y - ymin) / (ymax - ymin)) * ph; };

  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\"" << kHeight
     << "\" viewBox=\"0 0 " << kWidth << ' ' << kHeight << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << num(kLeft + pw / 2) << "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">"
     << escape(spec.title) << "</text>\n";
  os << "<rect x=\"" << num(kLeft) << "\" y=\"" << num(kTop) << "\" width=\"" << num(pw) << "\" height=\""
     << num(ph) << "\" fill=\"none\" stroke=\"#333\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double xv = xmin + (xmax - xmin) * i / 4.0, yv = ymin + (ymax - ymin) * i / 4.0;
    os << "<line x1=\"" << num(px(xv)) << "\" y1=\"" << num(kTop + ph) << "\" x2=\"" << num(px(xv))
       << "\" y2=\"" << num(kTop + ph + 5) << "\" stroke=\"#333\"/>\n";
    os << "<text x=\"" << num(px(xv)) << "\" y=\"" << num(kTop + ph + 18) << "\" text-anchor=\"middle\">"
       << tick(xv) << "</text>\n";
    os << "<line x1=\"" << num(kLeft - 5) << "\" y1=\"" << num(py(yv)) << "\" x2=\"" << num(kLeft)
       << "\" y2=\"" << num(py(yv)) << "\" stroke=\"#333\"/>\n";
    os << "<text x=\"" << num(kLeft - 8) << "\" y=\"" << num(py(yv) + 4) << "\" text-anchor=\"end\">"
       << tick(yv) << "</text>\n";
  }
  os << "<text x=\"" << num(kLeft + pw / 2) << "\" y=\"" << num(kHeight - 12) << "\" text-anchor=\"middle\">"
     << escape(spec.x_label.empty() ? spec.x_column : spec.x_label) << "</text>\n";
  os << "<text x=\"16\" y=\"" << num(kTop + ph / 2) << "\" text-anchor=\"middle\" transform=\"rotate(-90 16 "
     << num(kTop + ph / 2) << ")\">" << escape(spec.y_label.empty() ? spec.y_column : spec.y_label)
     << "</text>\n";

  double legend_y = kTop + 10;
  for (const auto& s : series) {
    if (s.pts.size() > 1 || !s.markers) {
      os << "<polyline fill=\"none\" stroke=\"" << s.color << "\" stroke-width=\"1.5\""
         << (s.dashed ? " stroke-dasharray=\"5,4\"" : "") << " points=\"";
      for (std::size_t i = 0; i < s.pts.size(); ++i)
        os << (i ? " " : "") << num(px(s.pts[i].first)) << ',' << num(py(s.pts[i].second));
      os << "\"/>\n";
    }
    if (s.markers)
      for (auto [x, y] : s.pts)
        os << "<circle cx=\"" << num(px(x)) << "\" cy=\"" << num(py(y)) << "\" r=\"3.5\" fill=\"" << s.color
           << "\"/>\n";
    const double lx = kLeft + pw + 12;
    os << "<line x1=\"" << num(lx) << "\" y1=\"" << num(legend_y) << "\" x2=\"" << num(lx + 18) << "\" y2=\""
       << num(legend_y) << "\" stroke=\"" << s.color << "\" stroke-width=\"2\""
       << (s.dashed ? " stroke-dasharray=\"5,4\"" : "") << "/>\n";
    os << "<text x=\"" << num(lx + 24) << "\" y=\"" << num(legend_y + 4) << "\" font-size=\"10\">"
       << escape(s.label) << "</text>\n";
    legend_y += 16;
  }
  os << "</svg>\n";
  return os.str();
}

}  // namespace aotmem
