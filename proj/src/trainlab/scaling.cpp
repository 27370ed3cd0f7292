#include <cmath>
#include <map>

#include "bounds/bounds.hpp"
#include "common/error.hpp"
#include "trainlab/trainlab.hpp"

namespace aotmem {

std::vector<ScalingPoint> scaling_points(const SweepTable& table, const ScalingFitRequest& req) {
  const bool capacity = req.y_column == "capacity";
  AOTMEM_REQUIRE(is_numeric_column(req.x_column), "fit: x column must be numeric");
  AOTMEM_REQUIRE(capacity || is_numeric_column(req.y_column), "fit: y column must be numeric or 'capacity'");
  struct Acc {
    double y = 0.0, acc = 0.0;
    std::size_t n = 0;
  };
  std::map<double, Acc> groups;
  for (const auto& r : table) {
    if (req.figure_id && r.figure_id != *req.figure_id) continue;
    if (req.variant && r.variant != *req.variant) continue;
    if (!std::isfinite(r.final_accuracy)) continue;
    double y;
    if (capacity) {
      const double T0 = std::pow(static_cast<double>(r.N), r.S);
      y = phi_inverse(r.final_accuracy, r.N, T0);
    } else {
      y = record_field(r, req.y_column);
    }
    Acc& a = groups[record_field(r, req.x_column)];
    a.y += y;
    a.acc += r.final_accuracy;
    ++a.n;
  }
  std::vector<ScalingPoint> out;
  for (const auto& [x, a] : groups) {
    ScalingPoint p{x, a.y / a.n, a.acc / a.n, a.n};
    if (req.max_accuracy && p.accuracy > *req.max_accuracy) continue;
    out.push_back(p);
  }
  return out;
}

FitResult fit_scaling_law(const SweepTable& table, const ScalingFitRequest& req) {
  const auto pts = scaling_points(table, req);
  const std::size_t need = std::max<std::size_t>(3, fit_design_matrix(std::vector<double>{1.0}, req.form).cols());
  if (pts.size() < need)
    throw InvalidArgument("fit: " + std::to_string(pts.size()) + " grouped points, need at least " +
                          std::to_string(need));
  std::vector<double> xs, ys;
  for (const auto& p : pts) {
    xs.push_back(p.x);
    ys.push_back(p.y);
  }
  return polyfit_ls(xs, ys, req.form);
}

nlohmann::json fit_result_to_json(const FitResult& fit) {
  return {{"form", std::string(to_string(fit.form))},
          {"coefficients", fit.coefficients},
          {"residual_norm", fit.residual_norm},
          {"r_squared", fit.r_squared}};
}

}  // namespace aotmem
