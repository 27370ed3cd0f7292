#include <algorithm>
#include <cmath>

#include "bounds/bounds.hpp"
#include "common/error.hpp"

namespace aotmem {

double phi(double X, int N, double T0) {
  AOTMEM_REQUIRE(N >= 1, "phi: N must be positive");
  AOTMEM_REQUIRE(T0 > 0.0, "phi: T0 must be positive");
  const double inv = 1.0 / N;
  return std::min(1.0, inv + (1.0 - inv) * X / T0);
}

double phi_inverse(double acc, int N, double T0) {
  AOTMEM_REQUIRE(N >= 2, "phi_inverse: N must be at least 2");
  AOTMEM_REQUIRE(T0 > 0.0, "phi_inverse: T0 must be positive");
  const double inv = 1.0 / N;
  return (acc - inv) * T0 / (1.0 - inv);
}

CapacityReport capacity_formulas(int H, int d_h, int d, int N, int S, double T0) {
  AOTMEM_REQUIRE(H >= 0 && d_h >= 0 && d >= 0 && N >= 1 && S >= 1,
                 "capacity_formulas: arguments must be nonnegative");
  AOTMEM_REQUIRE(T0 > 0.0, "capacity_formulas: T0 must be positive");
  CapacityReport r;
  r.ours = static_cast<std::int64_t>(H) * d_h + d;
  r.previous = static_cast<std::int64_t>(H) * (d_h - 1) + 1;
  r.kim_params = S + N + std::sqrt(T0 * std::log(T0));
  r.huben_params = static_cast<double>(d + S) * (S + N + T0);
  r.phi_bound = phi(static_cast<double>(r.ours), N, T0);
  return r;
}

nlohmann::json run_bounds(const TaskDistribution& task, const BoundRequest& req) {
  AOTMEM_REQUIRE(req.d >= 1, "bounds: d must be at least 1");
  task.validate();
  nlohmann::json out;
  const auto lb = encoder_lower_bound(task, req.d, req.optimizer);
  out["d"] = req.d;
  out["lower_bound"] = lb.value;
  out["optimizer_meta"] = {{"restarts", lb.meta.restarts},
                           {"iterations", lb.meta.iterations},
                           {"final_gradient_norm", lb.meta.final_gradient_norm},
                           {"failed_restarts", lb.meta.failed_restarts},
                           {"closed_form", lb.meta.closed_form}};
  const auto assumptions = check_assumptions(task);
  out["assumptions"] = {{"assumption1", assumptions.assumption1},
                        {"assumption2", assumptions.assumption2},
                        {"min_conditional", assumptions.min_conditional},
                        {"max_entropy", assumptions.max_entropy}};
  if (!req.theorem2) return out;
  try {
    const auto rep = theorem2_bound(task, req.d, req.jl_seed, req.jl_max_tries, req.jl_always_sample);
    out["C_jl"] = rep.C;
    out["C_target"] = rep.C_target;
    out["theorem2_full"] = rep.full;
    out["theorem2_simplified"] = rep.simplified;
    out["theorem2_measured_kl"] = rep.measured_kl;
    nlohmann::json table = nlohmann::json::array();
    for (const auto& s : rep.lambdas)
      table.push_back({{"lambda", s.lambda}, {"residual", s.residual}, {"cap", s.cap}});
    out["lambda_table"] = std::move(table);
  } catch (const std::exception& e) {
    out["theorem2_error"] = e.what();
  }
  return out;
}

}  // namespace aotmem
