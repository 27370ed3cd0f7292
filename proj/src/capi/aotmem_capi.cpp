#include "aotmem/aotmem.h"

#include <cmath>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <initializer_list>
#include <map>
#include <string>

#include "bounds/bounds.hpp"
#include "common/error.hpp"
#include "construct/construct.hpp"
#include "model/model_json.hpp"
#include "report/plot.hpp"
#include "task/task.hpp"
#include "trainlab/trainlab.hpp"

struct aotmem_task {
  aotmem::TaskDistribution task;
};

struct aotmem_model {
  aotmem::AoTParams params;
};

namespace {

using nlohmann::json;
using namespace aotmem;

thread_local std::string g_last_error;

template <class F>
aotmem_status guard(F&& f) {
  try {
    g_last_error.clear();
    f();
    return AOTMEM_OK;
  } catch (const InvalidArgument& e) {
    g_last_error = e.what();
    return AOTMEM_ERR_INVALID_ARGUMENT;
  } catch (const json::exception& e) {
    g_last_error = std::string("json: ") + e.what();
    return AOTMEM_ERR_INVALID_ARGUMENT;
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return AOTMEM_ERR_COMPUTATION;
  } catch (...) {
    g_last_error = "unknown error";
    return AOTMEM_ERR_COMPUTATION;
  }
}

void require_ptr(const void* p, const char* what) {
  if (!p) throw InvalidArgument(std::string(what) + " must not be NULL");
}

char* dup_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (!out) throw ComputationError("out of memory");
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

json parse_object(const char* text, const char* what) {
  if (!text || !*text) return json::object();
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw InvalidArgument(std::string(what) + ": " + e.what());
  }
  if (!j.is_object()) throw InvalidArgument(std::string(what) + " must be a JSON object");
  return j;
}

void check_keys(const json& j, std::initializer_list<const char*> allowed, const char* what) {
  for (const auto& [key, _] : j.items()) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || key == a;
    if (!ok) throw InvalidArgument(std::string(what) + ": unknown key '" + key + "'");
  }
}

ConstructionConfig construction_config(const json& j) {
  check_keys(j,
             {"eps", "d", "d_h", "skip_mode", "lambda_skip", "rho_last", "gamma_target", "rank_tol",
              "max_resample", "head_candidates", "qk_scale_min", "qk_scale_max", "seed", "target",
              "target_lambda", "lower_bound_ref", "restarts", "steps"},
             "construct config");
  ConstructionConfig c;
  c.eps = j.value("eps", c.eps);
  c.d = j.value("d", c.d);
  c.d_h = j.value("d_h", c.d_h);
  if (j.contains("skip_mode")) c.skip_mode = parse_skip_mode(j.at("skip_mode").get<std::string>());
  c.lambda_skip = j.value("lambda_skip", c.lambda_skip);
  c.rho_last = j.value("rho_last", c.rho_last);
  c.gamma_target = j.value("gamma_target", c.gamma_target);
  c.rank_tol = j.value("rank_tol", c.rank_tol);
  c.max_resample = j.value("max_resample", c.max_resample);
  c.head_candidates = j.value("head_candidates", c.head_candidates);
  c.qk_scale_min = j.value("qk_scale_min", c.qk_scale_min);
  c.qk_scale_max = j.value("qk_scale_max", c.qk_scale_max);
  c.seed = j.value("seed", c.seed);
  if (j.contains("lower_bound_ref")) c.lower_bound_ref = j.at("lower_bound_ref").get<double>();
  c.validate();
  return c;
}

SequenceEncoder construction_target(const TaskDistribution& task, const ConstructionConfig& cfg, const json& j) {
  const std::string kind = j.value("target", std::string("circle"));
  if (kind == "circle") {
    AOTMEM_REQUIRE(cfg.d >= 2, "construct: the circle target needs d >= 2");
    const double lambda = j.value("target_lambda", 20.0);
    AOTMEM_REQUIRE(lambda > 0.0, "construct: target_lambda must be positive");
    return pad_encoder(circle_encoder(task, lambda), cfg.d);
  }
  if (kind == "lower_bound") {
    OptimizerOptions opt;
    opt.seed = cfg.seed;
    opt.restarts = j.value("restarts", opt.restarts);
    opt.steps = j.value("steps", opt.steps);
    return encoder_lower_bound(task, cfg.d, opt).encoder;
  }
  throw InvalidArgument("construct: unknown target '" + kind + "' (expected circle or lower_bound)");
}

BoundRequest bound_request(const json& j) {
  check_keys(j, {"d", "restarts", "steps", "lr", "seed", "polish_iterations", "theorem2", "jl_seed", "jl_max_tries",
                 "jl_sample"},
             "bounds request");
  BoundRequest r;
  r.d = j.value("d", r.d);
  r.optimizer.restarts = j.value("restarts", r.optimizer.restarts);
  r.optimizer.steps = j.value("steps", r.optimizer.steps);
  r.optimizer.lr = j.value("lr", r.optimizer.lr);
  r.optimizer.seed = j.value("seed", r.optimizer.seed);
  r.optimizer.polish_iterations = j.value("polish_iterations", r.optimizer.polish_iterations);
  r.theorem2 = j.value("theorem2", r.theorem2);
  r.jl_seed = j.value("jl_seed", r.jl_seed);
  r.jl_max_tries = j.value("jl_max_tries", r.jl_max_tries);
  r.jl_always_sample = j.value("jl_sample", r.jl_always_sample);
  AOTMEM_REQUIRE(r.optimizer.restarts >= 1 && r.optimizer.steps >= 0, "bounds: restarts >= 1 and steps >= 0");
  AOTMEM_REQUIRE(r.optimizer.lr > 0.0, "bounds: lr must be positive");
  AOTMEM_REQUIRE(r.jl_max_tries >= 1, "bounds: jl_max_tries must be positive");
  return r;
}

ScalingFitRequest fit_request(const json& j) {
  ScalingFitRequest r;
  r.x_column = j.value("x", r.x_column);
  r.y_column = j.value("y", r.y_column);
  r.form = parse_fit_form(j.value("form", std::string("linear")));
  if (j.contains("max_accuracy")) r.max_accuracy = j.at("max_accuracy").get<double>();
  if (j.contains("figure_id")) r.figure_id = j.at("figure_id").get<std::string>();
  if (j.contains("variant")) r.variant = j.at("variant").get<std::string>();
  return r;
}

json points_json(const std::vector<ScalingPoint>& pts) {
  json out = json::array();
  for (const auto& p : pts) out.push_back({{"x", p.x}, {"y", p.y}, {"accuracy", p.accuracy}, {"count", p.count}});
  return out;
}

}  // namespace

extern "C" {

const char* aotmem_version(void) { return AOTMEM_VERSION; }

const char* aotmem_last_error(void) { return g_last_error.c_str(); }

void aotmem_string_free(char* s) { std::free(s); }

aotmem_status aotmem_task_association(int n, int s, uint64_t seed, aotmem_task** out) {
  return guard([&] {
    require_ptr(out, "out");
    *out = new aotmem_task{make_association_task(n, s, seed)};
  });
}

aotmem_status aotmem_task_noisy_lookup(int n, int s, double p_correct, uint64_t seed, aotmem_task** out) {
  return guard([&] {
    require_ptr(out, "out");
    *out = new aotmem_task{make_noisy_lookup_task(n, s, p_correct, seed)};
  });
}

aotmem_status aotmem_task_smooth(const aotmem_task* task, double delta, aotmem_task** out) {
  return guard([&] {
    require_ptr(task, "task");
    require_ptr(out, "out");
    *out = new aotmem_task{smooth_task(task->task, delta)};
  });
}

aotmem_status aotmem_task_from_json(const char* text, aotmem_task** out) {
  return guard([&] {
    require_ptr(text, "json");
    require_ptr(out, "out");
    json j;
    try {
      j = json::parse(text);
    } catch (const json::exception& e) {
      throw InvalidArgument(std::string("task json: ") + e.what());
    }
    *out = new aotmem_task{task_from_json(j)};
  });
}

aotmem_status aotmem_task_to_json(const aotmem_task* task, char** out) {
  return guard([&] {
    require_ptr(task, "task");
    require_ptr(out, "out");
    *out = dup_string(task_to_json(task->task).dump());
  });
}

aotmem_status aotmem_task_size(const aotmem_task* task, size_t* out) {
  return guard([&] {
    require_ptr(task, "task");
    require_ptr(out, "out");
    *out = task->task.size();
  });
}

aotmem_status aotmem_task_t_epsilon(const aotmem_task* task, double eps, size_t* out) {
  return guard([&] {
    require_ptr(task, "task");
    require_ptr(out, "out");
    *out = t_epsilon(task->task, eps);
  });
}

void aotmem_task_free(aotmem_task* task) { delete task; }

aotmem_status aotmem_model_from_json(const char* text, aotmem_model** out) {
  return guard([&] {
    require_ptr(text, "json");
    require_ptr(out, "out");
    json j;
    try {
      j = json::parse(text);
    } catch (const json::exception& e) {
      throw InvalidArgument(std::string("model json: ") + e.what());
    }
    *out = new aotmem_model{params_from_json(j)};
  });
}

aotmem_status aotmem_model_to_json(const aotmem_model* model, char** out) {
  return guard([&] {
    require_ptr(model, "model");
    require_ptr(out, "out");
    *out = dup_string(params_to_json(model->params).dump());
  });
}

aotmem_status aotmem_model_logits(const aotmem_model* model, const int32_t* tokens, size_t len, double* logits,
                                  size_t logits_len) {
  return guard([&] {
    require_ptr(model, "model");
    require_ptr(tokens, "tokens");
    require_ptr(logits, "logits");
    AOTMEM_REQUIRE(logits_len == static_cast<size_t>(model->params.config.N), "logits buffer must hold N values");
    const Vector out = forward(model->params, std::span<const Token>(tokens, len));
    std::copy(out.begin(), out.end(), logits);
  });
}

void aotmem_model_free(aotmem_model* model) { delete model; }

aotmem_status aotmem_kl_divergence(const aotmem_model* model, const aotmem_task* task, double* out) {
  return guard([&] {
    require_ptr(model, "model");
    require_ptr(task, "task");
    require_ptr(out, "out");
    *out = kl_divergence(task->task, model_logits(model->params));
  });
}

aotmem_status aotmem_accuracy(const aotmem_model* model, const aotmem_task* task, double* out) {
  return guard([&] {
    require_ptr(model, "model");
    require_ptr(task, "task");
    require_ptr(out, "out");
    *out = accuracy(task->task, model_logits(model->params));
  });
}

aotmem_status aotmem_construct(const aotmem_task* task, const char* config_json, aotmem_model** model_out,
                               char** certificate_json) {
  return guard([&] {
    require_ptr(task, "task");
    require_ptr(model_out, "model_out");
    require_ptr(certificate_json, "certificate_json");
    const json j = parse_object(config_json, "construct config");
    const ConstructionConfig cfg = construction_config(j);
    const SequenceEncoder target = construction_target(task->task, cfg, j);
    Construction built = build_memorizer(task->task, target, cfg);
    *certificate_json = dup_string(certificate_to_json(built.certificate).dump());
    *model_out = new aotmem_model{std::move(built.params)};
  });
}

aotmem_status aotmem_verify(const aotmem_model* model, const aotmem_task* task, double lower_bound_ref,
                            char** certificate_json) {
  return guard([&] {
    require_ptr(model, "model");
    require_ptr(task, "task");
    require_ptr(certificate_json, "certificate_json");
    const auto cert = verify_memorizer(model->params, task->task, lower_bound_ref);
    json out = {{"achieved_accuracy", cert.achieved_accuracy ? json(*cert.achieved_accuracy) : json(nullptr)},
                {"achieved_kl", cert.achieved_kl},
                {"lower_bound_ref", cert.lower_bound_ref},
                {"prop1_gap", cert.prop1_gap},
                {"T0", cert.T_target}};
    *certificate_json = dup_string(out.dump());
  });
}

aotmem_status aotmem_bounds(const aotmem_task* task, const char* request_json, char** report_json) {
  return guard([&] {
    require_ptr(task, "task");
    require_ptr(report_json, "report_json");
    const BoundRequest req = bound_request(parse_object(request_json, "bounds request"));
    *report_json = dup_string(run_bounds(task->task, req).dump());
  });
}

aotmem_status aotmem_capacity(const char* request_json, char** report_json) {
  return guard([&] {
    require_ptr(report_json, "report_json");
    const json j = parse_object(request_json, "capacity request");
    check_keys(j, {"H", "d_h", "d", "N", "S", "T0"}, "capacity request");
    const int H = j.at("H").get<int>(), dh = j.at("d_h").get<int>(), d = j.at("d").get<int>();
    const int N = j.at("N").get<int>(), S = j.at("S").get<int>();
    const double T0 = j.value("T0", std::pow(static_cast<double>(N), S));
    const CapacityReport r = capacity_formulas(H, dh, d, N, S, T0);
    const ModelConfig cfg{N, S, d, dh, H, Variant::aot, 0, QkMode::full};
    json out = {{"ours", r.ours},
                {"previous", r.previous},
                {"kim_params", r.kim_params},
                {"huben_params", r.huben_params},
                {"phi_bound", r.phi_bound},
                {"T0", T0},
                {"params_theorem1", param_count(cfg, ParamFormula::theorem1)},
                {"params_remark2", param_count(cfg, ParamFormula::remark2)},
                {"params_raw", param_count(cfg, ParamFormula::raw)}};
    *report_json = dup_string(out.dump());
  });
}

aotmem_status aotmem_train(const aotmem_task* task, const char* model_config_json, const char* train_config_json,
                           aotmem_model** model_out, char** result_json) {
  return guard([&] {
    require_ptr(task, "task");
    require_ptr(result_json, "result_json");
    json mc = parse_object(model_config_json, "model config");
    check_keys(mc, {"d", "d_h", "H", "variant", "mlp_width", "qk_mode"}, "model config");
    mc["N"] = task->task.N;
    mc["S"] = task->task.S;
    const ModelConfig config = config_from_json(mc);
    const TrainConfig tc = train_config_from_json(parse_object(train_config_json, "train config"));
    TrainSummary summary = train_model(config, task->task, tc);
    json runs = json::array();
    for (const auto& r : summary.runs) runs.push_back(train_result_to_json(r));
    json out = {{"config", config_to_json(config)},
                {"train", train_config_to_json(tc)},
                {"params", param_count(config, ParamFormula::raw)},
                {"mean_accuracy", summary.mean_accuracy},
                {"mean_kl", summary.mean_kl},
                {"runs", runs}};
    *result_json = dup_string(out.dump());
    if (model_out) *model_out = new aotmem_model{std::move(summary.params)};
  });
}

aotmem_status aotmem_sweep(const char* spec_json, const char* csv_path, char** summary_json) {
  return guard([&] {
    require_ptr(spec_json, "spec_json");
    require_ptr(summary_json, "summary_json");
    const SweepSpec spec = sweep_spec_from_json(parse_object(spec_json, "sweep spec"));
    const SweepOutcome o = run_sweep(spec, csv_path ? csv_path : "");
    json out = {{"spec", sweep_spec_to_json(spec)},
                {"rows", o.rows.size()},
                {"computed", o.computed},
                {"skipped", o.skipped},
                {"failed", o.failed}};
    *summary_json = dup_string(out.dump());
  });
}

aotmem_status aotmem_fit(const char* csv_path, const char* request_json, char** fit_json) {
  return guard([&] {
    require_ptr(csv_path, "csv_path");
    require_ptr(fit_json, "fit_json");
    const json j = parse_object(request_json, "fit request");
    check_keys(j, {"x", "y", "form", "max_accuracy", "figure_id", "variant", "by", "by_form"}, "fit request");
    const SweepTable table = read_sweep_csv(csv_path);
    const ScalingFitRequest req = fit_request(j);
    json out;
    if (j.contains("by")) {
      // Per-group slope, then a fit of the slopes against the group value.
      const std::string by = j.at("by").get<std::string>();
      AOTMEM_REQUIRE(is_numeric_column(by), "fit: 'by' must name a numeric column");
      std::map<double, SweepTable> groups;
      for (const auto& r : table) groups[record_field(r, by)].push_back(r);
      json per = json::array();
      std::vector<double> gx, gy;
      for (const auto& [g, rows] : groups) {
        const FitResult f = fit_scaling_law(rows, req);
        json jf = fit_result_to_json(f);
        jf[by] = g;
        per.push_back(jf);
        gx.push_back(g);
        gy.push_back(f.coefficients.size() > 1 ? f.coefficients[1] : f.coefficients[0]);
      }
      out["groups"] = per;
      const FitForm by_form = parse_fit_form(j.value("by_form", std::string("cubic")));
      out["coefficient_fit"] = fit_result_to_json(polyfit_ls(gx, gy, by_form));
    } else {
      out = fit_result_to_json(fit_scaling_law(table, req));
      out["points"] = points_json(scaling_points(table, req));
    }
    out["x"] = req.x_column;
    out["y"] = req.y_column;
    *fit_json = dup_string(out.dump());
  });
}

aotmem_status aotmem_plot(const char* csv_path, const char* spec_json, char** svg) {
  return guard([&] {
    require_ptr(csv_path, "csv_path");
    require_ptr(svg, "svg");
    const json j = parse_object(spec_json, "plot spec");
    check_keys(j, {"x", "y", "group_by", "figure_id", "bounds", "fit", "title", "x_label", "y_label"}, "plot spec");
    PlotSpec spec;
    spec.csv_path = csv_path;
    spec.x_column = j.value("x", spec.x_column);
    spec.y_column = j.value("y", spec.y_column);
    if (j.contains("group_by")) spec.group_by = j.at("group_by").get<std::string>();
    if (j.contains("figure_id")) spec.figure_id = j.at("figure_id").get<std::string>();
    if (j.contains("bounds"))
      for (const auto& b : j.at("bounds")) spec.bounds.push_back(parse_bound_curve(b.get<std::string>()));
    if (j.contains("fit")) spec.fit = parse_fit_form(j.at("fit").get<std::string>());
    spec.title = j.value("title", std::string());
    spec.x_label = j.value("x_label", std::string());
    spec.y_label = j.value("y_label", std::string());
    *svg = dup_string(emit_plot(spec));
  });
}

}  // extern "C"
