// Command-line front end. Talks to the library only through the C API.
#include <CLI11.hpp>
#include <json.hpp>

#include <cstdint>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "aotmem/aotmem.h"

namespace {

using nlohmann::json;

struct Failure {
  int code;
  std::string message;
};

void check(aotmem_status st) {
  if (st != AOTMEM_OK) throw Failure{static_cast<int>(st), aotmem_last_error()};
}

[[noreturn]] void bad_input(const std::string& msg) { throw Failure{2, msg}; }

std::string take(char* s) {
  std::string out = s ? s : "";
  aotmem_string_free(s);
  return out;
}

struct TaskDeleter {
  void operator()(aotmem_task* t) const { aotmem_task_free(t); }
};
struct ModelDeleter {
  void operator()(aotmem_model* m) const { aotmem_model_free(m); }
};
using TaskPtr = std::unique_ptr<aotmem_task, TaskDeleter>;
using ModelPtr = std::unique_ptr<aotmem_model, ModelDeleter>;

std::string read_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) bad_input("cannot read '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Failure{1, "cannot write '" + path + "'"};
  out << text;
}

json parse_json(const std::string& text, const std::string& what) {
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    bad_input(what + ": " + e.what());
  }
}

// key=value overrides; values are parsed as JSON when possible.
void apply_overrides(json& j, const std::vector<std::string>& sets) {
  for (const auto& kv : sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos || eq == 0) bad_input("override '" + kv + "' is not key=value");
    const std::string key = kv.substr(0, eq), value = kv.substr(eq + 1);
    try {
      j[key] = json::parse(value);
    } catch (const json::exception&) {
      j[key] = value;
    }
  }
}

void log_run(const std::string& command, const json& resolved) {
  std::cerr << "aotmem " << aotmem_version() << ' ' << command << ' ' << resolved.dump() << '\n';
}

struct TaskOptions {
  std::string file;
  int n = 5;
  int s = 2;
  std::uint64_t task_seed = 0;
  std::optional<double> noisy;
  std::optional<double> smooth;

  void add(CLI::App* app) {
    app->add_option("--task", file, "task JSON file (overrides --n/--s)");
    app->add_option("--n", n, "dictionary size N");
    app->add_option("--s", s, "context length S");
    app->add_option("--task-seed", task_seed, "seed of the generated task");
    app->add_option("--noisy", noisy, "noisy lookup task with this p_correct");
    app->add_option("--smooth", smooth, "smooth conditionals with this delta");
  }

  json describe() const {
    json j = file.empty() ? json{{"n", n}, {"s", s}, {"task_seed", task_seed}} : json{{"task", file}};
    if (noisy) j["noisy"] = *noisy;
    if (smooth) j["smooth"] = *smooth;
    return j;
  }

  TaskPtr load() const {
    aotmem_task* raw = nullptr;
    if (!file.empty())
      check(aotmem_task_from_json(read_file(file).c_str(), &raw));
    else if (noisy)
      check(aotmem_task_noisy_lookup(n, s, *noisy, task_seed, &raw));
    else
      check(aotmem_task_association(n, s, task_seed, &raw));
    TaskPtr task(raw);
    if (smooth) {
      aotmem_task* sm = nullptr;
      check(aotmem_task_smooth(task.get(), *smooth, &sm));
      task.reset(sm);
    }
    return task;
  }
};

void print_result(const json& j, bool as_json) {
  if (as_json) {
    std::cout << j.dump() << '\n';
    return;
  }
  for (const auto& [k, v] : j.items()) {
    if (v.is_structured()) continue;
    std::cout << k << ": " << v.dump() << '\n';
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"aotmem: memorization capacity laboratory for attention-only transformers"};
  app.require_subcommand(1);
  app.fallthrough();
  bool as_json = false;
  app.add_flag("--json", as_json, "print machine-readable JSON on stdout");
  app.set_version_flag("--version", std::string(aotmem_version()));

  // construct
  auto* construct = app.add_subcommand("construct", "build an exact memorizer and its certificate");
  TaskOptions c_task;
  c_task.add(construct);
  int c_d = 2, c_dh = 2;
  double c_eps = 0.0;
  std::string c_skip = "exact_basis", c_target = "circle", c_out, c_cert, c_config;
  std::uint64_t c_seed = 0;
  double c_lambda = 20.0;
  std::vector<std::string> c_set;
  construct->add_option("--d", c_d, "embedding dimension");
  construct->add_option("--dh", c_dh, "head dimension");
  construct->add_option("--eps", c_eps, "coverage slack epsilon");
  construct->add_option("--skip-mode", c_skip, "exact_basis | literal_lambda | heads_only");
  construct->add_option("--seed", c_seed, "construction seed");
  construct->add_option("--target", c_target, "circle | lower_bound");
  construct->add_option("--target-lambda", c_lambda, "scale of the circle target");
  construct->add_option("--config", c_config, "construction config JSON file");
  construct->add_option("--set", c_set, "key=value config override");
  construct->add_option("--out", c_out, "model JSON output path");
  construct->add_option("--cert", c_cert, "certificate JSON output path (default <out>.cert.json)");

  // verify
  auto* verify = app.add_subcommand("verify", "measure a saved model against a task");
  TaskOptions v_task;
  v_task.add(verify);
  std::string v_model;
  double v_lb = 0.0;
  verify->add_option("--model", v_model, "model JSON file")->required();
  verify->add_option("--lower-bound-ref", v_lb, "reference lower bound for the optimality gap");

  // bounds
  auto* bounds = app.add_subcommand("bounds", "encoder lower bound, unembedding-based upper bound, capacity formulas");
  TaskOptions b_task;
  b_task.add(bounds);
  json b_req = json::object();
  int b_d = 2, b_restarts = 5, b_steps = 2000, b_jl_tries = 100;
  std::uint64_t b_seed = 0, b_jl_seed = 0;
  bool b_no_t2 = false, b_capacity = false, b_jl_sample = false;
  int cap_H = 1, cap_dh = 1;
  std::optional<double> cap_T0;
  std::string b_out;
  bounds->add_option("--d", b_d, "encoder dimension");
  bounds->add_option("--restarts", b_restarts, "optimizer restarts");
  bounds->add_option("--steps", b_steps, "Adam steps per restart");
  bounds->add_option("--seed", b_seed, "optimizer seed");
  bounds->add_flag("--no-theorem2", b_no_t2, "skip the sign-unembedding upper bound");
  bounds->add_option("--jl-seed", b_jl_seed, "seed of the sign unembedding");
  bounds->add_option("--jl-max-tries", b_jl_tries, "resampling budget of the sign unembedding");
  bounds->add_flag("--jl-sample", b_jl_sample, "sample sign vectors even when N <= d");
  bounds->add_flag("--capacity", b_capacity, "evaluate the capacity formulas instead");
  bounds->add_option("--H", cap_H, "heads (capacity mode)");
  bounds->add_option("--dh", cap_dh, "head dimension (capacity mode)");
  bounds->add_option("--t0", cap_T0, "number of associations T0 (capacity mode, default N^S)");
  bounds->add_option("--out", b_out, "write the JSON report here");

  // train
  auto* train = app.add_subcommand("train", "train one configuration over the configured seeds");
  TaskOptions t_task;
  t_task.add(train);
  int t_d = 10, t_dh = 10, t_H = 1, t_width = 0;
  std::string t_variant = "aot", t_qk = "full", t_out, t_config;
  bool t_full = false;
  std::vector<std::string> t_set;
  train->add_option("--d", t_d, "embedding dimension");
  train->add_option("--dh", t_dh, "head dimension");
  train->add_option("--H", t_H, "head count");
  train->add_option("--variant", t_variant, "aot | mlp_based");
  train->add_option("--width", t_width, "MLP width (mlp_based)");
  train->add_option("--qk-mode", t_qk, "full | rank1");
  train->add_flag("--full", t_full, "full budget: 10 epochs of 1000 batches at lr 1e-3");
  train->add_option("--config", t_config, "train config JSON file");
  train->add_option("--set", t_set, "key=value train config override");
  train->add_option("--out", t_out, "write the first seed's model JSON here");

  // sweep
  auto* sweep = app.add_subcommand("sweep", "run a figure sweep into a CSV (resumable)");
  std::string s_preset, s_spec, s_csv;
  bool s_full = false, s_no_timing = false;
  int s_threads = 0;
  std::vector<std::string> s_set;
  sweep->add_option("--preset", s_preset, "fig1a | fig1b | fig2a | fig2b | fig3 | fig4");
  sweep->add_option("--spec", s_spec, "sweep spec JSON file");
  sweep->add_option("--csv", s_csv, "output CSV path")->required();
  sweep->add_flag("--full", s_full, "full budget: 10 epochs of 1000 batches");
  sweep->add_flag("--no-timing", s_no_timing, "write wall_seconds as 0 for byte-reproducible CSVs");
  sweep->add_option("--threads", s_threads, "worker count (default AOTMEM_THREADS or 1)");
  sweep->add_option("--set", s_set, "key=value spec override");

  // fit
  auto* fit = app.add_subcommand("fit", "least-squares scaling-law fit of a sweep CSV");
  std::string f_csv, f_form = "linear", f_x = "H", f_y = "final_accuracy", f_by, f_by_form = "cubic";
  std::optional<double> f_max_acc;
  std::optional<std::string> f_figure, f_variant;
  fit->add_option("--csv", f_csv, "sweep CSV")->required();
  fit->add_option("--form", f_form, "linear | quadratic | cubic | affine_quadratic");
  fit->add_option("--x", f_x, "x column");
  fit->add_option("--y", f_y, "y column, or 'capacity'");
  fit->add_option("--max-accuracy", f_max_acc, "drop grouped points above this accuracy");
  fit->add_option("--figure", f_figure, "keep rows of this figure_id");
  fit->add_option("--variant", f_variant, "keep rows of this variant");
  fit->add_option("--by", f_by, "fit per value of this column, then fit the slopes");
  fit->add_option("--by-form", f_by_form, "form of the slope fit");

  // plot
  auto* plot = app.add_subcommand("plot", "render a sweep CSV as SVG");
  std::string p_csv, p_x = "H", p_y = "final_accuracy", p_out, p_title, p_xl, p_yl;
  std::optional<std::string> p_group, p_figure, p_fit;
  std::vector<std::string> p_bounds;
  plot->add_option("--csv", p_csv, "sweep CSV")->required();
  plot->add_option("--x", p_x, "x column");
  plot->add_option("--y", p_y, "y column, or 'capacity'");
  plot->add_option("--group-by", p_group, "one series per value of this column");
  plot->add_option("--figure", p_figure, "keep rows of this figure_id");
  plot->add_option("--bound", p_bounds, "ours | previous | chance (repeatable)");
  plot->add_option("--fit", p_fit, "overlay a least-squares fit of this form");
  plot->add_option("--title", p_title, "title");
  plot->add_option("--x-label", p_xl, "x axis label");
  plot->add_option("--y-label", p_yl, "y axis label");
  plot->add_option("--out", p_out, "SVG output path (default stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (*construct) {
      json cfg = c_config.empty() ? json::object() : parse_json(read_file(c_config), "construct config");
      if (!cfg.contains("d")) cfg["d"] = c_d;
      if (!cfg.contains("d_h")) cfg["d_h"] = c_dh;
      if (!cfg.contains("eps")) cfg["eps"] = c_eps;
      if (!cfg.contains("skip_mode")) cfg["skip_mode"] = c_skip;
      if (!cfg.contains("seed")) cfg["seed"] = c_seed;
      if (!cfg.contains("target")) cfg["target"] = c_target == "lower-bound" ? "lower_bound" : c_target;
      if (!cfg.contains("target_lambda") && cfg["target"] == "circle") cfg["target_lambda"] = c_lambda;
      apply_overrides(cfg, c_set);
      log_run("construct", {{"task", c_task.describe()}, {"config", cfg}});
      TaskPtr task = c_task.load();
      aotmem_model* raw = nullptr;
      char* cert_raw = nullptr;
      check(aotmem_construct(task.get(), cfg.dump().c_str(), &raw, &cert_raw));
      ModelPtr model(raw);
      const json cert = parse_json(take(cert_raw), "certificate");
      if (!c_out.empty()) {
        char* mj = nullptr;
        check(aotmem_model_to_json(model.get(), &mj));
        write_file(c_out, take(mj));
        write_file(c_cert.empty() ? c_out + ".cert.json" : c_cert, cert.dump(2) + "\n");
      } else if (!c_cert.empty()) {
        write_file(c_cert, cert.dump(2) + "\n");
      }
      print_result(cert, as_json);
      const bool exact = cfg["eps"].get<double>() == 0.0;
      if (exact) {
        const bool acc_ok = cert["achieved_accuracy"].is_null() || cert["achieved_accuracy"].get<double>() >= 1.0 - 1e-9;
        if (!acc_ok || cert["solve_residual"].get<double>() > 1e-8) {
          std::cerr << "construct: certificate check failed (accuracy or solve residual)\n";
          return 1;
        }
      }
      return 0;
    }

    if (*verify) {
      log_run("verify", {{"task", v_task.describe()}, {"model", v_model}, {"lower_bound_ref", v_lb}});
      TaskPtr task = v_task.load();
      aotmem_model* raw = nullptr;
      check(aotmem_model_from_json(read_file(v_model).c_str(), &raw));
      ModelPtr model(raw);
      char* out = nullptr;
      check(aotmem_verify(model.get(), task.get(), v_lb, &out));
      const json rep = parse_json(take(out), "verify report");
      print_result(rep, as_json);
      if (rep["prop1_gap"].get<double>() < -1e-3) {
        std::cerr << "verify: KL is below the lower bound reference by more than 1e-3\n";
        return 1;
      }
      return 0;
    }

    if (*bounds) {
      char* out = nullptr;
      if (b_capacity) {
        json req = {{"H", cap_H}, {"d_h", cap_dh}, {"d", b_d}, {"N", b_task.n}, {"S", b_task.s}};
        if (cap_T0) req["T0"] = *cap_T0;
        log_run("bounds --capacity", req);
        check(aotmem_capacity(req.dump().c_str(), &out));
      } else {
        json req = {{"d", b_d},           {"restarts", b_restarts}, {"steps", b_steps},
                    {"seed", b_seed},     {"theorem2", !b_no_t2},   {"jl_seed", b_jl_seed},
                    {"jl_max_tries", b_jl_tries}, {"jl_sample", b_jl_sample}};
        log_run("bounds", {{"task", b_task.describe()}, {"request", req}});
        TaskPtr task = b_task.load();
        check(aotmem_bounds(task.get(), req.dump().c_str(), &out));
      }
      const json rep = parse_json(take(out), "bounds report");
      if (!b_out.empty()) write_file(b_out, rep.dump(2) + "\n");
      print_result(rep, as_json);
      return 0;
    }

    if (*train) {
      json mc = {{"d", t_d}, {"d_h", t_dh}, {"H", t_H}, {"variant", t_variant}, {"qk_mode", t_qk}};
      if (t_width > 0) mc["mlp_width"] = t_width;
      json tc = t_config.empty() ? json::object() : parse_json(read_file(t_config), "train config");
      if (!t_full) {
        if (!tc.contains("epochs")) tc["epochs"] = 3;
        if (!tc.contains("batches_per_epoch")) tc["batches_per_epoch"] = 300;
        if (!tc.contains("lr")) tc["lr"] = 1e-2;
      }
      apply_overrides(tc, t_set);
      log_run("train", {{"task", t_task.describe()}, {"model", mc}, {"train", tc}});
      TaskPtr task = t_task.load();
      aotmem_model* raw = nullptr;
      char* out = nullptr;
      check(aotmem_train(task.get(), mc.dump().c_str(), tc.dump().c_str(), &raw, &out));
      ModelPtr model(raw);
      const json res = parse_json(take(out), "train result");
      if (!t_out.empty()) {
        char* mj = nullptr;
        check(aotmem_model_to_json(model.get(), &mj));
        write_file(t_out, take(mj));
      }
      print_result(res, as_json);
      return 0;
    }

    if (*sweep) {
      if (s_preset.empty() == s_spec.empty()) bad_input("sweep: give exactly one of --preset or --spec");
      json spec = s_spec.empty() ? json{{"preset", s_preset}} : parse_json(read_file(s_spec), "sweep spec");
      if (s_full) spec["full"] = true;
      if (s_threads > 0) spec["parallelism"] = s_threads;
      if (s_no_timing) spec["record_timing"] = false;
      apply_overrides(spec, s_set);
      log_run("sweep", {{"spec", spec}, {"csv", s_csv}});
      char* out = nullptr;
      check(aotmem_sweep(spec.dump().c_str(), s_csv.c_str(), &out));
      const json rep = parse_json(take(out), "sweep summary");
      print_result(rep, as_json);
      return rep["failed"].get<int>() > 0 ? 1 : 0;
    }

    if (*fit) {
      json req = {{"x", f_x}, {"y", f_y}, {"form", f_form}};
      if (f_max_acc) req["max_accuracy"] = *f_max_acc;
      if (f_figure) req["figure_id"] = *f_figure;
      if (f_variant) req["variant"] = *f_variant;
      if (!f_by.empty()) {
        req["by"] = f_by;
        req["by_form"] = f_by_form;
      }
      log_run("fit", {{"csv", f_csv}, {"request", req}});
      char* out = nullptr;
      check(aotmem_fit(f_csv.c_str(), req.dump().c_str(), &out));
      const json rep = parse_json(take(out), "fit result");
      if (as_json) {
        std::cout << rep.dump() << '\n';
      } else {
        print_result(rep, false);
        if (rep.contains("coefficients")) std::cout << "coefficients: " << rep["coefficients"].dump() << '\n';
      }
      return 0;
    }

    if (*plot) {
      json spec = {{"x", p_x}, {"y", p_y}, {"title", p_title}, {"x_label", p_xl}, {"y_label", p_yl}};
      if (p_group) spec["group_by"] = *p_group;
      if (p_figure) spec["figure_id"] = *p_figure;
      if (p_fit) spec["fit"] = *p_fit;
      if (!p_bounds.empty()) spec["bounds"] = p_bounds;
      log_run("plot", {{"csv", p_csv}, {"spec", spec}});
      char* out = nullptr;
      check(aotmem_plot(p_csv.c_str(), spec.dump().c_str(), &out));
      const std::string svg = take(out);
      if (p_out.empty())
        std::cout << svg;
      else
        write_file(p_out, svg);
      return 0;
    }
  } catch (const Failure& f) {
    std::cerr << "error: " << f.message << '\n';
    return f.code == 0 ? 1 : f.code;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
