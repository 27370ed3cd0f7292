// Acceptance runner: one PASS/FAIL line per criterion.
//   aotmem_acceptance [--only 1,2,...]

#include <CLI11.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <numbers>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "bounds/bounds.hpp"
#include "construct/construct.hpp"
#include "model/model.hpp"
#include "numkernel/linalg.hpp"
#include "numkernel/rng.hpp"
#include "task/task.hpp"
#include "trainlab/trainlab.hpp"

using namespace aotmem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// ---- 1 ----------------------------------------------------------------------

Outcome exact_memorization() {
  bool ok = true;
  std::string detail;
  for (auto [N, H_expect, budget] : {std::tuple{5, 12, 5.0}, std::tuple{10, 49, 60.0}}) {
    const auto t0 = std::chrono::steady_clock::now();
    const TaskDistribution task = make_association_task(N, 2, 0);
    ConstructionConfig cfg;
    cfg.d = 2;
    cfg.d_h = 2;
    const Construction c = build_memorizer(task, pad_encoder(circle_encoder(task, 20.0), 2), cfg);
    const double secs = seconds_since(t0);
    const auto& cert = c.certificate;
    const double acc = accuracy(task, model_logits(c.params));
    const bool this_ok = cert.H_used == H_expect && acc == 1.0 && cert.achieved_accuracy == 1.0 &&
                         cert.solve_residual <= 1e-8 && secs < budget;
    ok = ok && this_ok;
    detail += fmt("N=%d H=%d acc=%.17g solve_residual=%.3g time=%.2fs; ", N, cert.H_used, acc,
                  cert.solve_residual, secs);
  }
  return {ok, detail};
}

// ---- 2 ----------------------------------------------------------------------

Outcome rank_law() {
  const int N = 5, S = 2, d = 3, d_h = 2, H = 4;
  const std::vector<TokenSeq> all = enumerate_sequences(N, S);
  const std::vector<TokenSeq> seqs(all.begin(), all.begin() + 8);
  const std::size_t expect = std::min<std::size_t>(seqs.size(), H * d_h);
  int hits = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const Embeddings emb = sample_embeddings(N, S, d, seed);
    AoTParams p;
    p.config = ModelConfig{N, S, d, d_h, H, Variant::aot, 0, QkMode::rank1};
    p.e = emb.e;
    p.pos = emb.pos;
    p.W_U = Matrix(N, d);
    Rng rng = Rng(seed).split(99);
    for (int h = 0; h < H; ++h) p.heads.push_back(sample_head(d, d_h, rng, 1.0, 300.0));
    if (numeric_rank(assemble_attention_matrix(p, seqs, false), 1e-8) == expect) ++hits;
  }
  return {hits >= 95, fmt("rank %zu reached in %d/100 seeds (need 95)", expect, hits)};
}

// ---- 3 ----------------------------------------------------------------------

Outcome kl_floor() {
  const int N = 5, S = 2, d = 2;
  std::vector<TaskDistribution> tasks;
  std::vector<double> floors;
  for (std::uint64_t s = 0; s < 2; ++s) {
    tasks.push_back(smooth_task(make_association_task(N, S, s), 0.05));
    floors.push_back(encoder_lower_bound(tasks.back(), d).value);
  }
  double worst = 1e300;
  int count = 0;
  auto check = [&](const AoTParams& p, std::size_t k) {
    worst = std::min(worst, kl_divergence(tasks[k], model_logits(p)) - floors[k]);
    ++count;
  };
  Rng rng(3);
  for (int i = 0; i < 8; ++i) {
    ModelConfig c{N, S, d, 2, 1 + i % 4, Variant::aot, 0, i % 2 ? QkMode::rank1 : QkMode::full};
    check(init_normal(c, rng, 0.3 + 0.3 * i), i % 2);
  }
  for (int i = 0; i < 6; ++i) {
    ModelConfig c{N, S, d, 2, 2 + i, Variant::aot, 0, QkMode::full};
    TrainConfig t;
    t.epochs = 2;
    t.batches_per_epoch = 150;
    t.batch_size = 256;
    t.lr = 1e-2;
    check(train_single(c, tasks[i % 2], t, i).params, i % 2);
  }
  for (int i = 0; i < 6; ++i) {
    const std::size_t k = i % 2;
    OptimizerOptions opt;
    opt.seed = i;
    ConstructionConfig cfg;
    cfg.d = d;
    cfg.d_h = 2;
    cfg.seed = i;
    cfg.eps = i < 3 ? 0.0 : 0.3;
    check(build_memorizer(tasks[k], encoder_lower_bound(tasks[k], d, opt).encoder, cfg).params, k);
  }
  return {count == 20 && worst >= -1e-3,
          fmt("%d models (8 random, 6 trained, 6 constructed); min KL - floor = %.3g", count, worst)};
}

// ---- 4 ----------------------------------------------------------------------

double best_row_kl(std::span<const double> pi, const double* w, int N) {
  auto f = [&](double e) {
    Vector z(N);
    for (int y = 0; y < N; ++y) z[y] = e * w[y];
    const Vector lq = log_softmax(z);
    double kl = 0.0;
    for (int y = 0; y < N; ++y) kl += pi[y] * (std::log(pi[y]) - lq[y]);
    return kl;
  };
  double lo = -500.0, hi = 500.0;
  const double r = (std::sqrt(5.0) - 1.0) / 2.0;
  double a = hi - r * (hi - lo), b = lo + r * (hi - lo);
  double fa = f(a), fb = f(b);
  for (int it = 0; it < 200; ++it) {
    if (fa < fb) {
      hi = b, b = a, fb = fa, a = hi - r * (hi - lo), fa = f(a);
    } else {
      lo = a, a = b, fa = fb, b = lo + r * (hi - lo), fb = f(b);
    }
  }
  return std::min(fa, fb);
}

// Rank-1 encoders for N = 3: W reduces to an angle in the plane orthogonal
// to the all-ones vector, scanned at 0.01; each E(t) is solved exactly.
double rank1_grid_oracle(const TaskDistribution& task) {
  const double u1[3] = {1 / std::sqrt(2.0), -1 / std::sqrt(2.0), 0.0};
  const double u2[3] = {1 / std::sqrt(6.0), 1 / std::sqrt(6.0), -2 / std::sqrt(6.0)};
  double best = 1e300;
  for (double th = 0.0; th < std::numbers::pi; th += 0.01) {
    double w[3];
    for (int y = 0; y < 3; ++y) w[y] = std::cos(th) * u1[y] + std::sin(th) * u2[y];
    double total = 0.0;
    for (std::size_t t = 0; t < task.size(); ++t) total += task.prior[t] * best_row_kl(task.conditionals.row(t), w, 3);
    best = std::min(best, total);
  }
  return best;
}

Outcome dichotomy() {
  const TaskDistribution full = make_noisy_lookup_task(5, 2, 0.8, 1);
  const LowerBoundResult a = encoder_lower_bound(full, 4);
  // Three distinct one-hot rows smoothed to 0.99 on the diagonal.
  TaskDistribution three;
  three.N = 3;
  three.S = 1;
  for (int i = 0; i < 3; ++i) three.support.push_back({i});
  three.prior.assign(3, 1.0 / 3.0);
  three.conditionals = Matrix::identity(3);
  three.lookup = std::vector<Token>{0, 1, 2};
  three = smooth_task(three, 0.01 / 1.97);
  const double lb = encoder_lower_bound(three, 1).value;
  const double oracle = rank1_grid_oracle(three);
  const bool ok = a.value <= 1e-6 && lb >= 0.05 && oracle >= 0.05 && std::abs(lb - oracle) <= 5e-3;
  return {ok, fmt("d=N-1: %.3g; d=1 three-token: %.6f (grid oracle %.6f)", a.value, lb, oracle)};
}

// ---- 5 ----------------------------------------------------------------------

Outcome circle() {
  const TaskDistribution task = make_association_task(10, 2, 0);
  const SequenceEncoder enc = circle_encoder(task, 20.0);
  const double kl = encoder_kl(task, enc.W, enc.E);
  const double closed = circle_kl_closed_form(task, 20.0);
  const double acc = accuracy(task, enc.as_logits_fn());
  const bool ok = kl < 1e-6 && acc == 1.0 && std::abs(kl - closed) <= 1e-10;
  return {ok, fmt("KL=%.6g closed form=%.6g |diff|=%.3g acc=%.17g", kl, closed, std::abs(kl - closed), acc)};
}

// ---- 6 ----------------------------------------------------------------------

Outcome theorem2_chain() {
  const int N = 10, d = 1024;
  const TaskDistribution task = make_noisy_lookup_task(N, 1, 0.95, 0);
  const double floor = encoder_lower_bound(task, d).value;
  bool ok = true;
  std::ostringstream out;
  // Sampled sign vectors exercise the constant; the orthonormal shortcut is
  // the C = 0 reference where the bound is attained.
  for (bool sample : {true, false}) {
    const Theorem2Report r = theorem2_bound(task, d, 0, 100, sample);
    double max_res = 0.0;
    bool capped = true;
    for (const auto& l : r.lambdas) {
      max_res = std::max(max_res, std::abs(l.residual));
      capped = capped && l.lambda <= l.cap;
    }
    const double slack = sample ? 0.0 : 1e-9;
    const bool this_ok = r.C <= 0.3762 && r.C <= jl_constant(N, d) && max_res <= 1e-10 && capped &&
                         r.measured_kl <= r.full + slack && floor <= r.measured_kl + 1e-9;
    ok = ok && this_ok;
    out << (sample ? "sampled" : "shortcut") << fmt(": C=%.4f (target %.4f) max|res|=%.2g KL=%.6f full=%.6f; ", r.C,
                                                    r.C_target, max_res, r.measured_kl, r.full);
  }
  const double ref = theorem2_full_with_constant(task, 0.0);
  ok = ok && std::abs(ref - 0.1608) <= 1e-3;
  out << fmt("floor=%.3g; full bound at C=0: %.6f", floor, ref);
  return {ok, out.str()};
}

// ---- 7 ----------------------------------------------------------------------

Outcome gradients() {
  std::vector<Example> batch;
  Rng rng(1);
  for (int i = 0; i < 32; ++i) {
    Example e;
    e.tokens = {static_cast<Token>(rng.index(4)), static_cast<Token>(rng.index(4))};
    e.target = static_cast<Token>(rng.index(4));
    batch.push_back(e);
  }
  // The MLP variant carries a single attention head.
  const ModelConfig aot{4, 2, 3, 2, 2, Variant::aot, 0, QkMode::full};
  const ModelConfig mlp{4, 2, 3, 2, 1, Variant::mlp_based, 5, QkMode::full};
  Rng init(2);
  const double ea = finite_diff_check(init_normal(aot, init, 0.8), batch, 1e-4, 256).max_rel_error;
  const double em = finite_diff_check(init_normal(mlp, init, 0.8), batch, 1e-4, 256).max_rel_error;
  return {ea <= 1e-4 && em <= 1e-4, fmt("max rel error AoT=%.3g MLP=%.3g", ea, em)};
}

// ---- 8-11 -------------------------------------------------------------------

std::map<int, double> mean_by(const SweepTable& rows, auto key) {
  std::map<int, std::pair<double, int>> acc;
  for (const auto& r : rows) {
    auto& [s, n] = acc[key(r)];
    s += r.final_accuracy;
    ++n;
  }
  std::map<int, double> out;
  for (const auto& [k, v] : acc) out[k] = v.first / v.second;
  return out;
}

Outcome fig1a() {
  const SweepOutcome run = run_sweep(sweep_preset("fig1a"), "");
  const auto means = mean_by(run.rows, [](const SweepRecord& r) { return r.H; });
  bool ok = run.failed == 0;
  double prev = -1.0;
  std::ostringstream out;
  for (const auto& [H, a] : means) {
    const double floor = phi(H * 10.0 + 10.0, 50, 2500.0);
    ok = ok && a >= prev - 0.02 && a >= floor - 0.05;
    prev = a;
    out << fmt("H=%d:%.3f ", H, a);
  }
  const FitResult fit = fit_scaling_law(run.rows, ScalingFitRequest{});
  ok = ok && fit.r_squared >= 0.9;
  out << fmt("R2=%.4f", fit.r_squared);
  return {ok, out.str()};
}

Outcome fig1b() {
  const SweepOutcome run = run_sweep(sweep_preset("fig1b"), "");
  ScalingFitRequest req;
  req.x_column = "d_h";
  const FitResult lin = fit_scaling_law(run.rows, req);
  req.form = FitForm::quadratic;
  const FitResult quad = fit_scaling_law(run.rows, req);
  return {run.failed == 0 && quad.residual_norm < lin.residual_norm,
          fmt("residual linear=%.4f quadratic=%.4f", lin.residual_norm, quad.residual_norm)};
}

Outcome fig4() {
  const SweepOutcome run = run_sweep(sweep_preset("fig4"), "");
  ScalingFitRequest req;
  req.y_column = "capacity";
  // Saturated points carry no slope information.
  req.max_accuracy = 0.95;
  const FitResult fit = fit_scaling_law(run.rows, req);
  const double slope = fit.coefficients[1], d_h = 5.0;
  const auto means = mean_by(run.rows, [](const SweepRecord& r) { return r.H; });
  std::ostringstream out;
  out << fmt("slope=%.3f per head = %.3f*d_h (need [1.2, 2.2]*d_h); acc", slope, slope / d_h);
  for (const auto& [H, a] : means) out << fmt(" %d:%.3f", H, a);
  return {run.failed == 0 && slope >= 1.2 * d_h && slope <= 2.2 * d_h, out.str()};
}

Outcome fig3() {
  const SweepSpec spec = sweep_preset("fig3");
  const SweepOutcome run = run_sweep(spec, "");
  // Pair each AoT budget with its MLP partner (same seed, same grid step).
  std::map<std::pair<std::int64_t, std::uint64_t>, double> aot;
  for (const auto& r : run.rows)
    if (r.variant == "aot") aot[{r.H, r.seed}] = r.final_accuracy;
  std::vector<double> gaps;
  std::ostringstream out;
  std::size_t budgets = 0;
  for (std::size_t i = 0; i + 1 < spec.configs.size(); i += 2) {
    const int H = spec.configs[i].H;
    const int width = spec.configs[i + 1].mlp_width;
    ++budgets;
    double g = 0.0;
    int n = 0;
    for (const auto& r : run.rows)
      if (r.variant != "aot" && r.d == spec.configs[i + 1].d &&
          r.params == param_count(spec.configs[i + 1], ParamFormula::raw)) {
        g += std::abs(aot.at({H, r.seed}) - r.final_accuracy);
        ++n;
      }
    gaps.push_back(g / n);
    out << fmt("H=%d vs w=%d: %.3f; ", H, width, g / n);
  }
  double mean = 0.0;
  for (double g : gaps) mean += g;
  mean /= gaps.size();
  out << fmt("mean gap=%.4f", mean);
  return {run.failed == 0 && budgets >= 4 && mean <= 0.1, out.str()};
}

// ---- 12 ---------------------------------------------------------------------

Outcome capacity() {
  const CapacityReport r = capacity_formulas(20, 10, 10, 50, 2, 2500.0);
  const ModelConfig a{50, 2, 10, 10, 20, Variant::aot, 0, QkMode::full};
  const ModelConfig b{50, 2, 2, 2, 50, Variant::aot, 0, QkMode::full};
  const auto t1 = param_count(a, ParamFormula::theorem1), r2 = param_count(a, ParamFormula::remark2),
             small = param_count(b, ParamFormula::theorem1);
  const bool ok = r.ours == 210 && r.previous == 181 && std::abs(r.phi_bound - 0.10232) <= 1e-5 && t1 == 9020 &&
                  r2 == 5420 && small == 1004;
  return {ok, fmt("ours=%lld previous=%lld phi=%.6f params=%lld/%lld/%lld", (long long)r.ours,
                  (long long)r.previous, r.phi_bound, (long long)t1, (long long)r2, (long long)small)};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"aotmem acceptance criteria"};
  std::vector<int> only;
  app.add_option("--only", only, "comma-separated criterion ids")->delimiter(',')->check(CLI::Range(1, 12));
  CLI11_PARSE(app, argc, argv);

  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria = {
      {"exact memorization", exact_memorization},
      {"rank law", rank_law},
      {"KL floor", kl_floor},
      {"lower-bound dichotomy", dichotomy},
      {"circle encoder", circle},
      {"unembedding bound chain", theorem2_chain},
      {"gradient check", gradients},
      {"fig1a heads scaling", fig1a},
      {"fig1b head-dimension scaling", fig1b},
      {"fig4 capacity slope", fig4},
      {"fig3 AoT vs MLP", fig3},
      {"capacity formulas", capacity},
  };
  const std::set<int> selected(only.begin(), only.end());
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!selected.empty() && !selected.count(id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    if (!o.pass) ++failures;
    std::printf("%s criterion %d (%s): %s [%.1fs]\n", o.pass ? "PASS" : "FAIL", id, criteria[i].first,
                o.detail.c_str(), seconds_since(t0));
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
