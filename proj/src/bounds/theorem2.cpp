#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "bounds/bounds.hpp"
#include "common/error.hpp"
#include "numkernel/linalg.hpp"
#include "numkernel/rng.hpp"

namespace aotmem {

namespace {

std::vector<Token> require_lookup(const TaskDistribution& task, const char* who) {
  if (task.lookup) return *task.lookup;
  std::vector<Token> g(task.size());
  for (std::size_t i = 0; i < task.size(); ++i) {
    auto t = task.target(i);
    if (!t) throw InvalidArgument(std::string(who) + ": task has no lookup table g");
    g[i] = *t;
  }
  return g;
}

}  // namespace

SequenceEncoder circle_encoder(const TaskDistribution& task, double lambda) {
  AOTMEM_REQUIRE(lambda >= 0.0, "circle_encoder: lambda must be nonnegative");
  const auto g = require_lookup(task, "circle_encoder");
  SequenceEncoder enc;
  enc.sequences = task.support;
  enc.W = Matrix(task.N, 2);
  for (int i = 0; i < task.N; ++i) {
    const double angle = 2.0 * std::numbers::pi * i / task.N;
    enc.W(i, 0) = std::cos(angle);
    enc.W(i, 1) = std::sin(angle);
  }
  enc.E = Matrix(task.size(), 2);
  for (std::size_t t = 0; t < task.size(); ++t) {
    enc.E(t, 0) = lambda * enc.W(g[t], 0);
    enc.E(t, 1) = lambda * enc.W(g[t], 1);
  }
  return enc;
}

double circle_kl_closed_form(const TaskDistribution& task, double lambda) {
  const auto g = require_lookup(task, "circle_kl_closed_form");
  double total = 0.0;
  for (std::size_t t = 0; t < task.size(); ++t) {
    double s = 0.0;
    for (int j = 0; j < task.N; ++j) {
      if (j == g[t]) continue;
      s += std::exp(-lambda * (1.0 - std::cos(2.0 * std::numbers::pi * (j - g[t]) / task.N)));
    }
    total += task.prior[t] * std::log1p(s);
  }
  return total;
}

double jl_constant(int N, int d) { return std::sqrt(32.0 * std::log(N + 1.0) / d); }

double gram_deviation(const Matrix& W) {
  double dev = 0.0;
  for (std::size_t i = 0; i < W.rows(); ++i)
    for (std::size_t j = i; j < W.rows(); ++j) {
      const double g = dot(W.row(i), W.row(j)) - (i == j ? 1.0 : 0.0);
      dev = std::max(dev, std::abs(g));
    }
  return dev;
}

JlResult jl_unembedding(int N, int d, std::uint64_t seed, int max_tries, bool always_sample) {
  AOTMEM_REQUIRE(N >= 1 && d >= 1, "jl_unembedding: N and d must be positive");
  AOTMEM_REQUIRE(max_tries >= 1, "jl_unembedding: max_tries must be positive");
  JlResult out;
  out.C_target = jl_constant(N, d);
  if (N <= d && !always_sample) {
    out.W = Matrix(N, d);
    for (int i = 0; i < N; ++i) out.W(i, i) = 1.0;
    out.C_achieved = 0.0;
    out.tries = 0;
    return out;
  }
  const double scale = 1.0 / std::sqrt(static_cast<double>(d));
  double best = std::numeric_limits<double>::infinity();
  Rng rng(seed);
  for (int attempt = 1; attempt <= max_tries; ++attempt) {
    Matrix W(N, d);
    for (double& v : W.data()) v = scale * rng.sign();
    const double dev = gram_deviation(W);
    if (dev < best) {
      best = dev;
      out.W = std::move(W);
      out.C_achieved = dev;
      out.tries = attempt;
    }
    if (best <= out.C_target) return out;
  }
  throw ComputationError("jl_unembedding: target C = " + std::to_string(out.C_target) +
                         " not met after " + std::to_string(max_tries) +
                         " tries (best " + std::to_string(best) + ")");
}

double lambda_rhs(const Matrix& W, Token g, double lambda) {
  const auto wg = W.row(g);
  const double gg = dot(wg, wg);
  Vector terms(W.rows());
  for (std::size_t j = 0; j < W.rows(); ++j) terms[j] = lambda * (dot(W.row(j), wg) - gg);
  return logsumexp(terms);
}

LambdaSolution solve_lambda(std::span<const double> conditional, const Matrix& W, Token g,
                            double C, double tol) {
  const std::size_t N = W.rows();
  AOTMEM_REQUIRE(conditional.size() == N, "solve_lambda: conditional length differs from W rows");
  AOTMEM_REQUIRE(g >= 0 && static_cast<std::size_t>(g) < N, "solve_lambda: g out of range");
  AOTMEM_REQUIRE(C < 0.5, "solve_lambda: requires C < 1/2");
  const double entropy = -negentropy(conditional);
  if (entropy <= 0.0)
    throw InvalidArgument("solve_lambda: zero-entropy conditional has no finite solution; smooth the task first");
  const auto wg = W.row(g);
  const double gg = dot(wg, wg);
  for (std::size_t j = 0; j < N; ++j)
    if (static_cast<Token>(j) != g && dot(W.row(j), wg) - gg >= 0.0)
      throw ComputationError("solve_lambda: (W_j - W_g)^T W_g must be negative for all j != g");

  LambdaSolution sol;
  const double excess = std::expm1(entropy);
  sol.cap = std::max(0.0, std::log((N - 1.0) / excess) / (1.0 - 2.0 * C));
  auto f = [&](double lam) { return lambda_rhs(W, g, lam) - entropy; };

  if (f(0.0) <= tol) {
    sol.lambda = 0.0;
    sol.residual = std::abs(f(0.0));
    return sol;
  }
  double lo = 0.0, hi = sol.cap + 1.0;
  while (f(hi) > 0.0) hi *= 2.0;  // only reachable if C underestimates the true deviation
  double mid = 0.5 * (lo + hi);
  for (sol.iterations = 0; sol.iterations < 400; ++sol.iterations) {
    mid = 0.5 * (lo + hi);
    const double fm = f(mid);
    if (fm == 0.0) break;
    if (fm > 0.0)
      lo = mid;
    else
      hi = mid;
    if (hi - lo <= 1e-15 * std::max(1.0, hi)) break;
  }
  // Bisect to the end of the bracket; tol only bounds the accepted residual.
  sol.lambda = mid;
  sol.residual = std::abs(f(mid));
  if (sol.residual > tol)
    throw ComputationError("solve_lambda: residual " + std::to_string(sol.residual) + " above tolerance");
  return sol;
}

double off_target_tv(std::span<const double> conditional, Token g) {
  const std::size_t N = conditional.size();
  const double rest = 1.0 - conditional[g];
  if (rest <= 0.0) return 0.0;
  double tv = 0.0;
  for (std::size_t j = 0; j < N; ++j) {
    if (static_cast<Token>(j) == g) continue;
    tv += std::abs(conditional[j] / rest - 1.0 / (N - 1.0));
  }
  return 0.5 * tv;
}

namespace {

void check_theorem2_inputs(const TaskDistribution& task, double C) {
  if (!(C < 0.5)) throw ComputationError("theorem2: bound is vacuous for C >= 1/2");
  for (std::size_t t = 0; t < task.size(); ++t)
    if (negentropy(task.conditionals.row(t)) >= 0.0)
      throw InvalidArgument("theorem2: zero-entropy conditional; apply smooth_task first");
}

}  // namespace

double theorem2_full_with_constant(const TaskDistribution& task, double C) {
  const auto g = require_lookup(task, "theorem2");
  check_theorem2_inputs(task, C);
  const double N = task.N;
  double total = 0.0;
  for (std::size_t t = 0; t < task.size(); ++t) {
    auto pi = task.conditionals.row(t);
    const double miss = 1.0 - pi[g[t]];
    const double tv = off_target_tv(pi, g[t]);
    const double factor = (1.0 + 2.0 * C + C * tv) / (1.0 - 2.0 * C);
    const double log_term = std::log((N - 1.0) / std::expm1(-negentropy(pi)));
    total += task.prior[t] * miss * factor * log_term;
  }
  return total;
}

double theorem2_simplified_with_constant(const TaskDistribution& task, double C) {
  const auto g = require_lookup(task, "theorem2");
  check_theorem2_inputs(task, C);
  double miss = 0.0, mean_entropy = 0.0;
  for (std::size_t t = 0; t < task.size(); ++t) {
    auto pi = task.conditionals.row(t);
    miss += task.prior[t] * (1.0 - pi[g[t]]);
    mean_entropy += task.prior[t] * -negentropy(pi);
  }
  return miss * std::log((task.N - 1.0) / std::expm1(mean_entropy)) * (1.0 + 4.0 * C) /
         (1.0 - 2.0 * C);
}

Theorem2Report theorem2_bound(const TaskDistribution& task, int d, std::uint64_t seed, int max_tries,
                              bool always_sample) {
  task.validate();
  const auto g = require_lookup(task, "theorem2");
  const JlResult jl = jl_unembedding(task.N, d, seed, max_tries, always_sample);
  Theorem2Report rep;
  rep.C = jl.C_achieved;
  rep.C_target = jl.C_target;
  check_theorem2_inputs(task, rep.C);
  rep.encoder.W = jl.W;
  rep.encoder.sequences = task.support;
  rep.encoder.E = Matrix(task.size(), d);
  for (std::size_t t = 0; t < task.size(); ++t) {
    rep.lambdas.push_back(solve_lambda(task.conditionals.row(t), jl.W, g[t], rep.C));
    const double lam = rep.lambdas.back().lambda;
    auto row = rep.encoder.E.row(t);
    auto wg = jl.W.row(g[t]);
    for (int i = 0; i < d; ++i) row[i] = lam * wg[i];
  }
  rep.full = theorem2_full_with_constant(task, rep.C);
  rep.simplified = theorem2_simplified_with_constant(task, rep.C);
  rep.measured_kl = encoder_kl(task, rep.encoder.W, rep.encoder.E);
  return rep;
}

}  // namespace aotmem
