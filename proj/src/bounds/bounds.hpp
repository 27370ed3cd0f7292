#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include <json.hpp>

#include "numkernel/matrix.hpp"
#include "task/task.hpp"

namespace aotmem {

// Logits f(t) = W·E(t) with a rank-d bottleneck. Rows of E are aligned with
// the task support the encoder was built for.
struct SequenceEncoder {
  Matrix W;  // N × d
  Matrix E;  // |support| × d
  std::vector<TokenSeq> sequences;

  int d() const { return static_cast<int>(W.cols()); }
  Vector logits(std::size_t i) const;
  Vector logits(std::span<const Token> t) const;
  // Logit table, one column per sequence (N × T).
  Matrix logit_table() const;
  LogitsFn as_logits_fn() const;
};

struct OptimizerOptions {
  int restarts = 5;
  int steps = 2000;
  double lr = 0.05;
  std::uint64_t seed = 0;
  int polish_iterations = 500;
};

struct OptimizerMeta {
  int restarts = 0;
  int iterations = 0;
  double final_gradient_norm = 0.0;
  int failed_restarts = 0;
  bool closed_form = false;
};

struct LowerBoundResult {
  double value = 0.0;
  SequenceEncoder encoder;
  OptimizerMeta meta;
};

// Estimate of inf over rank-d sequence encoders of the prior-averaged KL.
// The value is attained by the returned encoder, so it is an upper estimate
// of the infimum.
LowerBoundResult encoder_lower_bound(const TaskDistribution& task, int d,
                                     const OptimizerOptions& opt = {});

// KL of an encoder against the task and its exact gradient w.r.t. (W, E).
double encoder_kl(const TaskDistribution& task, const Matrix& W, const Matrix& E,
                  Matrix* grad_W = nullptr, Matrix* grad_E = nullptr);

// Rows of W on the unit circle, E(t) = λ·W_{g(t)}ᵀ.
SequenceEncoder circle_encoder(const TaskDistribution& task, double lambda);
// E_t[log(1 + Σ_{j≠g} exp(−λ(1 − cos(2π(j−g)/N))))], valid for zero-entropy tasks.
double circle_kl_closed_form(const TaskDistribution& task, double lambda);

struct JlResult {
  Matrix W;  // N × d, rows W_i
  double C_achieved = 0.0;
  double C_target = 0.0;
  int tries = 0;
};

// √(32·log(N+1)/d)
double jl_constant(int N, int d);
// Max |W_iᵀW_j − δ_ij| over all row pairs.
double gram_deviation(const Matrix& W);
// N ≤ d takes the orthonormal shortcut (C = 0) unless `always_sample` is set.
JlResult jl_unembedding(int N, int d, std::uint64_t seed, int max_tries = 100, bool always_sample = false);

struct LambdaSolution {
  double lambda = 0.0;
  double residual = 0.0;
  double cap = 0.0;
  int iterations = 0;
};

// log Σ_j exp(λ·(W_j − W_g)ᵀW_g)
double lambda_rhs(const Matrix& W, Token g, double lambda);
// Solves Shannon entropy of the conditional = lambda_rhs(λ) by bisection.
LambdaSolution solve_lambda(std::span<const double> conditional, const Matrix& W, Token g,
                            double C, double tol = 1e-10);

struct Theorem2Report {
  double C = 0.0;
  double C_target = 0.0;
  double full = 0.0;
  double simplified = 0.0;
  std::vector<LambdaSolution> lambdas;
  SequenceEncoder encoder;  // E(t) = λ(t)·W_{g(t)}ᵀ
  double measured_kl = 0.0;
};

// Per-sequence bound factor evaluated with a given constant C.
double theorem2_full_with_constant(const TaskDistribution& task, double C);
double theorem2_simplified_with_constant(const TaskDistribution& task, double C);
// Total-variation distance between the off-target renormalized row and the
// uniform distribution on the other N−1 tokens.
double off_target_tv(std::span<const double> conditional, Token g);
Theorem2Report theorem2_bound(const TaskDistribution& task, int d, std::uint64_t seed,
                              int max_tries = 100, bool always_sample = false);

struct CapacityReport {
  std::int64_t ours = 0;
  std::int64_t previous = 0;
  double kim_params = 0.0;
  double huben_params = 0.0;
  double phi_bound = 0.0;
};

// X ↦ 1/N + (1 − 1/N)·X/T₀, clipped to 1.
double phi(double X, int N, double T0);
// Inverse of phi: stored associations implied by an accuracy.
double phi_inverse(double acc, int N, double T0);
CapacityReport capacity_formulas(int H, int d_h, int d, int N, int S, double T0);

struct CenteredLogitGap {
  Matrix Z;  // |support| × N
  double mean_square = 0.0;
};

CenteredLogitGap centered_logit_gap(const LogitsFn& logits, const TaskDistribution& task);

// JSON form of a bound computation, used by the CLI and the C API.
struct BoundRequest {
  int d = 2;
  OptimizerOptions optimizer;
  bool theorem2 = true;
  std::uint64_t jl_seed = 0;
  int jl_max_tries = 100;
  bool jl_always_sample = false;
};
nlohmann::json run_bounds(const TaskDistribution& task, const BoundRequest& req);

}  // namespace aotmem
