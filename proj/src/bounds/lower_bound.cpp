#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>

#include "bounds/bounds.hpp"
#include "common/error.hpp"
#include "numkernel/linalg.hpp"
#include "numkernel/rng.hpp"

namespace aotmem {

Vector SequenceEncoder::logits(std::size_t i) const { return matvec(W, E.row(i)); }

Vector SequenceEncoder::logits(std::span<const Token> t) const {
  for (std::size_t i = 0; i < sequences.size(); ++i)
    if (std::equal(t.begin(), t.end(), sequences[i].begin(), sequences[i].end())) return logits(i);
  throw InvalidArgument("encoder: sequence outside the encoder's table");
}

Matrix SequenceEncoder::logit_table() const { return W * E.transposed(); }

LogitsFn SequenceEncoder::as_logits_fn() const {
  return [this](std::span<const Token> t) { return logits(t); };
}

double encoder_kl(const TaskDistribution& task, const Matrix& W, const Matrix& E, Matrix* grad_W,
                  Matrix* grad_E) {
  const std::size_t N = task.N, d = W.cols();
  if (grad_W) *grad_W = Matrix(N, d);
  if (grad_E) *grad_E = Matrix(task.size(), d);
  double total = 0.0;
  Vector g(N);
  for (std::size_t t = 0; t < task.size(); ++t) {
    const Vector z = matvec(W, E.row(t));
    const Vector lq = log_softmax(z);
    auto pi = task.conditionals.row(t);
    double row = 0.0;
    for (std::size_t y = 0; y < N; ++y) {
      if (pi[y] > 0.0) row += pi[y] * (std::log(pi[y]) - lq[y]);
      g[y] = task.prior[t] * (std::exp(lq[y]) - pi[y]);
    }
    total += task.prior[t] * row;
    if (grad_W) add_outer(*grad_W, g, E.row(t));
    if (grad_E) {
      const Vector ge = matvec_t(W, g);
      std::copy(ge.begin(), ge.end(), grad_E->row(t).begin());
    }
  }
  return total;
}

namespace {

struct Packed {
  std::size_t n_w = 0;
  std::size_t N = 0, d = 0, T = 0;

  Vector pack(const Matrix& W, const Matrix& E) const {
    Vector theta(W.data().begin(), W.data().end());
    theta.insert(theta.end(), E.data().begin(), E.data().end());
    return theta;
  }
  void unpack(std::span<const double> theta, Matrix& W, Matrix& E) const {
    std::copy(theta.begin(), theta.begin() + n_w, W.data().begin());
    std::copy(theta.begin() + n_w, theta.end(), E.data().begin());
  }
};

double objective(const TaskDistribution& task, const Packed& pk, std::span<const double> theta,
                 Vector* grad) {
  Matrix W(pk.N, pk.d), E(pk.T, pk.d);
  pk.unpack(theta, W, E);
  if (!grad) return encoder_kl(task, W, E);
  Matrix gW, gE;
  const double f = encoder_kl(task, W, E, &gW, &gE);
  *grad = pk.pack(gW, gE);
  return f;
}

// Limited-memory BFGS with Armijo backtracking; used to polish the first-order
// phase down to a small gradient norm.
double lbfgs(const TaskDistribution& task, const Packed& pk, Vector& theta, int max_iter,
             int& iterations, double& grad_norm) {
  const std::size_t m = 10;
  std::deque<Vector> s_hist, y_hist;
  std::deque<double> rho_hist;
  Vector g;
  double f = objective(task, pk, theta, &g);
  for (iterations = 0; iterations < max_iter; ++iterations) {
    grad_norm = norm2(g);
    if (!std::isfinite(f) || grad_norm < 1e-12) break;
    Vector q = g;
    std::vector<double> alpha(s_hist.size());
    for (std::size_t i = s_hist.size(); i-- > 0;) {
      alpha[i] = rho_hist[i] * dot(s_hist[i], q);
      axpy(q, y_hist[i], -alpha[i]);
    }
    if (!s_hist.empty()) {
      const double gamma = dot(s_hist.back(), y_hist.back()) / dot(y_hist.back(), y_hist.back());
      for (double& v : q) v *= gamma;
    }
    for (std::size_t i = 0; i < s_hist.size(); ++i) {
      const double beta = rho_hist[i] * dot(y_hist[i], q);
      axpy(q, s_hist[i], alpha[i] - beta);
    }
    Vector dir(q.size());
    for (std::size_t i = 0; i < q.size(); ++i) dir[i] = -q[i];
    double slope = dot(dir, g);
    if (slope >= 0.0) {
      for (std::size_t i = 0; i < g.size(); ++i) dir[i] = -g[i];
      slope = -dot(g, g);
      s_hist.clear();
      y_hist.clear();
      rho_hist.clear();
    }
    double step = 1.0;
    Vector trial(theta.size()), g_new;
    double f_new = f;
    bool accepted = false;
    for (int ls = 0; ls < 40; ++ls) {
      for (std::size_t i = 0; i < theta.size(); ++i) trial[i] = theta[i] + step * dir[i];
      f_new = objective(task, pk, trial, &g_new);
      if (std::isfinite(f_new) && f_new <= f + 1e-4 * step * slope) {
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) break;
    Vector s(theta.size()), y(theta.size());
    for (std::size_t i = 0; i < theta.size(); ++i) {
      s[i] = trial[i] - theta[i];
      y[i] = g_new[i] - g[i];
    }
    const double sy = dot(s, y);
    if (sy > 1e-300) {
      s_hist.push_back(std::move(s));
      y_hist.push_back(std::move(y));
      rho_hist.push_back(1.0 / sy);
      if (s_hist.size() > m) {
        s_hist.pop_front();
        y_hist.pop_front();
        rho_hist.pop_front();
      }
    }
    const bool stalled = f - f_new <= 1e-16 * std::max(1.0, std::abs(f));
    theta = std::move(trial);
    g = std::move(g_new);
    f = f_new;
    if (stalled) break;
  }
  grad_norm = norm2(g);
  return f;
}

// Orthonormal basis (N × (N−1)) of the subspace orthogonal to the all-ones vector.
Matrix sum_zero_basis(int N) {
  Matrix centering = Matrix::identity(N);
  for (double& v : centering.data()) v -= 1.0 / N;
  const auto s = svd(centering);
  return s.U.block(0, 0, N, N - 1);
}

LowerBoundResult closed_form_full_rank(const TaskDistribution& task, int d) {
  const int N = task.N;
  const Matrix basis = sum_zero_basis(N);
  LowerBoundResult out;
  out.encoder.sequences = task.support;
  out.encoder.W = Matrix(N, d);
  out.encoder.W.set_block(0, 0, basis);
  out.encoder.E = Matrix(task.size(), d);
  for (std::size_t t = 0; t < task.size(); ++t) {
    Vector logp(N);
    auto pi = task.conditionals.row(t);
    for (int y = 0; y < N; ++y) logp[y] = std::log(pi[y]);
    const Vector coords = matvec_t(basis, logp);
    std::copy(coords.begin(), coords.end(), out.encoder.E.row(t).begin());
  }
  out.value = std::max(encoder_kl(task, out.encoder.W, out.encoder.E), 0.0);
  out.meta.closed_form = true;
  return out;
}

}  // namespace

LowerBoundResult encoder_lower_bound(const TaskDistribution& task, int d, const OptimizerOptions& opt) {
  task.validate();
  AOTMEM_REQUIRE(d >= 1, "encoder_lower_bound: d must be at least 1");
  AOTMEM_REQUIRE(opt.restarts >= 1 && opt.steps >= 0 && opt.lr > 0.0,
                 "encoder_lower_bound: bad optimizer options");
  const auto assumptions = check_assumptions(task);
  if (d >= task.N - 1 && assumptions.assumption2) return closed_form_full_rank(task, d);

  Packed pk;
  pk.N = task.N;
  pk.d = d;
  pk.T = task.size();
  pk.n_w = pk.N * pk.d;

  // Zero logits are always available and exact for uniform conditionals.
  LowerBoundResult best;
  best.encoder.sequences = task.support;
  best.encoder.W = Matrix(pk.N, d);
  best.encoder.E = Matrix(pk.T, d);
  best.value = encoder_kl(task, best.encoder.W, best.encoder.E);
  best.meta.restarts = opt.restarts;

  const double beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;
  for (int r = 0; r < opt.restarts; ++r) {
    Rng rng = Rng(opt.seed).split(static_cast<std::uint64_t>(r));
    Matrix W(pk.N, d), E(pk.T, d);
    for (double& v : W.data()) v = rng.normal();
    for (double& v : E.data()) v = rng.normal();
    Vector theta = pk.pack(W, E);
    Vector m(theta.size(), 0.0), v(theta.size(), 0.0), grad;
    bool failed = false;
    for (int k = 1; k <= opt.steps; ++k) {
      const double f = objective(task, pk, theta, &grad);
      if (!std::isfinite(f)) {
        failed = true;
        break;
      }
      const double lr = opt.lr * 0.5 * (1.0 + std::cos(M_PI * (k - 1) / opt.steps));
      const double c1 = 1.0 - std::pow(beta1, k), c2 = 1.0 - std::pow(beta2, k);
      for (std::size_t i = 0; i < theta.size(); ++i) {
        m[i] = beta1 * m[i] + (1 - beta1) * grad[i];
        v[i] = beta2 * v[i] + (1 - beta2) * grad[i] * grad[i];
        theta[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + adam_eps);
      }
    }
    int iters = 0;
    double gnorm = 0.0;
    double f = failed ? std::numeric_limits<double>::quiet_NaN()
                      : lbfgs(task, pk, theta, opt.polish_iterations, iters, gnorm);
    if (!std::isfinite(f)) {
      ++best.meta.failed_restarts;
      continue;
    }
    if (f < best.value) {
      best.value = f;
      pk.unpack(theta, best.encoder.W, best.encoder.E);
      best.meta.iterations = opt.steps + iters;
      best.meta.final_gradient_norm = gnorm;
    }
  }
  if (best.meta.failed_restarts == opt.restarts)
    throw ComputationError("encoder_lower_bound: every restart produced a non-finite loss");
  best.value = std::max(best.value, 0.0);
  return best;
}

CenteredLogitGap centered_logit_gap(const LogitsFn& logits, const TaskDistribution& task) {
  CenteredLogitGap out;
  out.Z = Matrix(task.size(), task.N);
  for (std::size_t t = 0; t < task.size(); ++t) {
    auto pi = task.conditionals.row(t);
    for (double p : pi)
      AOTMEM_REQUIRE(p > 0.0, "centered_logit_gap: conditional probabilities must be positive");
    const Vector f = logits(task.support[t]);
    Vector diff(task.N);
    double mean = 0.0;
    for (int y = 0; y < task.N; ++y) {
      diff[y] = f[y] - std::log(pi[y]);
      mean += pi[y] * diff[y];
    }
    double ms = 0.0;
    for (int y = 0; y < task.N; ++y) {
      out.Z(t, y) = diff[y] - mean;
      ms += pi[y] * out.Z(t, y) * out.Z(t, y);
    }
    out.mean_square += task.prior[t] * ms;
  }
  return out;
}

}  // namespace aotmem
