#include <algorithm>
#include <cmath>
#include <limits>

#include "common/error.hpp"
#include "numkernel/rng.hpp"
#include "trainlab/trainlab.hpp"

namespace aotmem {

namespace {

template <class P, class F>
void for_each_tensor(P& p, F&& f) {
  auto visit = [&](auto& m, std::string name, bool head) {
    if (!m.empty()) f(m, std::move(name), head);
  };
  visit(p.e, "e", false);
  visit(p.pos, "pos", false);
  for (std::size_t h = 0; h < p.heads.size(); ++h) {
    auto& hd = p.heads[h];
    const std::string prefix = "heads[" + std::to_string(h) + "].";
    visit(hd.W_QK, prefix + "W_QK", true);
    visit(hd.q, prefix + "q", true);
    visit(hd.k, prefix + "k", true);
    visit(hd.W_V, prefix + "W_V", true);
    visit(hd.W_O, prefix + "W_O", true);
  }
  visit(p.W_U, "W_U", false);
  if (p.mlp) {
    visit(p.mlp->W_1, "mlp.W_1", false);
    visit(p.mlp->W_2, "mlp.W_2", false);
  }
}

AoTParams zeros_like(const AoTParams& p) {
  AoTParams g = p;
  for_each_tensor(g, [](Matrix& m, const std::string&, bool) { m.fill(0.0); });
  return g;
}

// Scratch buffers for one example; reused across the batch.
struct Workspace {
  int N, S, d, dh, H, w;
  Vector X, dX;
  std::vector<Vector> a, avg, v, u, b;
  Vector aq;
  Vector z, hid, g, y, logits, dy, dz, dg, dhid, dv, davg, da, r;

  explicit Workspace(const AoTParams& p)
      : N(p.config.N), S(p.config.S), d(p.config.d), dh(p.config.d_h), H(static_cast<int>(p.heads.size())),
        w(p.mlp ? static_cast<int>(p.mlp->W_1.rows()) : 0),
        X(S * d), dX(S * d), a(H, Vector(S)), avg(H, Vector(d)), v(H, Vector(dh)), u(H, Vector(d)),
        b(H, Vector(S)), aq(H), z(d), hid(w), g(w), y(d), logits(N), dy(d), dz(d), dg(w), dhid(w),
        dv(dh), davg(d), da(S), r(d) {}
};

void softmax_inplace(Vector& v) {
  double mx = -std::numeric_limits<double>::infinity();
  for (double x : v) mx = std::max(mx, x);
  double sum = 0.0;
  for (double& x : v) {
    x = std::exp(x - mx);
    sum += x;
  }
  for (double& x : v) x /= sum;
}

double forward_example(const AoTParams& p, std::span<const Token> t, Token target, Workspace& ws) {
  const int N = ws.N, S = ws.S, d = ws.d, dh = ws.dh;
  const double* e = p.e.data().data();
  const double* pos = p.pos.data().data();
  for (int s = 0; s < S; ++s)
    for (int i = 0; i < d; ++i) ws.X[s * d + i] = e[i * N + t[s]] + pos[i * S + s];
  const double* xL = &ws.X[(S - 1) * d];
  std::copy(xL, xL + d, ws.z.begin());

  for (int h = 0; h < ws.H; ++h) {
    const HeadParams& hp = p.heads[h];
    Vector& a = ws.a[h];
    if (hp.is_rank1()) {
      const double* q = hp.q.data().data();
      const double* k = hp.k.data().data();
      double aq = 0.0;
      for (int i = 0; i < d; ++i) aq += q[i] * xL[i];
      ws.aq[h] = aq;
      for (int s = 0; s < S; ++s) {
        double bs = 0.0;
        for (int i = 0; i < d; ++i) bs += k[i] * ws.X[s * d + i];
        ws.b[h][s] = bs;
        a[s] = aq * bs;
      }
    } else {
      const double* W = hp.W_QK.data().data();
      Vector& u = ws.u[h];
      std::fill(u.begin(), u.end(), 0.0);
      for (int i = 0; i < d; ++i)
        for (int j = 0; j < d; ++j) u[j] += xL[i] * W[i * d + j];
      for (int s = 0; s < S; ++s) {
        double raw = 0.0;
        for (int j = 0; j < d; ++j) raw += u[j] * ws.X[s * d + j];
        a[s] = raw;
      }
    }
    softmax_inplace(a);
    Vector& avg = ws.avg[h];
    std::fill(avg.begin(), avg.end(), 0.0);
    for (int s = 0; s < S; ++s)
      for (int i = 0; i < d; ++i) avg[i] += a[s] * ws.X[s * d + i];
    const double* WV = hp.W_V.data().data();
    Vector& v = ws.v[h];
    for (int r = 0; r < dh; ++r) {
      double acc = 0.0;
      for (int i = 0; i < d; ++i) acc += WV[r * d + i] * avg[i];
      v[r] = acc;
    }
    const double* WO = hp.W_O.data().data();
    for (int i = 0; i < d; ++i) {
      double acc = 0.0;
      for (int r = 0; r < dh; ++r) acc += WO[i * dh + r] * v[r];
      ws.z[i] += acc;
    }
  }

  if (p.mlp) {
    const double* W1 = p.mlp->W_1.data().data();
    const double* W2 = p.mlp->W_2.data().data();
    for (int j = 0; j < ws.w; ++j) {
      double acc = 0.0;
      for (int i = 0; i < d; ++i) acc += W1[j * d + i] * ws.z[i];
      ws.hid[j] = acc;
      ws.g[j] = gelu(acc);
    }
    for (int i = 0; i < d; ++i) {
      double acc = ws.z[i];
      for (int j = 0; j < ws.w; ++j) acc += W2[i * ws.w + j] * ws.g[j];
      ws.y[i] = acc;
    }
  } else {
    ws.y = ws.z;
  }

  const double* WU = p.W_U.data().data();
  double mx = -std::numeric_limits<double>::infinity();
  for (int n = 0; n < N; ++n) {
    double acc = 0.0;
    for (int i = 0; i < d; ++i) acc += WU[n * d + i] * ws.y[i];
    ws.logits[n] = acc;
    mx = std::max(mx, acc);
  }
  double sum = 0.0;
  for (int n = 0; n < N; ++n) sum += std::exp(ws.logits[n] - mx);
  return mx + std::log(sum) - ws.logits[target];
}

// Accumulates scale·∂loss/∂θ into g; forward_example must have just run.
void backward_example(const AoTParams& p, std::span<const Token> t, Token target, double scale,
                      Workspace& ws, AoTParams& g) {
  const int N = ws.N, S = ws.S, d = ws.d, dh = ws.dh;
  Vector& dlog = ws.logits;  // overwritten with softmax − onehot
  softmax_inplace(dlog);
  dlog[target] -= 1.0;
  for (double& x : dlog) x *= scale;

  const double* WU = p.W_U.data().data();
  double* gWU = g.W_U.data().data();
  std::fill(ws.dy.begin(), ws.dy.end(), 0.0);
  for (int n = 0; n < N; ++n)
    for (int i = 0; i < d; ++i) {
      gWU[n * d + i] += dlog[n] * ws.y[i];
      ws.dy[i] += WU[n * d + i] * dlog[n];
    }

  if (p.mlp) {
    const double* W1 = p.mlp->W_1.data().data();
    const double* W2 = p.mlp->W_2.data().data();
    double* gW1 = g.mlp->W_1.data().data();
    double* gW2 = g.mlp->W_2.data().data();
    std::fill(ws.dg.begin(), ws.dg.end(), 0.0);
    for (int i = 0; i < d; ++i)
      for (int j = 0; j < ws.w; ++j) {
        gW2[i * ws.w + j] += ws.dy[i] * ws.g[j];
        ws.dg[j] += W2[i * ws.w + j] * ws.dy[i];
      }
    ws.dz = ws.dy;
    for (int j = 0; j < ws.w; ++j) {
      const double dh_j = ws.dg[j] * gelu_grad(ws.hid[j]);
      for (int i = 0; i < d; ++i) {
        gW1[j * d + i] += dh_j * ws.z[i];
        ws.dz[i] += W1[j * d + i] * dh_j;
      }
    }
  } else {
    ws.dz = ws.dy;
  }

  std::fill(ws.dX.begin(), ws.dX.end(), 0.0);
  double* dxL = &ws.dX[(S - 1) * d];
  const double* xL = &ws.X[(S - 1) * d];
  for (int i = 0; i < d; ++i) dxL[i] += ws.dz[i];

  for (int h = 0; h < ws.H; ++h) {
    const HeadParams& hp = p.heads[h];
    HeadParams& gh = g.heads[h];
    const Vector& a = ws.a[h];
    const Vector& avg = ws.avg[h];
    const Vector& v = ws.v[h];
    const double* WO = hp.W_O.data().data();
    const double* WV = hp.W_V.data().data();
    double* gWO = gh.W_O.data().data();
    double* gWV = gh.W_V.data().data();

    std::fill(ws.dv.begin(), ws.dv.end(), 0.0);
    for (int i = 0; i < d; ++i)
      for (int r = 0; r < dh; ++r) {
        gWO[i * dh + r] += ws.dz[i] * v[r];
        ws.dv[r] += WO[i * dh + r] * ws.dz[i];
      }
    std::fill(ws.davg.begin(), ws.davg.end(), 0.0);
    for (int r = 0; r < dh; ++r)
      for (int i = 0; i < d; ++i) {
        gWV[r * d + i] += ws.dv[r] * avg[i];
        ws.davg[i] += WV[r * d + i] * ws.dv[r];
      }

    double mean = 0.0;
    for (int s = 0; s < S; ++s) {
      double das = 0.0;
      for (int i = 0; i < d; ++i) {
        das += ws.davg[i] * ws.X[s * d + i];
        ws.dX[s * d + i] += a[s] * ws.davg[i];
      }
      ws.da[s] = das;
      mean += a[s] * das;
    }
    std::fill(ws.r.begin(), ws.r.end(), 0.0);
    for (int s = 0; s < S; ++s) {
      ws.da[s] = a[s] * (ws.da[s] - mean);  // ∂/∂raw_s
      for (int i = 0; i < d; ++i) ws.r[i] += ws.da[s] * ws.X[s * d + i];
    }

    if (hp.is_rank1()) {
      const double* q = hp.q.data().data();
      const double* k = hp.k.data().data();
      double* gq = gh.q.data().data();
      double* gk = gh.k.data().data();
      const double aq = ws.aq[h];
      double c = 0.0;
      for (int s = 0; s < S; ++s) c += ws.da[s] * ws.b[h][s];
      for (int i = 0; i < d; ++i) {
        gq[i] += c * xL[i];
        gk[i] += aq * ws.r[i];
        dxL[i] += c * q[i];
      }
      for (int s = 0; s < S; ++s)
        for (int i = 0; i < d; ++i) ws.dX[s * d + i] += ws.da[s] * aq * k[i];
    } else {
      const double* W = hp.W_QK.data().data();
      double* gW = gh.W_QK.data().data();
      const Vector& u = ws.u[h];
      for (int i = 0; i < d; ++i) {
        double acc = 0.0;
        for (int j = 0; j < d; ++j) {
          gW[i * d + j] += xL[i] * ws.r[j];
          acc += W[i * d + j] * ws.r[j];
        }
        dxL[i] += acc;
      }
      for (int s = 0; s < S; ++s)
        for (int i = 0; i < d; ++i) ws.dX[s * d + i] += ws.da[s] * u[i];
    }
  }

  double* ge = g.e.data().data();
  double* gpos = g.pos.data().data();
  for (int s = 0; s < S; ++s)
    for (int i = 0; i < d; ++i) {
      ge[i * N + t[s]] += ws.dX[s * d + i];
      gpos[i * S + s] += ws.dX[s * d + i];
    }
}

double total_weight(std::span<const Example> batch) {
  double w = 0.0;
  for (const auto& ex : batch) {
    AOTMEM_REQUIRE(ex.weight > 0.0, "loss_and_grads: example weights must be positive");
    w += ex.weight;
  }
  return w;
}

void check_example(const AoTParams& p, const Example& ex) {
  check_tokens(p, ex.tokens);
  AOTMEM_REQUIRE(ex.target >= 0 && ex.target < p.config.N, "loss_and_grads: target out of range");
}

}  // namespace

std::vector<TensorView> parameter_tensors(AoTParams& params) {
  std::vector<TensorView> out;
  for_each_tensor(params, [&](Matrix& m, std::string name, bool head) {
    out.push_back({std::move(name), m.data(), head});
  });
  return out;
}

std::size_t parameter_size(const AoTParams& params) {
  std::size_t n = 0;
  for_each_tensor(params, [&](const Matrix& m, const std::string&, bool) { n += m.size(); });
  return n;
}

std::vector<Example> compress_batch(std::span<const Example> batch) {
  std::vector<Example> sorted(batch.begin(), batch.end());
  std::sort(sorted.begin(), sorted.end(), [](const Example& x, const Example& y) {
    return x.tokens != y.tokens ? x.tokens < y.tokens : x.target < y.target;
  });
  std::vector<Example> out;
  for (auto& ex : sorted) {
    if (!out.empty() && out.back().tokens == ex.tokens && out.back().target == ex.target)
      out.back().weight += ex.weight;
    else
      out.push_back(std::move(ex));
  }
  return out;
}

LossGrad loss_and_grads(const AoTParams& params, std::span<const Example> batch) {
  AOTMEM_REQUIRE(!batch.empty(), "loss_and_grads: empty batch");
  params.validate();
  const double W = total_weight(batch);
  LossGrad out{0.0, zeros_like(params)};
  Workspace ws(params);
  for (const auto& ex : batch) {
    check_example(params, ex);
    const double loss = forward_example(params, ex.tokens, ex.target, ws);
    out.loss += ex.weight * loss;
    backward_example(params, ex.tokens, ex.target, ex.weight / W, ws, out.grads);
  }
  out.loss /= W;
  if (!std::isfinite(out.loss)) throw ComputationError("loss_and_grads: non-finite loss");
  return out;
}

double batch_loss(const AoTParams& params, std::span<const Example> batch) {
  AOTMEM_REQUIRE(!batch.empty(), "batch_loss: empty batch");
  const double W = total_weight(batch);
  Workspace ws(params);
  double loss = 0.0;
  for (const auto& ex : batch) {
    check_example(params, ex);
    loss += ex.weight * forward_example(params, ex.tokens, ex.target, ws);
  }
  return loss / W;
}

FiniteDiffReport finite_diff_check(const AoTParams& params, std::span<const Example> batch, double h,
                                   std::size_t coordinates, std::uint64_t seed, double floor) {
  AOTMEM_REQUIRE(h > 0.0, "finite_diff_check: h must be positive");
  AOTMEM_REQUIRE(floor > 0.0, "finite_diff_check: floor must be positive");
  LossGrad analytic = loss_and_grads(params, batch);
  AoTParams probe = params;
  auto tensors = parameter_tensors(probe);
  auto grads = parameter_tensors(analytic.grads);
  Rng rng(seed);
  const std::size_t quota =
      std::max<std::size_t>(1, (coordinates + tensors.size() - 1) / std::max<std::size_t>(1, tensors.size()));

  FiniteDiffReport rep;
  for (std::size_t ti = 0; ti < tensors.size(); ++ti) {
    auto values = tensors[ti].values;
    std::vector<std::size_t> idx(values.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    const std::size_t take = std::min(quota, idx.size());
    for (std::size_t i = 0; i < take; ++i) std::swap(idx[i], idx[i + rng.index(idx.size() - i)]);
    for (std::size_t i = 0; i < take; ++i) {
      const std::size_t c = idx[i];
      const double orig = values[c];
      values[c] = orig + h;
      const double up = batch_loss(probe, batch);
      values[c] = orig - h;
      const double down = batch_loss(probe, batch);
      values[c] = orig;
      const double numeric = (up - down) / (2.0 * h);
      const double exact = grads[ti].values[c];
      const double abs_err = std::abs(exact - numeric);
      const double rel = abs_err / std::max({std::abs(exact), std::abs(numeric), floor});
      rep.max_abs_error = std::max(rep.max_abs_error, abs_err);
      if (rel > rep.max_rel_error || rep.worst_tensor.empty()) {
        if (rel >= rep.max_rel_error) rep.worst_tensor = tensors[ti].name;
        rep.max_rel_error = std::max(rep.max_rel_error, rel);
      }
      ++rep.coordinates;
    }
  }
  return rep;
}

}  // namespace aotmem
