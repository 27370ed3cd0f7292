#include "model/model.hpp"

#include <cmath>
#include <numbers>
#include <string>

#include "common/error.hpp"
#include "numkernel/linalg.hpp"
#include "numkernel/rng.hpp"

namespace aotmem {

std::string_view to_string(Variant v) { return v == Variant::aot ? "aot" : "mlp_based"; }
std::string_view to_string(QkMode m) { return m == QkMode::full ? "full" : "rank1"; }

Variant parse_variant(std::string_view s) {
  if (s == "aot") return Variant::aot;
  if (s == "mlp_based" || s == "mlp") return Variant::mlp_based;
  throw InvalidArgument("unknown model variant '" + std::string(s) + "'");
}

QkMode parse_qk_mode(std::string_view s) {
  if (s == "full") return QkMode::full;
  if (s == "rank1") return QkMode::rank1;
  throw InvalidArgument("unknown qk_mode '" + std::string(s) + "'");
}

void ModelConfig::validate() const {
  AOTMEM_REQUIRE(N >= 2, "model: N must be at least 2");
  AOTMEM_REQUIRE(S >= 1, "model: S must be at least 1");
  AOTMEM_REQUIRE(d >= 1, "model: d must be at least 1");
  AOTMEM_REQUIRE(d_h >= 1, "model: d_h must be at least 1");
  if (variant == Variant::aot) {
    AOTMEM_REQUIRE(H >= 0, "model: H must be nonnegative");
  } else {
    AOTMEM_REQUIRE(H == 1, "model: the MLP variant has exactly one head");
    AOTMEM_REQUIRE(mlp_width >= 1, "model: the MLP variant needs mlp_width >= 1");
  }
}

Matrix HeadParams::qk_matrix() const {
  if (!is_rank1()) return W_QK;
  return q * k.transposed();
}

namespace {

void require_shape(const Matrix& m, std::size_t r, std::size_t c, const char* what) {
  if (m.rows() != r || m.cols() != c)
    throw InvalidArgument(std::string("model: ") + what + " has shape " + std::to_string(m.rows()) +
                          "x" + std::to_string(m.cols()) + ", expected " + std::to_string(r) + "x" +
                          std::to_string(c));
}

}  // namespace

void AoTParams::validate() const {
  config.validate();
  const std::size_t d = config.d, dh = config.d_h;
  require_shape(e, d, config.N, "e");
  require_shape(pos, d, config.S, "pos");
  require_shape(W_U, config.N, d, "W_U");
  AOTMEM_REQUIRE(heads.size() == static_cast<std::size_t>(config.H), "model: head count mismatch");
  for (const auto& h : heads) {
    if (h.is_rank1()) {
      require_shape(h.q, d, 1, "q");
      require_shape(h.k, d, 1, "k");
    } else {
      require_shape(h.W_QK, d, d, "W_QK");
    }
    require_shape(h.W_V, dh, d, "W_V");
    require_shape(h.W_O, d, dh, "W_O");
  }
  if (config.variant == Variant::mlp_based) {
    AOTMEM_REQUIRE(mlp.has_value(), "model: MLP variant is missing mlp weights");
    require_shape(mlp->W_1, config.mlp_width, d, "mlp.W_1");
    require_shape(mlp->W_2, d, config.mlp_width, "mlp.W_2");
  }
}

AoTParams zero_params(const ModelConfig& config) {
  config.validate();
  AoTParams p;
  p.config = config;
  const std::size_t d = config.d, dh = config.d_h;
  p.e = Matrix(d, config.N);
  p.pos = Matrix(d, config.S);
  p.W_U = Matrix(config.N, d);
  p.heads.resize(config.H);
  for (auto& h : p.heads) {
    if (config.qk_mode == QkMode::rank1) {
      h.q = Matrix(d, 1);
      h.k = Matrix(d, 1);
    } else {
      h.W_QK = Matrix(d, d);
    }
    h.W_V = Matrix(dh, d);
    h.W_O = Matrix(d, dh);
  }
  if (config.variant == Variant::mlp_based)
    p.mlp = MlpParams{Matrix(config.mlp_width, d), Matrix(d, config.mlp_width)};
  return p;
}

AoTParams init_normal(const ModelConfig& config, Rng& rng, double scale) {
  AoTParams p = zero_params(config);
  auto fill = [&](Matrix& m) {
    for (double& v : m.data()) v = scale * rng.normal();
  };
  fill(p.e);
  fill(p.pos);
  for (auto& h : p.heads) {
    fill(h.W_QK);
    fill(h.q);
    fill(h.k);
    fill(h.W_V);
    fill(h.W_O);
  }
  fill(p.W_U);
  if (p.mlp) {
    fill(p.mlp->W_1);
    fill(p.mlp->W_2);
  }
  return p;
}

void check_tokens(const AoTParams& params, std::span<const Token> t) {
  AOTMEM_REQUIRE(t.size() == static_cast<std::size_t>(params.config.S),
                 "token sequence length differs from the context length S");
  for (Token tok : t)
    AOTMEM_REQUIRE(tok >= 0 && tok < params.config.N, "token id out of range");
}

Matrix position_vectors(const AoTParams& params, std::span<const Token> t) {
  check_tokens(params, t);
  const std::size_t d = params.config.d;
  Matrix x(d, t.size());
  for (std::size_t s = 0; s < t.size(); ++s)
    for (std::size_t i = 0; i < d; ++i) x(i, s) = params.e(i, t[s]) + params.pos(i, s);
  return x;
}

Vector attention_scores(const HeadParams& head, const Matrix& x) {
  const std::size_t S = x.cols(), d = x.rows();
  const Vector last = x.col(S - 1);
  Vector raw(S);
  if (head.is_rank1()) {
    const double a = dot(head.q.data(), last);
    for (std::size_t s = 0; s < S; ++s) {
      double b = 0.0;
      for (std::size_t i = 0; i < d; ++i) b += head.k(i, 0) * x(i, s);
      raw[s] = a * b;
    }
  } else {
    // uᵀ = x_Sᵀ W_QK, then raw_s = u·x_s
    const Vector u = matvec_t(head.W_QK, last);
    for (std::size_t s = 0; s < S; ++s) {
      double v = 0.0;
      for (std::size_t i = 0; i < d; ++i) v += u[i] * x(i, s);
      raw[s] = v;
    }
  }
  return raw;
}

Vector attention_pattern(const HeadParams& head, const AoTParams& params, std::span<const Token> t) {
  return softmax(attention_scores(head, position_vectors(params, t)));
}

Vector head_output(const HeadParams& head, const Matrix& x) {
  const Vector a = softmax(attention_scores(head, x));
  const Vector avg = matvec(x, a);
  return matvec(head.W_O, matvec(head.W_V, avg));
}

Vector residual_stream(const AoTParams& params, std::span<const Token> t) {
  const Matrix x = position_vectors(params, t);
  Vector z = x.col(x.cols() - 1);
  for (const auto& h : params.heads) axpy(z, head_output(h, x), 1.0);
  return z;
}

Vector aot_forward(const AoTParams& params, std::span<const Token> t) {
  AOTMEM_REQUIRE(params.config.variant == Variant::aot, "aot_forward called on a non-AoT model");
  return matvec(params.W_U, residual_stream(params, t));
}

Vector mlp_forward(const AoTParams& params, std::span<const Token> t) {
  AOTMEM_REQUIRE(params.config.variant == Variant::mlp_based, "mlp_forward needs the MLP variant");
  AOTMEM_REQUIRE(params.mlp.has_value(), "mlp_forward: missing mlp weights");
  Vector z = residual_stream(params, t);
  Vector hidden = matvec(params.mlp->W_1, z);
  for (double& v : hidden) v = gelu(v);
  axpy(z, matvec(params.mlp->W_2, hidden), 1.0);
  return matvec(params.W_U, z);
}

Vector forward(const AoTParams& params, std::span<const Token> t) {
  return params.config.variant == Variant::aot ? aot_forward(params, t) : mlp_forward(params, t);
}

double gelu(double x) { return 0.5 * x * std::erfc(-x / std::numbers::sqrt2); }

double gelu_grad(double x) {
  const double cdf = 0.5 * std::erfc(-x / std::numbers::sqrt2);
  const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
  return cdf + x * pdf;
}

ParamFormula parse_param_formula(std::string_view s) {
  if (s == "theorem1") return ParamFormula::theorem1;
  if (s == "remark2") return ParamFormula::remark2;
  if (s == "raw") return ParamFormula::raw;
  throw InvalidArgument("unknown parameter formula '" + std::string(s) + "'");
}

std::int64_t param_count(const ModelConfig& c, ParamFormula formula) {
  const std::int64_t N = c.N, S = c.S, d = c.d, dh = c.d_h, H = c.H;
  switch (formula) {
    case ParamFormula::theorem1: return d * (S + 2 * N + 4 * dh * H);
    case ParamFormula::remark2: return d * (S + 2 * N + 2 * (dh + 1) * H);
    case ParamFormula::raw: {
      const std::int64_t qk = c.qk_mode == QkMode::rank1 ? 2 * d : d * d;
      std::int64_t total = d * N + d * S + N * d + H * (qk + 2 * dh * d);
      if (c.variant == Variant::mlp_based) total += 2 * static_cast<std::int64_t>(c.mlp_width) * d;
      return total;
    }
  }
  return 0;
}

}  // namespace aotmem
