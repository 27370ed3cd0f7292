#include "construct/construct.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <string>

#include "common/error.hpp"
#include "numkernel/linalg.hpp"
#include "numkernel/rng.hpp"

namespace aotmem {

std::string_view to_string(SkipMode m) {
  switch (m) {
    case SkipMode::exact_basis: return "exact_basis";
    case SkipMode::literal_lambda: return "literal_lambda";
    case SkipMode::heads_only: return "heads_only";
  }
  return "exact_basis";
}

SkipMode parse_skip_mode(std::string_view s) {
  if (s == "exact_basis") return SkipMode::exact_basis;
  if (s == "literal_lambda") return SkipMode::literal_lambda;
  if (s == "heads_only") return SkipMode::heads_only;
  throw InvalidArgument("unknown skip mode '" + std::string(s) +
                        "' (expected exact_basis, literal_lambda or heads_only)");
}

void ConstructionConfig::validate() const {
  AOTMEM_REQUIRE(eps >= 0.0 && eps < 1.0, "construct: eps must lie in [0, 1)");
  AOTMEM_REQUIRE(d >= 1 && d_h >= 1, "construct: d and d_h must be positive");
  AOTMEM_REQUIRE(d_h <= d, "construct: d_h must not exceed d");
  AOTMEM_REQUIRE(gamma_target > 0.0, "construct: gamma_target must be positive");
  AOTMEM_REQUIRE(lambda_skip > 0.0, "construct: lambda_skip must be positive");
  AOTMEM_REQUIRE(rho_last > 1.0, "construct: rho_last must exceed 1");
  AOTMEM_REQUIRE(rank_tol > 0.0, "construct: rank_tol must be positive");
  AOTMEM_REQUIRE(max_resample >= 1, "construct: max_resample must be positive");
  AOTMEM_REQUIRE(head_candidates >= 1, "construct: head_candidates must be positive");
  AOTMEM_REQUIRE(qk_scale_min > 0.0 && qk_scale_max >= qk_scale_min,
                 "construct: need 0 < qk_scale_min <= qk_scale_max");
}

nlohmann::json certificate_to_json(const ConstructionCertificate& c) {
  auto opt = [](const std::optional<double>& v) -> nlohmann::json {
    return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
  };
  return {{"skip_mode", c.skip_mode},
          {"fallback", c.fallback},
          {"H_used", c.H_used},
          {"skip_heads", c.skip_heads},
          {"T_target", c.T_target},
          {"achieved_rank", c.achieved_rank},
          {"skip_rank", c.skip_rank},
          {"skip_residual", c.skip_residual},
          {"lambda_skip", c.lambda_skip},
          {"rho_last", c.rho_last},
          {"skip_decay_rate", opt(c.skip_decay_rate)},
          {"solve_residual", c.solve_residual},
          {"model_residual", c.model_residual},
          {"condition_B", c.condition_B},
          {"sigma_min_ratio", c.sigma_min_ratio},
          {"C_eq14", c.C_eq14},
          {"C_remark", opt(c.C_remark)},
          {"wE_norm", c.wE_norm},
          {"s2_mass", c.s2_mass},
          {"s2_max_logit_error", c.s2_max_logit_error},
          {"s2_weighted_logit_error", c.s2_weighted_logit_error},
          {"achieved_accuracy", opt(c.achieved_accuracy)},
          {"achieved_kl", c.achieved_kl},
          {"target_kl", c.target_kl},
          {"lower_bound_ref", c.lower_bound_ref},
          {"prop1_gap", c.prop1_gap},
          {"resamples", c.resamples}};
}

Embeddings sample_embeddings(int N, int S, int d, std::uint64_t seed) {
  AOTMEM_REQUIRE(N >= 1 && S >= 1 && d >= 1, "sample_embeddings: dimensions must be positive");
  Rng rng(seed);
  Embeddings out{Matrix(d, N), Matrix(d, S)};
  for (double& v : out.e.data()) v = rng.uniform_open();
  for (double& v : out.pos.data()) v = rng.uniform_open();
  return out;
}

HeadParams make_skip_head(int d, double lambda_skip) {
  AOTMEM_REQUIRE(d >= 1, "make_skip_head: d must be positive");
  AOTMEM_REQUIRE(lambda_skip > 0.0, "make_skip_head: lambda must be positive");
  HeadParams h;
  h.W_QK = lambda_skip * Matrix::identity(d);
  h.W_V = Matrix::identity(d);
  h.W_O = Matrix::identity(d);
  return h;
}

double skip_head_residual(const AoTParams& params, const std::vector<TokenSeq>& sequences,
                          double lambda_skip) {
  const HeadParams head = make_skip_head(params.config.d, lambda_skip);
  double worst = 0.0;
  for (const auto& t : sequences) {
    const Matrix x = position_vectors(params, t);
    Vector diff = head_output(head, x);
    axpy(diff, x.col(x.cols() - 1), -1.0);
    worst = std::max(worst, norm2(diff));
  }
  return worst;
}

SkipFit fit_skip_lambda(const AoTParams& params, const std::vector<TokenSeq>& sequences,
                        double lambda0, double gamma_target, int max_doublings) {
  AOTMEM_REQUIRE(lambda0 > 0.0 && gamma_target > 0.0, "fit_skip_lambda: positive inputs required");
  SkipFit fit;
  double lambda = lambda0;
  for (int i = 0; i <= max_doublings; ++i, lambda *= 2.0) {
    const double r = skip_head_residual(params, sequences, lambda);
    fit.trace.emplace_back(lambda, r);
    if (r <= gamma_target) {
      fit.lambda = lambda;
      fit.residual = r;
      return fit;
    }
  }
  throw ComputationError("fit_skip_lambda: residual target not met; the last position does not dominate");
}

HeadParams sample_head(int d, int d_h, Rng& rng, double scale_min, double scale_max) {
  auto unit = [&] {
    Matrix v(d, 1);
    double n = 0.0;
    while (n < 1e-12) {
      for (double& x : v.data()) x = rng.normal();
      n = norm2(v.data());
    }
    v *= 1.0 / n;
    return v;
  };
  HeadParams h;
  h.q = unit();
  h.k = unit();
  h.q *= rng.log_uniform(scale_min, scale_max);
  h.W_V = Matrix(d_h, d);
  for (double& x : h.W_V.data()) x = rng.normal();
  h.W_O = Matrix(d, d_h);
  return h;
}

namespace {

void require_distinct(const std::vector<TokenSeq>& sequences) {
  std::vector<TokenSeq> sorted = sequences;
  std::sort(sorted.begin(), sorted.end());
  if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end())
    throw InvalidArgument("assemble_attention_matrix: duplicate sequences");
}

// d_h × T block W_V·A(t) of one head.
Matrix head_rows(const HeadParams& head, const std::vector<Matrix>& xs) {
  Matrix out(head.W_V.rows(), xs.size());
  for (std::size_t t = 0; t < xs.size(); ++t) {
    const Vector a = softmax(attention_scores(head, xs[t]));
    out.set_col(t, matvec(head.W_V, matvec(xs[t], a)));
  }
  return out;
}

Matrix skip_rows(const std::vector<Matrix>& xs, std::size_t d) {
  Matrix out(d, xs.size());
  for (std::size_t t = 0; t < xs.size(); ++t) out.set_col(t, xs[t].col(xs[t].cols() - 1));
  return out;
}

std::vector<Matrix> all_position_vectors(const AoTParams& params,
                                         const std::vector<TokenSeq>& sequences) {
  std::vector<Matrix> xs;
  xs.reserve(sequences.size());
  for (const auto& t : sequences) xs.push_back(position_vectors(params, t));
  return xs;
}

Matrix append_rows(const Matrix& top, const Matrix& bottom) {
  if (top.empty()) return bottom;
  const Matrix blocks[] = {top, bottom};
  return vstack(blocks);
}

// Orthonormal basis (T × r) of the row space of m.
Matrix row_space_basis(const Matrix& m, double tol) {
  if (m.empty()) return {};
  const SvdResult s = svd(m, tol);
  Matrix q(m.cols(), s.numeric_rank);
  for (std::size_t i = 0; i < s.numeric_rank; ++i)
    for (std::size_t c = 0; c < m.cols(); ++c) q(c, i) = s.Vt(i, c);
  return q;
}

// Appends the new row directions of `block` to the orthonormal columns of
// `basis`. Two projection passes keep the columns orthogonal.
Matrix extend_basis(const Matrix& basis, Matrix block, std::size_t dim, double tol) {
  const double scale = block.frobenius_norm();
  if (!(scale > 0.0)) return basis;
  const std::size_t have = basis.empty() ? 0 : basis.cols();
  for (int pass = 0; pass < 2 && have > 0; ++pass) block -= (block * basis) * basis.transposed();
  const SvdResult s = svd(block, 1e-300);
  std::size_t add = 0;
  while (add < s.singular_values.size() && s.singular_values[add] > tol * scale && have + add < dim) ++add;
  Matrix out(dim, have + add);
  for (std::size_t c = 0; c < have; ++c)
    for (std::size_t r = 0; r < dim; ++r) out(r, c) = basis(r, c);
  for (std::size_t i = 0; i < add; ++i)
    for (std::size_t r = 0; r < dim; ++r) out(r, have + i) = s.Vt(i, r);
  return out;
}

// Sum of the log singular values a candidate block adds once the current row
// space is projected out, over the `need` new directions still required.
double candidate_score(Matrix rows, const Matrix& basis, std::size_t need) {
  const double n = rows.frobenius_norm();
  if (!(n > 0.0)) return -std::numeric_limits<double>::infinity();
  rows *= 1.0 / n;
  if (!basis.empty()) rows -= (rows * basis) * basis.transposed();
  if (need == 0) return 0.0;
  const SvdResult s = svd(rows, 1e-300);
  double score = 0.0;
  for (std::size_t i = 0; i < need && i < s.singular_values.size(); ++i)
    score += std::log(std::max(s.singular_values[i], 1e-300));
  return score;
}

// Smallest margin x_Sᵀx_S − x_Sᵀx_s over s < S and all sequences.
double last_position_margin(const AoTParams& params, const std::vector<TokenSeq>& sequences) {
  double margin = std::numeric_limits<double>::infinity();
  for (const auto& t : sequences) {
    const Matrix x = position_vectors(params, t);
    const std::size_t S = x.cols();
    const Vector last = x.col(S - 1);
    const double self = dot(last, last);
    for (std::size_t s = 0; s + 1 < S; ++s) margin = std::min(margin, self - dot(last, x.col(s)));
  }
  return margin;
}

double spectral_or_zero(const Matrix& m) { return m.empty() ? 0.0 : spectral_norm(m); }

struct ModeFailure {
  bool rank = false;
  bool basis = false;
};

struct Ordered {
  std::vector<std::size_t> order;  // support indices, most likely first
  std::vector<TokenSeq> sequences;
  std::size_t T1 = 0;
  Matrix E;  // d × T0 target columns in `order`
};

Matrix task_aligned_E(const TaskDistribution& task, const SequenceEncoder& target) {
  std::map<TokenSeq, std::size_t> idx;
  for (std::size_t i = 0; i < target.sequences.size(); ++i) idx.emplace(target.sequences[i], i);
  Matrix E(task.size(), target.E.cols());
  for (std::size_t i = 0; i < task.size(); ++i) {
    auto it = idx.find(task.support[i]);
    if (it == idx.end()) throw InvalidArgument("construct: target encoder is missing a support sequence");
    auto src = target.E.row(it->second);
    std::copy(src.begin(), src.end(), E.row(i).begin());
  }
  return E;
}

void fill_measurements(ConstructionCertificate& cert, const AoTParams& params,
                       const TaskDistribution& task) {
  const LogitsFn fn = model_logits(params);
  try {
    cert.achieved_accuracy = accuracy(task, fn);
  } catch (const InvalidArgument&) {
    cert.achieved_accuracy.reset();
  }
  cert.achieved_kl = kl_divergence(task, fn);
  cert.prop1_gap = cert.achieved_kl - cert.lower_bound_ref;
}

std::optional<Construction> try_mode(const TaskDistribution& task, const SequenceEncoder& target,
                                     const ConstructionConfig& cfg, const Ordered& ord,
                                     SkipMode mode, ModeFailure& failure) {
  const int N = task.N, S = task.S, d = cfg.d, d_h = cfg.d_h;
  const std::size_t T0 = ord.sequences.size(), T1 = ord.T1;
  const bool with_skip = mode != SkipMode::heads_only;
  const std::vector<TokenSeq> s1(ord.sequences.begin(), ord.sequences.begin() + T1);

  for (int attempt = 0; attempt < cfg.max_resample; ++attempt) {
    Rng rng = Rng(cfg.seed).split(static_cast<std::uint64_t>(attempt));
    const Embeddings emb = sample_embeddings(N, S, d, rng.next_u64());

    AoTParams p;
    p.config = ModelConfig{N, S, d, d_h, 0, Variant::aot, 0, QkMode::rank1};
    p.e = emb.e;
    p.pos = emb.pos;
    p.W_U = target.W;

    ConstructionCertificate cert;
    cert.skip_mode = std::string(to_string(mode));
    cert.T_target = T1;
    cert.resamples = attempt;

    SkipFit skip;
    if (mode == SkipMode::literal_lambda && S > 1) {
      double rho = cfg.rho_last;
      auto scaled = [&](double r) {
        AoTParams q = p;
        for (int i = 0; i < d; ++i) q.pos(i, S - 1) = emb.pos(i, S - 1) * r;
        return q;
      };
      AoTParams q = scaled(rho);
      while (last_position_margin(q, ord.sequences) <= 0.0 && rho < 1e6) {
        rho *= 2.0;
        q = scaled(rho);
      }
      if (last_position_margin(q, ord.sequences) <= 0.0) continue;
      p = std::move(q);
      cert.rho_last = rho;
      skip = fit_skip_lambda(p, ord.sequences, cfg.lambda_skip, cfg.gamma_target);
    }

    const std::vector<Matrix> xs1 = all_position_vectors(p, s1);
    Matrix rows;
    if (with_skip) {
      rows = skip_rows(xs1, d);
      cert.skip_rank = T1 == 0 ? 0 : numeric_rank(rows, cfg.rank_tol);
    }
    const std::size_t covered = with_skip ? cert.skip_rank : 0;
    const int H = T1 > covered ? static_cast<int>((T1 - covered + d_h - 1) / d_h) : 0;

    Matrix basis = T1 == 0 ? Matrix() : row_space_basis(rows, cfg.rank_tol);
    for (int h = 0; h < H; ++h) {
      const std::size_t have = basis.empty() ? 0 : basis.cols();
      const std::size_t need = std::min<std::size_t>(d_h, T1 > have ? T1 - have : 0);
      HeadParams best;
      Matrix best_rows;
      double best_score = -std::numeric_limits<double>::infinity();
      for (int c = 0; c < cfg.head_candidates; ++c) {
        HeadParams cand = sample_head(d, d_h, rng, cfg.qk_scale_min, cfg.qk_scale_max);
        Matrix cand_rows = head_rows(cand, xs1);
        const double score = cfg.head_candidates == 1 ? 0.0 : candidate_score(cand_rows, basis, need);
        if (c == 0 || score > best_score) {
          best_score = score;
          best = std::move(cand);
          best_rows = std::move(cand_rows);
        }
      }
      p.heads.push_back(std::move(best));
      rows = append_rows(rows, best_rows);
      basis = extend_basis(basis, best_rows, T1, cfg.rank_tol);
    }
    p.config.H = H;
    cert.H_used = H;

    // Full system over every sequence, S₁ columns first.
    const Matrix M_all = assemble_attention_matrix(p, ord.sequences, with_skip);
    const std::size_t R = M_all.rows();
    std::vector<std::size_t> c1(T1), c2(T0 - T1);
    for (std::size_t i = 0; i < T1; ++i) c1[i] = i;
    for (std::size_t i = T1; i < T0; ++i) c2[i - T1] = i;
    const Matrix M1 = M_all.select_cols(c1);
    const Matrix M2 = M_all.select_cols(c2);

    cert.achieved_rank = (T1 == 0 || R == 0) ? 0 : numeric_rank(M1, cfg.rank_tol);
    if (cert.achieved_rank < std::min<std::size_t>(T1, R)) {
      failure.rank = true;
      continue;
    }
    if (T1 > 0 && R > 0) {
      const SvdResult s = svd(M1, cfg.rank_tol);
      cert.sigma_min_ratio = s.singular_values[std::min(T1, R) - 1] / s.sigma_max();
    }

    Matrix E_eff = ord.E;
    if (!with_skip) {
      const std::vector<Matrix> xs_all = all_position_vectors(p, ord.sequences);
      E_eff -= skip_rows(xs_all, d);
    }
    const Matrix E1 = E_eff.select_cols(c1);

    Matrix X(d, R);
    if (R > 0 && T1 > 0) X = lstsq_min_norm(M1.transposed(), E1.transposed(), cfg.rank_tol).transposed();
    {
      Matrix r = E1;
      if (R > 0) r -= X * M1;
      cert.solve_residual = r.frobenius_norm() / std::max(1.0, E1.frobenius_norm());
    }

    Matrix B;
    if (with_skip) {
      B = X.block(0, 0, d, d);
      cert.condition_B = condition_number(B);
      if (mode == SkipMode::exact_basis && !(cert.condition_B <= cfg.max_condition_B)) {
        failure.basis = true;
        continue;
      }
    }
    const std::size_t off = with_skip ? d : 0;
    for (int h = 0; h < H; ++h) p.heads[h].W_O = X.block(0, off + h * d_h, d, d_h);

    // Coupling constants from the P₁/P₂ split.
    if (T0 > T1 && T1 > 0 && R > 0) {
      const Matrix coupling = pseudo_inverse(M1, cfg.rank_tol) * M2;
      const double c = spectral_norm(coupling);
      cert.C_eq14 = std::sqrt(1.0 + c * c);
      const SvdResult full = svd(M_all, cfg.rank_tol);
      if (full.numeric_rank == T1) {
        Matrix V11(T1, T1);
        for (std::size_t i = 0; i < T1; ++i)
          for (std::size_t j = 0; j < T1; ++j) V11(i, j) = full.Vt(i, j);
        const double vinv = spectral_norm(inverse(V11));
        cert.C_remark = std::sqrt(1.0 + vinv * vinv);
      }
    }
    cert.wE_norm = spectral_or_zero(target.W * E_eff);

    if (mode == SkipMode::exact_basis && d > 0) {
      const Matrix Binv = inverse(B);
      const Matrix BinvT = Binv.transposed();
      p.e = B * p.e;
      p.pos = B * p.pos;
      for (auto& h : p.heads) {
        h.q = BinvT * h.q;
        h.k = BinvT * h.k;
        h.W_V = h.W_V * Binv;
      }
    } else if (mode == SkipMode::literal_lambda) {
      // B·x_S = x_S + (B − I)·x_S, the second term carried by λI heads.
      const Matrix BmI = B - Matrix::identity(d);
      const int blocks = (d + d_h - 1) / d_h;
      const double lambda = S > 1 ? skip.lambda : cfg.lambda_skip;
      for (int j = 0; j < blocks; ++j) {
        HeadParams h;
        h.W_QK = lambda * Matrix::identity(d);
        h.W_V = Matrix(d_h, d);
        h.W_O = Matrix(d, d_h);
        for (int i = 0; i < d_h && j * d_h + i < d; ++i) {
          h.W_V(i, j * d_h + i) = 1.0;
          for (int r = 0; r < d; ++r) h.W_O(r, i) = BmI(r, j * d_h + i);
        }
        p.heads.push_back(std::move(h));
      }
      cert.skip_heads = blocks;
      cert.lambda_skip = lambda;
      cert.skip_residual = S > 1 ? skip.residual : 0.0;
      for (std::size_t i = skip.trace.size(); i >= 2; --i) {
        const auto [l1, r1] = skip.trace[i - 2];
        const auto [l2, r2] = skip.trace[i - 1];
        if (r1 > 0.0 && r2 > 0.0 && r1 > r2) {
          cert.skip_decay_rate = -(std::log(r2) - std::log(r1)) / (l2 - l1);
          break;
        }
      }
      p.config.H = static_cast<int>(p.heads.size());
    }
    p.validate();

    // Residual of the literal model against the target on S₁.
    double worst = 0.0, scale = 1.0;
    for (std::size_t t = 0; t < T1; ++t) {
      Vector z = residual_stream(p, ord.sequences[t]);
      const Vector e_t = ord.E.col(t);
      scale = std::max(scale, norm2(e_t));
      axpy(z, e_t, -1.0);
      worst = std::max(worst, norm2(z));
    }
    cert.model_residual = worst / scale;

    for (std::size_t t = T1; t < T0; ++t) {
      Vector err = forward(p, ord.sequences[t]);
      axpy(err, matvec(target.W, ord.E.col(t)), -1.0);
      const double e = norm2(err);
      const double prior = task.prior[ord.order[t]];
      cert.s2_mass += prior;
      cert.s2_max_logit_error = std::max(cert.s2_max_logit_error, e);
      cert.s2_weighted_logit_error += prior * e;
    }

    const Matrix E_task = task_aligned_E(task, target);
    cert.target_kl = encoder_kl(task, target.W, E_task);
    cert.lower_bound_ref = cfg.lower_bound_ref.value_or(cert.target_kl);
    fill_measurements(cert, p, task);
    return Construction{std::move(p), std::move(cert)};
  }
  return std::nullopt;
}

}  // namespace

Matrix assemble_attention_matrix(const AoTParams& params, const std::vector<TokenSeq>& sequences,
                                 bool include_skip) {
  require_distinct(sequences);
  const std::vector<Matrix> xs = all_position_vectors(params, sequences);
  Matrix out;
  if (include_skip) out = skip_rows(xs, params.config.d);
  for (const auto& h : params.heads) out = append_rows(out, head_rows(h, xs));
  if (out.empty()) out = Matrix(0, sequences.size());
  return out;
}

SequenceEncoder pad_encoder(const SequenceEncoder& enc, int d) {
  AOTMEM_REQUIRE(d >= enc.d(), "pad_encoder: cannot shrink an encoder");
  SequenceEncoder out;
  out.sequences = enc.sequences;
  out.W = Matrix(enc.W.rows(), d);
  out.W.set_block(0, 0, enc.W);
  out.E = Matrix(enc.E.rows(), d);
  out.E.set_block(0, 0, enc.E);
  return out;
}

Construction build_memorizer(const TaskDistribution& task, const SequenceEncoder& target,
                             const ConstructionConfig& cfg) {
  cfg.validate();
  task.validate();
  AOTMEM_REQUIRE(target.d() == cfg.d, "construct: target encoder dimension differs from d");
  AOTMEM_REQUIRE(target.W.rows() == static_cast<std::size_t>(task.N),
                 "construct: target unembedding must have N rows");

  Ordered ord;
  ord.order = sequences_by_likelihood(task);
  ord.T1 = t_epsilon(task, cfg.eps);
  for (std::size_t i : ord.order) ord.sequences.push_back(task.support[i]);
  const Matrix E_task = task_aligned_E(task, target);
  ord.E = Matrix(cfg.d, ord.order.size());
  for (std::size_t c = 0; c < ord.order.size(); ++c) ord.E.set_col(c, E_task.row(ord.order[c]));

  ModeFailure failure;
  if (auto built = try_mode(task, target, cfg, ord, cfg.skip_mode, failure)) return std::move(*built);
  if (cfg.skip_mode == SkipMode::exact_basis && failure.basis) {
    ModeFailure again;
    if (auto built = try_mode(task, target, cfg, ord, SkipMode::heads_only, again)) {
      built->certificate.fallback = true;
      return std::move(*built);
    }
  }
  throw ComputationError("construct: numeric rank below min(T, rows) after " +
                         std::to_string(cfg.max_resample) + " resamples");
}

ConstructionCertificate verify_memorizer(const AoTParams& params, const TaskDistribution& task,
                                         double lower_bound_ref) {
  params.validate();
  task.validate();
  AOTMEM_REQUIRE(params.config.N == task.N && params.config.S == task.S,
                 "verify: model and task disagree on N or S");
  ConstructionCertificate cert;
  cert.lower_bound_ref = lower_bound_ref;
  cert.T_target = task.size();
  fill_measurements(cert, params, task);
  return cert;
}

}  // namespace aotmem
