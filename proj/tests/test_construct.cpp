#include <gtest/gtest.h>

#include <chrono>
#include <cmath>
#include <set>

#include "bounds/bounds.hpp"
#include "common/error.hpp"
#include "construct/construct.hpp"
#include "numkernel/linalg.hpp"
#include "numkernel/rng.hpp"
#include "task/task.hpp"

using namespace aotmem;

namespace {

ConstructionConfig config(int d, int d_h, std::uint64_t seed = 0) {
  ConstructionConfig c;
  c.d = d;
  c.d_h = d_h;
  c.seed = seed;
  return c;
}

// Heads-only parameters with random embeddings and `H` random rank-1 heads.
AoTParams random_heads(int N, int S, int d, int d_h, int H, std::uint64_t seed, double scale_max = 300.0) {
  const Embeddings emb = sample_embeddings(N, S, d, seed);
  AoTParams p;
  p.config = ModelConfig{N, S, d, d_h, H, Variant::aot, 0, QkMode::rank1};
  p.e = emb.e;
  p.pos = emb.pos;
  p.W_U = Matrix(N, d);
  Rng rng = Rng(seed).split(99);
  for (int h = 0; h < H; ++h) p.heads.push_back(sample_head(d, d_h, rng, 1.0, scale_max));
  return p;
}

TaskDistribution prior_task(std::vector<double> prior) {
  TaskDistribution t;
  t.N = static_cast<int>(prior.size());
  t.S = 1;
  for (int i = 0; i < t.N; ++i) t.support.push_back({i});
  t.prior = std::move(prior);
  t.conditionals = Matrix::identity(t.N);
  return t;
}

}  // namespace

TEST(Embeddings, UniformAndDeterministic) {
  const Embeddings a = sample_embeddings(6, 3, 4, 11), b = sample_embeddings(6, 3, 4, 11);
  EXPECT_EQ(a.e, b.e);
  EXPECT_EQ(a.pos, b.pos);
  for (double v : a.e.data()) {
    EXPECT_GT(v, 0.0);
    EXPECT_LT(v, 1.0);
  }
  EXPECT_NE(sample_embeddings(6, 3, 4, 12).e, a.e);
}

TEST(SkipHead, SinglePositionIsExact) {
  AoTParams p = random_heads(4, 1, 3, 2, 0, 1);
  for (double lambda : {0.01, 1.0, 100.0}) EXPECT_EQ(skip_head_residual(p, {{0}, {3}}, lambda), 0.0);
}

TEST(SkipHead, ResidualDecaysWithLambda) {
  AoTParams p = random_heads(4, 3, 3, 2, 0, 2);
  // Make the last position dominate so the λI head concentrates on it.
  for (int i = 0; i < 3; ++i) p.pos(i, 2) *= 8.0;
  const std::vector<TokenSeq> seqs = enumerate_sequences(4, 3);
  const SkipFit fit = fit_skip_lambda(p, seqs, 1.0, 1e-6);
  EXPECT_LE(fit.residual, 1e-6);
  ASSERT_GE(fit.trace.size(), 2u);
  for (std::size_t i = 1; i < fit.trace.size(); ++i) EXPECT_LE(fit.trace[i].second, fit.trace[i - 1].second + 1e-15);
}

TEST(RankLaw, HeadsOnlyReachesFullRank) {
  // 8 sequences, 4 heads of dimension 2: rank min(T, H·d_h) = 8.
  const std::vector<TokenSeq> all = enumerate_sequences(5, 2);
  const std::vector<TokenSeq> seqs(all.begin(), all.begin() + 8);
  int full = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const AoTParams p = random_heads(5, 2, 3, 2, 4, seed);
    const Matrix M = assemble_attention_matrix(p, seqs, false);
    ASSERT_EQ(M.rows(), 8u);
    if (numeric_rank(M, 1e-8) == 8) ++full;
  }
  EXPECT_GE(full, 95);
}

TEST(RankLaw, SkipOnlyRankLimitedByLastTokens) {
  const std::vector<TokenSeq> seqs = enumerate_sequences(3, 2);
  const AoTParams p = random_heads(3, 2, 4, 2, 0, 3);
  const Matrix M = assemble_attention_matrix(p, seqs, true);
  std::set<Token> last;
  for (const auto& t : seqs) last.insert(t.back());
  EXPECT_EQ(numeric_rank(M), std::min<std::size_t>({seqs.size(), 4, last.size()}));
}

TEST(RankLaw, SkipPlusHeads) {
  const std::vector<TokenSeq> all = enumerate_sequences(3, 2);
  const std::vector<TokenSeq> seqs(all.begin(), all.begin() + 6);
  // Sharp heads attend to a single position and lose rank, so keep the
  // query scale moderate here.
  int ok = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const AoTParams p = random_heads(3, 2, 2, 2, 2, seed, 3.0);
    if (numeric_rank(assemble_attention_matrix(p, seqs, true)) == 6) ++ok;
  }
  EXPECT_GE(ok, 95);
}

TEST(RankLaw, DuplicateSequencesRejected) {
  const AoTParams p = random_heads(3, 2, 2, 2, 1, 0);
  EXPECT_THROW(assemble_attention_matrix(p, {{0, 1}, {0, 1}}, true), InvalidArgument);
}

TEST(Memorizer, SmallExactCase) {
  const TaskDistribution t = make_association_task(5, 2, 0);
  const auto start = std::chrono::steady_clock::now();
  const Construction c = build_memorizer(t, circle_encoder(t, 20.0), config(2, 2, 7));
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  EXPECT_EQ(c.certificate.H_used, 12);
  EXPECT_EQ(c.certificate.achieved_rank, 25u);
  ASSERT_TRUE(c.certificate.achieved_accuracy.has_value());
  EXPECT_EQ(*c.certificate.achieved_accuracy, 1.0);
  EXPECT_LE(c.certificate.solve_residual, 1e-8);
  EXPECT_LE(c.certificate.model_residual, 1e-8);
  EXPECT_FALSE(c.certificate.fallback);
  EXPECT_LT(secs, 5.0);
  EXPECT_EQ(accuracy(t, model_logits(c.params)), 1.0);
}

TEST(Memorizer, CapacityIdentity) {
  // d=2 stores T0 = H·d_h + 2 associations.
  const TaskDistribution t = make_association_task(10, 2, 1);
  const Construction c = build_memorizer(t, circle_encoder(t, 20.0), config(2, 2));
  EXPECT_EQ(c.certificate.H_used, 49);
  EXPECT_EQ(*c.certificate.achieved_accuracy, 1.0);
  EXPECT_LE(static_cast<std::size_t>(c.certificate.H_used * 2 + 2), t.size() + 1);
}

TEST(Memorizer, EverySkipModeMemorizes) {
  const TaskDistribution t = make_association_task(4, 2, 2);
  for (SkipMode m : {SkipMode::exact_basis, SkipMode::literal_lambda, SkipMode::heads_only}) {
    ConstructionConfig cfg = config(2, 2, 3);
    cfg.skip_mode = m;
    const Construction c = build_memorizer(t, circle_encoder(t, 20.0), cfg);
    EXPECT_EQ(*c.certificate.achieved_accuracy, 1.0) << to_string(m);
    EXPECT_LE(c.certificate.solve_residual, 1e-8) << to_string(m);
    EXPECT_EQ(c.certificate.skip_mode, to_string(m));
  }
}

TEST(Memorizer, LiteralLambdaReportsDecay) {
  const TaskDistribution t = make_association_task(4, 3, 3);
  ConstructionConfig cfg = config(2, 2, 4);
  cfg.skip_mode = SkipMode::literal_lambda;
  const Construction c = build_memorizer(t, circle_encoder(t, 20.0), cfg);
  EXPECT_LE(c.certificate.skip_residual, cfg.gamma_target);
  EXPECT_GT(c.certificate.lambda_skip, 0.0);
  EXPECT_EQ(c.certificate.skip_heads, 1);
  EXPECT_TRUE(c.certificate.skip_decay_rate.has_value());
  EXPECT_EQ(*c.certificate.achieved_accuracy, 1.0);
}

TEST(Memorizer, HeadsOnlyNeedsMoreHeads) {
  const TaskDistribution t = make_association_task(5, 2, 4);
  ConstructionConfig cfg = config(2, 2, 5);
  cfg.skip_mode = SkipMode::heads_only;
  const Construction c = build_memorizer(t, circle_encoder(t, 20.0), cfg);
  EXPECT_EQ(c.certificate.H_used, 13);  // ceil(25 / 2)
  EXPECT_EQ(*c.certificate.achieved_accuracy, 1.0);
}

TEST(Memorizer, SingularBasisFallsBack) {
  // Padding the circle target to d = 3 zeroes a row of E, so B is singular.
  const TaskDistribution t = make_association_task(4, 2, 5);
  const Construction c = build_memorizer(t, pad_encoder(circle_encoder(t, 20.0), 3), config(3, 2, 6));
  EXPECT_TRUE(c.certificate.fallback);
  EXPECT_EQ(c.certificate.skip_mode, "heads_only");
  EXPECT_EQ(*c.certificate.achieved_accuracy, 1.0);
}

TEST(Memorizer, DeterministicForSeed) {
  const TaskDistribution t = make_association_task(5, 2, 6);
  const auto a = build_memorizer(t, circle_encoder(t, 20.0), config(2, 2, 9));
  const auto b = build_memorizer(t, circle_encoder(t, 20.0), config(2, 2, 9));
  EXPECT_EQ(a.params.e, b.params.e);
  ASSERT_EQ(a.params.heads.size(), b.params.heads.size());
  for (std::size_t h = 0; h < a.params.heads.size(); ++h) EXPECT_EQ(a.params.heads[h].W_O, b.params.heads[h].W_O);
}

TEST(Memorizer, ReachesLowerBoundOnSmoothedTask) {
  const TaskDistribution t = smooth_task(make_association_task(4, 2, 7), 0.05);
  const LowerBoundResult lb = encoder_lower_bound(t, 3);
  ConstructionConfig cfg = config(3, 3, 1);
  cfg.lower_bound_ref = lb.value;
  const Construction c = build_memorizer(t, lb.encoder, cfg);
  EXPECT_LE(c.certificate.solve_residual, 1e-8);
  EXPECT_LE(c.certificate.achieved_kl, lb.value + 1e-3);
  EXPECT_GE(c.certificate.achieved_kl, lb.value - 1e-3);
  EXPECT_NEAR(c.certificate.prop1_gap, c.certificate.achieved_kl - lb.value, 1e-15);
}

TEST(Memorizer, ApproximateCoverageObeysCouplingBound) {
  // Priors (0.5, 0.3, 0.15, 0.05): ε = 0.25 keeps the top two sequences.
  const TaskDistribution t = smooth_task(prior_task({0.5, 0.3, 0.15, 0.05}), 0.02);
  const LowerBoundResult lb = encoder_lower_bound(t, 2);
  ConstructionConfig cfg = config(2, 1, 2);
  cfg.eps = 0.25;
  cfg.skip_mode = SkipMode::heads_only;
  const Construction c = build_memorizer(t, lb.encoder, cfg);
  const auto& cert = c.certificate;
  EXPECT_EQ(cert.T_target, 2u);
  EXPECT_LE(cert.solve_residual, 1e-8);
  EXPECT_NEAR(cert.s2_mass, 0.2, 1e-12);
  EXPECT_GE(cert.C_eq14, 1.0);
  EXPECT_LE(cert.s2_weighted_logit_error, cfg.eps * cert.wE_norm * cert.C_eq14 + 1e-9);
  EXPECT_LE(cert.s2_max_logit_error, cert.wE_norm * cert.C_eq14 + 1e-9);
}

TEST(Memorizer, RemarkConstantWhenFullRankMatchesSelection) {
  const TaskDistribution t = smooth_task(prior_task({0.4, 0.3, 0.2, 0.1}), 0.02);
  const LowerBoundResult lb = encoder_lower_bound(t, 2);
  ConstructionConfig cfg = config(2, 1, 3);
  cfg.eps = 0.35;  // T1 = 2 with 0.7 > 0.65
  cfg.skip_mode = SkipMode::heads_only;
  const Construction c = build_memorizer(t, lb.encoder, cfg);
  if (c.certificate.C_remark) EXPECT_GE(*c.certificate.C_remark, 1.0);
  EXPECT_GE(c.certificate.C_eq14, 1.0);
}

TEST(Memorizer, RejectsHeadLargerThanEmbedding) {
  const TaskDistribution t = make_association_task(4, 2, 0);
  EXPECT_THROW(build_memorizer(t, circle_encoder(t, 20.0), config(2, 3)), InvalidArgument);
}

TEST(Verify, MeasuresSavedModel) {
  const TaskDistribution t = make_association_task(5, 2, 8);
  const Construction c = build_memorizer(t, circle_encoder(t, 20.0), config(2, 2));
  const ConstructionCertificate v = verify_memorizer(c.params, t, 0.0);
  EXPECT_EQ(*v.achieved_accuracy, 1.0);
  EXPECT_NEAR(v.achieved_kl, c.certificate.achieved_kl, 1e-15);
  EXPECT_NEAR(v.achieved_kl, circle_kl_closed_form(t, 20.0), 1e-8);
}
