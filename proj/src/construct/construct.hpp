#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "bounds/bounds.hpp"
#include "model/model.hpp"
#include "numkernel/matrix.hpp"
#include "task/task.hpp"

namespace aotmem {

class Rng;

enum class SkipMode { exact_basis, literal_lambda, heads_only };
std::string_view to_string(SkipMode m);
SkipMode parse_skip_mode(std::string_view s);

struct ConstructionConfig {
  double eps = 0.0;
  int d = 2;
  int d_h = 2;
  SkipMode skip_mode = SkipMode::exact_basis;
  double lambda_skip = 1.0;   // starting value of the doubling loop
  double rho_last = 4.0;      // multiplier on pos_S in literal_lambda mode
  double gamma_target = 1e-6;
  double rank_tol = 1e-8;
  int max_resample = 20;
  // Candidates drawn per head; the one adding the best-conditioned new rows
  // is kept. 1 means a single random draw.
  int head_candidates = 16;
  double qk_scale_min = 1.0;
  double qk_scale_max = 300.0;
  double max_condition_B = 1e10;
  std::uint64_t seed = 0;
  std::optional<double> lower_bound_ref;

  void validate() const;
};

struct ConstructionCertificate {
  std::string skip_mode;
  bool fallback = false;  // exact_basis gave up and heads_only was used
  int H_used = 0;         // memory heads
  int skip_heads = 0;     // λ-heads realizing the skip block (literal_lambda)
  std::size_t T_target = 0;
  std::size_t achieved_rank = 0;
  std::size_t skip_rank = 0;
  double skip_residual = 0.0;
  double lambda_skip = 0.0;
  double rho_last = 1.0;
  std::optional<double> skip_decay_rate;
  double solve_residual = 0.0;
  double model_residual = 0.0;
  double condition_B = 1.0;
  double sigma_min_ratio = 0.0;  // σ_min/σ_max of the S₁ block
  double C_eq14 = 1.0;
  std::optional<double> C_remark;
  double wE_norm = 0.0;
  double s2_mass = 0.0;
  double s2_max_logit_error = 0.0;
  double s2_weighted_logit_error = 0.0;
  std::optional<double> achieved_accuracy;
  double achieved_kl = 0.0;
  double target_kl = 0.0;
  double lower_bound_ref = 0.0;
  double prop1_gap = 0.0;
  int resamples = 0;
};

nlohmann::json certificate_to_json(const ConstructionCertificate& c);

// Entries i.i.d. uniform on (0, 1).
struct Embeddings {
  Matrix e;    // d × N
  Matrix pos;  // d × S
};
Embeddings sample_embeddings(int N, int S, int d, std::uint64_t seed);

// W_QK = λI, W_V = W_O = I (inner dimension d).
HeadParams make_skip_head(int d, double lambda_skip);

struct SkipFit {
  double lambda = 0.0;
  double residual = 0.0;  // max over sequences of ‖head(t) − x(t,S)‖
  std::vector<std::pair<double, double>> trace;  // (λ, residual) per doubling
};
// Residual of the λI head against x(t,S) on the given sequences.
double skip_head_residual(const AoTParams& params, const std::vector<TokenSeq>& sequences,
                          double lambda_skip);
// Doubles λ from lambda0 until the residual is at most gamma_target.
SkipFit fit_skip_lambda(const AoTParams& params, const std::vector<TokenSeq>& sequences,
                        double lambda0, double gamma_target, int max_doublings = 200);

// Rank-1 head q = w·q̂, k = k̂ with random unit q̂, k̂, w log-uniform in
// [scale_min, scale_max], W_V with N(0, 1) entries and W_O = 0.
HeadParams sample_head(int d, int d_h, Rng& rng, double scale_min, double scale_max);

// Column t stacks x(t,S) (when include_skip) and W_V^h A^h(t) for every head.
Matrix assemble_attention_matrix(const AoTParams& params, const std::vector<TokenSeq>& sequences,
                                 bool include_skip);

// Zero-pads the encoder to dimension d.
SequenceEncoder pad_encoder(const SequenceEncoder& enc, int d);

struct Construction {
  AoTParams params;
  ConstructionCertificate certificate;
};

Construction build_memorizer(const TaskDistribution& task, const SequenceEncoder& target,
                             const ConstructionConfig& cfg);

// Measurement fields only: accuracy, KL and the gap to lower_bound_ref.
ConstructionCertificate verify_memorizer(const AoTParams& params, const TaskDistribution& task,
                                         double lower_bound_ref);

}  // namespace aotmem
