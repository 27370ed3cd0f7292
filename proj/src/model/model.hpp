#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "numkernel/matrix.hpp"

namespace aotmem {

class Rng;

using Token = std::int32_t;
using TokenSeq = std::vector<Token>;

enum class Variant { aot, mlp_based };
enum class QkMode { full, rank1 };

std::string_view to_string(Variant v);
std::string_view to_string(QkMode m);
Variant parse_variant(std::string_view s);
QkMode parse_qk_mode(std::string_view s);

// Shapes of a one-layer attention-only transformer, or of the comparator with
// a single head followed by a residual GELU MLP.
struct ModelConfig {
  int N = 2;        // dictionary size
  int S = 1;        // context length
  int d = 1;        // embedding dimension
  int d_h = 1;      // head dimension
  int H = 1;        // head count
  Variant variant = Variant::aot;
  int mlp_width = 0;
  QkMode qk_mode = QkMode::full;

  void validate() const;
};

// One attention head. In rank1 mode q and k are d×1 and W_QK = q·kᵀ; W_QK is
// left empty.
struct HeadParams {
  Matrix W_QK;
  Matrix q;
  Matrix k;
  Matrix W_V;  // d_h × d
  Matrix W_O;  // d × d_h

  bool is_rank1() const { return W_QK.empty(); }
  Matrix qk_matrix() const;
};

struct MlpParams {
  Matrix W_1;  // w × d
  Matrix W_2;  // d × w
};

struct AoTParams {
  ModelConfig config;
  Matrix e;    // d × N token embedding
  Matrix pos;  // d × S positional embedding
  std::vector<HeadParams> heads;
  Matrix W_U;  // N × d
  std::optional<MlpParams> mlp;

  void validate() const;
};

// All-zero parameters with shapes taken from the config.
AoTParams zero_params(const ModelConfig& config);
// i.i.d. normal(0, scale²) entries everywhere.
AoTParams init_normal(const ModelConfig& config, Rng& rng, double scale);

void check_tokens(const AoTParams& params, std::span<const Token> t);

// x_s = e(t_s) + pos_s as the columns of a d × S matrix.
Matrix position_vectors(const AoTParams& params, std::span<const Token> t);

Vector attention_pattern(const HeadParams& head, const AoTParams& params, std::span<const Token> t);
// Raw query-key scores of one head (before the softmax).
Vector attention_scores(const HeadParams& head, const Matrix& x);

// W_O W_V Σ_s a_s x_s for one head.
Vector head_output(const HeadParams& head, const Matrix& x);

// Residual-stream vector e(t_S) + pos_S + Σ_h W_O^h W_V^h A^h(t).
Vector residual_stream(const AoTParams& params, std::span<const Token> t);

Vector aot_forward(const AoTParams& params, std::span<const Token> t);
Vector mlp_forward(const AoTParams& params, std::span<const Token> t);
// Dispatches on params.config.variant.
Vector forward(const AoTParams& params, std::span<const Token> t);

// Exact GELU x·Φ(x) and its derivative.
double gelu(double x);
double gelu_grad(double x);

enum class ParamFormula { theorem1, remark2, raw };
ParamFormula parse_param_formula(std::string_view s);

// theorem1: d(S+2N+4·d_h·H); remark2: d(S+2N+2(d_h+1)H); raw: stored entries.
std::int64_t param_count(const ModelConfig& config, ParamFormula formula);

}  // namespace aotmem
