#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <vector>

#include <json.hpp>

#include "model/model.hpp"
#include "numkernel/matrix.hpp"

namespace aotmem {

inline constexpr std::size_t kDefaultSupportCap = 100000;

// Prior over token sequences plus a dense next-token conditional per
// supported sequence. Row t of `conditionals` is π(·|support[t]).
struct TaskDistribution {
  int N = 2;
  int S = 1;
  std::vector<TokenSeq> support;
  Vector prior;
  Matrix conditionals;
  std::optional<std::vector<Token>> lookup;  // g(t), aligned with support

  std::size_t size() const { return support.size(); }
  // Throws InvalidArgument when any invariant fails.
  void validate() const;
  // Index of a sequence in the support; throws when absent.
  std::size_t index_of(std::span<const Token> t) const;
  // g(t) if present, otherwise the argmax of a one-hot row; nullopt if neither.
  std::optional<Token> target(std::size_t i) const;
};

struct AssumptionReport {
  bool assumption1 = false;  // every conditional is one-hot
  bool assumption2 = false;  // every conditional has full support
  double min_conditional = 0.0;
  double max_entropy = 0.0;  // largest Shannon entropy over rows
};

using LogitsFn = std::function<Vector(std::span<const Token>)>;

// All N^S sequences in lexicographic order.
std::vector<TokenSeq> enumerate_sequences(int N, int S, std::size_t cap = kDefaultSupportCap);

TaskDistribution make_association_task(int N, int S, std::uint64_t seed,
                                       std::size_t cap = kDefaultSupportCap);
TaskDistribution make_noisy_lookup_task(int N, int S, double p_correct, std::uint64_t seed,
                                        std::size_t cap = kDefaultSupportCap);
// Rows become (π + δ)/(1 + Nδ).
TaskDistribution smooth_task(const TaskDistribution& task, double delta);

double kl_divergence(const TaskDistribution& task, const LogitsFn& logits);
// Prior-weighted fraction of sequences whose target logit is the strict max.
double accuracy(const TaskDistribution& task, const LogitsFn& logits);
std::size_t t_epsilon(const TaskDistribution& task, double eps);
// Support indices sorted by prior descending, ties broken by lexicographic
// token order.
std::vector<std::size_t> sequences_by_likelihood(const TaskDistribution& task);

// Σ p log p, with 0·log 0 = 0.
double negentropy(std::span<const double> dist);
AssumptionReport check_assumptions(const TaskDistribution& task);

LogitsFn model_logits(const AoTParams& params);

// {N, S, support:[{tokens, prior}], conditionals:[[...]], g:[...]}
nlohmann::json task_to_json(const TaskDistribution& task);
TaskDistribution task_from_json(const nlohmann::json& j);

}  // namespace aotmem
