#include "task/task.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "common/error.hpp"
#include "numkernel/linalg.hpp"
#include "numkernel/rng.hpp"

namespace aotmem {

namespace {

constexpr double kSumTol = 1e-12;

double row_sum(std::span<const double> r) { return std::accumulate(r.begin(), r.end(), 0.0); }

}  // namespace

void TaskDistribution::validate() const {
  AOTMEM_REQUIRE(N >= 2, "task: N must be at least 2");
  AOTMEM_REQUIRE(S >= 1, "task: S must be at least 1");
  AOTMEM_REQUIRE(!support.empty(), "task: empty support");
  AOTMEM_REQUIRE(prior.size() == support.size(), "task: prior length differs from support");
  AOTMEM_REQUIRE(conditionals.rows() == support.size() &&
                     conditionals.cols() == static_cast<std::size_t>(N),
                 "task: conditionals must be |support| x N");
  std::map<TokenSeq, std::size_t> seen;
  for (const auto& t : support) {
    AOTMEM_REQUIRE(t.size() == static_cast<std::size_t>(S), "task: sequence length differs from S");
    for (Token tok : t) AOTMEM_REQUIRE(tok >= 0 && tok < N, "task: token id out of range");
    AOTMEM_REQUIRE(seen.emplace(t, 0).second, "task: duplicate sequence in support");
  }
  for (double p : prior) AOTMEM_REQUIRE(p > 0.0 && std::isfinite(p), "task: prior must be positive");
  AOTMEM_REQUIRE(std::abs(row_sum(prior) - 1.0) <= kSumTol, "task: prior does not sum to 1");
  for (std::size_t i = 0; i < size(); ++i) {
    auto r = conditionals.row(i);
    for (double p : r) AOTMEM_REQUIRE(p >= 0.0 && std::isfinite(p), "task: negative conditional");
    AOTMEM_REQUIRE(std::abs(row_sum(r) - 1.0) <= kSumTol, "task: conditional row does not sum to 1");
  }
  if (lookup) {
    AOTMEM_REQUIRE(lookup->size() == size(), "task: lookup length differs from support");
    for (std::size_t i = 0; i < size(); ++i) {
      const Token g = (*lookup)[i];
      AOTMEM_REQUIRE(g >= 0 && g < N, "task: lookup token out of range");
      auto r = conditionals.row(i);
      AOTMEM_REQUIRE(r[g] >= *std::max_element(r.begin(), r.end()),
                     "task: lookup target is not the row maximum");
    }
  }
}

std::size_t TaskDistribution::index_of(std::span<const Token> t) const {
  // Lexicographically complete supports map by base-N arithmetic.
  const bool full = support.size() == static_cast<std::size_t>(std::pow(N, S) + 0.5);
  if (full && t.size() == static_cast<std::size_t>(S)) {
    std::size_t idx = 0;
    bool ok = true;
    for (Token tok : t) {
      if (tok < 0 || tok >= N) ok = false;
      idx = idx * N + tok;
    }
    if (ok && idx < support.size() && std::equal(t.begin(), t.end(), support[idx].begin()))
      return idx;
  }
  for (std::size_t i = 0; i < support.size(); ++i)
    if (std::equal(t.begin(), t.end(), support[i].begin(), support[i].end())) return i;
  throw InvalidArgument("task: sequence not in support");
}

std::optional<Token> TaskDistribution::target(std::size_t i) const {
  if (lookup) return (*lookup)[i];
  auto r = conditionals.row(i);
  for (std::size_t y = 0; y < r.size(); ++y)
    if (std::abs(r[y] - 1.0) <= kSumTol) return static_cast<Token>(y);
  return std::nullopt;
}

std::vector<TokenSeq> enumerate_sequences(int N, int S, std::size_t cap) {
  AOTMEM_REQUIRE(N >= 2, "task: N must be at least 2");
  AOTMEM_REQUIRE(S >= 1, "task: S must be at least 1");
  double count = std::pow(static_cast<double>(N), S);
  if (count > static_cast<double>(cap))
    throw InvalidArgument("task: N^S = " + std::to_string(static_cast<long double>(count)) +
                          " exceeds the support cap " + std::to_string(cap));
  std::vector<TokenSeq> out;
  out.reserve(static_cast<std::size_t>(count));
  TokenSeq t(S, 0);
  while (true) {
    out.push_back(t);
    int pos = S - 1;
    while (pos >= 0 && ++t[pos] == N) t[pos--] = 0;
    if (pos < 0) break;
  }
  return out;
}

TaskDistribution make_association_task(int N, int S, std::uint64_t seed, std::size_t cap) {
  TaskDistribution task;
  task.N = N;
  task.S = S;
  task.support = enumerate_sequences(N, S, cap);
  const std::size_t T = task.support.size();
  task.prior.assign(T, 1.0 / static_cast<double>(T));
  task.conditionals = Matrix(T, N);
  std::vector<Token> g(T);
  Rng rng(seed);
  for (std::size_t i = 0; i < T; ++i) {
    g[i] = static_cast<Token>(rng.index(N));
    task.conditionals(i, g[i]) = 1.0;
  }
  task.lookup = std::move(g);
  return task;
}

TaskDistribution make_noisy_lookup_task(int N, int S, double p_correct, std::uint64_t seed,
                                        std::size_t cap) {
  AOTMEM_REQUIRE(N >= 2, "task: N must be at least 2");
  AOTMEM_REQUIRE(p_correct >= 1.0 / N - 1e-15 && p_correct < 1.0,
                 "task: p_correct must lie in [1/N, 1)");
  TaskDistribution task = make_association_task(N, S, seed, cap);
  const double rest = (1.0 - p_correct) / (N - 1);
  for (std::size_t i = 0; i < task.size(); ++i) {
    auto r = task.conditionals.row(i);
    std::fill(r.begin(), r.end(), rest);
    r[(*task.lookup)[i]] = p_correct;
  }
  return task;
}

TaskDistribution smooth_task(const TaskDistribution& task, double delta) {
  AOTMEM_REQUIRE(delta > 0.0, "smooth_task: delta must be positive");
  TaskDistribution out = task;
  const double denom = 1.0 + task.N * delta;
  for (double& p : out.conditionals.data()) p = (p + delta) / denom;
  if (!out.lookup) {
    // Keep the target recoverable once rows are no longer one-hot.
    std::vector<Token> g(task.size());
    bool all = true;
    for (std::size_t i = 0; i < task.size(); ++i) {
      auto t = task.target(i);
      if (!t) {
        all = false;
        break;
      }
      g[i] = *t;
    }
    if (all) out.lookup = std::move(g);
  }
  return out;
}

double kl_divergence(const TaskDistribution& task, const LogitsFn& logits) {
  double total = 0.0;
  for (std::size_t i = 0; i < task.size(); ++i) {
    const Vector z = logits(task.support[i]);
    AOTMEM_REQUIRE(z.size() == static_cast<std::size_t>(task.N), "kl: logit vector length != N");
    const Vector lq = log_softmax(z);
    double row = 0.0;
    auto pi = task.conditionals.row(i);
    for (std::size_t y = 0; y < pi.size(); ++y)
      if (pi[y] > 0.0) row += pi[y] * (std::log(pi[y]) - lq[y]);
    total += task.prior[i] * row;
  }
  return std::max(total, 0.0);
}

double accuracy(const TaskDistribution& task, const LogitsFn& logits) {
  double hit = 0.0, miss = 0.0;
  for (std::size_t i = 0; i < task.size(); ++i) {
    const auto target = task.target(i);
    if (!target) throw InvalidArgument("accuracy: task defines no target for a sequence");
    const Vector z = logits(task.support[i]);
    AOTMEM_REQUIRE(z.size() == static_cast<std::size_t>(task.N), "accuracy: logit vector length != N");
    const double zt = z[*target];
    bool strict = true;
    for (std::size_t y = 0; y < z.size(); ++y)
      if (static_cast<Token>(y) != *target && z[y] >= zt) {
        strict = false;
        break;
      }
    (strict ? hit : miss) += task.prior[i];
  }
  // Normalized by the summed prior so a perfect model scores exactly 1.
  return miss == 0.0 ? 1.0 : hit / (hit + miss);
}

std::vector<std::size_t> sequences_by_likelihood(const TaskDistribution& task) {
  std::vector<std::size_t> order(task.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (task.prior[a] != task.prior[b]) return task.prior[a] > task.prior[b];
    return task.support[a] < task.support[b];
  });
  return order;
}

std::size_t t_epsilon(const TaskDistribution& task, double eps) {
  AOTMEM_REQUIRE(eps >= 0.0 && eps < 1.0, "t_epsilon: eps must lie in [0, 1)");
  if (eps == 0.0) return task.size();
  const auto order = sequences_by_likelihood(task);
  double cum = 0.0;
  for (std::size_t k = 0; k < order.size(); ++k) {
    cum += task.prior[order[k]];
    if (cum > 1.0 - eps) return k + 1;
  }
  return task.size();
}

double negentropy(std::span<const double> dist) {
  double h = 0.0;
  for (double p : dist)
    if (p > 0.0) h += p * std::log(p);
  return h;
}

AssumptionReport check_assumptions(const TaskDistribution& task) {
  AssumptionReport rep;
  rep.assumption1 = true;
  rep.min_conditional = 1.0;
  for (std::size_t i = 0; i < task.size(); ++i) {
    auto r = task.conditionals.row(i);
    bool one_hot = false;
    for (double p : r) {
      rep.min_conditional = std::min(rep.min_conditional, p);
      if (std::abs(p - 1.0) <= kSumTol) one_hot = true;
    }
    if (!one_hot) rep.assumption1 = false;
    rep.max_entropy = std::max(rep.max_entropy, -negentropy(r));
  }
  rep.assumption2 = rep.min_conditional > 0.0;
  return rep;
}

LogitsFn model_logits(const AoTParams& params) {
  return [&params](std::span<const Token> t) { return forward(params, t); };
}

nlohmann::json task_to_json(const TaskDistribution& task) {
  using nlohmann::json;
  json support = json::array();
  for (std::size_t i = 0; i < task.size(); ++i)
    support.push_back(json{{"tokens", task.support[i]}, {"prior", task.prior[i]}});
  json conds = json::array();
  for (std::size_t i = 0; i < task.size(); ++i) {
    auto r = task.conditionals.row(i);
    conds.push_back(std::vector<double>(r.begin(), r.end()));
  }
  json j{{"N", task.N}, {"S", task.S}, {"support", std::move(support)}, {"conditionals", std::move(conds)}};
  if (task.lookup) j["g"] = *task.lookup;
  return j;
}

TaskDistribution task_from_json(const nlohmann::json& j) {
  static const std::vector<std::string> known = {"N", "S", "support", "conditionals", "g"};
  AOTMEM_REQUIRE(j.is_object(), "task json: expected an object");
  for (const auto& [key, _] : j.items())
    if (std::find(known.begin(), known.end(), key) == known.end())
      throw InvalidArgument("task json: unknown key '" + key + "'");
  try {
    TaskDistribution task;
    task.N = j.at("N").get<int>();
    task.S = j.at("S").get<int>();
    for (const auto& s : j.at("support")) {
      task.support.push_back(s.at("tokens").get<TokenSeq>());
      task.prior.push_back(s.at("prior").get<double>());
    }
    const auto& conds = j.at("conditionals");
    task.conditionals = Matrix(conds.size(), task.N);
    for (std::size_t i = 0; i < conds.size(); ++i) {
      const auto row = conds[i].get<std::vector<double>>();
      AOTMEM_REQUIRE(row.size() == static_cast<std::size_t>(task.N), "task json: conditional row length != N");
      std::copy(row.begin(), row.end(), task.conditionals.row(i).begin());
    }
    if (j.contains("g")) task.lookup = j.at("g").get<std::vector<Token>>();
    task.validate();
    return task;
  } catch (const nlohmann::json::exception& ex) {
    throw InvalidArgument(std::string("task json: ") + ex.what());
  }
}

}  // namespace aotmem
