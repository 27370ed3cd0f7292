#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <string>

#include "common/error.hpp"
#include "numkernel/rng.hpp"
#include "trainlab/trainlab.hpp"

namespace aotmem {

void TrainConfig::validate() const {
  AOTMEM_REQUIRE(batches_per_epoch >= 1, "train: batches_per_epoch must be positive");
  AOTMEM_REQUIRE(batch_size >= 1, "train: batch_size must be positive");
  AOTMEM_REQUIRE(epochs >= 1, "train: epochs must be positive");
  AOTMEM_REQUIRE(lr > 0.0, "train: lr must be positive");
  AOTMEM_REQUIRE(adam_beta1 >= 0.0 && adam_beta1 < 1.0, "train: adam_beta1 must lie in [0, 1)");
  AOTMEM_REQUIRE(adam_beta2 >= 0.0 && adam_beta2 < 1.0, "train: adam_beta2 must lie in [0, 1)");
  AOTMEM_REQUIRE(adam_eps > 0.0, "train: adam_eps must be positive");
  AOTMEM_REQUIRE(!seeds.empty(), "train: at least one seed is required");
  AOTMEM_REQUIRE(init_scale >= 0.0, "train: init_scale must be nonnegative");
}

TrainConfig TrainConfig::reduced() {
  TrainConfig c;
  c.epochs = 3;
  c.batches_per_epoch = 300;
  // 11x fewer steps than the full schedule; a 10x step size lands near the
  // full-budget endpoint.
  c.lr = 1e-2;
  return c;
}

nlohmann::json train_config_to_json(const TrainConfig& c) {
  return {{"batches_per_epoch", c.batches_per_epoch},
          {"batch_size", c.batch_size},
          {"epochs", c.epochs},
          {"lr", c.lr},
          {"adam_beta1", c.adam_beta1},
          {"adam_beta2", c.adam_beta2},
          {"adam_eps", c.adam_eps},
          {"seeds", c.seeds},
          {"init_scale", c.init_scale},
          {"zero_heads", c.zero_heads}};
}

TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig c) {
  AOTMEM_REQUIRE(j.is_object(), "train config must be a JSON object");
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "batches_per_epoch") c.batches_per_epoch = value.get<int>();
      else if (key == "batch_size") c.batch_size = value.get<int>();
      else if (key == "epochs") c.epochs = value.get<int>();
      else if (key == "lr") c.lr = value.get<double>();
      else if (key == "adam_beta1") c.adam_beta1 = value.get<double>();
      else if (key == "adam_beta2") c.adam_beta2 = value.get<double>();
      else if (key == "adam_eps") c.adam_eps = value.get<double>();
      else if (key == "seeds") c.seeds = value.get<std::vector<std::uint64_t>>();
      else if (key == "init_scale") c.init_scale = value.get<double>();
      else if (key == "zero_heads") c.zero_heads = value.get<bool>();
      else throw InvalidArgument("train config: unknown key '" + key + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw InvalidArgument(std::string("train config: ") + e.what());
  }
  c.validate();
  return c;
}

void adam_step(AoTParams& params, const AoTParams& grads, AdamState& state, const TrainConfig& cfg,
               bool frozen_heads) {
  auto theta = parameter_tensors(params);
  AoTParams g_copy = grads;
  auto g = parameter_tensors(g_copy);
  AOTMEM_REQUIRE(theta.size() == g.size(), "adam_step: gradient layout differs from parameters");
  const std::size_t total = parameter_size(params);
  if (state.m.empty()) {
    state.m.assign(total, 0.0);
    state.v.assign(total, 0.0);
  }
  AOTMEM_REQUIRE(state.m.size() == total, "adam_step: state size differs from parameters");
  ++state.t;
  const double b1 = cfg.adam_beta1, b2 = cfg.adam_beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(state.t));
  std::size_t off = 0;
  for (std::size_t ti = 0; ti < theta.size(); ++ti) {
    auto p = theta[ti].values;
    auto gr = g[ti].values;
    AOTMEM_REQUIRE(p.size() == gr.size(), "adam_step: tensor shape mismatch");
    if (!(frozen_heads && theta[ti].is_head)) {
      for (std::size_t i = 0; i < p.size(); ++i) {
        double& m = state.m[off + i];
        double& v = state.v[off + i];
        m = b1 * m + (1.0 - b1) * gr[i];
        v = b2 * v + (1.0 - b2) * gr[i] * gr[i];
        p[i] -= cfg.lr * (m / c1) / (std::sqrt(v / c2) + cfg.adam_eps);
      }
    }
    off += p.size();
  }
}

namespace {

struct Sampler {
  const TaskDistribution& task;
  Vector prior_cdf;
  Matrix cond_cdf;
  std::vector<Token> fixed;  // target for one-hot rows, −1 otherwise

  explicit Sampler(const TaskDistribution& t) : task(t), prior_cdf(t.size()), cond_cdf(t.size(), t.N) {
    double acc = 0.0;
    for (std::size_t i = 0; i < t.size(); ++i) prior_cdf[i] = acc += t.prior[i];
    fixed.assign(t.size(), -1);
    for (std::size_t i = 0; i < t.size(); ++i) {
      double c = 0.0;
      for (int j = 0; j < t.N; ++j) {
        const double pj = t.conditionals(i, j);
        if (pj == 1.0) fixed[i] = j;
        cond_cdf(i, j) = c += pj;
      }
    }
  }

  static std::size_t pick(std::span<const double> cdf, double u) {
    const double x = u * cdf.back();
    auto it = std::upper_bound(cdf.begin(), cdf.end(), x);
    return std::min<std::size_t>(static_cast<std::size_t>(it - cdf.begin()), cdf.size() - 1);
  }

  Example draw(Rng& rng) const {
    const std::size_t i = pick(prior_cdf, rng.uniform());
    Example ex;
    ex.tokens = task.support[i];
    ex.target = fixed[i] >= 0 ? fixed[i] : static_cast<Token>(pick(cond_cdf.row(i), rng.uniform()));
    return ex;
  }
};

double safe_accuracy(const TaskDistribution& task, const LogitsFn& fn) {
  try {
    return accuracy(task, fn);
  } catch (const InvalidArgument&) {
    return std::numeric_limits<double>::quiet_NaN();
  }
}

// Expected cross-entropy over the task (KL plus conditional entropy).
double expected_cross_entropy(const TaskDistribution& task, const AoTParams& params) {
  double ent = 0.0;
  for (std::size_t t = 0; t < task.size(); ++t) ent -= task.prior[t] * negentropy(task.conditionals.row(t));
  return kl_divergence(task, model_logits(params)) + ent;
}

}  // namespace

TrainRun train_single(const ModelConfig& config, const TaskDistribution& task, const TrainConfig& cfg,
                      std::uint64_t seed) {
  cfg.validate();
  config.validate();
  task.validate();
  AOTMEM_REQUIRE(config.N == task.N && config.S == task.S, "train: model and task disagree on N or S");
  const auto start = std::chrono::steady_clock::now();

  Rng init_rng = Rng(seed).split(0);
  TrainRun run;
  run.params = init_normal(config, init_rng, cfg.init_scale);
  if (cfg.zero_heads)
    for (auto& h : run.params.heads) h.W_O.fill(0.0);
  run.result.seed = seed;
  run.result.initial_loss = expected_cross_entropy(task, run.params);

  const Sampler sampler(task);
  Rng batch_rng = Rng(seed).split(1);
  AdamState state;
  const double diverged = 10.0 * std::log(static_cast<double>(task.N));
  int over = 0;
  std::vector<Example> batch(cfg.batch_size);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    double loss_sum = 0.0;
    for (int b = 0; b < cfg.batches_per_epoch; ++b) {
      for (auto& ex : batch) ex = sampler.draw(batch_rng);
      const auto merged = compress_batch(batch);
      LossGrad lg = loss_and_grads(run.params, merged);
      if (!std::isfinite(lg.loss))
        throw ComputationError("train: non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                               std::to_string(b));
      over = lg.loss > diverged ? over + 1 : 0;
      if (over >= 20)
        throw ComputationError("train: diverged (loss " + std::to_string(lg.loss) + " > 10·log N for 20 batches)");
      loss_sum += lg.loss;
      adam_step(run.params, lg.grads, state, cfg, cfg.zero_heads);
      ++run.result.steps;
    }
    run.result.loss_curve.push_back(loss_sum / cfg.batches_per_epoch);
    const LogitsFn fn = model_logits(run.params);
    run.result.accuracy_curve.push_back(safe_accuracy(task, fn));
    run.result.kl_curve.push_back(kl_divergence(task, fn));
  }
  run.result.final_accuracy = run.result.accuracy_curve.back();
  run.result.final_kl = run.result.kl_curve.back();
  run.result.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return run;
}

TrainSummary train_model(const ModelConfig& config, const TaskDistribution& task, const TrainConfig& cfg) {
  cfg.validate();
  TrainSummary out;
  for (std::size_t i = 0; i < cfg.seeds.size(); ++i) {
    TrainRun run = train_single(config, task, cfg, cfg.seeds[i]);
    out.mean_accuracy += run.result.final_accuracy;
    out.mean_kl += run.result.final_kl;
    out.runs.push_back(std::move(run.result));
    if (i == 0) out.params = std::move(run.params);
  }
  out.mean_accuracy /= static_cast<double>(cfg.seeds.size());
  out.mean_kl /= static_cast<double>(cfg.seeds.size());
  return out;
}

nlohmann::json train_result_to_json(const TrainResult& r) {
  return {{"seed", r.seed},
          {"initial_loss", r.initial_loss},
          {"loss_curve", r.loss_curve},
          {"accuracy_curve", r.accuracy_curve},
          {"kl_curve", r.kl_curve},
          {"final_accuracy", r.final_accuracy},
          {"final_kl", r.final_kl},
          {"steps", r.steps},
          {"wall_seconds", r.wall_seconds}};
}

}  // namespace aotmem
