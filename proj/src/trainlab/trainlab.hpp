#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "model/model.hpp"
#include "numkernel/linalg.hpp"
#include "task/task.hpp"

namespace aotmem {

// One training example; `weight` lets duplicated examples be merged.
struct Example {
  TokenSeq tokens;
  Token target = 0;
  double weight = 1.0;
};

struct LossGrad {
  double loss = 0.0;
  AoTParams grads;  // same shapes as the parameters
};

// Weighted mean cross-entropy −log softmax(logits)_target and its exact
// gradient through the attention softmax (and the MLP for that variant).
LossGrad loss_and_grads(const AoTParams& params, std::span<const Example> batch);
double batch_loss(const AoTParams& params, std::span<const Example> batch);

// Merges identical (tokens, target) pairs by summing their weights. Sorted
// by (tokens, target) so the result is deterministic.
std::vector<Example> compress_batch(std::span<const Example> batch);

// Flat views over every parameter tensor in a fixed order: e, pos, per head
// (W_QK | q, k), W_V, W_O, then W_U, mlp.W_1, mlp.W_2.
struct TensorView {
  std::string name;
  std::span<double> values;
  bool is_head = false;
};
std::vector<TensorView> parameter_tensors(AoTParams& params);
std::size_t parameter_size(const AoTParams& params);

struct FiniteDiffReport {
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  std::size_t coordinates = 0;
  std::string worst_tensor;
};

// Central differences on a random subsample of at least `coordinates`
// entries that touches every tensor. Relative error is
// |analytic − numeric| / max(|analytic|, |numeric|, floor).
FiniteDiffReport finite_diff_check(const AoTParams& params, std::span<const Example> batch,
                                   double h, std::size_t coordinates = 256,
                                   std::uint64_t seed = 0, double floor = 1e-6);

struct TrainConfig {
  int batches_per_epoch = 1000;
  int batch_size = 1024;
  int epochs = 10;
  double lr = 1e-3;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  std::vector<std::uint64_t> seeds{0, 1};
  double init_scale = 0.02;
  // Heads keep W_O = 0 and are never updated (the zero-head baseline).
  bool zero_heads = false;

  void validate() const;
  // Reduced budget used by default in sweeps: 3 epochs of 300 batches, lr 1e-2.
  static TrainConfig reduced();
};

nlohmann::json train_config_to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig base = {});

struct AdamState {
  Vector m;
  Vector v;
  std::int64_t t = 0;
};

// In-place Adam with bias correction. `frozen_heads` skips head tensors.
void adam_step(AoTParams& params, const AoTParams& grads, AdamState& state, const TrainConfig& cfg,
               bool frozen_heads = false);

struct TrainResult {
  std::uint64_t seed = 0;
  double initial_loss = 0.0;
  std::vector<double> loss_curve;      // mean batch loss per epoch
  std::vector<double> accuracy_curve;  // exact accuracy after each epoch
  std::vector<double> kl_curve;
  double final_accuracy = 0.0;
  double final_kl = 0.0;
  std::int64_t steps = 0;
  double wall_seconds = 0.0;
};

struct TrainRun {
  AoTParams params;
  TrainResult result;
};

TrainRun train_single(const ModelConfig& config, const TaskDistribution& task, const TrainConfig& cfg,
                      std::uint64_t seed);

struct TrainSummary {
  std::vector<TrainResult> runs;
  double mean_accuracy = 0.0;
  double mean_kl = 0.0;
  AoTParams params;  // from the first seed
};

// One run per seed in cfg.seeds, metrics averaged across seeds.
TrainSummary train_model(const ModelConfig& config, const TaskDistribution& task, const TrainConfig& cfg);

nlohmann::json train_result_to_json(const TrainResult& r);

// ---- sweeps ---------------------------------------------------------------

struct SweepRecord {
  std::string figure_id;
  std::uint64_t seed = 0;
  int N = 0;
  int S = 0;
  int d = 0;
  int d_h = 0;
  int H = 0;
  std::string variant;
  std::int64_t params = 0;
  double final_accuracy = 0.0;
  double final_kl = 0.0;
  double wall_seconds = 0.0;
};

using SweepTable = std::vector<SweepRecord>;

inline constexpr std::string_view kSweepCsvHeader =
    "figure_id,seed,N,S,d,d_h,H,variant,params,final_accuracy,final_kl,wall_seconds";

std::string format_record(const SweepRecord& r);
SweepTable read_sweep_csv(const std::string& path);
void write_sweep_csv(const std::string& path, const SweepTable& table);
// Numeric value of a named column.
double record_field(const SweepRecord& r, std::string_view column);
bool is_numeric_column(std::string_view column);
std::string record_label(const SweepRecord& r, std::string_view column);

struct SweepSpec {
  std::string figure_id;
  int N = 50;
  int S = 2;
  std::uint64_t task_seed = 0;
  std::vector<ModelConfig> configs;
  TrainConfig train;
  int parallelism = 0;  // 0: AOTMEM_THREADS or 1
  bool record_timing = true;

  void validate() const;
};

nlohmann::json sweep_spec_to_json(const SweepSpec& s);
SweepSpec sweep_spec_from_json(const nlohmann::json& j);

// Built-in grids: fig1a, fig1b, fig2a, fig2b, fig3, fig4. `full` restores
// the 10×1000 batch budget (fig4 always uses it).
SweepSpec sweep_preset(std::string_view figure_id, bool full = false);

// MLP width whose raw parameter count matches an AoT config most closely.
int matched_mlp_width(const ModelConfig& aot);

struct SweepOutcome {
  SweepTable rows;  // all rows of the CSV after the run, in grid order
  std::size_t computed = 0;
  std::size_t skipped = 0;
  std::size_t failed = 0;
};

// Runs every (config, seed) pair not already present in csv_path, appending
// rows in grid order. An empty path keeps results in memory only.
SweepOutcome run_sweep(const SweepSpec& spec, const std::string& csv_path);

// ---- fits -----------------------------------------------------------------

struct ScalingFitRequest {
  std::string x_column = "H";
  // "final_accuracy", "capacity" (φ⁻¹ of accuracy) or any numeric column.
  std::string y_column = "final_accuracy";
  FitForm form = FitForm::linear;
  // Group means above this accuracy are dropped (saturated points).
  std::optional<double> max_accuracy;
  std::optional<std::string> figure_id;
  std::optional<std::string> variant;
};

struct ScalingPoint {
  double x = 0.0;
  double y = 0.0;
  double accuracy = 0.0;
  std::size_t count = 0;
};

// Group means of y over rows sharing x, ascending in x.
std::vector<ScalingPoint> scaling_points(const SweepTable& table, const ScalingFitRequest& req);
FitResult fit_scaling_law(const SweepTable& table, const ScalingFitRequest& req);
nlohmann::json fit_result_to_json(const FitResult& fit);

}  // namespace aotmem
