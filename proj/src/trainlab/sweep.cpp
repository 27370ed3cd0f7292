#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>
#include <tuple>

#include "common/error.hpp"
#include "trainlab/trainlab.hpp"

namespace aotmem {

namespace {

std::string fmt17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

double parse_double(const std::string& s, const char* what) {
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (s.empty() || end != s.c_str() + s.size())
    throw InvalidArgument(std::string("sweep csv: bad number in column ") + what + ": '" + s + "'");
  return v;
}

std::int64_t parse_int(const std::string& s, const char* what) {
  char* end = nullptr;
  const long long v = std::strtoll(s.c_str(), &end, 10);
  if (s.empty() || end != s.c_str() + s.size())
    throw InvalidArgument(std::string("sweep csv: bad integer in column ") + what + ": '" + s + "'");
  return v;
}

using RowKey = std::tuple<std::string, std::uint64_t, int, int, int, int, int, std::string>;

RowKey key_of(const SweepRecord& r) {
  return {r.figure_id, r.seed, r.N, r.S, r.d, r.d_h, r.H, r.variant};
}

int thread_count(int requested) {
  if (requested > 0) return requested;
  if (const char* env = std::getenv("AOTMEM_THREADS")) {
    const int n = std::atoi(env);
    if (n > 0) return n;
  }
  return 1;
}

ModelConfig aot_config(int N, int S, int d, int d_h, int H) {
  return ModelConfig{N, S, d, d_h, H, Variant::aot, 0, QkMode::full};
}

}  // namespace

std::string format_record(const SweepRecord& r) {
  std::ostringstream os;
  os << r.figure_id << ',' << r.seed << ',' << r.N << ',' << r.S << ',' << r.d << ',' << r.d_h << ','
     << r.H << ',' << r.variant << ',' << r.params << ',' << fmt17(r.final_accuracy) << ','
     << fmt17(r.final_kl) << ',' << fmt17(r.wall_seconds);
  return os.str();
}

SweepTable read_sweep_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InvalidArgument("cannot open sweep csv '" + path + "'");
  std::string line;
  if (!std::getline(in, line)) throw InvalidArgument("sweep csv '" + path + "' is empty");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kSweepCsvHeader)
    throw InvalidArgument("sweep csv '" + path + "': unexpected header '" + line + "'");
  SweepTable table;
  while (std::getline(in, line)) {
    if (line.empty() || line == "\r") continue;
    const auto f = split_csv_line(line);
    if (f.size() != 12) throw InvalidArgument("sweep csv: expected 12 fields in '" + line + "'");
    SweepRecord r;
    r.figure_id = f[0];
    r.seed = static_cast<std::uint64_t>(parse_int(f[1], "seed"));
    r.N = static_cast<int>(parse_int(f[2], "N"));
    r.S = static_cast<int>(parse_int(f[3], "S"));
    r.d = static_cast<int>(parse_int(f[4], "d"));
    r.d_h = static_cast<int>(parse_int(f[5], "d_h"));
    r.H = static_cast<int>(parse_int(f[6], "H"));
    r.variant = f[7];
    r.params = parse_int(f[8], "params");
    r.final_accuracy = parse_double(f[9], "final_accuracy");
    r.final_kl = parse_double(f[10], "final_kl");
    r.wall_seconds = parse_double(f[11], "wall_seconds");
    table.push_back(std::move(r));
  }
  return table;
}

void write_sweep_csv(const std::string& path, const SweepTable& table) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw ComputationError("cannot write sweep csv '" + path + "'");
  out << kSweepCsvHeader << '\n';
  for (const auto& r : table) out << format_record(r) << '\n';
}

bool is_numeric_column(std::string_view c) {
  return c == "seed" || c == "N" || c == "S" || c == "d" || c == "d_h" || c == "H" || c == "params" ||
         c == "final_accuracy" || c == "final_kl" || c == "wall_seconds";
}

double record_field(const SweepRecord& r, std::string_view c) {
  if (c == "seed") return static_cast<double>(r.seed);
  if (c == "N") return r.N;
  if (c == "S") return r.S;
  if (c == "d") return r.d;
  if (c == "d_h") return r.d_h;
  if (c == "H") return r.H;
  if (c == "params") return static_cast<double>(r.params);
  if (c == "final_accuracy") return r.final_accuracy;
  if (c == "final_kl") return r.final_kl;
  if (c == "wall_seconds") return r.wall_seconds;
  throw InvalidArgument("unknown numeric column '" + std::string(c) + "'");
}

std::string record_label(const SweepRecord& r, std::string_view c) {
  if (c == "figure_id") return r.figure_id;
  if (c == "variant") return r.variant;
  if (is_numeric_column(c)) return fmt17(record_field(r, c));
  throw InvalidArgument("unknown column '" + std::string(c) + "'");
}

void SweepSpec::validate() const {
  AOTMEM_REQUIRE(!figure_id.empty(), "sweep: figure_id is required");
  AOTMEM_REQUIRE(figure_id.find(',') == std::string::npos, "sweep: figure_id must not contain commas");
  AOTMEM_REQUIRE(N >= 2 && S >= 1, "sweep: need N >= 2 and S >= 1");
  AOTMEM_REQUIRE(!configs.empty(), "sweep: empty grid");
  for (const auto& c : configs) {
    c.validate();
    AOTMEM_REQUIRE(c.N == N && c.S == S, "sweep: every config must share the sweep N and S");
  }
  train.validate();
  AOTMEM_REQUIRE(parallelism >= 0, "sweep: parallelism must be nonnegative");
}

nlohmann::json sweep_spec_to_json(const SweepSpec& s) {
  nlohmann::json grid = nlohmann::json::array();
  for (const auto& c : s.configs)
    grid.push_back({{"d", c.d},
                    {"d_h", c.d_h},
                    {"H", c.H},
                    {"variant", std::string(to_string(c.variant))},
                    {"mlp_width", c.mlp_width},
                    {"qk_mode", std::string(to_string(c.qk_mode))}});
  return {{"figure_id", s.figure_id}, {"N", s.N},
          {"S", s.S},                 {"task_seed", s.task_seed},
          {"grid", grid},             {"train", train_config_to_json(s.train)},
          {"parallelism", s.parallelism}, {"record_timing", s.record_timing}};
}

SweepSpec sweep_spec_from_json(const nlohmann::json& j) {
  AOTMEM_REQUIRE(j.is_object(), "sweep spec must be a JSON object");
  SweepSpec s;
  try {
    std::optional<SweepSpec> base;
    if (j.contains("preset")) {
      base = sweep_preset(j.at("preset").get<std::string>(), j.value("full", false));
      s = *base;
    }
    for (const auto& [key, value] : j.items()) {
      if (key == "preset" || key == "full") continue;
      if (key == "figure_id") s.figure_id = value.get<std::string>();
      else if (key == "N") s.N = value.get<int>();
      else if (key == "S") s.S = value.get<int>();
      else if (key == "task_seed") s.task_seed = value.get<std::uint64_t>();
      else if (key == "train") s.train = train_config_from_json(value, s.train);
      else if (key == "parallelism") s.parallelism = value.get<int>();
      else if (key == "record_timing") s.record_timing = value.get<bool>();
      else if (key == "grid") {
        s.configs.clear();
        for (const auto& g : value) {
          ModelConfig c;
          for (const auto& [gk, gv] : g.items()) {
            if (gk == "d") c.d = gv.get<int>();
            else if (gk == "d_h") c.d_h = gv.get<int>();
            else if (gk == "H") c.H = gv.get<int>();
            else if (gk == "variant") c.variant = parse_variant(gv.get<std::string>());
            else if (gk == "mlp_width") c.mlp_width = gv.get<int>();
            else if (gk == "qk_mode") c.qk_mode = parse_qk_mode(gv.get<std::string>());
            else throw InvalidArgument("sweep grid: unknown key '" + gk + "'");
          }
          s.configs.push_back(c);
        }
      } else {
        throw InvalidArgument("sweep spec: unknown key '" + key + "'");
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw InvalidArgument(std::string("sweep spec: ") + e.what());
  }
  for (auto& c : s.configs) {
    c.N = s.N;
    c.S = s.S;
  }
  s.validate();
  return s;
}

int matched_mlp_width(const ModelConfig& aot) {
  ModelConfig m = aot;
  m.variant = Variant::mlp_based;
  m.H = 1;
  m.d_h = aot.d;
  m.mlp_width = 1;
  const auto at1 = param_count(m, ParamFormula::raw);
  m.mlp_width = 2;
  const auto per_unit = param_count(m, ParamFormula::raw) - at1;
  const double target = static_cast<double>(param_count(aot, ParamFormula::raw));
  const double w = 1.0 + (target - static_cast<double>(at1)) / static_cast<double>(per_unit);
  return std::max(1, static_cast<int>(std::lround(w)));
}

SweepSpec sweep_preset(std::string_view id, bool full) {
  SweepSpec s;
  s.figure_id = std::string(id);
  s.train = full ? TrainConfig{} : TrainConfig::reduced();
  if (id == "fig1a") {
    for (int H : {1, 5, 10, 15, 20}) s.configs.push_back(aot_config(50, 2, 10, 10, H));
  } else if (id == "fig1b") {
    for (int dh = 1; dh <= 10; ++dh) s.configs.push_back(aot_config(50, 2, 10, dh, 20));
  } else if (id == "fig2a") {
    for (int d : {2, 4, 6, 8, 10, 15, 20, 30}) s.configs.push_back(aot_config(50, 2, d, 10, 20));
  } else if (id == "fig2b") {
    for (int d : {2, 4, 6, 8, 10})
      for (int H : {1, 5, 10, 15, 20}) s.configs.push_back(aot_config(50, 2, d, d, H));
  } else if (id == "fig3") {
    for (int H : {2, 5, 10, 20}) {
      const ModelConfig a = aot_config(50, 2, 10, 10, H);
      ModelConfig m = a;
      m.variant = Variant::mlp_based;
      m.H = 1;
      m.mlp_width = matched_mlp_width(a);
      s.configs.push_back(a);
      s.configs.push_back(m);
    }
  } else if (id == "fig4") {
    s.N = 10;
    s.train = TrainConfig{};
    for (int H = 1; H <= 20; ++H) s.configs.push_back(aot_config(10, 2, 2, 5, H));
  } else {
    throw InvalidArgument("unknown sweep preset '" + std::string(id) +
                          "' (expected fig1a, fig1b, fig2a, fig2b, fig3 or fig4)");
  }
  return s;
}

SweepOutcome run_sweep(const SweepSpec& spec, const std::string& csv_path) {
  spec.validate();
  const TaskDistribution task = make_association_task(spec.N, spec.S, spec.task_seed);

  SweepTable existing;
  std::set<RowKey> done;
  const bool to_file = !csv_path.empty();
  if (to_file && std::filesystem::exists(csv_path)) {
    existing = read_sweep_csv(csv_path);
    for (const auto& r : existing) done.insert(key_of(r));
  } else if (to_file) {
    write_sweep_csv(csv_path, {});
  }

  struct Job {
    ModelConfig config;
    std::uint64_t seed;
    SweepRecord record;
  };
  std::vector<Job> jobs;
  SweepOutcome outcome;
  for (const auto& c : spec.configs)
    for (std::uint64_t seed : spec.train.seeds) {
      SweepRecord r;
      r.figure_id = spec.figure_id;
      r.seed = seed;
      r.N = c.N;
      r.S = c.S;
      r.d = c.d;
      r.d_h = c.d_h;
      r.H = c.H;
      r.variant = std::string(to_string(c.variant));
      r.params = param_count(c, ParamFormula::raw);
      if (done.count(key_of(r))) {
        ++outcome.skipped;
        continue;
      }
      jobs.push_back({c, seed, r});
    }

  std::vector<bool> finished(jobs.size(), false);
  std::size_t flushed = 0;
  std::mutex mu;
  std::atomic<std::size_t> next{0};
  TrainConfig single = spec.train;

  auto worker = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= jobs.size()) return;
      Job& job = jobs[i];
      bool failed = false;
      try {
        const TrainRun run = train_single(job.config, task, single, job.seed);
        job.record.final_accuracy = run.result.final_accuracy;
        job.record.final_kl = run.result.final_kl;
        job.record.wall_seconds = spec.record_timing ? run.result.wall_seconds : 0.0;
      } catch (const std::exception& e) {
        failed = true;
        job.record.final_accuracy = std::nan("");
        job.record.final_kl = std::nan("");
        job.record.wall_seconds = 0.0;
        std::lock_guard<std::mutex> lock(mu);
        std::cerr << "sweep: run " << format_record(job.record) << " failed: " << e.what() << '\n';
      }
      std::lock_guard<std::mutex> lock(mu);
      finished[i] = true;
      if (failed) ++outcome.failed;
      ++outcome.computed;
      if (to_file) {
        std::ofstream out(csv_path, std::ios::app);
        while (flushed < jobs.size() && finished[flushed]) out << format_record(jobs[flushed++].record) << '\n';
      }
    }
  };

  const int threads = std::min<int>(thread_count(spec.parallelism), static_cast<int>(std::max<std::size_t>(1, jobs.size())));
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }

  outcome.rows = existing;
  for (const auto& j : jobs) outcome.rows.push_back(j.record);
  return outcome;
}

}  // namespace aotmem
