#pragma once

// Run configuration and the file-producing pipeline stages behind the CLI:
// gen -> train -> eval, plus solve, bench and curves.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "crdnn/channel_sim.hpp"
#include "crdnn/eval_bench.hpp"
#include "crdnn/mlp.hpp"
#include "crdnn/oracle_solver.hpp"

namespace crdnn {

struct RunConfig {
  SystemParams system;
  ChannelDistribution channel;  // seed field unused; ensembles use derived seeds
  SolverOptions solver;
  TrainConfig train;            // shuffle_seed unused; derived from `seed`
  std::vector<int> hidden = {200, 200, 200};
  std::size_t n_train = 100000;
  std::size_t n_test = 1000;
  std::vector<double> sweep = {0.01, 0.02, 0.03, 0.04, 0.05, 0.06};
  std::filesystem::path out = "out";
  std::uint64_t seed = 1;
  int threads = 0;  // 0: runtime default
  int repetitions = 5;
  bool posthoc_scaling = false;

  /// All component invariants plus a strictly increasing, non-empty sweep.
  void validate() const;

  std::vector<int> dims() const;
  SystemParams params_at(double p_in) const;
  ChannelDistribution train_distribution() const;
  ChannelDistribution test_distribution() const;
  TrainConfig train_config() const;
  std::uint64_t init_seed() const;
  EvalOptions eval_options() const;
};

nlohmann::json to_json(const RunConfig& cfg);

/// Overlays `j` onto `base`. Unknown keys and wrong types are invalid_argument.
RunConfig apply_json(const nlohmann::json& j, RunConfig base = {});
RunConfig load_config(const std::filesystem::path& path);

/// Checksum over every field that can change a produced number
/// (excludes `out` and `threads`).
std::uint64_t config_checksum(const RunConfig& cfg);

/// "0.01" style tag used in file names.
std::string point_tag(double p_in);

namespace layout {
std::filesystem::path dataset(const RunConfig& cfg, PolicyKind kind, double p_in);
std::filesystem::path model(const RunConfig& cfg, PolicyKind kind, double p_in);
std::filesystem::path history(const RunConfig& cfg, PolicyKind kind, double p_in);
std::filesystem::path curves(const RunConfig& cfg, PolicyKind kind, double p_in);
std::filesystem::path report_csv(const RunConfig& cfg, PolicyKind kind);
std::filesystem::path report_json(const RunConfig& cfg, PolicyKind kind);
std::filesystem::path bench_csv(const RunConfig& cfg, PolicyKind kind);
/// `<file>.meta.json`
std::filesystem::path sidecar(const std::filesystem::path& file);
}  // namespace layout

/// Timestamp, RNG id, seed and config checksum for a produced file.
nlohmann::json provenance(const RunConfig& cfg, const std::string& stage);
void write_json(const nlohmann::json& j, const std::filesystem::path& path);

nlohmann::json report_to_json(const SolveReport& report, const RunConfig& cfg);

// Stages. Each writes under cfg.out and logs one line per produced file.
SolveReport run_solve(const RunConfig& cfg, PolicyKind kind);
void run_gen(const RunConfig& cfg, PolicyKind kind, bool also_csv, std::ostream& log);
void run_train(const RunConfig& cfg, PolicyKind kind, std::ostream& log);
EvalReport run_eval(const RunConfig& cfg, PolicyKind kind, std::ostream& log);
void run_bench(const RunConfig& cfg, PolicyKind kind, std::ostream& log);
void run_curves(const RunConfig& cfg, PolicyKind kind, int sample_every, std::ostream& log);

}  // namespace crdnn
