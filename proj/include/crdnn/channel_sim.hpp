#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "crdnn/core_model.hpp"
#include "crdnn/error.hpp"
#include "crdnn/oracle_solver.hpp"

namespace crdnn {

/// Rayleigh block fading: each power gain is exponential with its own mean.
struct ChannelDistribution {
  double mean_ss = 1.0;
  double mean_sp = 0.5;
  double mean_ps = 0.5;
  std::uint64_t seed = 1;

  void validate() const;
};

/// Row i of an ensemble consumes counters 3i, 3i+1, 3i+2 of the seed's
/// stream, so the result does not depend on how rows are split across threads.
std::vector<ChannelRealization> sample_ensemble(const ChannelDistribution& dist, std::size_t n);
std::vector<ChannelRealization> sample_ensemble_serial(const ChannelDistribution& dist, std::size_t n);

struct DatasetMeta {
  SystemParams params;
  PolicyKind kind = PolicyKind::se;
  DualState duals;
  std::uint64_t seed = 0;

  bool operator==(const DatasetMeta&) const = default;
};

/// Oracle-labeled training data: gains in, optimal power out.
struct Dataset {
  std::vector<ChannelRealization> inputs;
  std::vector<double> targets;
  DatasetMeta meta;

  std::size_t size() const noexcept { return inputs.size(); }
  std::uint64_t checksum() const;

  bool operator==(const Dataset&) const = default;
};

/// Thrown (as Error with code non_convergence) when the labeling solve
/// fails; `report()` carries the last iterate.
class SolverFailure : public Error {
 public:
  SolverFailure(const std::string& what, SolveReport report)
      : Error(ErrorCode::non_convergence, what), report_(std::move(report)) {}
  const SolveReport& report() const noexcept { return report_; }

 private:
  SolveReport report_;
};

/// Solves the duals once on a fresh ensemble, then labels every row.
Dataset generate_dataset(const ChannelDistribution& dist, std::size_t n, const SystemParams& params,
                         PolicyKind kind, const SolverOptions& opts);

/// Labels an existing ensemble with the given duals.
Dataset label_ensemble(std::vector<ChannelRealization> ensemble, const DatasetMeta& meta);

// Binary layout (little-endian):
//   "CRDS" | u8 version=1 | u8 kind | u64 rows
//   | f64 p_p, noise_var, zeta, p_c, p_th, p_in | f64 tau, mu, eta | u64 seed
//   | rows x (f64 g_ss, g_sp, h_ps, target)
inline constexpr std::uint8_t kDatasetVersion = 1;
inline constexpr std::size_t kDatasetHeaderBytes = 4 + 1 + 1 + 8 + 9 * 8 + 8;
inline constexpr std::size_t kDatasetRowBytes = 4 * 8;

void write_dataset(const Dataset& ds, const std::filesystem::path& path);
Dataset read_dataset(const std::filesystem::path& path);

/// Interop export with header `g_ss,g_sp,h_ps,p_opt`.
void write_dataset_csv(const Dataset& ds, const std::filesystem::path& path);

}  // namespace crdnn
