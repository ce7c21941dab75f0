#pragma once

// Fully connected ReLU network mapping the three channel gains to a
// transmit power, trained by plain mini-batch gradient descent on
// J = 1/(2M) * sum (y_m - target_m)^2.

#include <Eigen/Dense>

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "crdnn/channel_sim.hpp"
#include "crdnn/core_model.hpp"

namespace crdnn {

inline constexpr int kModelFormatVersion = 1;
inline const std::vector<int> kDefaultDims = {3, 200, 200, 200, 1};

/// Per-feature input map applied before the first layer:
/// z_k = scale_k * f(x_k) + shift_k, with f = ln(max(x, floor)) when `log`.
struct InputTransform {
  bool log = true;
  std::array<double, 3> scale{1.0, 1.0, 1.0};
  std::array<double, 3> shift{0.0, 0.0, 0.0};

  static constexpr double kLogFloor = 1e-12;

  bool operator==(const InputTransform&) const = default;
};

struct TrainConfig {
  int batch_size = 128;
  double learning_rate = 1e-3;
  int epochs = 20;
  std::uint64_t shuffle_seed = 1;
  int eval_every = 1;        // steps between recorded batch-MSE points
  int holdout_every = 500;   // steps between held-out evaluations (if a holdout set is given)
  double lr_decay = 1.0;     // multiply the rate by this every `decay_every_epochs`
  int decay_every_epochs = 0;
  bool normalize_inputs = true;  // fit an InputTransform on the training inputs
  bool log_inputs = true;        // ... in log-gain space
  bool scale_targets = true;     // train on targets / std(targets), fold back afterwards

  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

struct TrainingMeta {
  std::uint64_t init_seed = 0;
  TrainConfig cfg;
  std::uint64_t dataset_checksum = 0;
  SystemParams params;
  PolicyKind kind = PolicyKind::se;
  std::uint64_t config_checksum = 0;

  bool operator==(const TrainingMeta&) const = default;
};

struct MlpModel {
  std::vector<int> dims;
  std::vector<Eigen::MatrixXd> weights;  // layer l: dims[l+1] x dims[l]
  std::vector<Eigen::VectorXd> biases;
  std::optional<InputTransform> input_transform;
  std::optional<TrainingMeta> training_meta;

  std::size_t layer_count() const noexcept { return weights.size(); }
  std::size_t parameter_count() const;
  std::uint64_t checksum() const;
  /// Shape consistency and finiteness; throws shape_mismatch / invalid_argument.
  void validate() const;
};

struct Gradients {
  std::vector<Eigen::MatrixXd> weights;
  std::vector<Eigen::VectorXd> biases;
};

struct HistoryPoint {
  long step = 0;
  double batch_mse = 0.0;  // W^2, batch used at this step, before the update
  std::optional<double> holdout_mse;
  double sample_prediction = 0.0;  // first example of the batch
  double sample_target = 0.0;
};

struct TrainHistory {
  std::vector<HistoryPoint> points;
  std::uint64_t final_checksum = 0;
  std::optional<double> final_holdout_mse;
  double target_scale = 1.0;
  long steps = 0;
};

struct TrainResult {
  MlpModel model;
  TrainHistory history;
};

MlpModel init_model(const std::vector<int>& dims, std::uint64_t seed);

/// Input features (3 x n) after the model's input transform.
Eigen::MatrixXd model_features(const MlpModel& model, std::span<const ChannelRealization> inputs);

double forward(const MlpModel& model, const ChannelRealization& x);
double forward(const MlpModel& model, const std::array<double, 3>& x);
std::vector<double> forward_batch(const MlpModel& model, std::span<const ChannelRealization> inputs);

double batch_loss(const MlpModel& model, std::span<const ChannelRealization> inputs,
                  std::span<const double> targets);

/// Exact gradient of batch_loss by reverse accumulation. ReLU'(0) = 0.
Gradients backward(const MlpModel& model, std::span<const ChannelRealization> inputs,
                   std::span<const double> targets);

/// theta <- theta - rate * grad, in place.
void sgd_step(MlpModel& model, const Gradients& grads, double rate);

/// Mini-batch gradient descent. `holdout` (optional) feeds the held-out MSE
/// points in the history. Deterministic given the model, data and config.
TrainResult train(MlpModel model, const Dataset& data, const TrainConfig& cfg,
                  const Dataset* holdout = nullptr);

void save_model(const MlpModel& model, const std::filesystem::path& path);
MlpModel load_model(const std::filesystem::path& path);
/// As above, and rejects a file whose layer widths differ from `expected_dims`.
MlpModel load_model(const std::filesystem::path& path, const std::vector<int>& expected_dims);

}  // namespace crdnn
