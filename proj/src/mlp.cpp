#include "crdnn/mlp.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include <nlohmann/json.hpp>

#include "crdnn/checksum.hpp"
#include "crdnn/error.hpp"
#include "crdnn/rng.hpp"

namespace crdnn {

using Eigen::MatrixXd;
using Eigen::RowVectorXd;
using Eigen::VectorXd;
using nlohmann::json;

namespace {

constexpr std::size_t kForwardChunk = 1024;

void check_dims(const std::vector<int>& dims) {
  if (dims.size() < 2 || dims.front() != 3 || dims.back() != 1 ||
      std::any_of(dims.begin(), dims.end(), [](int d) { return d < 1; })) {
    std::ostringstream os;
    os << "invalid layer widths [";
    for (std::size_t i = 0; i < dims.size(); ++i) os << (i ? "," : "") << dims[i];
    os << "]: need 3 inputs, 1 output, all widths >= 1";
    fail(ErrorCode::shape_mismatch, os.str());
  }
}

double feature_map(const InputTransform& t, int k, double x) {
  const double f = t.log ? std::log(std::max(x, InputTransform::kLogFloor)) : x;
  return t.scale[static_cast<std::size_t>(k)] * f + t.shift[static_cast<std::size_t>(k)];
}

std::array<double, 3> as_array(const ChannelRealization& ch) { return {ch.g_ss, ch.g_sp, ch.h_ps}; }

MatrixXd raw_matrix(std::span<const ChannelRealization> inputs) {
  MatrixXd x(3, static_cast<Eigen::Index>(inputs.size()));
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const auto c = static_cast<Eigen::Index>(i);
    x(0, c) = inputs[i].g_ss;
    x(1, c) = inputs[i].g_sp;
    x(2, c) = inputs[i].h_ps;
  }
  return x;
}

void apply_transform(const std::optional<InputTransform>& t, MatrixXd& x) {
  if (!t) return;
  for (Eigen::Index c = 0; c < x.cols(); ++c) {
    for (int k = 0; k < 3; ++k) x(k, c) = feature_map(*t, k, x(k, c));
  }
}

void check_features(const MatrixXd& x) {
  if (!x.allFinite()) fail(ErrorCode::invalid_argument, "network input is not finite");
}

// Activations per layer: acts[0] = features, acts[l+1] = relu(W_l acts[l] + b_l).
void forward_layers(const MlpModel& model, const MatrixXd& features, std::vector<MatrixXd>& acts) {
  const std::size_t layers = model.layer_count();
  acts.resize(layers + 1);
  acts[0] = features;
  for (std::size_t l = 0; l < layers; ++l) {
    acts[l + 1].noalias() = model.weights[l] * acts[l];
    acts[l + 1].colwise() += model.biases[l];
    acts[l + 1] = acts[l + 1].cwiseMax(0.0);
  }
}

double loss_of(const RowVectorXd& y, const RowVectorXd& t) {
  return (y - t).squaredNorm() / (2.0 * static_cast<double>(y.size()));
}

// J and its gradient on one batch of already-transformed features.
double loss_and_gradient(const MlpModel& model, const MatrixXd& features, const RowVectorXd& targets,
                         std::vector<MatrixXd>& acts, Gradients& grads) {
  forward_layers(model, features, acts);
  const std::size_t layers = model.layer_count();
  const RowVectorXd y = acts[layers].row(0);
  const double m = static_cast<double>(targets.size());
  const double loss = loss_of(y, targets);

  grads.weights.resize(layers);
  grads.biases.resize(layers);
  MatrixXd delta = ((y - targets) / m).array() * (y.array() > 0.0).cast<double>();
  for (std::size_t l = layers; l-- > 0;) {
    grads.weights[l].noalias() = delta * acts[l].transpose();
    grads.biases[l] = delta.rowwise().sum();
    if (l > 0) {
      MatrixXd back = model.weights[l].transpose() * delta;
      delta = back.array() * (acts[l].array() > 0.0).cast<double>();
    }
  }
  return loss;
}

RowVectorXd as_row(std::span<const double> v) {
  RowVectorXd r(static_cast<Eigen::Index>(v.size()));
  for (std::size_t i = 0; i < v.size(); ++i) r(static_cast<Eigen::Index>(i)) = v[i];
  return r;
}

void check_batch(std::span<const ChannelRealization> inputs, std::span<const double> targets) {
  require(!inputs.empty(), "batch is empty");
  if (inputs.size() != targets.size()) {
    fail(ErrorCode::shape_mismatch, "batch has " + std::to_string(inputs.size()) + " inputs but " +
                                        std::to_string(targets.size()) + " targets");
  }
}

InputTransform fit_transform(std::span<const ChannelRealization> inputs, bool log) {
  InputTransform t;
  t.log = log;
  const double n = static_cast<double>(inputs.size());
  for (int k = 0; k < 3; ++k) {
    InputTransform identity;
    identity.log = log;
    double sum = 0.0;
    double sum_sq = 0.0;
    for (const auto& ch : inputs) {
      const double f = feature_map(identity, k, as_array(ch)[static_cast<std::size_t>(k)]);
      sum += f;
      sum_sq += f * f;
    }
    const double mean = sum / n;
    const double var = std::max(0.0, sum_sq / n - mean * mean);
    const double scale = var > 0.0 ? 1.0 / std::sqrt(var) : 1.0;
    t.scale[static_cast<std::size_t>(k)] = scale;
    t.shift[static_cast<std::size_t>(k)] = -mean * scale;
  }
  return t;
}

double mean_squared_error(const MlpModel& model, const MatrixXd& features, const RowVectorXd& targets,
                          double output_scale) {
  std::vector<MatrixXd> acts;
  double total = 0.0;
  for (Eigen::Index lo = 0; lo < features.cols(); lo += static_cast<Eigen::Index>(kForwardChunk)) {
    const Eigen::Index cols = std::min<Eigen::Index>(kForwardChunk, features.cols() - lo);
    forward_layers(model, features.middleCols(lo, cols), acts);
    const RowVectorXd y = acts.back().row(0) / output_scale;
    total += (y - targets.segment(lo, cols)).squaredNorm();
  }
  return total / static_cast<double>(features.cols());
}

// -- JSON -------------------------------------------------------------------

json config_to_json(const TrainConfig& c) {
  return {{"batch_size", c.batch_size},         {"learning_rate", c.learning_rate},
          {"epochs", c.epochs},                 {"shuffle_seed", c.shuffle_seed},
          {"eval_every", c.eval_every},         {"holdout_every", c.holdout_every},
          {"lr_decay", c.lr_decay},             {"decay_every_epochs", c.decay_every_epochs},
          {"normalize_inputs", c.normalize_inputs}, {"log_inputs", c.log_inputs},
          {"scale_targets", c.scale_targets}};
}

TrainConfig config_from_json(const json& j) {
  TrainConfig c;
  c.batch_size = j.at("batch_size").get<int>();
  c.learning_rate = j.at("learning_rate").get<double>();
  c.epochs = j.at("epochs").get<int>();
  c.shuffle_seed = j.at("shuffle_seed").get<std::uint64_t>();
  c.eval_every = j.at("eval_every").get<int>();
  c.holdout_every = j.at("holdout_every").get<int>();
  c.lr_decay = j.at("lr_decay").get<double>();
  c.decay_every_epochs = j.at("decay_every_epochs").get<int>();
  c.normalize_inputs = j.at("normalize_inputs").get<bool>();
  c.log_inputs = j.at("log_inputs").get<bool>();
  c.scale_targets = j.at("scale_targets").get<bool>();
  return c;
}

json params_to_json(const SystemParams& p) {
  return {{"p_p", p.p_p}, {"noise_var", p.noise_var}, {"zeta", p.zeta},
          {"p_c", p.p_c}, {"p_th", p.p_th},           {"p_in", p.p_in}};
}

SystemParams params_from_json(const json& j) {
  SystemParams p;
  p.p_p = j.at("p_p").get<double>();
  p.noise_var = j.at("noise_var").get<double>();
  p.zeta = j.at("zeta").get<double>();
  p.p_c = j.at("p_c").get<double>();
  p.p_th = j.at("p_th").get<double>();
  p.p_in = j.at("p_in").get<double>();
  return p;
}

}  // namespace

void TrainConfig::validate() const {
  require(batch_size >= 1, "batch_size must be >= 1");
  require(learning_rate > 0.0 && std::isfinite(learning_rate), "learning_rate must be > 0");
  require(epochs >= 1, "epochs must be >= 1");
  require(eval_every >= 1, "eval_every must be >= 1");
  require(holdout_every >= 1, "holdout_every must be >= 1");
  require(lr_decay > 0.0 && lr_decay <= 1.0, "lr_decay must be in (0, 1]");
  require(decay_every_epochs >= 0, "decay_every_epochs must be >= 0");
}

std::size_t MlpModel::parameter_count() const {
  std::size_t n = 0;
  for (std::size_t l = 0; l < weights.size(); ++l) {
    n += static_cast<std::size_t>(weights[l].size() + biases[l].size());
  }
  return n;
}

std::uint64_t MlpModel::checksum() const {
  Fnv1a h;
  h.update(dims.data(), dims.size() * sizeof(int));
  for (std::size_t l = 0; l < weights.size(); ++l) {
    h.update(weights[l].data(), static_cast<std::size_t>(weights[l].size()) * sizeof(double));
    h.update(biases[l].data(), static_cast<std::size_t>(biases[l].size()) * sizeof(double));
  }
  if (input_transform) {
    h.update(input_transform->scale.data(), 3 * sizeof(double));
    h.update(input_transform->shift.data(), 3 * sizeof(double));
    const unsigned char log = input_transform->log ? 1 : 0;
    h.update(&log, 1);
  }
  return h.digest();
}

void MlpModel::validate() const {
  check_dims(dims);
  if (weights.size() != dims.size() - 1 || biases.size() != dims.size() - 1) {
    fail(ErrorCode::shape_mismatch, "layer count does not match dims");
  }
  for (std::size_t l = 0; l < weights.size(); ++l) {
    if (weights[l].rows() != dims[l + 1] || weights[l].cols() != dims[l] || biases[l].size() != dims[l + 1]) {
      fail(ErrorCode::shape_mismatch, "layer " + std::to_string(l) + " shape does not match dims");
    }
    if (!weights[l].allFinite() || !biases[l].allFinite()) {
      fail(ErrorCode::invalid_argument, "layer " + std::to_string(l) + " has non-finite parameters");
    }
  }
}

MlpModel init_model(const std::vector<int>& dims, std::uint64_t seed) {
  check_dims(dims);
  MlpModel model;
  model.dims = dims;
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    // He initialization: N(0, 2 / fan_in), one stream per layer.
    rng::Stream stream(rng::derive(seed, l));
    const double sd = std::sqrt(2.0 / dims[l]);
    MatrixXd w(dims[l + 1], dims[l]);
    for (Eigen::Index r = 0; r < w.rows(); ++r) {
      for (Eigen::Index c = 0; c < w.cols(); ++c) w(r, c) = sd * stream.next_normal();
    }
    model.weights.push_back(std::move(w));
    model.biases.push_back(VectorXd::Zero(dims[l + 1]));
  }
  return model;
}

MatrixXd model_features(const MlpModel& model, std::span<const ChannelRealization> inputs) {
  MatrixXd x = raw_matrix(inputs);
  check_features(x);
  apply_transform(model.input_transform, x);
  return x;
}

double forward(const MlpModel& model, const std::array<double, 3>& x) {
  VectorXd h(3);
  for (int k = 0; k < 3; ++k) {
    const double v = x[static_cast<std::size_t>(k)];
    if (!std::isfinite(v)) fail(ErrorCode::invalid_argument, "network input is not finite");
    h(k) = model.input_transform ? feature_map(*model.input_transform, k, v) : v;
  }
  for (std::size_t l = 0; l < model.layer_count(); ++l) {
    VectorXd z = model.weights[l] * h + model.biases[l];
    h = z.cwiseMax(0.0);
  }
  return h(0);
}

double forward(const MlpModel& model, const ChannelRealization& x) { return forward(model, as_array(x)); }

std::vector<double> forward_batch(const MlpModel& model, std::span<const ChannelRealization> inputs) {
  std::vector<double> out(inputs.size());
  std::vector<MatrixXd> acts;
  for (std::size_t lo = 0; lo < inputs.size(); lo += kForwardChunk) {
    const std::size_t n = std::min(kForwardChunk, inputs.size() - lo);
    forward_layers(model, model_features(model, inputs.subspan(lo, n)), acts);
    for (std::size_t i = 0; i < n; ++i) out[lo + i] = acts.back()(0, static_cast<Eigen::Index>(i));
  }
  return out;
}

double batch_loss(const MlpModel& model, std::span<const ChannelRealization> inputs,
                  std::span<const double> targets) {
  check_batch(inputs, targets);
  std::vector<MatrixXd> acts;
  forward_layers(model, model_features(model, inputs), acts);
  return loss_of(acts.back().row(0), as_row(targets));
}

Gradients backward(const MlpModel& model, std::span<const ChannelRealization> inputs,
                   std::span<const double> targets) {
  check_batch(inputs, targets);
  std::vector<MatrixXd> acts;
  Gradients grads;
  loss_and_gradient(model, model_features(model, inputs), as_row(targets), acts, grads);
  return grads;
}

void sgd_step(MlpModel& model, const Gradients& grads, double rate) {
  if (grads.weights.size() != model.layer_count() || grads.biases.size() != model.layer_count()) {
    fail(ErrorCode::shape_mismatch, "gradient layer count does not match the model");
  }
  for (std::size_t l = 0; l < model.layer_count(); ++l) {
    if (grads.weights[l].rows() != model.weights[l].rows() ||
        grads.weights[l].cols() != model.weights[l].cols() ||
        grads.biases[l].size() != model.biases[l].size()) {
      fail(ErrorCode::shape_mismatch, "gradient shape does not match layer " + std::to_string(l));
    }
  }
  for (std::size_t l = 0; l < model.layer_count(); ++l) {
    model.weights[l] -= rate * grads.weights[l];
    model.biases[l] -= rate * grads.biases[l];
  }
}

TrainResult train(MlpModel model, const Dataset& data, const TrainConfig& cfg, const Dataset* holdout) {
  cfg.validate();
  model.validate();
  require(data.size() > 0, "train: dataset is empty");
  require(data.inputs.size() == data.targets.size(), "train: dataset inputs and targets differ in length");

  if (cfg.normalize_inputs) {
    model.input_transform = fit_transform(data.inputs, cfg.log_inputs);
  } else {
    model.input_transform.reset();
  }
  const MatrixXd features = model_features(model, data.inputs);
  const Eigen::Index n = features.cols();

  double output_scale = 1.0;
  if (cfg.scale_targets) {
    const double mean = std::accumulate(data.targets.begin(), data.targets.end(), 0.0) / n;
    double var = 0.0;
    for (double t : data.targets) var += (t - mean) * (t - mean);
    var /= static_cast<double>(n);
    if (var > 0.0) output_scale = 1.0 / std::sqrt(var);
  }
  const RowVectorXd targets = as_row(data.targets) * output_scale;

  MatrixXd holdout_features;
  RowVectorXd holdout_targets;
  if (holdout != nullptr && holdout->size() > 0) {
    holdout_features = model_features(model, holdout->inputs);
    holdout_targets = as_row(holdout->targets);
  }

  TrainResult result;
  TrainHistory& history = result.history;
  history.target_scale = output_scale;

  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  rng::Stream shuffle(cfg.shuffle_seed);

  const Eigen::Index m = cfg.batch_size;
  MatrixXd batch_x(3, m);
  RowVectorXd batch_t(m);
  std::vector<MatrixXd> acts;
  Gradients grads;
  double rate = cfg.learning_rate;
  long step = 0;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    if (cfg.decay_every_epochs > 0 && epoch > 0 && epoch % cfg.decay_every_epochs == 0) rate *= cfg.lr_decay;
    for (std::size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1], order[shuffle.next_below(i)]);
    }
    for (Eigen::Index lo = 0; lo < n; lo += m) {
      const Eigen::Index size = std::min(m, n - lo);
      batch_x.resize(3, size);
      batch_t.resize(size);
      for (Eigen::Index j = 0; j < size; ++j) {
        const Eigen::Index src = order[static_cast<std::size_t>(lo + j)];
        batch_x.col(j) = features.col(src);
        batch_t(j) = targets(src);
      }
      const double loss = loss_and_gradient(model, batch_x, batch_t, acts, grads);
      ++step;
      if (!std::isfinite(loss)) {
        std::ostringstream os;
        os << "training diverged at step " << step << " (epoch " << epoch << "): loss is " << loss;
        fail(ErrorCode::training_diverged, os.str());
      }
      if (step % cfg.eval_every == 0) {
        HistoryPoint point;
        point.step = step;
        point.batch_mse = 2.0 * loss / (output_scale * output_scale);
        point.sample_prediction = acts.back()(0, 0) / output_scale;
        point.sample_target = batch_t(0) / output_scale;
        if (holdout_features.cols() > 0 && step % cfg.holdout_every == 0) {
          point.holdout_mse = mean_squared_error(model, holdout_features, holdout_targets, output_scale);
        }
        history.points.push_back(point);
      }
      sgd_step(model, grads, rate);
    }
  }

  // Relu is positively homogeneous, so scaling the last layer rescales the
  // output exactly: the saved model predicts Watts directly.
  model.weights.back() /= output_scale;
  model.biases.back() /= output_scale;
  model.validate();

  if (holdout_features.cols() > 0) {
    history.final_holdout_mse = mean_squared_error(model, holdout_features, holdout_targets, 1.0);
  }
  history.steps = step;
  history.final_checksum = model.checksum();
  result.model = std::move(model);
  return result;
}

// -- model files --------------------------------------------------------------

void save_model(const MlpModel& model, const std::filesystem::path& path) {
  model.validate();
  json j;
  j["format_version"] = kModelFormatVersion;
  j["dims"] = model.dims;
  j["activation"] = "relu_all";
  if (model.input_transform) {
    j["input_transform"] = {{"log", model.input_transform->log},
                            {"scale", model.input_transform->scale},
                            {"shift", model.input_transform->shift}};
  } else {
    j["input_transform"] = nullptr;
  }
  json weights = json::array();
  json biases = json::array();
  for (std::size_t l = 0; l < model.layer_count(); ++l) {
    const auto& w = model.weights[l];
    std::vector<double> flat;
    flat.reserve(static_cast<std::size_t>(w.size()));
    for (Eigen::Index r = 0; r < w.rows(); ++r) {
      for (Eigen::Index c = 0; c < w.cols(); ++c) flat.push_back(w(r, c));
    }
    weights.push_back(flat);
    biases.push_back(std::vector<double>(model.biases[l].data(), model.biases[l].data() + model.biases[l].size()));
  }
  j["weights"] = std::move(weights);
  j["biases"] = std::move(biases);
  if (model.training_meta) {
    const auto& m = *model.training_meta;
    j["training_meta"] = {{"seed", m.init_seed},
                          {"cfg", config_to_json(m.cfg)},
                          {"dataset_checksum", m.dataset_checksum},
                          {"params", params_to_json(m.params)},
                          {"kind", to_string(m.kind)},
                          {"config_checksum", m.config_checksum}};
  } else {
    j["training_meta"] = nullptr;
  }
  std::ofstream out(path, std::ios::trunc);
  if (!out) fail(ErrorCode::io_failure, "cannot open '" + path.string() + "' for writing");
  // nlohmann/json prints doubles with the shortest representation that
  // round-trips, so the file is bit-exact.
  out << j.dump(1) << '\n';
  if (!out) fail(ErrorCode::io_failure, "failed writing '" + path.string() + "'");
}

MlpModel load_model(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::io_failure, "cannot open model file '" + path.string() + "'");
  const std::string where = "model file '" + path.string() + "'";
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    fail(ErrorCode::format_mismatch, where + " is not valid JSON: " + e.what());
  }
  try {
    if (j.at("format_version").get<int>() != kModelFormatVersion) {
      fail(ErrorCode::format_mismatch, where + " has unsupported format_version " +
                                           j.at("format_version").dump());
    }
    if (j.at("activation").get<std::string>() != "relu_all") {
      fail(ErrorCode::format_mismatch, where + " uses an unsupported activation");
    }
    MlpModel model;
    const json& dims = j.at("dims");
    if (!dims.is_array() || !std::all_of(dims.begin(), dims.end(), [](const json& d) { return d.is_number_integer(); })) {
      fail(ErrorCode::shape_mismatch, where + ": dims must be an array of integers");
    }
    model.dims = dims.get<std::vector<int>>();
    check_dims(model.dims);
    const json& weights = j.at("weights");
    const json& biases = j.at("biases");
    if (weights.size() != model.dims.size() - 1 || biases.size() != model.dims.size() - 1) {
      fail(ErrorCode::shape_mismatch, where + ": layer count does not match dims");
    }
    for (std::size_t l = 0; l + 1 < model.dims.size(); ++l) {
      const int rows = model.dims[l + 1];
      const int cols = model.dims[l];
      const auto flat = weights[l].get<std::vector<double>>();
      const auto bias = biases[l].get<std::vector<double>>();
      if (flat.size() != static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols) ||
          bias.size() != static_cast<std::size_t>(rows)) {
        fail(ErrorCode::shape_mismatch, where + ": layer " + std::to_string(l) + " has " +
                                            std::to_string(flat.size()) + " weights, dims imply " +
                                            std::to_string(rows * cols));
      }
      MatrixXd w(rows, cols);
      for (int r = 0; r < rows; ++r) {
        for (int c = 0; c < cols; ++c) w(r, c) = flat[static_cast<std::size_t>(r * cols + c)];
      }
      model.weights.push_back(std::move(w));
      model.biases.push_back(Eigen::Map<const VectorXd>(bias.data(), rows));
    }
    const json& t = j.at("input_transform");
    if (!t.is_null()) {
      InputTransform it;
      it.log = t.value("log", false);
      it.scale = t.at("scale").get<std::array<double, 3>>();
      it.shift = t.at("shift").get<std::array<double, 3>>();
      model.input_transform = it;
    }
    if (j.contains("training_meta") && !j.at("training_meta").is_null()) {
      const json& m = j.at("training_meta");
      TrainingMeta meta;
      meta.init_seed = m.at("seed").get<std::uint64_t>();
      meta.cfg = config_from_json(m.at("cfg"));
      meta.dataset_checksum = m.at("dataset_checksum").get<std::uint64_t>();
      meta.params = params_from_json(m.at("params"));
      meta.kind = parse_policy_kind(m.at("kind").get<std::string>());
      meta.config_checksum = m.value("config_checksum", std::uint64_t{0});
      model.training_meta = meta;
    }
    model.validate();
    return model;
  } catch (const json::exception& e) {
    fail(ErrorCode::format_mismatch, where + " is malformed: " + e.what());
  }
}

MlpModel load_model(const std::filesystem::path& path, const std::vector<int>& expected_dims) {
  MlpModel model = load_model(path);
  if (model.dims != expected_dims) {
    std::ostringstream os;
    os << "model file '" << path.string() << "' has layer widths [";
    for (std::size_t i = 0; i < model.dims.size(); ++i) os << (i ? "," : "") << model.dims[i];
    os << "], expected [";
    for (std::size_t i = 0; i < expected_dims.size(); ++i) os << (i ? "," : "") << expected_dims[i];
    os << "]";
    fail(ErrorCode::shape_mismatch, os.str());
  }
  return model;
}

}  // namespace crdnn
