#include "crdnn/channel_sim.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

#include "crdnn/checksum.hpp"
#include "crdnn/error.hpp"
#include "crdnn/kernels.hpp"
#include "crdnn/rng.hpp"

namespace crdnn {

namespace {

ChannelRealization draw_row(const ChannelDistribution& dist, std::uint64_t row) {
  const std::uint64_t c = 3 * row;
  return {rng::exponential_at(dist.seed, c, dist.mean_ss),
          rng::exponential_at(dist.seed, c + 1, dist.mean_sp),
          rng::exponential_at(dist.seed, c + 2, dist.mean_ps)};
}

template <class T>
T to_little(T v) {
  if constexpr (std::endian::native == std::endian::big) {
    auto bytes = std::bit_cast<std::array<unsigned char, sizeof(T)>>(v);
    std::reverse(bytes.begin(), bytes.end());
    return std::bit_cast<T>(bytes);
  } else {
    return v;
  }
}

class ByteWriter {
 public:
  void raw(const void* p, std::size_t n) {
    const auto* b = static_cast<const char*>(p);
    buf_.insert(buf_.end(), b, b + n);
  }
  void u8(std::uint8_t v) { raw(&v, 1); }
  void u64(std::uint64_t v) {
    v = to_little(v);
    raw(&v, 8);
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  const std::vector<char>& bytes() const { return buf_; }

 private:
  std::vector<char> buf_;
};

class ByteReader {
 public:
  ByteReader(const std::vector<char>& buf, std::size_t offset = 0) : buf_(buf), pos_(offset) {}
  std::uint8_t u8() {
    std::uint8_t v;
    std::memcpy(&v, buf_.data() + pos_, 1);
    pos_ += 1;
    return v;
  }
  std::uint64_t u64() {
    std::uint64_t v;
    std::memcpy(&v, buf_.data() + pos_, 8);
    pos_ += 8;
    return to_little(v);
  }
  double f64() { return std::bit_cast<double>(u64()); }

 private:
  const std::vector<char>& buf_;
  std::size_t pos_;
};

std::string describe(const std::filesystem::path& path) { return "'" + path.string() + "'"; }

}  // namespace

void ChannelDistribution::validate() const {
  for (double m : {mean_ss, mean_sp, mean_ps}) {
    require(std::isfinite(m) && m > 0.0, "channel means must be finite and > 0");
  }
}

std::vector<ChannelRealization> sample_ensemble(const ChannelDistribution& dist, std::size_t n) {
  dist.validate();
  require(n >= 1, "sample_ensemble: n must be >= 1");
  std::vector<ChannelRealization> out(n);
  const auto rows = static_cast<std::int64_t>(n);
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < rows; ++i) {
    out[static_cast<std::size_t>(i)] = draw_row(dist, static_cast<std::uint64_t>(i));
  }
  return out;
}

std::vector<ChannelRealization> sample_ensemble_serial(const ChannelDistribution& dist, std::size_t n) {
  dist.validate();
  require(n >= 1, "sample_ensemble: n must be >= 1");
  std::vector<ChannelRealization> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(draw_row(dist, i));
  return out;
}

std::uint64_t Dataset::checksum() const {
  Fnv1a h;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const double row[4] = {inputs[i].g_ss, inputs[i].g_sp, inputs[i].h_ps, targets[i]};
    h.update(row, sizeof row);
  }
  return h.digest();
}

Dataset label_ensemble(std::vector<ChannelRealization> ensemble, const DatasetMeta& meta) {
  meta.duals.validate();
  const auto ens = kernels::prepare(ensemble, meta.params);
  const double eta = meta.kind == PolicyKind::se ? 0.0 : meta.duals.eta;
  const double base = eta * meta.params.zeta + meta.duals.tau;
  if (!(base + meta.duals.mu * ens.min_g_sp > 0.0)) {
    fail(ErrorCode::unbounded_water_level, "label_ensemble: duals leave the water level unbounded");
  }
  Dataset ds;
  ds.targets.resize(ensemble.size());
  kernels::water_fill_all(ens, base, meta.duals.mu, ds.targets);
  ds.inputs = std::move(ensemble);
  ds.meta = meta;
  return ds;
}

Dataset generate_dataset(const ChannelDistribution& dist, std::size_t n, const SystemParams& params,
                         PolicyKind kind, const SolverOptions& opts) {
  params.validate();
  auto ensemble = sample_ensemble(dist, n);
  const auto prepared = kernels::prepare(ensemble, params);
  SolveReport report = solve(kind, prepared, opts);
  if (!report.converged) {
    std::ostringstream os;
    os << to_string(kind) << " solve did not converge after " << report.dual_iterations
       << " dual iterations (power residual " << report.power_residual << ", interference residual "
       << report.interference_residual << ")";
    throw SolverFailure(os.str(), std::move(report));
  }
  DatasetMeta meta{params, kind, report.duals, dist.seed};
  return label_ensemble(std::move(ensemble), meta);
}

void write_dataset(const Dataset& ds, const std::filesystem::path& path) {
  require(ds.inputs.size() == ds.targets.size(), "write_dataset: inputs and targets differ in length");
  ByteWriter w;
  w.raw("CRDS", 4);
  w.u8(kDatasetVersion);
  w.u8(static_cast<std::uint8_t>(ds.meta.kind));
  w.u64(ds.size());
  const auto& p = ds.meta.params;
  for (double v : {p.p_p, p.noise_var, p.zeta, p.p_c, p.p_th, p.p_in}) w.f64(v);
  for (double v : {ds.meta.duals.tau, ds.meta.duals.mu, ds.meta.duals.eta}) w.f64(v);
  w.u64(ds.meta.seed);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    w.f64(ds.inputs[i].g_ss);
    w.f64(ds.inputs[i].g_sp);
    w.f64(ds.inputs[i].h_ps);
    w.f64(ds.targets[i]);
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::io_failure, "cannot open " + describe(path) + " for writing");
  out.write(w.bytes().data(), static_cast<std::streamsize>(w.bytes().size()));
  if (!out) fail(ErrorCode::io_failure, "failed writing " + describe(path));
}

Dataset read_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::io_failure, "cannot open " + describe(path));
  const std::vector<char> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (buf.size() < kDatasetHeaderBytes) {
    fail(ErrorCode::format_mismatch, describe(path) + " is truncated: " + std::to_string(buf.size()) +
                                         " bytes, header needs " + std::to_string(kDatasetHeaderBytes));
  }
  if (std::memcmp(buf.data(), "CRDS", 4) != 0) {
    fail(ErrorCode::format_mismatch, describe(path) + " is not a dataset file (bad magic)");
  }
  ByteReader r(buf, 4);
  const std::uint8_t version = r.u8();
  if (version != kDatasetVersion) {
    fail(ErrorCode::format_mismatch, describe(path) + " has unsupported version " +
                                         std::to_string(version));
  }
  const std::uint8_t kind = r.u8();
  if (kind > 1) fail(ErrorCode::format_mismatch, describe(path) + " has unknown policy kind byte");
  const std::uint64_t rows = r.u64();

  Dataset ds;
  ds.meta.kind = static_cast<PolicyKind>(kind);
  auto& p = ds.meta.params;
  p.p_p = r.f64();
  p.noise_var = r.f64();
  p.zeta = r.f64();
  p.p_c = r.f64();
  p.p_th = r.f64();
  p.p_in = r.f64();
  ds.meta.duals.tau = r.f64();
  ds.meta.duals.mu = r.f64();
  ds.meta.duals.eta = r.f64();
  ds.meta.seed = r.u64();

  const std::size_t body = buf.size() - kDatasetHeaderBytes;
  if (body % kDatasetRowBytes != 0 || body / kDatasetRowBytes != rows) {
    std::ostringstream os;
    os << describe(path) << ": header declares " << rows << " rows but the body holds "
       << body / kDatasetRowBytes << " complete rows";
    if (body % kDatasetRowBytes != 0) os << " plus " << body % kDatasetRowBytes << " stray bytes";
    fail(ErrorCode::format_mismatch, os.str());
  }
  ds.inputs.resize(rows);
  ds.targets.resize(rows);
  for (std::size_t i = 0; i < rows; ++i) {
    ds.inputs[i].g_ss = r.f64();
    ds.inputs[i].g_sp = r.f64();
    ds.inputs[i].h_ps = r.f64();
    ds.targets[i] = r.f64();
  }
  return ds;
}

void write_dataset_csv(const Dataset& ds, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) fail(ErrorCode::io_failure, "cannot open " + describe(path) + " for writing");
  out.precision(17);
  out << "g_ss,g_sp,h_ps,p_opt\n";
  for (std::size_t i = 0; i < ds.size(); ++i) {
    out << ds.inputs[i].g_ss << ',' << ds.inputs[i].g_sp << ',' << ds.inputs[i].h_ps << ','
        << ds.targets[i] << '\n';
  }
  if (!out) fail(ErrorCode::io_failure, "failed writing " + describe(path));
}

}  // namespace crdnn
