#pragma once

#include <unistd.h>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "crdnn/core_model.hpp"
#include "crdnn/rng.hpp"

namespace testing {

inline crdnn::ChannelRealization random_channel(crdnn::rng::Stream& s, double scale = 2.0) {
  return {scale * s.next_uniform(), scale * s.next_uniform(), scale * s.next_uniform()};
}

inline crdnn::DualState random_duals(crdnn::rng::Stream& s, bool with_eta = false) {
  // Log-uniform in [1e-2, 1e2] so both clipped and unclipped regimes occur.
  auto lu = [&] { return std::pow(10.0, -2.0 + 4.0 * s.next_uniform()); };
  return {lu(), lu(), with_eta ? lu() : 0.0};
}

inline crdnn::SystemParams random_params(crdnn::rng::Stream& s) {
  crdnn::SystemParams p;
  p.p_p = 0.1 * s.next_uniform();
  p.noise_var = 0.001 + 0.05 * s.next_uniform();
  p.zeta = 0.05 + 0.5 * s.next_uniform();
  p.p_c = 0.01 + 0.1 * s.next_uniform();
  p.p_th = 0.02 + 0.2 * s.next_uniform();
  p.p_in = 0.005 + 0.1 * s.next_uniform();
  return p;
}

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("crdnn_test_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

}  // namespace testing
