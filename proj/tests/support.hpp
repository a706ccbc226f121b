#pragma once

#include <atomic>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "cforge/numerics.hpp"
#include "cforge/rng.hpp"

namespace cforge::testing {

// Removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("cforge_" + tag + "_" + std::to_string(std::random_device{}()) + "_" + std::to_string(counter++));
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

inline std::vector<double> random_vector(Rng& rng, std::size_t n, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(n);
  for (double& x : v) x = rng.uniform(lo, hi);
  return v;
}

// Random biases too, so kinks are not lined up at zero.
inline MlpModel random_mlp(Rng& rng, std::size_t input_dim, const std::vector<LayerSpec>& specs) {
  MlpModel m = MlpModel::initialize(input_dim, specs, rng);
  for (auto& layer : m.mutable_layers()) {
    for (double& b : layer.bias) b = rng.uniform(-0.5, 0.5);
  }
  return m;
}

}  // namespace cforge::testing
