#pragma once

// Finite-difference helpers shared by the unit and acceptance suites.

#include "bpgpt/autograd.hpp"
#include "bpgpt/nn.hpp"

#include <algorithm>
#include <atomic>
#include <filesystem>
#include <fstream>
#include <string>
#include <functional>
#include <random>
#include <vector>

#include <unistd.h>

namespace bpgpt::testing {

using ag::Matrix;
using ag::Var;

// Central-difference gradient of a scalar function with respect to one
// tensor, evaluated without building graphs.
inline Matrix numeric_gradient(const std::function<double()>& f, Var param, double eps = 1e-5) {
  Matrix& m = param.mutable_value();
  Matrix g(m.rows(), m.cols());
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    const double orig = m.data()[i];
    m.data()[i] = orig + eps;
    const double up = f();
    m.data()[i] = orig - eps;
    const double down = f();
    m.data()[i] = orig;
    g.data()[i] = (up - down) / (2.0 * eps);
  }
  return g;
}

// ||analytic - numeric|| / max(||analytic||, ||numeric||), worst over the
// given tensors. Analytic gradients come from one backward pass.
inline double gradient_check(const std::function<Var()>& loss_fn, std::vector<Var> params,
                             double eps = 1e-5) {
  for (auto& p : params) p.zero_grad();
  Var loss = loss_fn();
  ag::backward(loss);
  std::vector<Matrix> analytic;
  for (auto& p : params) analytic.push_back(p.grad());
  auto value = [&] {
    ag::NoGradGuard guard;
    return loss_fn().scalar();
  };
  double worst = 0.0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    Matrix numeric = numeric_gradient(value, params[i], eps);
    double scale = std::max(analytic[i].norm(), numeric.norm());
    if (scale < 1e-12) continue;
    worst = std::max(worst, (analytic[i] - numeric).norm() / scale);
  }
  return worst;
}

inline Matrix random_matrix(Eigen::Index r, Eigen::Index c, std::mt19937_64& rng, double sd = 1.0) {
  std::normal_distribution<double> d(0.0, sd);
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = d(rng);
  return m;
}

inline std::vector<Var> all_params(const nn::ParameterSet& set) {
  std::vector<Var> out;
  for (const auto& p : set.items()) out.push_back(p.var);
  return out;
}

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("bpgpt-test-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
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

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream(path) << text;
}

inline std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

}  // namespace bpgpt::testing
