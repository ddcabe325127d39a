#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <random>
#include <string>
#include <unistd.h>
#include <vector>

#include <torch/torch.h>

#include "gasnext/trainer.hpp"

namespace gasnext::testing {

namespace fs = std::filesystem;

/// Scratch directory removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag = "t") {
    static std::atomic<int> counter{0};
    path_ = fs::temp_directory_path() /
            ("gasnext-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const fs::path& path() const { return path_; }
  fs::path operator/(const std::string& rel) const { return path_ / rel; }

 private:
  fs::path path_;
};

inline std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline std::vector<double> to_vector(const torch::Tensor& t) {
  auto c = t.to(torch::kFloat64).contiguous();
  return {c.data_ptr<double>(), c.data_ptr<double>() + c.numel()};
}

/// Scalar contextual similarity, written directly from the definition:
/// d_ij cosine distance, d_hat_ij = d_ij / (min_k d_ik + eps),
/// w_ij = exp((1 - d_hat_ij) / h), CX_ij = w_ij / sum_k w_ik,
/// CX = 1/N sum_j max_i CX_ij.
inline double cx_oracle(const std::vector<std::vector<double>>& x, const std::vector<std::vector<double>>& y, double h,
                        double eps) {
  const size_t n = x.size(), m = y.size();
  std::vector<std::vector<double>> d(n, std::vector<double>(m));
  for (size_t i = 0; i < n; ++i) {
    for (size_t j = 0; j < m; ++j) {
      double dot = 0, nx = 0, ny = 0;
      for (size_t c = 0; c < x[i].size(); ++c) {
        dot += x[i][c] * y[j][c];
        nx += x[i][c] * x[i][c];
        ny += y[j][c] * y[j][c];
      }
      d[i][j] = std::max(0.0, 1.0 - dot / std::max(std::sqrt(nx) * std::sqrt(ny), 1e-8));
    }
  }
  std::vector<std::vector<double>> cx(n, std::vector<double>(m));
  for (size_t i = 0; i < n; ++i) {
    double dmin = d[i][0];
    for (size_t k = 1; k < m; ++k) dmin = std::min(dmin, d[i][k]);
    double total = 0;
    std::vector<double> w(m);
    for (size_t k = 0; k < m; ++k) {
      w[k] = std::exp((1.0 - d[i][k] / (dmin + eps)) / h);
      total += w[k];
    }
    for (size_t j = 0; j < m; ++j) cx[i][j] = w[j] / total;
  }
  double sum = 0;
  for (size_t j = 0; j < m; ++j) {
    double best = cx[0][j];
    for (size_t i = 1; i < n; ++i) best = std::max(best, cx[i][j]);
    sum += best;
  }
  return sum / static_cast<double>(m);
}

/// Small model config for fast tests.
inline ModelConfig tiny_model(int64_t resolution = 16, int64_t channels = 1) {
  ModelConfig c;
  c.generator.resolution = resolution;
  c.generator.channels = channels;
  c.generator.base_width = 4;
  c.generator.style_vector_dim = 8;
  c.generator.max_width = 16;
  c.generator.m_default = 2;
  c.discriminator.resolution = resolution;
  c.discriminator.channels = channels;
  c.discriminator.patch_size = resolution / 2;
  c.discriminator.patches_per_image = 2;
  c.discriminator.base_width = 4;
  c.train.batch_size = 4;
  return c;
}

/// Random [B, m, C, R, R] style stack and [B, C, R, R] content in [-1, 1].
inline StepBatch random_batch(int64_t b, int64_t m, int64_t channels, int64_t resolution, uint64_t seed,
                              torch::Dtype dtype = torch::kFloat32) {
  auto gen = at::detail::createCPUGenerator(seed);
  auto rand = [&](std::vector<int64_t> shape) {
    return (torch::rand(shape, gen, torch::TensorOptions().dtype(torch::kFloat64)) * 2 - 1).to(dtype);
  };
  StepBatch batch;
  batch.content = rand({b, channels, resolution, resolution});
  batch.styles = rand({b, m, channels, resolution, resolution});
  batch.target = rand({b, channels, resolution, resolution});
  batch.target_gray = to_grayscale(batch.target);
  batch.paired = torch::ones({b}, dtype);
  batch.cx_target = batch.target;
  batch.cx_target_gray = batch.target_gray;
  batch.real = batch.target;
  batch.real_gray = batch.target_gray;
  return batch;
}

struct GradCheckResult {
  int checked = 0;
  int failed = 0;
  double worst_relative = 0.0;
  std::string report;
};

/// Compares autograd gradients of `loss` with central differences at
/// `samples` parameter entries drawn uniformly over all entries of `params`.
/// Relative error is |a - n| / max(|a|, |n|, floor); the floor keeps entries
/// whose true gradient is ~0 from dividing round-off by round-off.
inline GradCheckResult gradient_check(const std::vector<torch::Tensor>& params,
                                      const std::function<torch::Tensor()>& loss, int samples, double step,
                                      double tolerance, uint64_t seed, double floor = 1e-6) {
  for (auto p : params) {
    if (p.grad().defined()) p.mutable_grad().zero_();
  }
  loss().backward();
  std::vector<int64_t> sizes;
  int64_t total = 0;
  for (const auto& p : params) {
    sizes.push_back(p.numel());
    total += p.numel();
  }
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int64_t> pick(0, total - 1);
  GradCheckResult result;
  torch::NoGradGuard no_grad;
  for (int s = 0; s < samples; ++s) {
    int64_t flat = pick(rng);
    size_t which = 0;
    while (flat >= sizes[which]) flat -= sizes[which++];
    auto entry = params[which].detach().view(-1);
    // Parameters outside the loss graph have no gradient; the true value is 0.
    const auto& grad = params[which].grad();
    const double analytic = grad.defined() ? grad.view(-1)[flat].item<double>() : 0.0;
    const double original = entry[flat].item<double>();
    entry[flat].fill_(original + step);
    const double up = loss().item<double>();
    entry[flat].fill_(original - step);
    const double down = loss().item<double>();
    entry[flat].fill_(original);
    const double numeric = (up - down) / (2 * step);
    const double rel = std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
    result.worst_relative = std::max(result.worst_relative, rel);
    ++result.checked;
    if (rel > tolerance) {
      ++result.failed;
      result.report += "param " + std::to_string(which) + "[" + std::to_string(flat) +
                       "]: analytic " + std::to_string(analytic) + " numeric " + std::to_string(numeric) + "\n";
    }
  }
  return result;
}

}  // namespace gasnext::testing
