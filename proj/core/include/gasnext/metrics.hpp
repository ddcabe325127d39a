#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "gasnext/image.hpp"

namespace gasnext {

/// Gaussian fit of a set of embedded images. `cov` is row-major dim x dim.
struct FeatureStats {
  std::vector<double> mu;
  std::vector<double> cov;
  int64_t count = 0;

  int64_t dim() const { return static_cast<int64_t>(mu.size()); }
};

/// Streaming mean / covariance (Welford, with Chan's pairwise merge so
/// shards can be accumulated independently).
class FeatureAccumulator {
 public:
  explicit FeatureAccumulator(int64_t dim);
  void add(std::span<const double> x);
  void merge(const FeatureAccumulator& other);
  /// Unbiased covariance; needs at least two samples.
  FeatureStats stats() const;
  int64_t count() const { return count_; }

 private:
  int64_t dim_;
  int64_t count_ = 0;
  std::vector<double> mean_;
  std::vector<double> m2_;  // sum of outer products of deviations
};

/// Square root of a symmetric PSD matrix via eigendecomposition; negative
/// eigenvalues (round-off) are clipped to zero.
std::vector<double> sqrtm_psd(std::span<const double> matrix, int64_t dim);

/// ||mu_x - mu_y||^2 + Tr(C_x + C_y - 2 sqrt(C_x C_y)), clamped at zero.
/// Tr sqrt(C_x C_y) is taken as Tr sqrt(sqrt(C_x) C_y sqrt(C_x)), which is
/// symmetric PSD and has the same eigenvalues.
double fid(const FeatureStats& x, const FeatureStats& y);

class ImageEmbedder {
 public:
  virtual ~ImageEmbedder() = default;
  virtual std::vector<double> embed(const GlyphImage& image) = 0;
  virtual int64_t dim() const = 0;
};

/// Frozen seeded CNN with global average pooling; a deterministic stand-in
/// for the usual pretrained FID network.
class RandomConvEmbedder : public ImageEmbedder {
 public:
  explicit RandomConvEmbedder(uint64_t seed = 0, std::vector<int64_t> widths = {16, 32, 64});
  std::vector<double> embed(const GlyphImage& image) override;
  int64_t dim() const override;

 private:
  std::vector<int64_t> widths_;
  std::vector<std::pair<torch::Tensor, torch::Tensor>> layers_;
};

FeatureStats embed_images(std::span<const GlyphImage> images, ImageEmbedder& embedder);

struct SsimConfig {
  int64_t window = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
  double data_range = 1.0;
  // false: Gaussian-weighted population statistics; true: scale variances
  // by N / (N - 1) with N = window^2.
  bool sample_covariance = false;

  double c1() const { return (k1 * data_range) * (k1 * data_range); }
  double c2() const { return (k2 * data_range) * (k2 * data_range); }
  bool operator==(const SsimConfig&) const = default;
};

/// Mean local SSIM of two single-channel planes (row-major, height x width)
/// using a Gaussian window with reflect boundary; the border of half a
/// window is excluded from the mean.
double ssim(std::span<const double> x, std::span<const double> y, int64_t height, int64_t width,
            const SsimConfig& config);
/// Glyphs are mapped from [-1, 1] to [0, 1] first; multi-channel glyphs are
/// averaged over channels.
double ssim(const GlyphImage& x, const GlyphImage& y, const SsimConfig& config);

/// Fraction of pixels whose binary class agrees; values are on [0, 1] and a
/// pixel is class 1 when value >= threshold.
double pix_acc(std::span<const double> pred, std::span<const double> truth, double threshold = 0.5);
/// Glyphs are converted to gray and mapped to [0, 1] first.
double pix_acc(const GlyphImage& pred, const GlyphImage& truth, double threshold = 0.5);

struct PairScore {
  std::string name;
  double ssim = 0.0;
  double pix_acc = 0.0;
};

struct MetricReport {
  double fid = 0.0;  // NaN when fewer than two pairs
  double ssim_mean = 0.0;
  double pix_acc_mean = 0.0;
  int64_t pairs = 0;
  std::vector<PairScore> per_pair;
};

struct EvalConfig {
  SsimConfig ssim;
  double pix_threshold = 0.5;
  uint64_t embedder_seed = 0;
  int64_t resolution = 0;  // 0 keeps file resolution
};

/// Matches PNGs by relative path under the two directories (recursively).
/// Throws DataError when nothing matches.
MetricReport evaluate_set(const std::filesystem::path& generated, const std::filesystem::path& truth,
                          const EvalConfig& config, ImageEmbedder& embedder);
MetricReport evaluate_set(const std::filesystem::path& generated, const std::filesystem::path& truth,
                          const EvalConfig& config);

/// {"fid": ..., "ssim_mean": ..., "pix_acc_mean": ..., "pairs": ...}
std::string report_json(const MetricReport& report);
std::string report_table(const MetricReport& report);
/// Writes <dir>/report.json and <dir>/report.txt.
void write_report(const std::filesystem::path& dir, const MetricReport& report);

}  // namespace gasnext
