#include "gasnext/metrics.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <random>
#include <sstream>

#include "gasnext/corpus.hpp"
#include "gasnext/error.hpp"
#include <nlohmann/json.hpp>

namespace gasnext {

namespace fs = std::filesystem;
namespace F = torch::nn::functional;

using MatrixRM = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

FeatureAccumulator::FeatureAccumulator(int64_t dim)
    : dim_(dim), mean_(static_cast<size_t>(dim), 0.0), m2_(static_cast<size_t>(dim * dim), 0.0) {}

void FeatureAccumulator::add(std::span<const double> x) {
  if (static_cast<int64_t>(x.size()) != dim_) throw ShapeError("feature vector has the wrong dimension");
  ++count_;
  std::vector<double> delta(x.size());
  const double n = static_cast<double>(count_);
  for (int64_t i = 0; i < dim_; ++i) {
    delta[i] = x[i] - mean_[i];
    mean_[i] += delta[i] / n;
  }
  for (int64_t i = 0; i < dim_; ++i) {
    const double after = x[i] - mean_[i];
    for (int64_t j = 0; j < dim_; ++j) m2_[i * dim_ + j] += delta[j] * after;
  }
}

void FeatureAccumulator::merge(const FeatureAccumulator& other) {
  if (other.dim_ != dim_) throw ShapeError("cannot merge accumulators of different dimension");
  if (other.count_ == 0) return;
  if (count_ == 0) {
    *this = other;
    return;
  }
  const double na = static_cast<double>(count_);
  const double nb = static_cast<double>(other.count_);
  const double n = na + nb;
  std::vector<double> delta(static_cast<size_t>(dim_));
  for (int64_t i = 0; i < dim_; ++i) delta[i] = other.mean_[i] - mean_[i];
  for (int64_t i = 0; i < dim_; ++i) {
    for (int64_t j = 0; j < dim_; ++j) {
      m2_[i * dim_ + j] += other.m2_[i * dim_ + j] + delta[i] * delta[j] * na * nb / n;
    }
    mean_[i] += delta[i] * nb / n;
  }
  count_ += other.count_;
}

FeatureStats FeatureAccumulator::stats() const {
  if (count_ < 2) throw ConfigError("feature statistics need at least 2 images");
  FeatureStats s;
  s.mu = mean_;
  s.count = count_;
  s.cov.resize(m2_.size());
  const double denom = static_cast<double>(count_ - 1);
  // Symmetrize: the running update is only symmetric up to round-off.
  for (int64_t i = 0; i < dim_; ++i) {
    for (int64_t j = 0; j < dim_; ++j) {
      s.cov[i * dim_ + j] = 0.5 * (m2_[i * dim_ + j] + m2_[j * dim_ + i]) / denom;
    }
  }
  return s;
}

namespace {

MatrixRM sqrt_psd(const MatrixRM& m) {
  const MatrixRM sym = 0.5 * (m + m.transpose());
  Eigen::SelfAdjointEigenSolver<MatrixRM> es(sym);
  if (es.info() != Eigen::Success) throw Error("eigendecomposition failed");
  const Eigen::VectorXd roots = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * roots.asDiagonal() * es.eigenvectors().transpose();
}

void check_stats(const FeatureStats& s, const char* which) {
  if (static_cast<int64_t>(s.cov.size()) != s.dim() * s.dim()) {
    throw ShapeError(std::string(which) + " covariance is not dim x dim");
  }
  auto finite = [](double v) { return std::isfinite(v); };
  if (!std::all_of(s.mu.begin(), s.mu.end(), finite) || !std::all_of(s.cov.begin(), s.cov.end(), finite)) {
    throw Error(std::string(which) + " statistics are not finite");
  }
}

}  // namespace

std::vector<double> sqrtm_psd(std::span<const double> matrix, int64_t dim) {
  if (static_cast<int64_t>(matrix.size()) != dim * dim) throw ShapeError("sqrtm_psd: matrix is not dim x dim");
  const MatrixRM m = Eigen::Map<const MatrixRM>(matrix.data(), dim, dim);
  const MatrixRM r = sqrt_psd(m);
  return std::vector<double>(r.data(), r.data() + r.size());
}

double fid(const FeatureStats& x, const FeatureStats& y) {
  if (x.dim() != y.dim()) throw ShapeError("FID: embedding dimensions differ");
  check_stats(x, "first");
  check_stats(y, "second");
  const int64_t d = x.dim();
  const Eigen::Map<const Eigen::VectorXd> mx(x.mu.data(), d), my(y.mu.data(), d);
  const Eigen::Map<const MatrixRM> cx(x.cov.data(), d, d), cy(y.cov.data(), d, d);

  const MatrixRM root_x = sqrt_psd(cx);
  const MatrixRM inner = root_x * cy * root_x;
  Eigen::SelfAdjointEigenSolver<MatrixRM> es(0.5 * (inner + inner.transpose()), Eigen::EigenvaluesOnly);
  if (es.info() != Eigen::Success) throw Error("FID: eigendecomposition failed");
  const double tr_covmean = es.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();

  const double value = (mx - my).squaredNorm() + cx.trace() + cy.trace() - 2.0 * tr_covmean;
  return std::max(value, 0.0);
}

// ---------------------------------------------------------------------------

RandomConvEmbedder::RandomConvEmbedder(uint64_t seed, std::vector<int64_t> widths) : widths_(std::move(widths)) {
  Rng rng(seed ^ 0x9e3779b97f4a7c15ULL);
  int64_t in = 1;
  for (int64_t out : widths_) {
    std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(static_cast<double>(in * 9)));
    std::vector<double> w(static_cast<size_t>(out * in * 9));
    for (auto& v : w) v = normal(rng);
    std::vector<double> b(static_cast<size_t>(out));
    for (auto& v : b) v = 0.1 * normal(rng);
    layers_.emplace_back(torch::tensor(w, torch::kFloat64).view({out, in, 3, 3}), torch::tensor(b, torch::kFloat64));
    in = out;
  }
}

int64_t RandomConvEmbedder::dim() const { return widths_.back(); }

std::vector<double> RandomConvEmbedder::embed(const GlyphImage& image) {
  torch::NoGradGuard no_grad;
  auto h = to_grayscale(image.pixels).to(torch::kFloat64).unsqueeze(0);
  for (size_t i = 0; i < layers_.size(); ++i) {
    if (i > 0) h = F::avg_pool2d(h, F::AvgPool2dFuncOptions(2).ceil_mode(true));
    h = torch::tanh(F::conv2d(h, layers_[i].first, F::Conv2dFuncOptions().bias(layers_[i].second).padding(1)));
  }
  auto pooled = h.mean({2, 3}).squeeze(0).contiguous();
  return std::vector<double>(pooled.data_ptr<double>(), pooled.data_ptr<double>() + pooled.numel());
}

FeatureStats embed_images(std::span<const GlyphImage> images, ImageEmbedder& embedder) {
  if (images.size() < 2) throw ConfigError("embedding statistics need at least 2 images");
  FeatureAccumulator acc(embedder.dim());
  for (const auto& img : images) acc.add(embedder.embed(img));
  return acc.stats();
}

// ---------------------------------------------------------------------------

namespace {

int64_t mirror(int64_t i, int64_t n) {
  // Half-sample symmetric reflection: (d c b a | a b c d | d c b a).
  const int64_t period = 2 * n;
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - 1 - i;
}

std::vector<double> gaussian_filter(std::span<const double> in, int64_t h, int64_t w, const std::vector<double>& taps) {
  const int64_t r = static_cast<int64_t>(taps.size()) / 2;
  std::vector<double> tmp(in.size()), out(in.size());
  for (int64_t y = 0; y < h; ++y) {
    for (int64_t x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int64_t k = -r; k <= r; ++k) acc += taps[k + r] * in[y * w + mirror(x + k, w)];
      tmp[y * w + x] = acc;
    }
  }
  for (int64_t y = 0; y < h; ++y) {
    for (int64_t x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int64_t k = -r; k <= r; ++k) acc += taps[k + r] * tmp[mirror(y + k, h) * w + x];
      out[y * w + x] = acc;
    }
  }
  return out;
}

std::vector<double> plane01(const torch::Tensor& chw, int64_t channel) {
  auto p = ((chw[channel].to(torch::kFloat64) + 1.0) / 2.0).contiguous();
  return std::vector<double>(p.data_ptr<double>(), p.data_ptr<double>() + p.numel());
}

}  // namespace

double ssim(std::span<const double> x, std::span<const double> y, int64_t height, int64_t width,
            const SsimConfig& config) {
  if (x.size() != y.size() || static_cast<int64_t>(x.size()) != height * width) {
    throw ShapeError("SSIM: image shapes differ");
  }
  if (config.window < 1 || config.window % 2 == 0) throw ConfigError("SSIM window must be odd");
  if (height < config.window || width < config.window) throw ShapeError("SSIM: image smaller than the window");

  std::vector<double> taps(static_cast<size_t>(config.window));
  const int64_t r = config.window / 2;
  double total = 0.0;
  for (int64_t i = -r; i <= r; ++i) {
    taps[i + r] = std::exp(-static_cast<double>(i * i) / (2.0 * config.sigma * config.sigma));
    total += taps[i + r];
  }
  for (auto& t : taps) t /= total;

  const size_t n = x.size();
  std::vector<double> xx(n), yy(n), xy(n);
  for (size_t i = 0; i < n; ++i) {
    xx[i] = x[i] * x[i];
    yy[i] = y[i] * y[i];
    xy[i] = x[i] * y[i];
  }
  const auto mx = gaussian_filter(x, height, width, taps);
  const auto my = gaussian_filter(y, height, width, taps);
  const auto exx = gaussian_filter(xx, height, width, taps);
  const auto eyy = gaussian_filter(yy, height, width, taps);
  const auto exy = gaussian_filter(xy, height, width, taps);

  const double np = static_cast<double>(config.window * config.window);
  const double cov_norm = config.sample_covariance ? np / (np - 1.0) : 1.0;
  const double c1 = config.c1();
  const double c2 = config.c2();
  double sum = 0.0;
  int64_t count = 0;
  for (int64_t yy_i = r; yy_i < height - r; ++yy_i) {
    for (int64_t xx_i = r; xx_i < width - r; ++xx_i) {
      const size_t i = static_cast<size_t>(yy_i * width + xx_i);
      const double vx = cov_norm * (exx[i] - mx[i] * mx[i]);
      const double vy = cov_norm * (eyy[i] - my[i] * my[i]);
      const double vxy = cov_norm * (exy[i] - mx[i] * my[i]);
      const double num = (2.0 * (mx[i] * my[i]) + c1) * (2.0 * vxy + c2);
      const double den = (mx[i] * mx[i] + my[i] * my[i] + c1) * (vx + vy + c2);
      sum += num / den;
      ++count;
    }
  }
  return sum / static_cast<double>(count);
}

double ssim(const GlyphImage& x, const GlyphImage& y, const SsimConfig& config) {
  if (!x.pixels.sizes().equals(y.pixels.sizes())) throw ShapeError("SSIM: image shapes differ");
  double acc = 0.0;
  for (int64_t c = 0; c < x.channels(); ++c) {
    acc += ssim(plane01(x.pixels, c), plane01(y.pixels, c), x.height(), x.width(), config);
  }
  return acc / static_cast<double>(x.channels());
}

double pix_acc(std::span<const double> pred, std::span<const double> truth, double threshold) {
  if (pred.size() != truth.size()) throw ShapeError("pix_acc: image shapes differ");
  if (pred.empty()) throw ShapeError("pix_acc: empty images");
  int64_t correct = 0;
  for (size_t i = 0; i < pred.size(); ++i) {
    if ((pred[i] >= threshold) == (truth[i] >= threshold)) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(pred.size());
}

double pix_acc(const GlyphImage& pred, const GlyphImage& truth, double threshold) {
  if (!pred.pixels.sizes().equals(truth.pixels.sizes())) throw ShapeError("pix_acc: image shapes differ");
  return pix_acc(plane01(to_grayscale(pred.pixels), 0), plane01(to_grayscale(truth.pixels), 0), threshold);
}

// ---------------------------------------------------------------------------

MetricReport evaluate_set(const fs::path& generated, const fs::path& truth, const EvalConfig& config,
                          ImageEmbedder& embedder) {
  if (!fs::is_directory(generated)) throw DataError("generated directory not found: " + generated.string());
  if (!fs::is_directory(truth)) throw DataError("truth directory not found: " + truth.string());

  std::vector<fs::path> names;
  for (const auto& entry : fs::recursive_directory_iterator(generated)) {
    if (!entry.is_regular_file() || entry.path().extension() != ".png") continue;
    auto rel = fs::relative(entry.path(), generated);
    if (fs::is_regular_file(truth / rel)) names.push_back(rel);
  }
  std::sort(names.begin(), names.end());
  if (names.empty()) throw DataError("no matching image pairs between '" + generated.string() + "' and '" +
                                     truth.string() + "'");

  MetricReport report;
  std::vector<GlyphImage> gen_images, truth_images;
  for (const auto& rel : names) {
    auto g = load_glyph(generated / rel, 1, rel.string());
    auto t = load_glyph(truth / rel, 1, rel.string());
    if (config.resolution > 0) {
      if (g.height() != config.resolution) g.pixels = resize_square(g.pixels, config.resolution);
      if (t.height() != config.resolution) t.pixels = resize_square(t.pixels, config.resolution);
    }
    PairScore score{rel.generic_string(), ssim(g, t, config.ssim), pix_acc(g, t, config.pix_threshold)};
    report.ssim_mean += score.ssim;
    report.pix_acc_mean += score.pix_acc;
    report.per_pair.push_back(score);
    gen_images.push_back(std::move(g));
    truth_images.push_back(std::move(t));
  }
  report.pairs = static_cast<int64_t>(names.size());
  report.ssim_mean /= static_cast<double>(report.pairs);
  report.pix_acc_mean /= static_cast<double>(report.pairs);
  report.fid = report.pairs >= 2 ? fid(embed_images(gen_images, embedder), embed_images(truth_images, embedder))
                                 : std::numeric_limits<double>::quiet_NaN();
  return report;
}

MetricReport evaluate_set(const fs::path& generated, const fs::path& truth, const EvalConfig& config) {
  RandomConvEmbedder embedder(config.embedder_seed);
  return evaluate_set(generated, truth, config, embedder);
}

std::string report_json(const MetricReport& report) {
  nlohmann::ordered_json j;
  if (std::isfinite(report.fid)) {
    j["fid"] = report.fid;
  } else {
    j["fid"] = nullptr;
  }
  j["ssim_mean"] = report.ssim_mean;
  j["pix_acc_mean"] = report.pix_acc_mean;
  j["pairs"] = report.pairs;
  return j.dump(2);
}

std::string report_table(const MetricReport& report) {
  std::ostringstream out;
  out << std::fixed << std::setprecision(4);
  out << "| pairs | FID | SSIM | pix-acc |\n";
  out << "|------:|----:|-----:|--------:|\n";
  out << "| " << report.pairs << " | ";
  if (std::isfinite(report.fid)) {
    out << report.fid;
  } else {
    out << "n/a";
  }
  out << " | " << report.ssim_mean << " | " << report.pix_acc_mean << " |\n";
  return out.str();
}

void write_report(const fs::path& dir, const MetricReport& report) {
  fs::create_directories(dir);
  std::ofstream(dir / "report.json") << report_json(report) << "\n";
  std::ofstream(dir / "report.txt") << report_table(report);
}

}  // namespace gasnext
