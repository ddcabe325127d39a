#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <random>

#include "gasnext/error.hpp"
#include "gasnext/image.hpp"
#include "gasnext/metrics.hpp"
#include "support.hpp"

using namespace gasnext;
using gasnext::testing::TempDir;
namespace fs = std::filesystem;

namespace {

FeatureStats stats_of(std::vector<double> mu, std::vector<double> cov) {
  FeatureStats s;
  s.mu = std::move(mu);
  s.cov = std::move(cov);
  s.count = 10;
  return s;
}

std::vector<double> random_psd(int64_t d, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0, 1);
  std::vector<double> a(static_cast<size_t>(d * d)), c(static_cast<size_t>(d * d), 0.0);
  for (auto& v : a) v = n(rng);
  for (int64_t i = 0; i < d; ++i) {
    for (int64_t j = 0; j < d; ++j) {
      for (int64_t k = 0; k < d; ++k) c[i * d + j] += a[i * d + k] * a[j * d + k];
    }
  }
  return c;
}

// Two smooth test planes on [0, 1].
void planes(int64_t h, int64_t w, std::vector<double>& a, std::vector<double>& b) {
  a.clear();
  b.clear();
  for (int64_t y = 0; y < h; ++y) {
    for (int64_t x = 0; x < w; ++x) {
      const double av = (std::sin(0.3 * x + 0.2 * y) + 1) / 2;
      a.push_back(av);
      b.push_back((std::cos(0.25 * x - 0.4 * y) * 0.5 + 0.5) * 0.8 + 0.1 * av);
    }
  }
}

GlyphImage glyph(const torch::Tensor& t) { return {t, ""}; }

}  // namespace

TEST(Fid, IdenticalStatsIsZero) {
  std::mt19937_64 rng(1);
  auto s = stats_of({0.5, -1.0, 2.0}, random_psd(3, rng));
  EXPECT_NEAR(fid(s, s), 0.0, 1e-6);
}

TEST(Fid, OneDimensionalClosedForm) {
  // (0 - 1)^2 + (1 + 1 - 2 sqrt(1 * 1)) = 1
  EXPECT_NEAR(fid(stats_of({0.0}, {1.0}), stats_of({1.0}, {1.0})), 1.0, 1e-9);
}

TEST(Fid, CommutingDiagonals) {
  // Tr(Cx) + Tr(Cy) - 2 Tr(sqrt(diag(4, 4))) = 5 + 5 - 2 * (2 + 2)
  EXPECT_NEAR(fid(stats_of({0, 0}, {1, 0, 0, 4}), stats_of({0, 0}, {4, 0, 0, 1})), 2.0, 1e-9);
}

TEST(Fid, Symmetric) {
  std::mt19937_64 rng(2);
  for (int t = 0; t < 10; ++t) {
    auto a = stats_of({0.1, 0.2, 0.3, 0.4}, random_psd(4, rng));
    auto b = stats_of({0.0, -0.2, 0.5, 0.1}, random_psd(4, rng));
    EXPECT_NEAR(fid(a, b), fid(b, a), 1e-6);
    EXPECT_GE(fid(a, b), 0.0);
  }
}

TEST(Fid, Errors) {
  EXPECT_THROW(fid(stats_of({0.0}, {1.0}), stats_of({0.0, 0.0}, {1, 0, 0, 1})), ShapeError);
  EXPECT_THROW(fid(stats_of({std::nan("")}, {1.0}), stats_of({0.0}, {1.0})), Error);
  EXPECT_THROW(fid(stats_of({0.0}, {std::numeric_limits<double>::infinity()}), stats_of({0.0}, {1.0})), Error);
}

TEST(Sqrtm, SquaresBack) {
  std::mt19937_64 rng(3);
  for (int64_t d : {1, 2, 5, 16, 64}) {
    auto c = random_psd(d, rng);
    auto r = sqrtm_psd(c, d);
    double err = 0, norm = 0;
    for (int64_t i = 0; i < d; ++i) {
      for (int64_t j = 0; j < d; ++j) {
        double rr = 0;
        for (int64_t k = 0; k < d; ++k) rr += r[i * d + k] * r[k * d + j];
        err += (rr - c[i * d + j]) * (rr - c[i * d + j]);
        norm += c[i * d + j] * c[i * d + j];
      }
    }
    EXPECT_LE(std::sqrt(err / norm), 1e-5) << "dim " << d;
  }
}

TEST(Sqrtm, ClipsRoundOffNegatives) {
  auto r = sqrtm_psd(std::vector<double>{1.0, 0.0, 0.0, -1e-14}, 2);
  EXPECT_DOUBLE_EQ(r[0], 1.0);
  EXPECT_DOUBLE_EQ(r[3], 0.0);
}

TEST(FeatureAccumulator, StreamingMatchesTwoPass) {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> n(3.0, 2.0);
  const int64_t d = 5, count = 40;
  std::vector<std::vector<double>> xs(count, std::vector<double>(d));
  for (auto& x : xs) {
    for (auto& v : x) v = n(rng);
  }
  FeatureAccumulator acc(d), left(d), right(d);
  for (int64_t i = 0; i < count; ++i) {
    acc.add(xs[i]);
    (i < 13 ? left : right).add(xs[i]);
  }
  left.merge(right);
  // Two-pass oracle.
  std::vector<double> mu(d, 0.0), cov(d * d, 0.0);
  for (const auto& x : xs) {
    for (int64_t i = 0; i < d; ++i) mu[i] += x[i] / count;
  }
  for (const auto& x : xs) {
    for (int64_t i = 0; i < d; ++i) {
      for (int64_t j = 0; j < d; ++j) cov[i * d + j] += (x[i] - mu[i]) * (x[j] - mu[j]) / (count - 1);
    }
  }
  for (const auto* s : {&acc, &left}) {
    auto st = s->stats();
    EXPECT_EQ(st.count, count);
    for (int64_t i = 0; i < d; ++i) EXPECT_NEAR(st.mu[i], mu[i], 1e-6);
    for (int64_t i = 0; i < d * d; ++i) EXPECT_NEAR(st.cov[i], cov[i], 1e-6);
  }
}

TEST(FeatureAccumulator, NeedsTwoSamples) {
  FeatureAccumulator acc(2);
  acc.add(std::vector<double>{1.0, 2.0});
  EXPECT_THROW(acc.stats(), ConfigError);
  EXPECT_THROW(acc.add(std::vector<double>{1.0}), ShapeError);
}

TEST(EmbedImages, DuplicatesHaveZeroCovariance) {
  RandomConvEmbedder e(0);
  GlyphImage img = glyph(torch::rand({1, 16, 16}) * 2 - 1);
  std::vector<GlyphImage> set(4, img);
  auto s = embed_images(set, e);
  for (double v : s.cov) EXPECT_NEAR(v, 0.0, 1e-12);
  EXPECT_THROW(embed_images(std::span<const GlyphImage>(set.data(), 1), e), ConfigError);
}

TEST(EmbedImages, OrderInvariant) {
  RandomConvEmbedder e(0);
  std::vector<GlyphImage> set;
  for (int i = 0; i < 6; ++i) set.push_back(glyph(torch::rand({1, 16, 16}) * 2 - 1));
  auto a = embed_images(set, e);
  std::reverse(set.begin(), set.end());
  auto b = embed_images(set, e);
  for (size_t i = 0; i < a.mu.size(); ++i) EXPECT_NEAR(a.mu[i], b.mu[i], 1e-12);
  for (size_t i = 0; i < a.cov.size(); ++i) EXPECT_NEAR(a.cov[i], b.cov[i], 1e-12);
}

TEST(Ssim, IdentityIsOne) {
  std::vector<double> a, b;
  planes(20, 24, a, b);
  EXPECT_NEAR(ssim(a, a, 20, 24, {}), 1.0, 1e-9);
  auto g = glyph(torch::rand({1, 32, 32}) * 2 - 1);
  EXPECT_NEAR(ssim(g, g, {}), 1.0, 1e-9);
}

TEST(Ssim, ConstantZeroVersusConstantOne) {
  // Zero variances: (2 * 0 * 1 + c1) c2 / ((0 + 1 + c1) c2) = c1 / (1 + c1), c1 = (0.01 * 1)^2.
  const double c1 = 1e-4;
  const double expected = c1 / (1 + c1);
  ASSERT_NEAR(expected, 9.999e-5, 1e-7);
  std::vector<double> zeros(16 * 16, 0.0), ones(16 * 16, 1.0);
  EXPECT_NEAR(ssim(zeros, ones, 16, 16, {}), expected, 1e-12);
  // Same through glyphs: -1 maps to 0 and +1 to 1.
  EXPECT_NEAR(ssim(glyph(torch::full({1, 16, 16}, -1.0f)), glyph(torch::ones({1, 16, 16})), {}), expected, 1e-12);
}

TEST(Ssim, MatchesReferenceImplementation) {
  // Reference values from scikit-image's structural_similarity with
  // gaussian_weights=True, sigma=1.5, data_range=1 on the same planes.
  std::vector<double> a, b;
  planes(20, 24, a, b);
  EXPECT_NEAR(ssim(a, b, 20, 24, {}), 0.09017395166916659, 1e-9);
  SsimConfig sample;
  sample.sample_covariance = true;
  EXPECT_NEAR(ssim(a, b, 20, 24, sample), 0.09008753378040597, 1e-9);
}

TEST(Ssim, SymmetricAndBounded) {
  for (uint64_t seed = 0; seed < 10; ++seed) {
    auto gen = at::detail::createCPUGenerator(seed);
    auto x = glyph(torch::rand({1, 16, 16}, gen, torch::TensorOptions()) * 2 - 1);
    auto y = glyph(torch::rand({1, 16, 16}, gen, torch::TensorOptions()) * 2 - 1);
    const double s = ssim(x, y, {});
    EXPECT_NEAR(s, ssim(y, x, {}), 1e-12);
    EXPECT_GE(s, -1.0);
    EXPECT_LT(s, 1.0);
  }
}

TEST(Ssim, ShapeMismatch) {
  EXPECT_THROW(ssim(glyph(torch::zeros({1, 16, 16})), glyph(torch::zeros({1, 12, 12})), {}), ShapeError);
}

TEST(PixAcc, FourPixelCase) {
  // truth [ink, ink, bg, bg], pred [ink, bg, bg, bg]: pixels 0, 2, 3 agree.
  const std::vector<double> truth = {1, 1, 0, 0}, pred = {1, 0, 0, 0};
  int agree = 0;
  for (size_t i = 0; i < 4; ++i) agree += (truth[i] >= 0.5) == (pred[i] >= 0.5);
  ASSERT_EQ(agree, 3);
  EXPECT_EQ(pix_acc(pred, truth), 0.75);
}

TEST(PixAcc, IdentityInversionAndLabelSwap) {
  auto t = (torch::rand({1, 8, 8}) > 0.5).to(torch::kFloat32) * 2 - 1;
  auto p = (torch::rand({1, 8, 8}) > 0.5).to(torch::kFloat32) * 2 - 1;
  EXPECT_EQ(pix_acc(glyph(t), glyph(t)), 1.0);
  EXPECT_EQ(pix_acc(glyph(-t), glyph(t)), 0.0);
  EXPECT_EQ(pix_acc(glyph(-p), glyph(-t)), pix_acc(glyph(p), glyph(t)));
  EXPECT_THROW(pix_acc(glyph(t), glyph(torch::zeros({1, 4, 4}))), ShapeError);
}

class EvalSetTest : public ::testing::Test {
 protected:
  void SetUp() override {
    for (int i = 0; i < 4; ++i) {
      auto gen = at::detail::createCPUGenerator(static_cast<uint64_t>(i));
      auto t = torch::rand({1, 16, 16}, gen, torch::TensorOptions()) * 2 - 1;
      auto g = torch::rand({1, 16, 16}, gen, torch::TensorOptions()) * 2 - 1;
      const std::string name = "s/" + std::to_string(i) + ".png";
      save_glyph(truth / name, t);
      save_glyph(generated / name, g);
    }
  }
  TempDir dir;
  fs::path truth = dir / "truth";
  fs::path generated = dir / "generated";
};

TEST_F(EvalSetTest, IdentityDirectories) {
  auto r = evaluate_set(truth, truth, {});
  EXPECT_EQ(r.pairs, 4);
  EXPECT_NEAR(r.ssim_mean, 1.0, 1e-9);
  EXPECT_EQ(r.pix_acc_mean, 1.0);
  EXPECT_NEAR(r.fid, 0.0, 1e-6);
}

TEST_F(EvalSetTest, MeanOfPerPairCalls) {
  auto r = evaluate_set(generated, truth, {});
  double s = 0, p = 0;
  for (int i = 0; i < 4; ++i) {
    const std::string name = "s/" + std::to_string(i) + ".png";
    auto g = load_glyph(generated / name, 1);
    auto t = load_glyph(truth / name, 1);
    s += ssim(g, t, {});
    p += pix_acc(g, t);
  }
  EXPECT_NEAR(r.ssim_mean, s / 4, 1e-12);
  EXPECT_NEAR(r.pix_acc_mean, p / 4, 1e-12);
  ASSERT_EQ(r.per_pair.size(), 4u);
  EXPECT_EQ(r.per_pair[0].name, "s/0.png");
}

TEST_F(EvalSetTest, Reproducible) {
  auto a = evaluate_set(generated, truth, {});
  auto b = evaluate_set(generated, truth, {});
  EXPECT_EQ(report_json(a), report_json(b));
  EXPECT_GT(a.fid, 0.0);
}

TEST_F(EvalSetTest, NoMatchingPairs) {
  TempDir other;
  save_glyph(other / "unrelated.png", torch::zeros({1, 16, 16}));
  EXPECT_THROW(evaluate_set(other.path(), truth, {}), DataError);
}

TEST_F(EvalSetTest, ReportFiles) {
  auto r = evaluate_set(generated, truth, {});
  write_report(dir / "out", r);
  auto j = gasnext::testing::read_file(dir / "out" / "report.json");
  for (const char* key : {"\"fid\"", "\"ssim_mean\"", "\"pix_acc_mean\"", "\"pairs\": 4"}) {
    EXPECT_NE(j.find(key), std::string::npos) << key;
  }
  EXPECT_TRUE(fs::exists(dir / "out" / "report.txt"));
}
