#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>

#include "gasnext/error.hpp"
#include "gasnext/generator.hpp"
#include "gasnext/trainer.hpp"
#include "support.hpp"

using namespace gasnext;
using gasnext::testing::gradient_check;
using gasnext::testing::random_batch;
using gasnext::testing::tiny_model;

namespace {

GeneratorConfig small_config(int64_t resolution = 16, int64_t channels = 1) {
  return tiny_model(resolution, channels).generator;
}

GeneratorConfig micro_config() {
  GeneratorConfig c;
  c.resolution = 8;
  c.base_width = 4;
  c.max_width = 16;
  c.style_vector_dim = 8;
  c.m_default = 2;
  return c;
}

torch::Tensor uniform(std::vector<int64_t> shape, uint64_t seed, torch::Dtype dtype = torch::kFloat32) {
  auto gen = at::detail::createCPUGenerator(seed);
  return (torch::rand(shape, gen, torch::TensorOptions().dtype(torch::kFloat64)) * 2 - 1).to(dtype);
}

}  // namespace

TEST(GeneratorConfig, Validation) {
  auto c = small_config();
  EXPECT_NO_THROW(c.validate());
  c.num_attention_levels = 2;
  EXPECT_THROW(c.validate(), ConfigError);
  c = small_config();
  c.resolution = 20;  // not divisible by 2^3
  EXPECT_THROW(c.validate(), ConfigError);
  c = small_config();
  c.channels = 2;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(ContentEncoder, StageSizesHalve) {
  torch::manual_seed(0);
  auto c = small_config(64);
  Generator g(c);
  auto f = g->encode_content(uniform({2, 1, 64, 64}, 1));
  ASSERT_EQ(f.stages.size(), 4u);
  const std::vector<int64_t> sizes = {64, 32, 16, 8};
  for (size_t s = 0; s < 4; ++s) {
    EXPECT_EQ(f.stages[s].size(2), sizes[s]);
    EXPECT_EQ(f.stages[s].size(3), sizes[s]);
    EXPECT_EQ(f.stages[s].size(1), c.width(static_cast<int64_t>(s)));
  }
}

TEST(ContentEncoder, IdenticalInputsIdenticalFeatures) {
  torch::manual_seed(0);
  Generator g(small_config());
  g->eval();
  auto x = uniform({1, 1, 16, 16}, 2);
  auto a = g->encode_content(x);
  auto b = g->encode_content(x.clone());
  for (size_t s = 0; s < a.stages.size(); ++s) EXPECT_TRUE(torch::equal(a.stages[s], b.stages[s]));
}

TEST(ContentEncoder, RejectsShapeMismatch) {
  Generator g(small_config());
  EXPECT_THROW(g->encode_content(torch::zeros({1, 1, 32, 32})), ShapeError);
  EXPECT_THROW(g->encode_content(torch::zeros({1, 3, 16, 16})), ShapeError);
}

TEST(ContentEncoder, FiniteDifferenceGradient) {
  torch::manual_seed(3);
  Generator g(micro_config());
  g->to(torch::kFloat64);
  auto x = uniform({2, 1, 8, 8}, 4, torch::kFloat64);
  auto probe = uniform({2, 16, 1, 1}, 5, torch::kFloat64);
  auto loss = [&] { return (g->encode_content(x).stages.back() * probe).sum(); };
  auto r = gradient_check(g->parameters(), loss, 20, 1e-3, 1e-2, 11);
  EXPECT_EQ(r.failed, 0) << r.report;
}

TEST(ContextAttention, IdenticalLocationsGiveUniformWeights) {
  torch::manual_seed(0);
  ContextAwareAttention att(5);
  auto h = uniform({1, 5, 1, 1}, 1);
  auto map = h.expand({1, 5, 3, 4}).contiguous();
  auto r = att(map);
  EXPECT_TRUE(torch::allclose(r.attention, torch::full({1, 3, 4}, 1.0 / 12), 0, 1e-7));
  EXPECT_TRUE(torch::allclose(r.context, h.view({1, 5}), 0, 1e-6));
}

TEST(ContextAttention, SingleLocation) {
  torch::manual_seed(0);
  ContextAwareAttention att(4);
  auto map = uniform({2, 4, 1, 1}, 3);
  auto r = att(map);
  EXPECT_TRUE(torch::equal(r.attention, torch::ones({2, 1, 1})));
  EXPECT_TRUE(torch::allclose(r.context, map.view({2, 4}), 0, 1e-7));
}

TEST(ContextAttention, MatchesScalarOracleOn2x2x3) {
  ContextAwareAttention att(3);
  att->to(torch::kFloat64);
  const double W[3][3] = {{0.5, -0.2, 0.1}, {0.3, 0.8, -0.6}, {-0.4, 0.2, 0.9}};
  const double bias[3] = {0.05, -0.1, 0.2};
  const double v[3] = {1.2, -0.7, 0.4};
  {
    torch::NoGradGuard ng;
    for (int k = 0; k < 3; ++k) {
      for (int c = 0; c < 3; ++c) att->proj->weight[k][c].fill_(W[k][c]);
      att->proj->bias[k].fill_(bias[k]);
      att->context_vector->weight[0][k].fill_(v[k]);
    }
  }
  // h[loc][c], locations in row-major order.
  const double h[4][3] = {{0.9, -0.3, 0.2}, {-0.5, 0.7, 0.1}, {0.0, 0.4, -0.8}, {0.6, 0.6, 0.6}};
  auto map = torch::zeros({1, 3, 2, 2}, torch::kFloat64);
  for (int loc = 0; loc < 4; ++loc) {
    for (int c = 0; c < 3; ++c) map[0][c][loc / 2][loc % 2] = h[loc][c];
  }
  double score[4], z = 0;
  for (int loc = 0; loc < 4; ++loc) {
    score[loc] = 0;
    for (int k = 0; k < 3; ++k) {
      double pre = bias[k];
      for (int c = 0; c < 3; ++c) pre += W[k][c] * h[loc][c];
      score[loc] += v[k] * std::tanh(pre);
    }
  }
  const double smax = *std::max_element(score, score + 4);
  double a[4];
  for (int loc = 0; loc < 4; ++loc) z += (a[loc] = std::exp(score[loc] - smax));
  for (auto& x : a) x /= z;
  double ctx[3] = {0, 0, 0};
  for (int loc = 0; loc < 4; ++loc) {
    for (int c = 0; c < 3; ++c) ctx[c] += a[loc] * h[loc][c];
  }

  auto r = att(map);
  for (int loc = 0; loc < 4; ++loc) EXPECT_NEAR(r.attention[0][loc / 2][loc % 2].item<double>(), a[loc], 1e-12);
  for (int c = 0; c < 3; ++c) EXPECT_NEAR(r.context[0][c].item<double>(), ctx[c], 1e-12);
}

TEST(ContextAttention, MapsSumToOne) {
  torch::manual_seed(1);
  ContextAwareAttention att(6);
  for (uint64_t seed = 0; seed < 50; ++seed) {
    auto r = att(uniform({3, 6, 4, 5}, seed) * 10);
    EXPECT_TRUE(torch::allclose(r.attention.sum({1, 2}), torch::ones({3}), 0, 1e-5));
    EXPECT_GE(r.attention.min().item<double>(), 0.0);
  }
}

TEST(LayerAttention, EqualScoresGiveThirds) {
  LayerAttention la(4, 3);
  {
    torch::NoGradGuard ng;
    la->score->weight.zero_();
    la->score->bias.zero_();
  }
  std::vector<torch::Tensor> levels = {uniform({2, 5}, 1), uniform({2, 5}, 2), uniform({2, 5}, 3)};
  auto r = la(levels, uniform({2, 4, 3, 3}, 4));
  EXPECT_TRUE(torch::allclose(r.weights, torch::full({2, 3}, 1.0 / 3), 0, 1e-7));
  EXPECT_TRUE(torch::allclose(r.combined, (levels[0] + levels[1] + levels[2]) / 3, 0, 1e-6));
}

TEST(LayerAttention, WeightsAreAProbabilityVector) {
  torch::manual_seed(2);
  LayerAttention la(4, 3);
  for (uint64_t seed = 0; seed < 50; ++seed) {
    std::vector<torch::Tensor> levels = {uniform({2, 5}, seed), uniform({2, 5}, seed + 100),
                                         uniform({2, 5}, seed + 200)};
    auto r = la(levels, uniform({2, 4, 3, 3}, seed + 300) * 5);
    EXPECT_GT(r.weights.min().item<double>(), 0.0);
    EXPECT_LT(r.weights.max().item<double>(), 1.0);
    EXPECT_TRUE(torch::allclose(r.weights.sum(1), torch::ones({2}), 0, 1e-6));
  }
}

TEST(LayerAttention, SaturatedScoreSelectsThatLevel) {
  std::vector<torch::Tensor> levels = {uniform({2, 5}, 1, torch::kFloat64), uniform({2, 5}, 2, torch::kFloat64),
                                       uniform({2, 5}, 3, torch::kFloat64)};
  auto scores = torch::tensor({{1e4, 0.0, 0.0}, {1e4, -3.0, 5.0}}, torch::kFloat64);
  auto r = LayerAttentionImpl::combine(scores, levels);
  EXPECT_TRUE(torch::equal(r.combined, levels[0]));
  EXPECT_TRUE(torch::equal(r.weights.select(1, 0), torch::ones({2}, torch::kFloat64)));
}

TEST(LayerAttention, NeedsThreeLevels) {
  LayerAttention la(4, 3);
  std::vector<torch::Tensor> two = {torch::zeros({1, 5}), torch::zeros({1, 5})};
  EXPECT_THROW(la->forward(two, torch::zeros({1, 4, 2, 2})), ShapeError);
}

class StyleEncoderTest : public ::testing::Test {
 protected:
  void SetUp() override {
    torch::manual_seed(7);
    g = Generator(small_config());
    g->eval();
  }
  Generator g{nullptr};
};

TEST_F(StyleEncoderTest, SingletonIsTheWeightedLevelCombination) {
  auto styles = uniform({2, 1, 1, 16, 16}, 1);
  auto f = g->encode_style(styles);
  auto combined = (f.level_weights.unsqueeze(-1) * f.level_vectors).sum(2).squeeze(1);
  EXPECT_TRUE(torch::allclose(f.style_code, combined, 0, 1e-6));
  EXPECT_TRUE(torch::allclose(f.level_weights.sum(-1), torch::ones({2, 1}), 0, 1e-6));
}

TEST_F(StyleEncoderTest, DuplicatedImageMatchesSingleton) {
  auto one = uniform({1, 1, 1, 16, 16}, 2);
  auto two = torch::cat({one, one}, 1);
  // Equal up to round-off: the convolution kernel may differ between a
  // batch of one and a batch of two images.
  const double diff = (g->encode_style(one).style_code - g->encode_style(two).style_code).abs().max().item<double>();
  EXPECT_LE(diff, 1e-6);
}

TEST_F(StyleEncoderTest, PermutationInvariantExactly) {
  auto styles = uniform({1, 5, 1, 16, 16}, 3);
  auto base = g->encode_style(styles).style_code;
  std::vector<int64_t> order = {0, 1, 2, 3, 4};
  std::mt19937_64 rng(1);
  for (int t = 0; t < 10; ++t) {
    std::shuffle(order.begin(), order.end(), rng);
    auto perm = styles.index_select(1, torch::tensor(order));
    EXPECT_TRUE(torch::equal(g->encode_style(perm).style_code, base));
  }
}

TEST_F(StyleEncoderTest, MeanOverImages) {
  auto styles = uniform({1, 3, 1, 16, 16}, 4);
  auto f = g->encode_style(styles);
  auto per_image = (f.level_weights.unsqueeze(-1) * f.level_vectors).sum(2);
  EXPECT_TRUE(torch::allclose(f.style_code, per_image.mean(1), 0, 1e-6));
}

TEST_F(StyleEncoderTest, RejectsEmptyAndHeterogeneousSets) {
  EXPECT_THROW(g->encode_style(torch::zeros({1, 0, 1, 16, 16})), ShapeError);
  EXPECT_THROW(stack_style_images({}), ShapeError);
  std::vector<GlyphImage> mixed = {{torch::zeros({1, 16, 16}), "a"}, {torch::zeros({1, 8, 8}), "b"}};
  EXPECT_THROW(stack_style_images(mixed), ShapeError);
}

TEST(Decoder, OutputShapesAndRange) {
  torch::manual_seed(0);
  for (int64_t channels : {1, 3}) {
    Generator g(small_config(16, channels));
    auto out = g->forward(uniform({2, channels, 16, 16}, 1) * 3, uniform({2, 3, channels, 16, 16}, 2) * 3);
    EXPECT_EQ(out.y_gray.sizes(), (std::vector<int64_t>{2, 1, 16, 16}));
    EXPECT_EQ(out.y.sizes(), (std::vector<int64_t>{2, channels, 16, 16}));
    EXPECT_LE(out.y.abs().max().item<double>(), 1.0);
    EXPECT_LE(out.y_gray.abs().max().item<double>(), 1.0);
    if (channels == 1) EXPECT_EQ(out.y.sizes(), out.y_gray.sizes());
  }
}

TEST(Decoder, OutputResolutionFollowsInput) {
  torch::manual_seed(0);
  for (int64_t r : {8, 16, 24, 48}) {
    Generator g(small_config(r));
    auto out = g->forward(torch::zeros({1, 1, r, r}), torch::zeros({1, 2, 1, r, r}));
    EXPECT_EQ(out.y.size(2), r);
    EXPECT_EQ(out.y.size(3), r);
  }
}

TEST(Decoder, TextureBranchSwitch) {
  auto c = small_config(16, 3);
  c.texture_branch = false;
  Generator g(c);
  auto out = g->forward(torch::zeros({1, 3, 16, 16}), torch::zeros({1, 2, 3, 16, 16}));
  EXPECT_EQ(out.y.size(1), 3);
  EXPECT_TRUE(torch::equal(out.y.select(1, 2), out.y_gray.select(1, 0)));
}

TEST(Decoder, RejectsResolutionMismatch) {
  Generator g(small_config(16));
  auto content = g->encode_content(torch::zeros({1, 1, 16, 16}));
  auto style = g->encode_style(torch::zeros({1, 2, 1, 16, 16}));
  content.stages.back() = torch::zeros({1, content.stages.back().size(1), 4, 4});
  EXPECT_THROW(g->decode(content, style), ShapeError);
}

TEST(Generator, EveryParameterReceivesGradient) {
  for (int64_t channels : {1, 3}) {
    auto cfg = tiny_model(16, channels);
    Trainer trainer(cfg);
    auto batch = random_batch(2, 2, channels, 16, 5);
    auto out = trainer.generator()->forward(batch.content, batch.styles);
    Rng rng(1);
    auto offsets = sample_patch_offsets(2, 2, 16, 8, rng);
    trainer.generator()->zero_grad();
    trainer.generator_loss(batch, out, offsets).total().backward();
    for (const auto& p : trainer.generator()->named_parameters()) {
      ASSERT_TRUE(p.value().grad().defined()) << p.key();
      EXPECT_GT(p.value().grad().abs().sum().item<double>(), 0.0) << p.key() << " channels=" << channels;
    }
  }
}

TEST(Generator, GenerateIsDeterministic) {
  torch::manual_seed(0);
  Generator g(small_config(64));
  g->eval();
  GlyphImage content{uniform({1, 64, 64}, 1), "c"};
  std::vector<GlyphImage> refs = {{uniform({1, 64, 64}, 2), "a"}, {uniform({1, 64, 64}, 3), "b"}};
  auto a = g->generate(content, refs);
  auto b = g->generate(content, refs);
  EXPECT_TRUE(torch::equal(a.y, b.y));
  EXPECT_TRUE(torch::equal(a.y_gray, b.y_gray));
  EXPECT_EQ(a.y.sizes(), (std::vector<int64_t>{1, 1, 64, 64}));
  EXPECT_EQ(a.y_gray.sizes(), (std::vector<int64_t>{1, 1, 64, 64}));
}

TEST(Generator, MicroConfigL1FiniteDifferences) {
  torch::manual_seed(11);
  Generator g(micro_config());
  g->to(torch::kFloat64);
  auto x = uniform({2, 1, 8, 8}, 1, torch::kFloat64);
  auto s = uniform({2, 2, 1, 8, 8}, 2, torch::kFloat64);
  auto t = uniform({2, 1, 8, 8}, 3, torch::kFloat64);
  auto loss = [&] { return (g->forward(x, s).y - t).abs().mean(); };
  auto r = gradient_check(g->parameters(), loss, 20, 1e-3, 1e-2, 5);
  EXPECT_EQ(r.failed, 0) << r.report;
  int64_t n = 0;
  for (const auto& p : g->parameters()) n += p.numel();
  RecordProperty("micro_parameters", static_cast<int>(n));
}
