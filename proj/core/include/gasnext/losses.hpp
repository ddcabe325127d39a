#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include <torch/torch.h>

namespace gasnext {

/// Objective weights. Defaults are the published ones.
struct LossWeights {
  double adv_sha = 1.0;
  double adv_tex = 1.0;
  double l1_gray = 50.0;
  double l1_tex = 100.0;
  double cx_gray = 15.0;
  double cx_tex = 25.0;
  double local = 1.0;

  void validate() const;
  bool operator==(const LossWeights&) const = default;
};

struct CxConfig {
  double h = 0.5;
  double epsilon = 1e-5;
  // 1-based extractor blocks whose outputs are compared.
  std::vector<int64_t> layers = {3, 4};
  // "random" (frozen seeded CNN) or "vgg19" (needs weights_path).
  std::string extractor = "random";
  std::string weights_path;
  uint64_t extractor_seed = 0;

  void validate() const;
  bool operator==(const CxConfig&) const = default;
};

inline constexpr double kScoreClamp = 1e-7;
inline constexpr double kCosineEps = 1e-8;

/// Frozen feature extractor for the contextual loss. Input images are
/// [B, C, H, W] in [-1, 1]; single-channel input is replicated when the
/// backbone wants three channels.
class PerceptualExtractor {
 public:
  virtual ~PerceptualExtractor() = default;
  virtual std::vector<torch::Tensor> features(const torch::Tensor& images) = 0;
  virtual size_t num_layers() const = 0;
};

/// Small CNN with deterministic seeded weights and tanh activations, four
/// conv blocks separated by 2x max-pooling.
class RandomConvExtractor : public PerceptualExtractor {
 public:
  RandomConvExtractor(std::vector<int64_t> taps, uint64_t seed, std::vector<int64_t> widths = {16, 32, 48, 64});
  std::vector<torch::Tensor> features(const torch::Tensor& images) override;
  size_t num_layers() const override { return taps_.size(); }

 private:
  std::vector<int64_t> taps_;
  std::vector<torch::Tensor> weights_;
  std::vector<torch::Tensor> biases_;
};

/// VGG19 feature stack (16 conv layers in 5 blocks). Weights come from a
/// named-tensor file with keys "features.<i>.weight" / "features.<i>.bias"
/// using torchvision's layer numbering. Taps are post-ReLU block outputs.
class Vgg19Extractor : public PerceptualExtractor {
 public:
  Vgg19Extractor(std::vector<int64_t> taps, const std::filesystem::path& weights);
  std::vector<torch::Tensor> features(const torch::Tensor& images) override;
  size_t num_layers() const override { return taps_.size(); }

 private:
  std::vector<int64_t> taps_;
  std::vector<std::vector<std::pair<torch::Tensor, torch::Tensor>>> blocks_;
};

std::unique_ptr<PerceptualExtractor> make_extractor(const CxConfig& config);

torch::Tensor clamp_scores(const torch::Tensor& scores);

/// E[log D(real)] + E[log(1 - D(fake))]; the discriminator maximizes this.
torch::Tensor adv_d_shape(const torch::Tensor& scores_real, const torch::Tensor& scores_fake);
torch::Tensor adv_d_texture(const torch::Tensor& scores_real, const torch::Tensor& scores_fake);

struct AdvTerms {
  torch::Tensor shape;    // weighted
  torch::Tensor texture;  // weighted
  torch::Tensor total() const { return shape + texture; }
};
/// w.adv_sha E[log(1 - D_sha(y_gray))] + w.adv_tex E[log(1 - D_tex(y))],
/// minimized by the generator.
AdvTerms adv_g(const torch::Tensor& scores_fake_gray, const torch::Tensor& scores_fake_tex, const LossWeights& w);

struct L1Terms {
  torch::Tensor gray;     // weighted
  torch::Tensor texture;  // weighted
  torch::Tensor total() const { return gray + texture; }
};
/// Per-sample weighted L1; samples with paired == false contribute exactly
/// zero. `paired` is a [B] boolean/float mask. Batch mean over all samples.
L1Terms l1_term(const torch::Tensor& y_gray, const torch::Tensor& y, const torch::Tensor& target_gray,
                const torch::Tensor& target, const LossWeights& w, const torch::Tensor& paired);
L1Terms l1_term(const torch::Tensor& y_gray, const torch::Tensor& y, const torch::Tensor& target_gray,
                const torch::Tensor& target, const LossWeights& w, bool paired);

/// [B, C, H, W] feature map -> [B, H*W, C] set of feature vectors.
torch::Tensor feature_set(const torch::Tensor& feature_map);
/// d_ij = 1 - <x_i, y_j> / max(|x_i| |y_j|, 1e-8); [B, N, M].
torch::Tensor cosine_distance(const torch::Tensor& x, const torch::Tensor& y);
/// CX_ij = w_ij / sum_k w_ik with w_ij = exp((1 - d_ij / (min_k d_ik + eps)) / h).
torch::Tensor cx_matrix(const torch::Tensor& x, const torch::Tensor& y, const CxConfig& config);
/// CX(X, Y) = 1/N sum_j max_i CX_ij, per batch element: x [B, N, D], y [B, M, D] -> [B].
torch::Tensor cx_similarity(const torch::Tensor& x, const torch::Tensor& y, const CxConfig& config);

struct CxTerms {
  torch::Tensor gray;     // weighted
  torch::Tensor texture;  // weighted
  torch::Tensor total() const { return gray + texture; }
};
/// Per branch: -(1/L) sum_l log CX(phi_l(output), phi_l(target)), batch mean,
/// then weighted by w.cx_gray / w.cx_tex. Zero-weight branches are skipped.
CxTerms cx_loss(const torch::Tensor& y_gray, const torch::Tensor& y, const torch::Tensor& target_gray,
                const torch::Tensor& target, PerceptualExtractor& extractor, const CxConfig& config,
                const LossWeights& w);

/// E[log D(p_real)] + E[log(1 - D(p_blur))] + E[log(1 - D(p_y))].
torch::Tensor local_loss_d(const torch::Tensor& scores_real, const torch::Tensor& scores_blurred,
                           const torch::Tensor& scores_synthesized);
/// w.local E[log(1 - D(p_y))].
torch::Tensor local_loss_g(const torch::Tensor& scores_synthesized, const LossWeights& w);

struct ObjectiveComponents {
  double adv = 0.0;
  double l1 = 0.0;
  double cx = 0.0;
  double local = 0.0;
};

/// Ordered (name, value) terms plus their sum.
struct LossBreakdown {
  std::vector<std::pair<std::string, double>> terms;
  double total = 0.0;

  double get(const std::string& name) const;
};

LossBreakdown total_objective(const ObjectiveComponents& c);

}  // namespace gasnext
