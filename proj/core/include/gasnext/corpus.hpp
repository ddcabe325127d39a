#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "gasnext/image.hpp"

namespace gasnext {

using Rng = std::mt19937_64;

struct CorpusConfig {
  int64_t resolution = 64;
  int64_t channels = 1;
};

enum class Stage { train, finetune };

struct Splits {
  std::vector<std::string> seen_content;
  std::vector<std::string> unseen_content;
  std::vector<std::string> seen_style;
  std::vector<std::string> unseen_style;
};

struct LoadReport {
  // Files that had to be resized to the configured resolution.
  std::vector<std::filesystem::path> resized;
  size_t images_loaded = 0;
};

/// Immutable in-memory view of a corpus directory:
///
///   <root>/content/<codepoint-hex>.png
///   <root>/styles/<style_id>/<codepoint-hex>.png
///   <root>/manifest.json
class CorpusIndex {
 public:
  using GlyphMap = std::map<std::string, GlyphImage>;

  const std::filesystem::path& root() const { return root_; }
  int64_t resolution() const { return resolution_; }
  int64_t channels() const { return channels_; }
  const std::string& content_font() const { return content_font_; }
  const Splits& splits() const { return splits_; }
  const LoadReport& load_report() const { return report_; }

  const GlyphMap& content() const { return content_; }
  const std::map<std::string, GlyphMap>& styles() const { return styles_; }
  std::vector<std::string> style_ids() const;
  std::vector<std::string> codepoints(const std::string& style_id) const;

  const GlyphImage& content_glyph(const std::string& codepoint) const;
  const GlyphImage& style_glyph(const std::string& style_id, const std::string& codepoint) const;
  bool has_style_glyph(const std::string& style_id, const std::string& codepoint) const;

  // Styles / content codepoints usable for training. Empty seen lists in the
  // manifest mean "everything not declared unseen".
  std::vector<std::string> training_styles() const;
  std::vector<std::string> training_content() const;

 private:
  friend CorpusIndex load_corpus(const std::filesystem::path&, const CorpusConfig&);

  std::filesystem::path root_;
  int64_t resolution_ = 64;
  int64_t channels_ = 1;
  std::string content_font_;
  Splits splits_;
  LoadReport report_;
  GlyphMap content_;
  std::map<std::string, GlyphMap> styles_;
};

/// Loads and validates a corpus. Throws DataError for a missing content
/// directory, an empty style directory, or an unreadable image.
CorpusIndex load_corpus(const std::filesystem::path& root, const CorpusConfig& config);

/// Loads every PNG in `dir` as a reference glyph (codepoint = file stem).
std::vector<GlyphImage> load_reference_dir(const std::filesystem::path& dir, const CorpusConfig& config);

struct StyleReferenceSet {
  std::string style_id;
  std::vector<GlyphImage> pool;     // R_s, size n
  std::vector<GlyphImage> sampled;  // X_s, size m
};

/// Draws m distinct pool elements without replacement.
std::vector<GlyphImage> sample_style_refs(std::span<const GlyphImage> pool, size_t m, Rng& rng);

struct TrainingSample {
  GlyphImage content;
  StyleReferenceSet style_refs;
  std::optional<GlyphImage> target;
  std::optional<GlyphImage> target_gray;
  bool paired = false;
};

struct BatchRequest {
  size_t batch = 8;
  size_t m = 4;
  Stage stage = Stage::train;
  // Fine-tuning only: the new style and its few reference glyphs.
  std::string finetune_style;
  std::vector<GlyphImage> references;
};

/// Train stage: samples (style, codepoint) pairs without replacement from
/// the training splits; the style pool excludes the target glyph when the
/// style has more than m other glyphs.
/// Finetune stage: samples codepoints from the corpus content; a sample is
/// paired only when its codepoint is among the references. Style refs are
/// drawn from the reference pool.
std::vector<TrainingSample> batch_samples(const CorpusIndex& index, const BatchRequest& request, Rng& rng);

struct SyntheticCorpusOptions {
  int styles = 2;
  int glyphs = 10;
  int64_t resolution = 32;
  uint64_t seed = 1;
  int unseen_styles = 0;        // last k styles are declared unseen
  bool identity_style = false;  // extra style rendered exactly like the content font
};

/// Procedurally renders a corpus of stroke glyphs. Glyph skeletons depend
/// only on (seed, glyph index) and style parameters only on (seed, style
/// index), so a corpus with more styles extends one with fewer.
void make_synthetic_corpus(const std::filesystem::path& root, const SyntheticCorpusOptions& options);

std::string codepoint_name(uint32_t codepoint);

}  // namespace gasnext
