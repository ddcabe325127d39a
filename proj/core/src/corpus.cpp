#include "gasnext/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <set>

#include "gasnext/error.hpp"
#include <nlohmann/json.hpp>

namespace gasnext {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::vector<std::string> get_list(const json& j, const char* key) {
  if (!j.contains(key)) return {};
  return j.at(key).get<std::vector<std::string>>();
}

void require_disjoint(const std::vector<std::string>& a, const std::vector<std::string>& b,
                      const std::string& what) {
  std::set<std::string> sa(a.begin(), a.end());
  for (const auto& x : b) {
    if (sa.count(x)) throw DataError("manifest splits overlap on " + what + " '" + x + "'");
  }
}

std::vector<fs::path> png_files(const fs::path& dir) {
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".png") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  return files;
}

GlyphImage load_checked(const fs::path& file, const CorpusConfig& config, LoadReport& report) {
  GlyphImage img = load_glyph(file, config.channels, file.stem().string());
  if (img.height() != config.resolution || img.width() != config.resolution) {
    img.pixels = resize_square(img.pixels, config.resolution);
    report.resized.push_back(file);
  }
  ++report.images_loaded;
  return img;
}

std::vector<std::string> minus(const std::vector<std::string>& all, const std::vector<std::string>& excluded) {
  std::set<std::string> ex(excluded.begin(), excluded.end());
  std::vector<std::string> out;
  for (const auto& x : all) {
    if (!ex.count(x)) out.push_back(x);
  }
  return out;
}

// Partial Fisher-Yates: first k entries of the returned vector are a uniform
// k-subset of [0, n) in random order.
std::vector<size_t> choose_indices(size_t n, size_t k, Rng& rng) {
  std::vector<size_t> idx(n);
  std::iota(idx.begin(), idx.end(), size_t{0});
  for (size_t i = 0; i < k; ++i) {
    std::uniform_int_distribution<size_t> pick(i, n - 1);
    std::swap(idx[i], idx[pick(rng)]);
  }
  idx.resize(k);
  return idx;
}

}  // namespace

std::vector<std::string> CorpusIndex::style_ids() const {
  std::vector<std::string> ids;
  for (const auto& [id, _] : styles_) ids.push_back(id);
  return ids;
}

std::vector<std::string> CorpusIndex::codepoints(const std::string& style_id) const {
  auto it = styles_.find(style_id);
  if (it == styles_.end()) throw DataError("unknown style '" + style_id + "'");
  std::vector<std::string> cps;
  for (const auto& [cp, _] : it->second) cps.push_back(cp);
  return cps;
}

const GlyphImage& CorpusIndex::content_glyph(const std::string& codepoint) const {
  auto it = content_.find(codepoint);
  if (it == content_.end()) throw DataError("no content glyph for codepoint '" + codepoint + "'");
  return it->second;
}

const GlyphImage& CorpusIndex::style_glyph(const std::string& style_id, const std::string& codepoint) const {
  auto it = styles_.find(style_id);
  if (it == styles_.end()) throw DataError("unknown style '" + style_id + "'");
  auto jt = it->second.find(codepoint);
  if (jt == it->second.end()) {
    throw DataError("style '" + style_id + "' has no glyph '" + codepoint + "'");
  }
  return jt->second;
}

bool CorpusIndex::has_style_glyph(const std::string& style_id, const std::string& codepoint) const {
  auto it = styles_.find(style_id);
  return it != styles_.end() && it->second.count(codepoint) > 0;
}

std::vector<std::string> CorpusIndex::training_styles() const {
  if (!splits_.seen_style.empty()) return splits_.seen_style;
  return minus(style_ids(), splits_.unseen_style);
}

std::vector<std::string> CorpusIndex::training_content() const {
  if (!splits_.seen_content.empty()) return splits_.seen_content;
  std::vector<std::string> all;
  for (const auto& [cp, _] : content_) all.push_back(cp);
  return minus(all, splits_.unseen_content);
}

CorpusIndex load_corpus(const fs::path& root, const CorpusConfig& config) {
  if (config.channels != 1 && config.channels != 3) {
    throw ConfigError("channels must be 1 or 3, got " + std::to_string(config.channels));
  }
  if (!fs::is_directory(root)) throw DataError("corpus root not found: " + root.string());
  const fs::path content_dir = root / "content";
  if (!fs::is_directory(content_dir)) throw DataError("content directory not found: " + content_dir.string());

  CorpusIndex index;
  index.root_ = root;
  index.resolution_ = config.resolution;
  index.channels_ = config.channels;

  const fs::path manifest_path = root / "manifest.json";
  if (fs::exists(manifest_path)) {
    std::ifstream in(manifest_path);
    json manifest;
    try {
      manifest = json::parse(in);
    } catch (const json::exception& e) {
      throw DataError("malformed manifest '" + manifest_path.string() + "': " + e.what());
    }
    index.content_font_ = manifest.value("content_font", std::string{});
    if (manifest.contains("splits")) {
      const json& s = manifest.at("splits");
      index.splits_.seen_content = get_list(s, "seen_content");
      index.splits_.unseen_content = get_list(s, "unseen_content");
      index.splits_.seen_style = get_list(s, "seen_style");
      index.splits_.unseen_style = get_list(s, "unseen_style");
    }
  }
  require_disjoint(index.splits_.seen_content, index.splits_.unseen_content, "content");
  require_disjoint(index.splits_.seen_style, index.splits_.unseen_style, "style");

  for (const auto& file : png_files(content_dir)) {
    index.content_.emplace(file.stem().string(), load_checked(file, config, index.report_));
  }
  if (index.content_.empty()) throw DataError("content directory is empty: " + content_dir.string());

  const fs::path styles_dir = root / "styles";
  if (fs::is_directory(styles_dir)) {
    std::vector<fs::path> style_dirs;
    for (const auto& entry : fs::directory_iterator(styles_dir)) {
      if (entry.is_directory()) style_dirs.push_back(entry.path());
    }
    std::sort(style_dirs.begin(), style_dirs.end());
    for (const auto& dir : style_dirs) {
      CorpusIndex::GlyphMap glyphs;
      for (const auto& file : png_files(dir)) {
        glyphs.emplace(file.stem().string(), load_checked(file, config, index.report_));
      }
      if (glyphs.empty()) throw DataError("empty style directory: " + dir.string());
      index.styles_.emplace(dir.filename().string(), std::move(glyphs));
    }
  }

  for (const auto& list : {index.splits_.seen_content, index.splits_.unseen_content}) {
    for (const auto& cp : list) {
      if (!index.content_.count(cp)) throw DataError("manifest codepoint '" + cp + "' has no content image");
    }
  }
  for (const auto& list : {index.splits_.seen_style, index.splits_.unseen_style}) {
    for (const auto& id : list) {
      if (!index.styles_.count(id)) throw DataError("manifest style '" + id + "' has no style directory");
    }
  }
  return index;
}

std::vector<GlyphImage> load_reference_dir(const fs::path& dir, const CorpusConfig& config) {
  if (!fs::is_directory(dir)) throw DataError("reference directory not found: " + dir.string());
  LoadReport report;
  std::vector<GlyphImage> refs;
  for (const auto& file : png_files(dir)) refs.push_back(load_checked(file, config, report));
  if (refs.empty()) throw DataError("reference directory has no PNG files: " + dir.string());
  return refs;
}

std::vector<GlyphImage> sample_style_refs(std::span<const GlyphImage> pool, size_t m, Rng& rng) {
  if (m == 0) throw ConfigError("style sample size m must be at least 1");
  if (m > pool.size()) {
    throw ConfigError("style sample size m=" + std::to_string(m) + " exceeds pool size n=" +
                      std::to_string(pool.size()));
  }
  std::vector<GlyphImage> out;
  out.reserve(m);
  for (size_t i : choose_indices(pool.size(), m, rng)) out.push_back(pool[i]);
  return out;
}

std::vector<TrainingSample> batch_samples(const CorpusIndex& index, const BatchRequest& request, Rng& rng) {
  if (request.batch == 0) throw ConfigError("batch size must be at least 1");
  std::vector<TrainingSample> batch;
  batch.reserve(request.batch);

  if (request.stage == Stage::train) {
    std::vector<std::pair<std::string, std::string>> pairs;
    const auto content = index.training_content();
    for (const auto& style : index.training_styles()) {
      for (const auto& cp : content) {
        if (index.has_style_glyph(style, cp)) pairs.emplace_back(style, cp);
      }
    }
    if (request.batch > pairs.size()) {
      throw ConfigError("batch size " + std::to_string(request.batch) + " exceeds the " +
                        std::to_string(pairs.size()) + " available paired samples");
    }
    for (size_t i : choose_indices(pairs.size(), request.batch, rng)) {
      const auto& [style, cp] = pairs[i];
      const auto& glyphs = index.styles().at(style);
      StyleReferenceSet refs;
      refs.style_id = style;
      const bool exclude_target = glyphs.size() > request.m;
      for (const auto& [other, img] : glyphs) {
        if (exclude_target && other == cp) continue;
        refs.pool.push_back(img);
      }
      refs.sampled = sample_style_refs(refs.pool, request.m, rng);

      TrainingSample sample;
      sample.content = index.content_glyph(cp);
      sample.style_refs = std::move(refs);
      sample.target = index.style_glyph(style, cp);
      sample.target_gray = to_grayscale(*sample.target);
      sample.paired = true;
      batch.push_back(std::move(sample));
    }
    return batch;
  }

  if (request.references.empty()) throw ConfigError("fine-tuning needs at least one reference glyph (n = 0)");
  std::map<std::string, const GlyphImage*> by_codepoint;
  for (const auto& ref : request.references) by_codepoint[ref.codepoint] = &ref;

  std::vector<std::string> candidates;
  for (const auto& [cp, _] : index.content()) candidates.push_back(cp);
  if (request.batch > candidates.size()) {
    throw ConfigError("batch size " + std::to_string(request.batch) + " exceeds the " +
                      std::to_string(candidates.size()) + " content glyphs");
  }
  for (size_t i : choose_indices(candidates.size(), request.batch, rng)) {
    const auto& cp = candidates[i];
    TrainingSample sample;
    sample.content = index.content_glyph(cp);
    sample.style_refs.style_id = request.finetune_style;
    sample.style_refs.pool = request.references;
    sample.style_refs.sampled = sample_style_refs(sample.style_refs.pool, request.m, rng);
    if (auto it = by_codepoint.find(cp); it != by_codepoint.end()) {
      sample.target = *it->second;
      sample.target_gray = to_grayscale(*sample.target);
      sample.paired = true;
    }
    batch.push_back(std::move(sample));
  }
  return batch;
}

}  // namespace gasnext
