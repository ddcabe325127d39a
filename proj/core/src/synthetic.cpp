#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "gasnext/corpus.hpp"
#include "gasnext/error.hpp"
#include <nlohmann/json.hpp>

namespace gasnext {

namespace fs = std::filesystem;

namespace {

constexpr uint32_t kFirstCodepoint = 0xE000;  // private use area

struct Segment {
  double x0, y0, x1, y1;
};

struct StyleParams {
  double thickness;  // fraction of the canvas
  double slant;      // horizontal shear per unit height
  double scale;
  bool inverted;
};

double unit(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

double uniform(Rng& rng, double lo, double hi) { return lo + (hi - lo) * unit(rng); }

Rng stream(uint64_t seed, uint64_t kind, uint64_t index) {
  std::seed_seq seq{static_cast<uint32_t>(seed), static_cast<uint32_t>(seed >> 32),
                    static_cast<uint32_t>(kind), static_cast<uint32_t>(index)};
  return Rng(seq);
}

std::vector<Segment> glyph_skeleton(uint64_t seed, int glyph) {
  Rng rng = stream(seed, 1, static_cast<uint64_t>(glyph));
  std::vector<Segment> strokes;
  const int count = 3 + static_cast<int>(rng() % 3);
  for (int i = 0; i < count; ++i) {
    const bool horizontal = (rng() & 1) != 0;
    const double a = uniform(rng, 0.18, 0.82);
    const double b0 = uniform(rng, 0.15, 0.45);
    const double b1 = uniform(rng, 0.55, 0.85);
    const double tilt = uniform(rng, -0.15, 0.15);
    if (horizontal) {
      strokes.push_back({b0, a - tilt, b1, a + tilt});
    } else {
      strokes.push_back({a - tilt, b0, a + tilt, b1});
    }
  }
  // Occasional diagonal so glyphs are not all axis-aligned.
  if (rng() % 2 == 0) {
    strokes.push_back({uniform(rng, 0.2, 0.4), uniform(rng, 0.2, 0.4), uniform(rng, 0.6, 0.8),
                       uniform(rng, 0.6, 0.8)});
  }
  return strokes;
}

StyleParams content_font() { return {0.07, 0.0, 1.0, false}; }

StyleParams style_params(uint64_t seed, int style) {
  Rng rng = stream(seed, 2, static_cast<uint64_t>(style));
  StyleParams p;
  p.thickness = uniform(rng, 0.09, 0.18);
  p.slant = uniform(rng, -0.35, 0.35);
  p.scale = uniform(rng, 0.8, 1.0);
  p.inverted = unit(rng) < 0.25;
  return p;
}

double segment_distance(double px, double py, const Segment& s) {
  const double dx = s.x1 - s.x0;
  const double dy = s.y1 - s.y0;
  const double len2 = dx * dx + dy * dy;
  double t = len2 > 0 ? ((px - s.x0) * dx + (py - s.y0) * dy) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  const double ex = px - (s.x0 + t * dx);
  const double ey = py - (s.y0 + t * dy);
  return std::sqrt(ex * ex + ey * ey);
}

RawImage render(const std::vector<Segment>& strokes, const StyleParams& style, int64_t resolution) {
  RawImage img;
  img.width = img.height = static_cast<int>(resolution);
  img.channels = 1;
  img.data.resize(static_cast<size_t>(resolution * resolution));
  const double half = style.thickness / 2.0;
  for (int64_t y = 0; y < resolution; ++y) {
    for (int64_t x = 0; x < resolution; ++x) {
      const double cx = (static_cast<double>(x) + 0.5) / static_cast<double>(resolution);
      const double cy = (static_cast<double>(y) + 0.5) / static_cast<double>(resolution);
      // Undo the style transform to land in skeleton space.
      const double sx = (cx - 0.5 - style.slant * (0.5 - cy)) / style.scale + 0.5;
      const double sy = (cy - 0.5) / style.scale + 0.5;
      double best = 1e9;
      for (const auto& s : strokes) best = std::min(best, segment_distance(sx, sy, s));
      const bool ink = best * style.scale <= half;
      img.data[static_cast<size_t>(y * resolution + x)] = (ink != style.inverted) ? 0 : 255;
    }
  }
  return img;
}

}  // namespace

std::string codepoint_name(uint32_t codepoint) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%04x", codepoint);
  return buf;
}

void make_synthetic_corpus(const fs::path& root, const SyntheticCorpusOptions& options) {
  if (options.styles < 1) throw ConfigError("synthetic corpus needs at least 1 style");
  if (options.glyphs < 1) throw ConfigError("synthetic corpus needs at least 1 glyph");
  if (options.resolution < 4) throw ConfigError("synthetic corpus resolution must be at least 4");
  if (options.unseen_styles < 0 || options.unseen_styles > options.styles) {
    throw ConfigError("unseen_styles must be in [0, styles]");
  }

  std::error_code ec;
  fs::create_directories(root / "content", ec);
  if (ec || !fs::is_directory(root / "content")) {
    throw DataError("cannot create corpus directory under '" + root.string() + "'");
  }

  std::vector<std::vector<Segment>> skeletons;
  std::vector<std::string> codepoints;
  for (int g = 0; g < options.glyphs; ++g) {
    skeletons.push_back(glyph_skeleton(options.seed, g));
    codepoints.push_back(codepoint_name(kFirstCodepoint + static_cast<uint32_t>(g)));
    write_png(root / "content" / (codepoints.back() + ".png"),
              render(skeletons.back(), content_font(), options.resolution));
  }

  std::vector<std::string> seen, unseen;
  auto write_style = [&](const std::string& id, const StyleParams& params) {
    for (int g = 0; g < options.glyphs; ++g) {
      write_png(root / "styles" / id / (codepoints[g] + ".png"), render(skeletons[g], params, options.resolution));
    }
  };
  for (int s = 0; s < options.styles; ++s) {
    char id[32];
    std::snprintf(id, sizeof(id), "style_%02d", s);
    write_style(id, style_params(options.seed, s));
    (s >= options.styles - options.unseen_styles ? unseen : seen).push_back(id);
  }
  if (options.identity_style) {
    write_style("identity", content_font());
    seen.push_back("identity");
  }

  nlohmann::ordered_json manifest;
  manifest["format"] = "gasnext-corpus";
  manifest["version"] = 1;
  manifest["resolution"] = options.resolution;
  manifest["channels"] = 1;
  manifest["content_font"] = "synthetic-standard";
  manifest["seed"] = options.seed;
  manifest["splits"] = {{"seen_content", codepoints},
                        {"unseen_content", std::vector<std::string>{}},
                        {"seen_style", seen},
                        {"unseen_style", unseen}};
  std::ofstream out(root / "manifest.json", std::ios::binary);
  if (!out) throw DataError("cannot write manifest under '" + root.string() + "'");
  out << manifest.dump(2) << "\n";
}

}  // namespace gasnext
