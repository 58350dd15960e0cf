#pragma once

// Deterministic two-domain word-image generator. The "scene" domain puts
// bright glyphs on a cluttered gradient background (noise, blur, contrast,
// slight rotation); the "hand" domain writes dark strokes on paper-like
// background with per-character shear, baseline wobble, stroke weight
// variation and kerning down to overlap. Every sample is a pure function of
// (seed, word, domain).

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <set>
#include <string>
#include <vector>

#include "unitext/data.hpp"
#include "unitext/errors.hpp"
#include "unitext/rng.hpp"
#include "unitext/vocab.hpp"

namespace unitext {

namespace glyphs {

// 5x7 dot-matrix font, A-Z then 0-9. Row-major, '#' = ink.
inline const char* bitmap(char c) {
  static const char* const kFont[36] = {
      // A
      ".###."
      "#...#"
      "#...#"
      "#####"
      "#...#"
      "#...#"
      "#...#",
      // B
      "####."
      "#...#"
      "#...#"
      "####."
      "#...#"
      "#...#"
      "####.",
      // C
      ".###."
      "#...#"
      "#...."
      "#...."
      "#...."
      "#...#"
      ".###.",
      // D
      "####."
      "#...#"
      "#...#"
      "#...#"
      "#...#"
      "#...#"
      "####.",
      // E
      "#####"
      "#...."
      "#...."
      "####."
      "#...."
      "#...."
      "#####",
      // F
      "#####"
      "#...."
      "#...."
      "####."
      "#...."
      "#...."
      "#....",
      // G
      ".###."
      "#...#"
      "#...."
      "#.###"
      "#...#"
      "#...#"
      ".###.",
      // H
      "#...#"
      "#...#"
      "#...#"
      "#####"
      "#...#"
      "#...#"
      "#...#",
      // I
      ".###."
      "..#.."
      "..#.."
      "..#.."
      "..#.."
      "..#.."
      ".###.",
      // J
      "..###"
      "...#."
      "...#."
      "...#."
      "...#."
      "#..#."
      ".##..",
      // K
      "#...#"
      "#..#."
      "#.#.."
      "##..."
      "#.#.."
      "#..#."
      "#...#",
      // L
      "#...."
      "#...."
      "#...."
      "#...."
      "#...."
      "#...."
      "#####",
      // M
      "#...#"
      "##.##"
      "#.#.#"
      "#.#.#"
      "#...#"
      "#...#"
      "#...#",
      // N
      "#...#"
      "##..#"
      "#.#.#"
      "#..##"
      "#...#"
      "#...#"
      "#...#",
      // O
      ".###."
      "#...#"
      "#...#"
      "#...#"
      "#...#"
      "#...#"
      ".###.",
      // P
      "####."
      "#...#"
      "#...#"
      "####."
      "#...."
      "#...."
      "#....",
      // Q
      ".###."
      "#...#"
      "#...#"
      "#...#"
      "#.#.#"
      "#..#."
      ".##.#",
      // R
      "####."
      "#...#"
      "#...#"
      "####."
      "#.#.."
      "#..#."
      "#...#",
      // S
      ".####"
      "#...."
      "#...."
      ".###."
      "....#"
      "....#"
      "####.",
      // T
      "#####"
      "..#.."
      "..#.."
      "..#.."
      "..#.."
      "..#.."
      "..#..",
      // U
      "#...#"
      "#...#"
      "#...#"
      "#...#"
      "#...#"
      "#...#"
      ".###.",
      // V
      "#...#"
      "#...#"
      "#...#"
      "#...#"
      ".#.#."
      ".#.#."
      "..#..",
      // W
      "#...#"
      "#...#"
      "#...#"
      "#.#.#"
      "#.#.#"
      "##.##"
      "#...#",
      // X
      "#...#"
      "#...#"
      ".#.#."
      "..#.."
      ".#.#."
      "#...#"
      "#...#",
      // Y
      "#...#"
      "#...#"
      ".#.#."
      "..#.."
      "..#.."
      "..#.."
      "..#..",
      // Z
      "#####"
      "....#"
      "...#."
      "..#.."
      ".#..."
      "#...."
      "#####",
      // 0
      ".###."
      "#...#"
      "#..##"
      "#.#.#"
      "##..#"
      "#...#"
      ".###.",
      // 1
      "..#.."
      ".##.."
      "..#.."
      "..#.."
      "..#.."
      "..#.."
      ".###.",
      // 2
      ".###."
      "#...#"
      "....#"
      "...#."
      "..#.."
      ".#..."
      "#####",
      // 3
      "#####"
      "...#."
      "..#.."
      "...#."
      "....#"
      "#...#"
      ".###.",
      // 4
      "...#."
      "..##."
      ".#.#."
      "#..#."
      "#####"
      "...#."
      "...#.",
      // 5
      "#####"
      "#...."
      "####."
      "....#"
      "....#"
      "#...#"
      ".###.",
      // 6
      "..##."
      ".#..."
      "#...."
      "####."
      "#...#"
      "#...#"
      ".###.",
      // 7
      "#####"
      "....#"
      "...#."
      "..#.."
      ".#..."
      ".#..."
      ".#...",
      // 8
      ".###."
      "#...#"
      "#...#"
      ".###."
      "#...#"
      "#...#"
      ".###.",
      // 9
      ".###."
      "#...#"
      "#...#"
      ".####"
      "....#"
      "...#."
      ".##..",
  };
  if (c >= 'A' && c <= 'Z') return kFont[c - 'A'];
  if (c >= '0' && c <= '9') return kFont[26 + (c - '0')];
  throw VocabError(std::string("no glyph for character '") + c + "'");
}

// Bilinear coverage sample at fractional glyph coords, u in [0,5), v in
// [0,7); zero outside.
inline float sample(const char* bits, float u, float v) {
  auto cell = [&](int x, int y) -> float {
    if (x < 0 || x >= 5 || y < 0 || y >= 7) return 0.f;
    return bits[y * 5 + x] == '#' ? 1.f : 0.f;
  };
  const float fx = u - 0.5f, fy = v - 0.5f;
  const int x0 = static_cast<int>(std::floor(fx));
  const int y0 = static_cast<int>(std::floor(fy));
  const float ax = fx - static_cast<float>(x0);
  const float ay = fy - static_cast<float>(y0);
  return (1 - ax) * (1 - ay) * cell(x0, y0) + ax * (1 - ay) * cell(x0 + 1, y0) +
         (1 - ax) * ay * cell(x0, y0 + 1) + ax * ay * cell(x0 + 1, y0 + 1);
}

}  // namespace glyphs

// Distortion menu of one domain. All values are ranges the renderer draws
// from; neutral values with zero width give a clean render.
struct DomainSpec {
  double noise_lo = 0, noise_hi = 0;        // additive gaussian sigma
  double shear_lo = 0, shear_hi = 0;        // per-char shear, degrees
  double rotate_deg = 0;                    // whole-word rotation, +/- deg
  double kern_lo = 0, kern_hi = 0;          // advance offset, fraction of gw
  double wobble_px = 0;                     // per-char baseline jitter
  double blur_lo = 0, blur_hi = 0;          // 3x3 blur mix in [0,1]
  double contrast_lo = 1, contrast_hi = 1;  // 1 = neutral
  double thick_lo = 1, thick_hi = 1;        // stroke weight multiplier
  double bg_lo = 0, bg_hi = 0;              // background gray level range
  double ink_lo = 1, ink_hi = 1;            // glyph gray level range
};

struct GenSpec {
  int img_h = 32;
  int img_w = 96;
  int glyph_h = 20;
  int word_min = 3;
  int word_max = 5;
  int train_count = 2000;
  int val_count = 200;
  int test_count = 200;
  std::uint64_t seed = 7;
  std::vector<std::string> lexicon;  // empty -> random words are generated
  DomainSpec scene;
  DomainSpec hand;

  GenSpec() {
    scene.bg_lo = 0.05;
    scene.bg_hi = 0.45;
    scene.ink_lo = 0.75;
    scene.ink_hi = 1.0;
    scene.noise_lo = 0.05;
    scene.noise_hi = 0.15;
    scene.rotate_deg = 5.0;
    scene.kern_lo = 0.05;
    scene.kern_hi = 0.20;
    scene.blur_lo = 0.0;
    scene.blur_hi = 0.5;
    scene.contrast_lo = 0.75;
    scene.contrast_hi = 1.0;
    scene.thick_lo = 1.1;
    scene.thick_hi = 1.5;

    hand.bg_lo = 0.82;
    hand.bg_hi = 0.98;
    hand.ink_lo = 0.02;
    hand.ink_hi = 0.22;
    hand.noise_lo = 0.01;
    hand.noise_hi = 0.05;
    hand.shear_lo = -25.0;
    hand.shear_hi = 25.0;
    hand.wobble_px = 2.5;
    hand.kern_lo = -0.30;
    hand.kern_hi = 0.05;
    hand.contrast_lo = 0.9;
    hand.contrast_hi = 1.0;
    hand.thick_lo = 0.8;
    hand.thick_hi = 1.5;
  }

  // No distortion at all: black-on-white / white-on-black clean glyphs.
  static GenSpec clean() {
    GenSpec s;
    s.scene = DomainSpec{};
    s.scene.bg_lo = s.scene.bg_hi = 0.0;
    s.scene.ink_lo = s.scene.ink_hi = 1.0;
    s.hand = DomainSpec{};
    s.hand.bg_lo = s.hand.bg_hi = 1.0;
    s.hand.ink_lo = s.hand.ink_hi = 0.0;
    return s;
  }

  void validate() const {
    auto ordered = [](double lo, double hi) { return lo <= hi; };
    for (const DomainSpec* d : {&scene, &hand}) {
      if (!ordered(d->noise_lo, d->noise_hi) ||
          !ordered(d->shear_lo, d->shear_hi) ||
          !ordered(d->kern_lo, d->kern_hi) ||
          !ordered(d->blur_lo, d->blur_hi) ||
          !ordered(d->contrast_lo, d->contrast_hi) ||
          !ordered(d->thick_lo, d->thick_hi) ||
          !ordered(d->bg_lo, d->bg_hi) || !ordered(d->ink_lo, d->ink_hi))
        throw ConfigError("gen spec: range not well ordered");
    }
    if (train_count < 0 || val_count < 0 || test_count < 0)
      throw ConfigError("gen spec: counts must be >= 0");
    if (word_min < 1 || word_max < word_min)
      throw ConfigError("gen spec: bad word length range");
    if (img_h < 8 || img_w < 8 || glyph_h < 7)
      throw ConfigError("gen spec: image too small");
  }
};

inline LabeledSample render_word(const std::string& word, Domain domain,
                                 const GenSpec& spec,
                                 std::uint64_t sample_seed) {
  spec.validate();
  if (word.empty()) throw InputError("render_word: empty word");
  std::vector<const char*> bits;
  bits.reserve(word.size());
  for (char c : word) bits.push_back(glyphs::bitmap(c));

  const DomainSpec& d = domain == Domain::scene ? spec.scene : spec.hand;
  Rng rng(sample_seed, "render");
  const int n = static_cast<int>(word.size());
  const float gh = static_cast<float>(spec.glyph_h);
  const float gw = gh * 5.0f / 7.0f;

  // Layout: per-gap kerning as a fraction of glyph width.
  std::vector<float> xoff(static_cast<std::size_t>(n));
  float cursor = 0.f;
  for (int i = 0; i < n; ++i) {
    xoff[static_cast<std::size_t>(i)] = cursor;
    const float kern = static_cast<float>(rng.uniform(d.kern_lo, d.kern_hi));
    cursor += gw * (1.0f + kern);
  }
  const float total_w = xoff.back() + gw;
  const float margin = 3.f;
  if (total_w > static_cast<float>(spec.img_w) - 2 * margin)
    throw InputError("render_word: word '" + word +
                     "' does not fit image width after kerning");

  const float x0 = (static_cast<float>(spec.img_w) - total_w) / 2 +
                   static_cast<float>(rng.uniform(-2.0, 2.0));
  const float ytop = (static_cast<float>(spec.img_h) - gh) / 2 +
                     static_cast<float>(rng.uniform(-1.5, 1.5));
  const float theta = static_cast<float>(
      rng.uniform(-d.rotate_deg, d.rotate_deg) * 3.14159265358979 / 180.0);

  std::vector<float> shear(static_cast<std::size_t>(n)),
      wob(static_cast<std::size_t>(n)), thick(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    shear[static_cast<std::size_t>(i)] = static_cast<float>(
        std::tan(rng.uniform(d.shear_lo, d.shear_hi) * 3.14159265358979 /
                 180.0));
    wob[static_cast<std::size_t>(i)] =
        static_cast<float>(rng.uniform(-d.wobble_px, d.wobble_px));
    thick[static_cast<std::size_t>(i)] =
        static_cast<float>(rng.uniform(d.thick_lo, d.thick_hi));
  }

  LabeledSample s;
  s.label = word;
  s.domain = domain;
  s.image.h = spec.img_h;
  s.image.w = spec.img_w;
  s.image.pix.assign(static_cast<std::size_t>(spec.img_h) * spec.img_w, 0.f);

  // Ink mask via max composition over characters.
  std::vector<float> mask(s.image.pix.size(), 0.f);
  const float cx = static_cast<float>(spec.img_w) / 2;
  const float cy = static_cast<float>(spec.img_h) / 2;
  const float ct = std::cos(theta), st = std::sin(theta);
  for (int i = 0; i < n; ++i) {
    const float xc = x0 + xoff[static_cast<std::size_t>(i)];
    const float yc = ytop + wob[static_cast<std::size_t>(i)];
    for (int y = 0; y < spec.img_h; ++y)
      for (int x = 0; x < spec.img_w; ++x) {
        // undo word rotation, then per-char shear about the glyph middle
        const float rx = ct * (static_cast<float>(x) - cx) +
                         st * (static_cast<float>(y) - cy) + cx;
        const float ry = -st * (static_cast<float>(x) - cx) +
                         ct * (static_cast<float>(y) - cy) + cy;
        const float ys = ry - yc;
        if (ys < -1.f || ys > gh + 1.f) continue;
        const float xs = rx - xc -
                         shear[static_cast<std::size_t>(i)] * (ys - gh / 2);
        if (xs < -1.f || xs > gw + 1.f) continue;
        float cov = glyphs::sample(bits[static_cast<std::size_t>(i)],
                                   xs / gw * 5.f, ys / gh * 7.f);
        cov *= thick[static_cast<std::size_t>(i)];
        if (cov > 1.f) cov = 1.f;
        auto& m = mask[static_cast<std::size_t>(y) * spec.img_w + x];
        if (cov > m) m = cov;
      }
  }

  // Background, ink, blur, contrast, noise. Draw order is fixed so the
  // sample is fully determined by the seed.
  const float b0 = static_cast<float>(rng.uniform(d.bg_lo, d.bg_hi));
  const float b1 = static_cast<float>(rng.uniform(d.bg_lo, d.bg_hi));
  const float phi = static_cast<float>(rng.uniform(0, 2 * 3.14159265358979));
  const float ink = static_cast<float>(rng.uniform(d.ink_lo, d.ink_hi));
  const float gx = std::cos(phi), gy = std::sin(phi);
  const float diag =
      std::sqrt(static_cast<float>(spec.img_w * spec.img_w +
                                   spec.img_h * spec.img_h));
  for (int y = 0; y < spec.img_h; ++y)
    for (int x = 0; x < spec.img_w; ++x) {
      const float t = ((static_cast<float>(x) - cx) * gx +
                       (static_cast<float>(y) - cy) * gy) /
                          diag +
                      0.5f;
      const float bg = b0 + (b1 - b0) * t;
      const float m = mask[static_cast<std::size_t>(y) * spec.img_w + x];
      s.image.at(y, x) = bg * (1.f - m) + ink * m;
    }

  const float blur = static_cast<float>(rng.uniform(d.blur_lo, d.blur_hi));
  if (blur > 0.f) {
    Image src = s.image;
    for (int y = 0; y < spec.img_h; ++y)
      for (int x = 0; x < spec.img_w; ++x) {
        float acc = 0.f;
        int cnt = 0;
        for (int dy = -1; dy <= 1; ++dy)
          for (int dx = -1; dx <= 1; ++dx) {
            const int yy = y + dy, xx = x + dx;
            if (yy < 0 || yy >= spec.img_h || xx < 0 || xx >= spec.img_w)
              continue;
            acc += src.at(yy, xx);
            ++cnt;
          }
        s.image.at(y, x) =
            (1.f - blur) * src.at(y, x) + blur * acc / static_cast<float>(cnt);
      }
  }

  const float contrast =
      static_cast<float>(rng.uniform(d.contrast_lo, d.contrast_hi));
  const float sigma = static_cast<float>(rng.uniform(d.noise_lo, d.noise_hi));
  for (auto& v : s.image.pix) {
    v = 0.5f + contrast * (v - 0.5f);
    if (sigma > 0.f) v += sigma * static_cast<float>(rng.normal());
    v = v < 0.f ? 0.f : (v > 1.f ? 1.f : v);
  }
  return s;
}

inline std::uint64_t sample_seed_for(std::uint64_t global_seed,
                                     const std::string& group, int index) {
  std::uint64_t h = hash_u64(0xcbf29ce484222325ULL, global_seed);
  h = fnv1a64(group, h);
  return hash_u64(h, static_cast<std::uint64_t>(index));
}

struct GenSummary {
  std::string out_dir;
  int per_domain_counts[3] = {0, 0, 0};  // train, val, test
  int lexicon_size = 0;
};

namespace detail {

inline std::vector<std::string> make_lexicon(const GenSpec& spec,
                                             int want_words) {
  Rng rng(spec.seed, "lexicon");
  const Vocabulary vocab;
  std::set<std::string> seen;
  std::vector<std::string> out;
  int guard = 0;
  while (static_cast<int>(out.size()) < want_words && guard < want_words * 200) {
    ++guard;
    const int len = spec.word_min + rng.below(spec.word_max - spec.word_min + 1);
    std::string w;
    for (int i = 0; i < len; ++i)
      w += vocab.chars()[static_cast<std::size_t>(
          rng.below(static_cast<int>(vocab.chars().size())))];
    if (seen.insert(w).second) out.push_back(w);
  }
  if (static_cast<int>(out.size()) < want_words)
    throw InputError("lexicon generation could not produce enough words");
  return out;
}

}  // namespace detail

// Writes out/<domain>/<split>/{manifest.txt, NNNNN.pgm}. Word draws are
// split-disjoint when the lexicon is large enough; per-sample seeds are
// hash(seed, domain/split, index) so regeneration is incremental-safe.
inline GenSummary synthesize_dataset(const GenSpec& spec,
                                     const std::string& out_dir) {
  spec.validate();
  namespace fs = std::filesystem;

  const int counts[3] = {spec.train_count, spec.val_count, spec.test_count};
  const char* split_names[3] = {"train", "val", "test"};

  // Unique-word budget per split: one word per sample, so the decoder
  // cannot get away with memorizing a small lexicon instead of reading
  // characters. Falls back to sharing an explicit lexicon across splits
  // when it is too small to keep them disjoint.
  int want[3];
  for (int s = 0; s < 3; ++s) want[s] = counts[s];

  std::vector<std::string> lex = spec.lexicon;
  std::vector<std::string> bucket[3];
  if (lex.empty()) lex = detail::make_lexicon(spec, want[0] + want[1] + want[2]);
  {
    const Vocabulary vocab;
    for (const auto& w : lex)
      for (char c : w)
        if (!vocab.contains(c))
          throw VocabError("lexicon word '" + w + "' has characters outside "
                           "the glyph set");
  }
  if (static_cast<int>(lex.size()) >= want[0] + want[1] + want[2]) {
    // lexicon order is already deterministic; deal out disjoint slices
    int pos = 0;
    for (int s = 0; s < 3; ++s)
      for (int i = 0; i < want[s]; ++i) bucket[s].push_back(lex[pos++]);
  } else {
    for (int s = 0; s < 3; ++s) bucket[s] = lex;
  }

  GenSummary summary;
  summary.out_dir = out_dir;
  summary.lexicon_size = static_cast<int>(lex.size());

  for (Domain dom : {Domain::scene, Domain::hand}) {
    for (int s = 0; s < 3; ++s) {
      const fs::path dir =
          fs::path(out_dir) / domain_name(dom) / split_names[s];
      std::error_code ec;
      fs::create_directories(dir, ec);
      if (ec)
        throw IoError("cannot create dataset directory " + dir.string() +
                      ": " + ec.message());
      std::vector<ManifestRecord> records;
      const std::string group =
          std::string(domain_name(dom)) + "/" + split_names[s];
      for (int i = 0; i < counts[s]; ++i) {
        const std::uint64_t ss = sample_seed_for(spec.seed, group, i);
        const auto& words = bucket[s];
        if (words.empty()) throw InputError("no words available for split");
        const std::string& word =
            words[static_cast<std::size_t>(i) % words.size()];
        LabeledSample sample = render_word(word, dom, spec, ss);
        char fname[16];
        std::snprintf(fname, sizeof fname, "%05d.pgm", i);
        write_pgm((dir / fname).string(), sample.image);
        records.push_back(ManifestRecord{fname, sample.label, dom});
      }
      write_manifest((dir / "manifest.txt").string(), records);
      summary.per_domain_counts[s] = counts[s];
    }
  }
  return summary;
}

inline std::string dataset_manifest_path(const std::string& root, Domain dom,
                                         const std::string& split) {
  return (std::filesystem::path(root) / domain_name(dom) / split /
          "manifest.txt")
      .string();
}

}  // namespace unitext
