#pragma once

// Samples, PGM image io, and the manifest format:
//   line 1: "# unitext-manifest v1"
//   then one record per line: relative_image_path<TAB>label<TAB>domain
// Images are binary PGM (P5), maxval 255, grayscale in [0,1] after load.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "unitext/errors.hpp"
#include "unitext/rng.hpp"
#include "unitext/tensor.hpp"
#include "unitext/vocab.hpp"

namespace unitext {

enum class Domain { scene, hand };

inline const char* domain_name(Domain d) {
  return d == Domain::scene ? "scene" : "hand";
}

inline Domain domain_from_name(const std::string& s) {
  if (s == "scene") return Domain::scene;
  if (s == "hand") return Domain::hand;
  throw FormatError("unknown domain '" + s + "'");
}

struct Image {
  int h = 0;
  int w = 0;
  std::vector<float> pix;  // row-major, [0,1]

  float& at(int y, int x) { return pix[static_cast<std::size_t>(y) * w + x]; }
  float at(int y, int x) const {
    return pix[static_cast<std::size_t>(y) * w + x];
  }
};

struct LabeledSample {
  Image image;
  std::string label;
  Domain domain = Domain::scene;
};

template <typename Real>
Tensor<Real> image_to_tensor(const Image& img) {
  std::vector<Real> data(img.pix.size());
  for (std::size_t i = 0; i < data.size(); ++i)
    data[i] = static_cast<Real>(img.pix[i]);
  return Tensor<Real>::from({img.h, img.w, 1}, std::move(data));
}

inline void write_pgm(const std::string& path, const Image& img) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot write image: " + path);
  f << "P5\n" << img.w << " " << img.h << "\n255\n";
  std::vector<unsigned char> row(static_cast<std::size_t>(img.w));
  for (int y = 0; y < img.h; ++y) {
    for (int x = 0; x < img.w; ++x) {
      float v = img.at(y, x);
      v = v < 0.f ? 0.f : (v > 1.f ? 1.f : v);
      row[static_cast<std::size_t>(x)] =
          static_cast<unsigned char>(v * 255.0f + 0.5f);
    }
    f.write(reinterpret_cast<const char*>(row.data()), img.w);
  }
  if (!f) throw IoError("short write to image: " + path);
}

inline Image read_pgm(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open image: " + path);
  std::string magic;
  f >> magic;
  if (magic != "P5") throw FormatError("not a binary PGM: " + path);
  int w = 0, h = 0, maxval = 0;
  f >> w >> h >> maxval;
  if (!f || w <= 0 || h <= 0 || maxval != 255)
    throw FormatError("bad PGM header: " + path);
  f.get();  // single whitespace after header
  Image img;
  img.h = h;
  img.w = w;
  img.pix.resize(static_cast<std::size_t>(h) * w);
  std::vector<unsigned char> raw(img.pix.size());
  f.read(reinterpret_cast<char*>(raw.data()),
         static_cast<std::streamsize>(raw.size()));
  if (!f) throw FormatError("truncated PGM payload: " + path);
  for (std::size_t i = 0; i < raw.size(); ++i)
    img.pix[i] = static_cast<float>(raw[i]) / 255.0f;
  return img;
}

struct ManifestRecord {
  std::string rel_path;
  std::string label;
  Domain domain = Domain::scene;
};

inline constexpr const char* kManifestHeader = "# unitext-manifest v1";

inline void write_manifest(const std::string& path,
                           const std::vector<ManifestRecord>& records) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot write manifest: " + path);
  f << kManifestHeader << "\n";
  for (const auto& r : records)
    f << r.rel_path << "\t" << r.label << "\t" << domain_name(r.domain)
      << "\n";
  if (!f) throw IoError("short write to manifest: " + path);
}

// One manifest = one dataset. Images load lazily and are memoized; label
// validation happens on open.
class Dataset {
 public:
  static Dataset load_manifest(const std::string& manifest_path,
                               const Vocabulary& vocab = Vocabulary()) {
    std::ifstream f(manifest_path);
    if (!f) throw IoError("cannot open manifest: " + manifest_path);
    Dataset ds;
    ds.dir_ = std::filesystem::path(manifest_path).parent_path().string();
    std::string line;
    if (!std::getline(f, line) || line != kManifestHeader)
      throw FormatError("manifest '" + manifest_path +
                        "': bad or missing header line");
    int lineno = 1;
    while (std::getline(f, line)) {
      ++lineno;
      if (line.empty()) continue;
      const auto t1 = line.find('\t');
      const auto t2 = line.find('\t', t1 == std::string::npos ? t1 : t1 + 1);
      if (t1 == std::string::npos || t2 == std::string::npos)
        throw FormatError("manifest '" + manifest_path + "' line " +
                          std::to_string(lineno) + ": expected 3 fields");
      ManifestRecord r;
      r.rel_path = line.substr(0, t1);
      r.label = line.substr(t1 + 1, t2 - t1 - 1);
      r.domain = domain_from_name(line.substr(t2 + 1));
      if (r.label.empty())
        throw FormatError("manifest '" + manifest_path + "' line " +
                          std::to_string(lineno) + ": empty label");
      for (char c : r.label)
        if (!vocab.contains(c))
          throw VocabError("manifest '" + manifest_path + "' line " +
                           std::to_string(lineno) + ": character '" +
                           std::string(1, c) + "' not in vocabulary");
      ds.records_.push_back(std::move(r));
    }
    ds.cache_.assign(ds.records_.size(), nullptr);
    return ds;
  }

  std::size_t size() const { return records_.size(); }
  bool empty() const { return records_.empty(); }
  const ManifestRecord& record(std::size_t i) const { return records_[i]; }

  const Image& image(std::size_t i) const {
    if (!cache_[i]) {
      const std::string path =
          (std::filesystem::path(dir_) / records_[i].rel_path).string();
      cache_[i] = std::make_shared<Image>(read_pgm(path));
    }
    return *cache_[i];
  }

  template <typename Real>
  Tensor<Real> image_tensor(std::size_t i) const {
    return image_to_tensor<Real>(image(i));
  }

  std::vector<int> label_ids(std::size_t i,
                             const Vocabulary& vocab = Vocabulary()) const {
    return vocab.encode(records_[i].label);
  }

  // Deterministic Fisher-Yates permutation of [0, size).
  std::vector<std::size_t> shuffled_indices(std::uint64_t seed) const {
    std::vector<std::size_t> idx(size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    Rng rng(seed, "shuffle");
    for (std::size_t i = idx.size(); i > 1; --i)
      std::swap(idx[i - 1], idx[static_cast<std::size_t>(
                    rng.below(static_cast<int>(i)))]);
    return idx;
  }

  const std::string& dir() const { return dir_; }

 private:
  std::string dir_;
  std::vector<ManifestRecord> records_;
  mutable std::vector<std::shared_ptr<Image>> cache_;
};

}  // namespace unitext
