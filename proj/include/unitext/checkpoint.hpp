#pragma once

// UTXC checkpoint format, little-endian, bit-exact round trip:
//   magic "UTXC", u32 version=1, u32 tensor_count,
//   per tensor: u16 name_len, name, u8 ndim, ndim x u32 dims, f32 data,
//   then u32 json_len + UTF-8 JSON blob (config + vocabulary).
// Tensor payloads are always 32-bit floats regardless of the in-memory
// scalar type.

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "unitext/errors.hpp"
#include "unitext/recognizer.hpp"
#include "unitext/rng.hpp"

namespace unitext {

namespace detail {

inline void put_bytes(std::string& out, const void* p, std::size_t n) {
  out.append(static_cast<const char*>(p), n);
}
template <typename T>
inline void put_le(std::string& out, T v) {
  static_assert(std::is_integral_v<T>);
  for (std::size_t i = 0; i < sizeof(T); ++i)
    out.push_back(static_cast<char>((static_cast<std::uint64_t>(v) >> (8 * i)) &
                                    0xff));
}

class ByteReader {
 public:
  ByteReader(const std::string& bytes, const std::string& path)
      : b_(bytes), path_(path) {}

  template <typename T>
  T get_le() {
    need(sizeof(T));
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i)
      v |= static_cast<std::uint64_t>(
               static_cast<unsigned char>(b_[pos_ + i]))
           << (8 * i);
    pos_ += sizeof(T);
    return static_cast<T>(v);
  }

  std::string get_str(std::size_t n) {
    need(n);
    std::string s = b_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  void get_f32(float* dst, std::size_t count) {
    need(count * 4);
    std::memcpy(dst, b_.data() + pos_, count * 4);
    pos_ += count * 4;
  }

  std::size_t pos() const { return pos_; }
  bool done() const { return pos_ == b_.size(); }

  void need(std::size_t n) {
    if (pos_ + n > b_.size())
      throw FormatError("checkpoint '" + path_ + "': truncated at offset " +
                        std::to_string(pos_));
  }

 private:
  const std::string& b_;
  std::string path_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline nlohmann::json config_to_json(const RecognizerConfig& cfg) {
  nlohmann::json j;
  j["input_h"] = cfg.input_h;
  j["input_w"] = cfg.input_w;
  j["widths"] = cfg.widths;
  j["hidden"] = cfg.hidden;
  j["embed"] = cfg.embed;
  j["max_len"] = cfg.max_len;
  j["vocab"] = {{"chars", cfg.vocab.chars()}};
  return j;
}

inline RecognizerConfig config_from_json(const nlohmann::json& j) {
  RecognizerConfig cfg;
  try {
    cfg.input_h = j.at("input_h").get<int>();
    cfg.input_w = j.at("input_w").get<int>();
    cfg.widths = j.at("widths").get<std::vector<int>>();
    cfg.hidden = j.at("hidden").get<int>();
    cfg.embed = j.at("embed").get<int>();
    cfg.max_len = j.at("max_len").get<int>();
    cfg.vocab = Vocabulary(j.at("vocab").at("chars").get<std::string>());
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint config blob: ") + e.what());
  }
  return cfg;
}

template <typename Real>
std::string serialize_checkpoint(const Recognizer<Real>& model) {
  std::string out;
  out.reserve(1 << 20);
  detail::put_bytes(out, "UTXC", 4);
  detail::put_le<std::uint32_t>(out, 1);
  const auto named = model.params.named();
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(named.size()));
  for (const auto& [name, t] : named) {
    detail::put_le<std::uint16_t>(out, static_cast<std::uint16_t>(name.size()));
    detail::put_bytes(out, name.data(), name.size());
    out.push_back(static_cast<char>(t.ndim()));
    for (int i = 0; i < t.ndim(); ++i)
      detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(t.dim(i)));
    for (Real v : t.data()) {
      const float f = static_cast<float>(v);
      std::uint32_t bits;
      std::memcpy(&bits, &f, 4);
      detail::put_le<std::uint32_t>(out, bits);
    }
  }
  const std::string blob = config_to_json(model.cfg).dump();
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(blob.size()));
  detail::put_bytes(out, blob.data(), blob.size());
  return out;
}

template <typename Real>
void save_checkpoint(const Recognizer<Real>& model, const std::string& path) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open checkpoint for writing: " + path);
  const std::string bytes = serialize_checkpoint(model);
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw IoError("short write to checkpoint: " + path);
}

template <typename Real>
Recognizer<Real> deserialize_checkpoint(const std::string& bytes,
                                        const std::string& path) {
  detail::ByteReader r(bytes, path);
  if (r.get_str(4) != "UTXC")
    throw FormatError("checkpoint '" + path + "': bad magic");
  const auto version = r.get_le<std::uint32_t>();
  if (version != 1)
    throw FormatError("checkpoint '" + path + "': unsupported version " +
                      std::to_string(version));
  const auto count = r.get_le<std::uint32_t>();
  std::map<std::string, Tensor<Real>> tensors;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name_len = r.get_le<std::uint16_t>();
    const std::string name = r.get_str(name_len);
    const auto ndim = r.get_le<std::uint8_t>();
    std::vector<int> shape(ndim);
    for (auto& d : shape) d = static_cast<int>(r.get_le<std::uint32_t>());
    const std::size_t n = numel(shape);
    std::vector<float> raw(n);
    r.get_f32(raw.data(), n);
    std::vector<Real> data(n);
    for (std::size_t k = 0; k < n; ++k) data[k] = static_cast<Real>(raw[k]);
    auto t = Tensor<Real>::from(std::move(shape), std::move(data));
    t.set_name(name);
    if (!tensors.emplace(name, t).second)
      throw FormatError("checkpoint '" + path + "': duplicate tensor '" +
                        name + "'");
  }
  const auto blob_len = r.get_le<std::uint32_t>();
  const std::string blob = r.get_str(blob_len);
  if (!r.done())
    throw FormatError("checkpoint '" + path + "': trailing bytes at offset " +
                      std::to_string(r.pos()));
  nlohmann::json j = nlohmann::json::parse(blob, nullptr, false);
  if (j.is_discarded())
    throw FormatError("checkpoint '" + path + "': config blob is not JSON");
  RecognizerConfig cfg = config_from_json(j);

  // Build a skeleton with the right shapes, then fill by name.
  Recognizer<Real> model = make_recognizer<Real>(cfg, 0);
  if (tensors.count("hint.proj")) {
    auto& t = tensors.at("hint.proj");
    model.params.hint_proj = Tensor<Real>(t.shape());
    model.params.hint_proj.set_name("hint.proj");
  }
  auto named = model.params.named();
  if (named.size() != tensors.size())
    throw FormatError("checkpoint '" + path + "': expected " +
                      std::to_string(named.size()) + " tensors, found " +
                      std::to_string(tensors.size()));
  for (auto& [name, t] : named) {
    auto it = tensors.find(name);
    if (it == tensors.end())
      throw FormatError("checkpoint '" + path + "': missing tensor '" + name +
                        "'");
    if (it->second.shape() != t.shape())
      throw FormatError("checkpoint '" + path + "': tensor '" + name +
                        "' has shape " + shape_str(it->second.shape()) +
                        ", config implies " + shape_str(t.shape()));
    t.data() = it->second.data();
  }
  return model;
}

template <typename Real>
Recognizer<Real> load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open checkpoint: " + path);
  std::string bytes((std::istreambuf_iterator<char>(f)),
                    std::istreambuf_iterator<char>());
  return deserialize_checkpoint<Real>(bytes, path);
}

// Load and insist on a vocabulary (e.g. student loading its teachers).
template <typename Real>
Recognizer<Real> load_checkpoint(const std::string& path,
                                 const Vocabulary& expected) {
  Recognizer<Real> m = load_checkpoint<Real>(path);
  if (m.cfg.vocab != expected)
    throw ConfigError("checkpoint '" + path +
                      "': vocabulary does not match expected one");
  return m;
}

inline std::uint64_t file_content_hash(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open file for hashing: " + path);
  std::string bytes((std::istreambuf_iterator<char>(f)),
                    std::istreambuf_iterator<char>());
  return fnv1a64(bytes.data(), bytes.size());
}

inline std::string hash_hex(std::uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(h));
  return std::string(buf);
}

}  // namespace unitext
