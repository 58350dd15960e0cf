#pragma once

#include <string>
#include <vector>

#include "unitext/errors.hpp"

namespace unitext {

// Character set of the recognizer output layer. Output classes are the
// characters plus EOS; START exists only as a decoder input (one extra
// embedding row) and is never predicted.
class Vocabulary {
 public:
  Vocabulary() : Vocabulary(default_chars()) {}

  explicit Vocabulary(std::string chars) : chars_(std::move(chars)) {
    if (chars_.empty()) throw ConfigError("vocabulary: empty character set");
    index_.assign(256, -1);
    for (std::size_t i = 0; i < chars_.size(); ++i) {
      const auto c = static_cast<unsigned char>(chars_[i]);
      if (index_[c] != -1)
        throw ConfigError(std::string("vocabulary: duplicate character '") +
                          chars_[i] + "'");
      index_[c] = static_cast<int>(i);
    }
  }

  static std::string default_chars() {
    return "ABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789";
  }

  // Output classes: characters + EOS.
  int size() const { return static_cast<int>(chars_.size()) + 1; }
  int eos() const { return static_cast<int>(chars_.size()); }
  // Decoder-input-only symbol; also the row count of the embedding is
  // size() + 1 to accommodate it.
  int start() const { return size(); }

  bool contains(char c) const {
    return index_[static_cast<unsigned char>(c)] != -1;
  }

  int index_of(char c) const {
    const int i = index_[static_cast<unsigned char>(c)];
    if (i < 0)
      throw VocabError(std::string("character '") + c +
                       "' not in vocabulary");
    return i;
  }

  char char_at(int idx) const {
    if (idx < 0 || idx >= eos())
      throw VocabError("character index " + std::to_string(idx) +
                       " out of range");
    return chars_[static_cast<std::size_t>(idx)];
  }

  // EOS-terminated index sequence of length word.size() + 1.
  std::vector<int> encode(const std::string& word) const {
    std::vector<int> ids;
    ids.reserve(word.size() + 1);
    for (char c : word) ids.push_back(index_of(c));
    ids.push_back(eos());
    return ids;
  }

  // Characters up to (excluding) the first EOS.
  std::string decode(const std::vector<int>& ids) const {
    std::string s;
    for (int id : ids) {
      if (id == eos()) break;
      s += char_at(id);
    }
    return s;
  }

  const std::string& chars() const { return chars_; }

  bool operator==(const Vocabulary& o) const { return chars_ == o.chars_; }
  bool operator!=(const Vocabulary& o) const { return !(*this == o); }

 private:
  std::string chars_;
  std::vector<int> index_;
};

}  // namespace unitext
