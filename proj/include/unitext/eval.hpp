#pragma once

// Word Recognition Accuracy / Character Error Rate evaluation and the
// cross-domain matrix report. Evaluation is read-only over models.

#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "unitext/data.hpp"
#include "unitext/errors.hpp"
#include "unitext/recognizer.hpp"
#include "unitext/threads.hpp"

namespace unitext {

inline int levenshtein(const std::string& a, const std::string& b) {
  const std::size_t n = a.size(), m = b.size();
  std::vector<int> prev(m + 1), cur(m + 1);
  for (std::size_t j = 0; j <= m; ++j) prev[j] = static_cast<int>(j);
  for (std::size_t i = 1; i <= n; ++i) {
    cur[0] = static_cast<int>(i);
    for (std::size_t j = 1; j <= m; ++j) {
      const int sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      cur[j] = std::min(std::min(prev[j] + 1, cur[j - 1] + 1), sub);
    }
    std::swap(prev, cur);
  }
  return prev[m];
}

struct EvalCell {
  std::string model;
  std::string dataset;
  int n = 0;
  double wra = 0;
  double cer = 0;
  std::string checkpoint_hash;
};

// Metric arithmetic over (prediction, reference) pairs: WRA is the exact
// case-sensitive match fraction, CER the mean of edit distance divided by
// reference length.
inline EvalCell metrics_from_pairs(
    const std::vector<std::pair<std::string, std::string>>& pairs) {
  if (pairs.empty()) throw InputError("metrics_from_pairs: no pairs");
  EvalCell cell;
  cell.n = static_cast<int>(pairs.size());
  long long hits = 0;
  double cer = 0;
  for (const auto& [pred, ref] : pairs) {
    if (ref.empty()) throw InputError("metrics_from_pairs: empty reference");
    if (pred == ref) ++hits;
    cer += static_cast<double>(levenshtein(pred, ref)) /
           static_cast<double>(ref.size());
  }
  cell.wra = static_cast<double>(hits) / static_cast<double>(cell.n);
  cell.cer = cer / static_cast<double>(cell.n);
  return cell;
}

// Greedy-decodes every sample, then scores. Deterministic; decoding is
// sample-parallel, the reduction happens in index order.
template <typename Real>
EvalCell evaluate_wra(const Recognizer<Real>& model, const Dataset& dataset,
                      int threads = 1) {
  if (dataset.empty()) throw InputError("evaluate_wra: empty dataset");
  for (std::size_t i = 0; i < dataset.size(); ++i)
    for (char c : dataset.record(i).label)
      if (!model.cfg.vocab.contains(c))
        throw ConfigError("evaluate_wra: label '" + dataset.record(i).label +
                          "' uses characters outside the model vocabulary");
  const std::size_t n = dataset.size();
  std::vector<std::string> preds(n);
  parallel_chunks(n, threads, [&](std::size_t b, std::size_t e, int) {
    for (std::size_t i = b; i < e; ++i)
      preds[i] = greedy_decode(dataset.image_tensor<Real>(i), model,
                               model.cfg.max_len);
  });
  std::vector<std::pair<std::string, std::string>> pairs;
  pairs.reserve(n);
  for (std::size_t i = 0; i < n; ++i)
    pairs.emplace_back(preds[i], dataset.record(i).label);
  return metrics_from_pairs(pairs);
}

template <typename Real>
struct NamedModel {
  std::string name;
  const Recognizer<Real>* model = nullptr;
  std::string checkpoint_hash;
};

struct NamedDataset {
  std::string name;
  const Dataset* data = nullptr;
};

template <typename Real>
std::vector<EvalCell> cross_domain_matrix(
    const std::vector<NamedModel<Real>>& models,
    const std::vector<NamedDataset>& datasets, int threads = 1) {
  std::vector<EvalCell> cells;
  for (const auto& m : models)
    for (const auto& d : datasets) {
      EvalCell c = evaluate_wra(*m.model, *d.data, threads);
      c.model = m.name;
      c.dataset = d.name;
      c.checkpoint_hash = m.checkpoint_hash;
      cells.push_back(std::move(c));
    }
  return cells;
}

// Bit-stable CSV: fixed column order, 4-decimal fixed-point metrics.
inline void emit_report(const std::vector<EvalCell>& cells,
                        const std::string& path) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot write report: " + path);
  f << "model,dataset,n,wra,cer,checkpoint_hash\n";
  char buf[64];
  for (const auto& c : cells) {
    std::snprintf(buf, sizeof buf, "%.4f,%.4f", c.wra, c.cer);
    f << c.model << "," << c.dataset << "," << c.n << "," << buf << ","
      << c.checkpoint_hash << "\n";
  }
  if (!f) throw IoError("short write to report: " + path);
}

}  // namespace unitext
