#pragma once

// Randomized finite-difference verification of every differentiable
// primitive and of the full composed training objective. Runs in 64-bit
// mode; this is the engine's gradcheck surface, exposed on the CLI and used
// by the acceptance suite.

#include <cstdio>
#include <functional>
#include <string>
#include <vector>

#include "unitext/distill.hpp"
#include "unitext/gradcheck.hpp"
#include "unitext/recognizer.hpp"
#include "unitext/rng.hpp"
#include "unitext/tensor.hpp"

namespace unitext {

struct VerifySummary {
  int checks = 0;
  double worst = 0;
  bool pass = true;
  std::vector<std::string> failures;

  void fold(const std::string& what, const GradCheckReport& r) {
    ++checks;
    worst = std::max(worst, r.worst);
    if (!r.pass) {
      pass = false;
      char buf[160];
      std::snprintf(buf, sizeof buf, "%s (worst rel err %.3e)", what.c_str(),
                    r.worst);
      failures.push_back(buf);
    }
  }
};

namespace detail {

inline Tensor<double> rand_tensor(Rng& rng, std::vector<int> shape,
                                  double lo = -1.0, double hi = 1.0,
                                  bool requires_grad = true) {
  std::vector<double> data(numel(shape));
  for (auto& v : data) v = rng.uniform(lo, hi);
  return Tensor<double>::from(std::move(shape), std::move(data),
                              requires_grad);
}

// Scalar probe: <flatten(out), c> with a fixed random constant c, so every
// output element influences the loss.
inline Tensor<double> probe(Tape<double>& tape, const Tensor<double>& out,
                            const std::vector<double>& c) {
  Tensor<double> flat =
      reshape(tape, out, {static_cast<int>(out.size())});
  Tensor<double> cv =
      Tensor<double>::from({static_cast<int>(out.size())},
                           std::vector<double>(c.begin(), c.end()));
  return dot(tape, flat, cv);
}

inline std::vector<double> rand_const(Rng& rng, std::size_t n) {
  std::vector<double> c(n);
  for (auto& v : c) v = rng.uniform(-1.0, 1.0);
  return c;
}

}  // namespace detail

// One finite-difference check per op per instance, random shapes and
// values. tol is the per-parameter relative error bound.
inline VerifySummary verify_primitive_gradients(std::uint64_t seed,
                                                int instances = 100,
                                                double tol = 1e-5) {
  using detail::probe;
  using detail::rand_const;
  using detail::rand_tensor;
  VerifySummary summary;
  Rng rng(seed, "verify-prims");

  auto check = [&](const char* op,
                   std::vector<Tensor<double>> params,
                   std::function<Tensor<double>(Tape<double>&)> f) {
    auto report = gradcheck(f, params, 1e-4, tol);
    summary.fold(op, report);
  };

  for (int it = 0; it < instances; ++it) {
    {  // matmul
      const int m = 1 + rng.below(4), k = 1 + rng.below(4),
                n = 1 + rng.below(4);
      auto a = rand_tensor(rng, {m, k});
      auto b = rand_tensor(rng, {k, n});
      auto c = rand_const(rng, static_cast<std::size_t>(m) * n);
      check("matmul", {a, b}, [=](Tape<double>& t) {
        return probe(t, matmul(t, a, b), c);
      });
    }
    {  // matvec / vecmat
      const int m = 1 + rng.below(4), n = 1 + rng.below(4);
      auto a = rand_tensor(rng, {m, n});
      auto x = rand_tensor(rng, {n});
      auto y = rand_tensor(rng, {m});
      auto cm = rand_const(rng, static_cast<std::size_t>(m));
      auto cn = rand_const(rng, static_cast<std::size_t>(n));
      check("matvec", {a, x}, [=](Tape<double>& t) {
        return probe(t, matvec(t, a, x), cm);
      });
      check("vecmat", {y, a}, [=](Tape<double>& t) {
        return probe(t, vecmat(t, y, a), cn);
      });
    }
    {  // conv2d_3x3 + channel bias + pooling
      const int h = 2 + rng.below(3), w = 2 + rng.below(3);
      const int ci = 1 + rng.below(2), co = 1 + rng.below(2);
      auto x = rand_tensor(rng, {h, w, ci});
      auto k = rand_tensor(rng, {3, 3, ci, co});
      auto b = rand_tensor(rng, {co});
      auto c = rand_const(rng, static_cast<std::size_t>(h) * w * co);
      check("conv2d_3x3", {x, k, b}, [=](Tape<double>& t) {
        return probe(t, add_channel_bias(t, conv2d_3x3(t, x, k), b), c);
      });
      auto xp = rand_tensor(rng, {4, 2, ci});
      auto cp = rand_const(rng, static_cast<std::size_t>(2) * 1 * ci);
      check("avgpool2x2", {xp}, [=](Tape<double>& t) {
        return probe(t, avgpool2x2(t, xp), cp);
      });
      // maxpool needs values separated by much more than the probe eps so
      // central differences stay on one linear piece
      {
        std::vector<double> vals(static_cast<std::size_t>(8) * ci);
        for (std::size_t i = 0; i < vals.size(); ++i)
          vals[i] = 0.05 * static_cast<double>(i) + rng.uniform(-0.01, 0.01);
        for (std::size_t i = vals.size(); i > 1; --i)
          std::swap(vals[i - 1],
                    vals[static_cast<std::size_t>(rng.below(
                        static_cast<int>(i)))]);
        auto xm = Tensor<double>::from({4, 2, ci}, std::move(vals), true);
        check("maxpool2x2", {xm}, [=](Tape<double>& t) {
          return probe(t, maxpool2x2(t, xm), cp);
        });
      }
    }
    {  // elementwise family
      const int n = 1 + rng.below(6);
      auto a = rand_tensor(rng, {n});
      auto b = rand_tensor(rng, {n});
      auto c = rand_const(rng, static_cast<std::size_t>(n));
      check("add", {a, b}, [=](Tape<double>& t) {
        return probe(t, add(t, a, b), c);
      });
      check("sub", {a, b}, [=](Tape<double>& t) {
        return probe(t, sub(t, a, b), c);
      });
      check("mul", {a, b}, [=](Tape<double>& t) {
        return probe(t, mul(t, a, b), c);
      });
      check("tanh", {a}, [=](Tape<double>& t) {
        return probe(t, unitext::tanh(t, a), c);
      });
      check("sigmoid", {a}, [=](Tape<double>& t) {
        return probe(t, sigmoid(t, a), c);
      });
      const double sc = rng.uniform(-2, 2);
      check("scale", {a}, [=](Tape<double>& t) {
        return probe(t, scale(t, a, sc), c);
      });
      check("affine", {a}, [=](Tape<double>& t) {
        return probe(t, affine(t, a, sc, 0.25), c);
      });
      auto c2n = rand_const(rng, static_cast<std::size_t>(2) * n);
      check("concat", {a, b}, [=](Tape<double>& t) {
        return probe(t, concat(t, a, b), c2n);
      });
      check("sum_all", {a}, [=](Tape<double>& t) { return sum_all(t, a); });
      check("dot", {a, b}, [=](Tape<double>& t) { return dot(t, a, b); });
      check("l2norm_smoothed", {a}, [=](Tape<double>& t) {
        return l2norm_smoothed(t, a, 1e-8);
      });
    }
    {  // add_row_to_all
      const int m = 1 + rng.below(3), n = 1 + rng.below(4);
      auto mt = rand_tensor(rng, {m, n});
      auto v = rand_tensor(rng, {n});
      auto c = rand_const(rng, static_cast<std::size_t>(m) * n);
      check("add_row_to_all", {mt, v}, [=](Tape<double>& t) {
        return probe(t, add_row_to_all(t, mt, v), c);
      });
    }
    {  // softmax_temperature (also via downstream nll / cross-entropy)
      const int n = 2 + rng.below(5);
      auto logits = rand_tensor(rng, {n}, -2, 2);
      const double tau = 0.5 + rng.uniform() * 3.5;
      auto c = rand_const(rng, static_cast<std::size_t>(n));
      check("softmax_temperature", {logits}, [=](Tape<double>& t) {
        return probe(t, softmax_temperature(t, logits, tau), c);
      });
      const int idx = rng.below(n);
      check("nll_from_probs", {logits}, [=](Tape<double>& t) {
        return nll_from_probs(t, softmax_temperature(t, logits, 1.0), idx);
      });
      auto target_logits = rand_tensor(rng, {n}, -2, 2, false);
      check("cross_entropy_vs", {logits}, [=](Tape<double>& t) {
        auto target = softmax_temperature(t, target_logits, 1.0);
        return cross_entropy_vs(t, target,
                                softmax_temperature(t, logits, 1.0));
      });
    }
    {  // gather_row, div_by_scalar, stack_scalars, reshape
      const int r = 2 + rng.below(3), cdim = 1 + rng.below(4);
      auto table = rand_tensor(rng, {r, cdim});
      const int row = rng.below(r);
      auto cc = rand_const(rng, static_cast<std::size_t>(cdim));
      check("gather_row", {table}, [=](Tape<double>& t) {
        return probe(t, gather_row(t, table, row), cc);
      });
      auto x = rand_tensor(rng, {cdim}, 0.5, 1.5);
      auto s = rand_tensor(rng, {1}, 0.5, 2.0);
      check("div_by_scalar", {x, s}, [=](Tape<double>& t) {
        return probe(t, div_by_scalar(t, x, s), cc);
      });
      auto a = rand_tensor(rng, {1});
      auto b = rand_tensor(rng, {1});
      auto c2 = rand_const(rng, 2);
      check("stack_scalars", {a, b}, [=](Tape<double>& t) {
        return probe(t, stack_scalars(t, {a, b}), c2);
      });
    }
    {  // bilinear resize
      const int h = 1 + rng.below(3), w = 1 + rng.below(4);
      const int oh = 1 + rng.below(4), ow = 1 + rng.below(4);
      auto x = rand_tensor(rng, {h, w});
      auto c = rand_const(rng, static_cast<std::size_t>(oh) * ow);
      check("bilinear_resize_prob", {x}, [=](Tape<double>& t) {
        return probe(t, bilinear_resize_prob(t, x, oh, ow), c);
      });
    }
  }
  return summary;
}

// Tiny two-domain configuration used for composed-objective checks.
inline RecognizerConfig tiny_config() {
  RecognizerConfig cfg;
  cfg.input_h = 8;
  cfg.input_w = 12;
  cfg.widths = {3, 4};
  cfg.hidden = 6;
  cfg.embed = 5;
  cfg.max_len = 4;
  cfg.vocab = Vocabulary("ABC");  // |V| = 4 with EOS
  return cfg;
}

template <typename Real>
std::vector<BatchItem<Real>> tiny_batch(const RecognizerConfig& cfg, Rng& rng,
                                        int batch, int klen) {
  std::vector<BatchItem<Real>> items;
  for (int i = 0; i < batch; ++i) {
    BatchItem<Real> item;
    std::vector<Real> pix(
        static_cast<std::size_t>(cfg.input_h) * cfg.input_w);
    for (auto& v : pix) v = static_cast<Real>(rng.uniform(0, 1));
    item.image = Tensor<Real>::from({cfg.input_h, cfg.input_w, 1},
                                    std::move(pix));
    for (int t = 0; t + 1 < klen; ++t)
      item.label.push_back(rng.below(cfg.vocab.size() - 1));
    item.label.push_back(cfg.vocab.eos());
    items.push_back(std::move(item));
  }
  return items;
}

// Finite-difference check of the full combined objective (both domains,
// all four losses, gates open) against every student parameter.
inline VerifySummary verify_composed_objective(std::uint64_t seed,
                                               int instances = 3,
                                               double tol = 1e-4) {
  VerifySummary summary;
  Rng rng(seed, "verify-composed");
  const RecognizerConfig cfg = tiny_config();
  DistillConfig dcfg;  // defaults: all four losses on

  for (int it = 0; it < instances; ++it) {
    auto teacher_s = make_recognizer<double>(cfg, rng.next_u64());
    auto teacher_h = make_recognizer<double>(cfg, rng.next_u64());
    auto student = make_recognizer<double>(cfg, rng.next_u64());
    student.params.set_requires_grad(true);
    const int klen = 2 + rng.below(2);
    auto batch_s = tiny_batch<double>(cfg, rng, 2, klen);
    auto batch_h = tiny_batch<double>(cfg, rng, 2, klen);

    auto params = student.params.all();
    auto f = [&](Tape<double>& tape) {
      return combined_distill_objective(tape, batch_s, batch_h, &teacher_s,
                                        &teacher_h, student, dcfg, true, true)
          .first;
    };
    // smaller probe eps: keeps the perturbation inside one linear piece of
    // the max-pool windows; double precision has plenty of headroom
    auto report = gradcheck(f, params, 1e-5, tol);
    summary.fold("combined_objective[" + std::to_string(it) + "]", report);
  }
  return summary;
}

}  // namespace unitext
