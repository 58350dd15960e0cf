#pragma once

// The four sequence-tailored distillation losses and the combined training
// objective. Losses operate on pairs of teacher-forced traces; the teacher
// side is always detached (frozen teachers never require grad), only the
// student side receives gradients.

#include <string>
#include <vector>

#include "unitext/errors.hpp"
#include "unitext/recognizer.hpp"
#include "unitext/tensor.hpp"

namespace unitext {

enum class HintSource { glimpse, hidden, feature };

inline const char* hint_source_name(HintSource s) {
  switch (s) {
    case HintSource::glimpse: return "glimpse";
    case HintSource::hidden: return "hidden";
    case HintSource::feature: return "feature";
  }
  return "?";
}

inline HintSource hint_source_from_name(const std::string& s) {
  if (s == "glimpse") return HintSource::glimpse;
  if (s == "hidden") return HintSource::hidden;
  if (s == "feature") return HintSource::feature;
  throw ConfigError("unknown hint source '" + s + "'");
}

struct DistillConfig {
  double tau = 2.0;
  double lambda1 = 0.5;  // logits
  double lambda2 = 5.0;  // attention
  double lambda3 = 1.0;  // hint
  double lambda4 = 1.0;  // affinity
  double eps = 1e-8;
  HintSource hint_source = HintSource::glimpse;
  bool conditional = true;  // gate mechanism; off = distill unconditionally
  bool sum_reduction = false;  // batch sum instead of batch mean

  void validate() const {
    if (!(tau > 0)) throw ParameterError("distill config: tau must be > 0");
    if (lambda1 < 0 || lambda2 < 0 || lambda3 < 0 || lambda4 < 0)
      throw ParameterError("distill config: lambdas must be >= 0");
    if (eps < 0) throw ParameterError("distill config: eps must be >= 0");
  }

  bool any_kd() const {
    return lambda1 > 0 || lambda2 > 0 || lambda3 > 0 || lambda4 > 0;
  }
};

namespace detail {

template <typename Real>
void check_equal_steps(const ForwardTrace<Real>& a, const ForwardTrace<Real>& b,
                       const char* op) {
  if (a.steps() != b.steps())
    throw UsageError(std::string(op) + ": trace lengths differ (" +
                     std::to_string(a.steps()) + " vs " +
                     std::to_string(b.steps()) + ")");
}

}  // namespace detail

// Learnable linear map for non-identical teacher/student glimpse spaces.
template <typename Real>
Tensor<Real> project_hidden(Tape<Real>& tape, const Tensor<Real>& g_s,
                            const Tensor<Real>& p) {
  return vecmat(tape, g_s, p);
}

// Differentiable bilinear resize for attention maps. The result is scaled
// by (h*w)/(H*W) so a uniform probability map stays uniform and sums to 1.
template <typename Real>
Tensor<Real> bilinear_resize_prob(Tape<Real>& tape, const Tensor<Real>& x,
                                  int out_h, int out_w) {
  if (x.ndim() != 2)
    throw DimensionError("bilinear_resize_prob: expects [h,w]");
  if (out_h < 1 || out_w < 1)
    throw DimensionError("bilinear_resize_prob: bad target size");
  const int h = x.dim(0), w = x.dim(1);
  const Real mass =
      static_cast<Real>(h) * static_cast<Real>(w) /
      (static_cast<Real>(out_h) * static_cast<Real>(out_w));

  // Four taps per output pixel; weights captured for the backward scatter.
  struct Tap {
    int idx[4];
    Real wgt[4];
  };
  std::vector<Tap> taps(static_cast<std::size_t>(out_h) * out_w);
  for (int oy = 0; oy < out_h; ++oy)
    for (int ox = 0; ox < out_w; ++ox) {
      const double sy =
          (static_cast<double>(oy) + 0.5) * h / out_h - 0.5;
      const double sx =
          (static_cast<double>(ox) + 0.5) * w / out_w - 0.5;
      int y0 = static_cast<int>(std::floor(sy));
      int x0 = static_cast<int>(std::floor(sx));
      const double ay = sy - y0, ax = sx - x0;
      auto clampi = [](int v, int hi) {
        return v < 0 ? 0 : (v > hi ? hi : v);
      };
      const int yc0 = clampi(y0, h - 1), yc1 = clampi(y0 + 1, h - 1);
      const int xc0 = clampi(x0, w - 1), xc1 = clampi(x0 + 1, w - 1);
      Tap& t = taps[static_cast<std::size_t>(oy) * out_w + ox];
      t.idx[0] = yc0 * w + xc0;
      t.idx[1] = yc0 * w + xc1;
      t.idx[2] = yc1 * w + xc0;
      t.idx[3] = yc1 * w + xc1;
      t.wgt[0] = static_cast<Real>((1 - ay) * (1 - ax)) * mass;
      t.wgt[1] = static_cast<Real>((1 - ay) * ax) * mass;
      t.wgt[2] = static_cast<Real>(ay * (1 - ax)) * mass;
      t.wgt[3] = static_cast<Real>(ay * ax) * mass;
    }

  Tensor<Real> out(std::vector<int>{out_h, out_w}, Real(0),
                   detail::track(tape, x));
  const Real* xp = x.data().data();
  for (std::size_t i = 0; i < taps.size(); ++i) {
    const Tap& t = taps[i];
    out.data()[i] = t.wgt[0] * xp[t.idx[0]] + t.wgt[1] * xp[t.idx[1]] +
                    t.wgt[2] * xp[t.idx[2]] + t.wgt[3] * xp[t.idx[3]];
  }
  if (out.requires_grad())
    tape.record("bilinear_resize_prob", {x, out},
                [x, out, taps = std::move(taps)]() mutable {
                  const Real* g = out.grad().data();
                  Real* dx = x.grad().data();
                  for (std::size_t i = 0; i < taps.size(); ++i) {
                    const Tap& t = taps[i];
                    for (int k = 0; k < 4; ++k)
                      dx[t.idx[k]] += t.wgt[k] * g[i];
                  }
                });
  return out;
}

// Sum over t of H(softmax(l_t^T / tau), softmax(l_t^S / tau)).
template <typename Real>
Tensor<Real> distill_logits_loss(Tape<Real>& tape,
                                 const ForwardTrace<Real>& teacher,
                                 const ForwardTrace<Real>& student, Real tau) {
  detail::check_equal_steps(teacher, student, "distill_logits_loss");
  Tensor<Real> loss;
  for (int t = 0; t < teacher.steps(); ++t) {
    const std::size_t ti = static_cast<std::size_t>(t);
    Tensor<Real> tsoft = softmax_temperature(tape, teacher.logits[ti], tau);
    Tensor<Real> ssoft = softmax_temperature(tape, student.logits[ti], tau);
    Tensor<Real> term = cross_entropy_vs(tape, tsoft, ssoft);
    loss = loss.defined() ? add(tape, loss, term) : term;
  }
  return loss;
}

// Sum over t of sqrt(||g_t^T - P(g_t^S)||^2 + eps). P is identity for
// identical architectures; otherwise a projection must be supplied.
// `source` selects where the hint is taken (glimpse is the reference
// placement; feature/hidden exist for the placement ablation).
template <typename Real>
Tensor<Real> hint_loss(Tape<Real>& tape, const ForwardTrace<Real>& teacher,
                       const ForwardTrace<Real>& student, Real eps,
                       const Tensor<Real>& projection = {},
                       HintSource source = HintSource::glimpse) {
  detail::check_equal_steps(teacher, student, "hint_loss");
  if (source == HintSource::feature) {
    if (teacher.feature_mat.shape() != student.feature_mat.shape())
      throw ConfigError("hint_loss: feature-map shapes differ; feature "
                        "placement needs identical architectures");
    return l2norm_smoothed(
        tape, sub(tape, student.feature_mat, teacher.feature_mat), eps);
  }
  const auto& tvecs =
      source == HintSource::hidden ? teacher.hiddens : teacher.glimpses;
  const auto& svecs =
      source == HintSource::hidden ? student.hiddens : student.glimpses;
  Tensor<Real> loss;
  for (int t = 0; t < teacher.steps(); ++t) {
    const std::size_t ti = static_cast<std::size_t>(t);
    Tensor<Real> sv = svecs[ti];
    if (sv.shape() != tvecs[ti].shape()) {
      if (!projection.defined())
        throw ConfigError("hint_loss: dimension mismatch " +
                          shape_str(sv.shape()) + " vs " +
                          shape_str(tvecs[ti].shape()) +
                          " and no projection supplied");
      sv = project_hidden(tape, sv, projection);
    }
    Tensor<Real> term = l2norm_smoothed(tape, sub(tape, sv, tvecs[ti]), eps);
    loss = loss.defined() ? add(tape, loss, term) : term;
  }
  return loss;
}

// Sum over t of sqrt(||alpha_t^T - alpha_t^S||^2 + eps). When spatial sizes
// differ the student maps are bilinearly resized to the teacher resolution
// (opt-in, differentiable).
template <typename Real>
Tensor<Real> attention_distill_loss(Tape<Real>& tape,
                                    const ForwardTrace<Real>& teacher,
                                    const ForwardTrace<Real>& student,
                                    Real eps, bool allow_resize = false) {
  detail::check_equal_steps(teacher, student, "attention_distill_loss");
  Tensor<Real> loss;
  for (int t = 0; t < teacher.steps(); ++t) {
    const std::size_t ti = static_cast<std::size_t>(t);
    Tensor<Real> sa = student.alphas[ti];
    if (sa.shape() != teacher.alphas[ti].shape()) {
      if (!allow_resize)
        throw ConfigError("attention_distill_loss: spatial mismatch " +
                          shape_str(sa.shape()) + " vs " +
                          shape_str(teacher.alphas[ti].shape()) +
                          " and resize not enabled");
      sa = bilinear_resize_prob(tape, sa, teacher.alphas[ti].dim(0),
                                teacher.alphas[ti].dim(1));
    }
    Tensor<Real> term =
        l2norm_smoothed(tape, sub(tape, sa, teacher.alphas[ti]), eps);
    loss = loss.defined() ? add(tape, loss, term) : term;
  }
  return loss;
}

// A_{i,j} = (1/K^2) * <g_i/||g_i||, g_j/||g_j||> with eps-smoothed norms.
// Plain values, no gradient tracking; used for the teacher side and for
// reporting.
template <typename Real>
Tensor<Real> compute_affinity(const ForwardTrace<Real>& trace, Real eps) {
  const int k = trace.steps();
  if (k < 1) throw UsageError("compute_affinity: empty trace");
  const int d = trace.glimpses[0].dim(0);
  std::vector<std::vector<Real>> unit(static_cast<std::size_t>(k));
  for (int i = 0; i < k; ++i) {
    const auto& g = trace.glimpses[static_cast<std::size_t>(i)].data();
    Real nsq = eps;
    for (Real v : g) nsq += v * v;
    const Real inv = Real(1) / std::sqrt(nsq);
    auto& u = unit[static_cast<std::size_t>(i)];
    u.resize(g.size());
    for (std::size_t j = 0; j < g.size(); ++j) u[j] = g[j] * inv;
  }
  Tensor<Real> a(std::vector<int>{k, k});
  const Real scale = Real(1) / (static_cast<Real>(k) * static_cast<Real>(k));
  for (int i = 0; i < k; ++i)
    for (int j = 0; j < k; ++j) {
      Real acc = 0;
      for (int c = 0; c < d; ++c)
        acc += unit[static_cast<std::size_t>(i)][static_cast<std::size_t>(c)] *
               unit[static_cast<std::size_t>(j)][static_cast<std::size_t>(c)];
      a.data()[static_cast<std::size_t>(i) * k + j] = acc * scale;
    }
  return a;
}

// sqrt(||A^T - A^S||_F^2 + eps); the student affinity is built on the tape
// so gradients flow into the student glimpses.
template <typename Real>
Tensor<Real> affinity_distill_loss(Tape<Real>& tape,
                                   const ForwardTrace<Real>& teacher,
                                   const ForwardTrace<Real>& student,
                                   Real eps) {
  detail::check_equal_steps(teacher, student, "affinity_distill_loss");
  const int k = student.steps();
  const Real inv_k2 = Real(1) / (static_cast<Real>(k) * static_cast<Real>(k));

  Tensor<Real> teacher_aff = compute_affinity(teacher, eps);
  Tensor<Real> tvec =
      Tensor<Real>::from({k * k}, teacher_aff.data());  // constants

  std::vector<Tensor<Real>> unit;
  unit.reserve(static_cast<std::size_t>(k));
  for (int i = 0; i < k; ++i) {
    const auto& g = student.glimpses[static_cast<std::size_t>(i)];
    Tensor<Real> nrm = l2norm_smoothed(tape, g, eps);
    unit.push_back(div_by_scalar(tape, g, nrm));
  }
  std::vector<Tensor<Real>> entries;
  entries.reserve(static_cast<std::size_t>(k) * k);
  for (int i = 0; i < k; ++i)
    for (int j = 0; j < k; ++j)
      entries.push_back(
          scale(tape,
                dot(tape, unit[static_cast<std::size_t>(i)],
                    unit[static_cast<std::size_t>(j)]),
                inv_k2));
  Tensor<Real> svec = stack_scalars(tape, entries);
  return l2norm_smoothed(tape, sub(tape, svec, tvec), eps);
}

template <typename Real>
struct BatchItem {
  Tensor<Real> image;
  std::vector<int> label;
};

// Per-sample loss graph: cross-entropy plus the lambda-weighted distillation
// terms against one teacher. This is the single code path used by the
// trainer, the combined objective, and the gate evaluation.
template <typename Real>
struct SampleLossParts {
  Tensor<Real> ce;
  Tensor<Real> logits, attn, hint, aff;  // defined when computed
  Tensor<Real> total;

  double weighted_kd(const DistillConfig& cfg) const {
    double v = 0;
    if (logits.defined()) v += cfg.lambda1 * double(logits.value());
    if (attn.defined()) v += cfg.lambda2 * double(attn.value());
    if (hint.defined()) v += cfg.lambda3 * double(hint.value());
    if (aff.defined()) v += cfg.lambda4 * double(aff.value());
    return v;
  }
};

template <typename Real>
SampleLossParts<Real> sample_losses(Tape<Real>& tape,
                                    const Recognizer<Real>* teacher,
                                    const Recognizer<Real>& student,
                                    const Tensor<Real>& image,
                                    const std::vector<int>& label,
                                    const DistillConfig& cfg, bool kd_on) {
  SampleLossParts<Real> parts;
  ForwardTrace<Real> strace = forward_teacher_forced(tape, image, label,
                                                     student);
  parts.ce = sequence_cross_entropy(tape, strace, label);
  parts.total = parts.ce;
  if (!kd_on || !cfg.any_kd()) return parts;
  if (!teacher)
    throw ConfigError("sample_losses: distillation requested but no teacher");

  ForwardTrace<Real> ttrace =
      forward_teacher_forced(tape, image, label, *teacher);
  const bool resize_needed =
      ttrace.feat_h != strace.feat_h || ttrace.feat_w != strace.feat_w;
  if (cfg.lambda1 > 0) {
    parts.logits = distill_logits_loss(tape, ttrace, strace,
                                       static_cast<Real>(cfg.tau));
    parts.total = add(tape, parts.total,
                      scale(tape, parts.logits,
                            static_cast<Real>(cfg.lambda1)));
  }
  if (cfg.lambda2 > 0) {
    parts.attn = attention_distill_loss(tape, ttrace, strace,
                                        static_cast<Real>(cfg.eps),
                                        resize_needed);
    parts.total = add(tape, parts.total,
                      scale(tape, parts.attn, static_cast<Real>(cfg.lambda2)));
  }
  if (cfg.lambda3 > 0) {
    parts.hint = hint_loss(tape, ttrace, strace, static_cast<Real>(cfg.eps),
                           student.params.hint_proj, cfg.hint_source);
    parts.total = add(tape, parts.total,
                      scale(tape, parts.hint, static_cast<Real>(cfg.lambda3)));
  }
  if (cfg.lambda4 > 0) {
    parts.aff = affinity_distill_loss(tape, ttrace, strace,
                                      static_cast<Real>(cfg.eps));
    parts.total = add(tape, parts.total,
                      scale(tape, parts.aff, static_cast<Real>(cfg.lambda4)));
  }
  return parts;
}

// Loss components of one optimization step, batch-averaged per domain.
struct DistillBreakdown {
  double ce_s = 0, ce_h = 0;
  double logits_s = 0, logits_h = 0;
  double attn_s = 0, attn_h = 0;
  double hint_s = 0, hint_h = 0;
  double aff_s = 0, aff_h = 0;
  bool gate_s = true, gate_h = true;
  double total = 0;

  double weighted_kd_s(const DistillConfig& c) const {
    return c.lambda1 * logits_s + c.lambda2 * attn_s + c.lambda3 * hint_s +
           c.lambda4 * aff_s;
  }
  double weighted_kd_h(const DistillConfig& c) const {
    return c.lambda1 * logits_h + c.lambda2 * attn_h + c.lambda3 * hint_h +
           c.lambda4 * aff_h;
  }
  // Eq.-style recomposition, used by tests to check the reported total.
  double recompose(const DistillConfig& c) const {
    return ce_s + ce_h + (gate_s ? weighted_kd_s(c) : 0.0) +
           (gate_h ? weighted_kd_h(c) : 0.0);
  }
};

// The full training objective on one tape: L_C over both domains plus the
// gated, lambda-weighted distillation terms. Returns the scalar loss for
// backward plus the per-component breakdown.
template <typename Real>
std::pair<Tensor<Real>, DistillBreakdown> combined_distill_objective(
    Tape<Real>& tape, const std::vector<BatchItem<Real>>& batch_s,
    const std::vector<BatchItem<Real>>& batch_h,
    const Recognizer<Real>* teacher_s, const Recognizer<Real>* teacher_h,
    const Recognizer<Real>& student, const DistillConfig& cfg, bool gate_s,
    bool gate_h) {
  cfg.validate();
  if (batch_s.empty() || batch_h.empty())
    throw InputError("combined_distill_objective: empty batch");
  if (cfg.any_kd() && (!teacher_s || !teacher_h))
    throw ConfigError("combined_distill_objective: missing teacher");

  DistillBreakdown bd;
  bd.gate_s = gate_s;
  bd.gate_h = gate_h;
  Tensor<Real> total;

  auto run_domain = [&](const std::vector<BatchItem<Real>>& batch,
                        const Recognizer<Real>* teacher, bool gate,
                        bool is_scene) {
    Tensor<Real> acc;
    const Real inv_b = cfg.sum_reduction
                           ? Real(1)
                           : Real(1) / static_cast<Real>(batch.size());
    for (const auto& item : batch) {
      auto parts = sample_losses(tape, teacher, student, item.image,
                                 item.label, cfg, gate);
      acc = acc.defined() ? add(tape, acc, parts.total) : parts.total;
      const double b =
          cfg.sum_reduction ? 1.0 : 1.0 / static_cast<double>(batch.size());
      if (is_scene) {
        bd.ce_s += b * double(parts.ce.value());
        if (parts.logits.defined()) bd.logits_s += b * double(parts.logits.value());
        if (parts.attn.defined()) bd.attn_s += b * double(parts.attn.value());
        if (parts.hint.defined()) bd.hint_s += b * double(parts.hint.value());
        if (parts.aff.defined()) bd.aff_s += b * double(parts.aff.value());
      } else {
        bd.ce_h += b * double(parts.ce.value());
        if (parts.logits.defined()) bd.logits_h += b * double(parts.logits.value());
        if (parts.attn.defined()) bd.attn_h += b * double(parts.attn.value());
        if (parts.hint.defined()) bd.hint_h += b * double(parts.hint.value());
        if (parts.aff.defined()) bd.aff_h += b * double(parts.aff.value());
      }
    }
    Tensor<Real> mean = scale(tape, acc, inv_b);
    total = total.defined() ? add(tape, total, mean) : mean;
  };

  run_domain(batch_s, teacher_s, gate_s, true);
  run_domain(batch_h, teacher_h, gate_h, false);
  bd.total = double(total.value());
  return {total, bd};
}

}  // namespace unitext
