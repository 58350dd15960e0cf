#pragma once

// Attentional text recognizer: conv backbone -> 2D attention -> GRU decoder.
// One architecture serves as frozen teacher and trainable student; both are
// run teacher-forced during training so their traces align step for step.

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "unitext/adam.hpp"
#include "unitext/errors.hpp"
#include "unitext/rng.hpp"
#include "unitext/tensor.hpp"
#include "unitext/vocab.hpp"

namespace unitext {

struct RecognizerConfig {
  int input_h = 32;
  int input_w = 96;
  // Output channels per backbone stage; every stage is conv3x3 + tanh +
  // 2x2 mean-pool, so the total downsample factor is 2^stages and the
  // feature dim d is widths.back().
  std::vector<int> widths = {8, 16};
  int hidden = 64;
  int embed = 128;
  int max_len = 12;
  Vocabulary vocab;

  int downsample() const { return 1 << static_cast<int>(widths.size()); }
  int feat_h() const { return input_h / downsample(); }
  int feat_w() const { return input_w / downsample(); }
  int feat_dim() const { return widths.back(); }

  void validate() const {
    if (widths.empty()) throw ConfigError("config: no backbone stages");
    if (input_h % downsample() || input_w % downsample())
      throw ConfigError("config: input dims not divisible by downsample " +
                        std::to_string(downsample()));
    if (feat_h() < 1 || feat_w() < 1)
      throw ConfigError("config: feature map collapsed to zero");
    if (hidden < 1 || embed < 1 || max_len < 1)
      throw ConfigError("config: dims must be >= 1");
  }

  static RecognizerConfig desk_scale() { return RecognizerConfig{}; }

  // Deeper preset in the spirit of the full-size model; not the default.
  static RecognizerConfig paper_scale() {
    RecognizerConfig c;
    c.input_h = 48;
    c.input_w = 160;
    c.widths = {32, 64, 128, 256};
    c.hidden = 256;
    c.embed = 128;
    c.max_len = 32;
    return c;
  }
};

template <typename Real>
struct RecognizerParams {
  std::vector<Tensor<Real>> conv_kernels;  // [3,3,ci,co] per stage
  std::vector<Tensor<Real>> conv_biases;   // [co]
  Tensor<Real> attn_wf;                    // [d,d], applied as F_cell . wf
  Tensor<Real> attn_wb;                    // [3,3,d,d]
  Tensor<Real> attn_ws;                    // [hidden,d], applied as s . ws
  Tensor<Real> attn_wa;                    // [d]
  Tensor<Real> embed;                      // [|V|+1, embed] (last row START)
  Tensor<Real> gru_wz, gru_bz;             // [hidden, embed+d+hidden], [hidden]
  Tensor<Real> gru_wr, gru_br;
  Tensor<Real> gru_wh, gru_bh;
  Tensor<Real> out_w;                      // [|V|, hidden]
  Tensor<Real> out_b;                      // [|V|]
  // Only present when distilling into a student whose glimpse dim differs
  // from the teacher's: maps student glimpses into teacher space.
  Tensor<Real> hint_proj;                  // [d_student, d_teacher], optional

  std::vector<std::pair<std::string, Tensor<Real>>> named() const {
    std::vector<std::pair<std::string, Tensor<Real>>> out;
    for (std::size_t i = 0; i < conv_kernels.size(); ++i) {
      out.emplace_back("conv" + std::to_string(i) + ".kernel",
                       conv_kernels[i]);
      out.emplace_back("conv" + std::to_string(i) + ".bias", conv_biases[i]);
    }
    out.emplace_back("attn.wf", attn_wf);
    out.emplace_back("attn.wb", attn_wb);
    out.emplace_back("attn.ws", attn_ws);
    out.emplace_back("attn.wa", attn_wa);
    out.emplace_back("embed", embed);
    out.emplace_back("gru.wz", gru_wz);
    out.emplace_back("gru.bz", gru_bz);
    out.emplace_back("gru.wr", gru_wr);
    out.emplace_back("gru.br", gru_br);
    out.emplace_back("gru.wh", gru_wh);
    out.emplace_back("gru.bh", gru_bh);
    out.emplace_back("out.w", out_w);
    out.emplace_back("out.b", out_b);
    if (hint_proj.defined()) out.emplace_back("hint.proj", hint_proj);
    return out;
  }

  std::vector<Tensor<Real>> all() const {
    std::vector<Tensor<Real>> out;
    for (auto& [name, t] : named()) out.push_back(t);
    return out;
  }

  void set_requires_grad(bool rg) {
    for (auto& t : all()) t.set_requires_grad(rg);
  }

  RecognizerParams clone(bool requires_grad) const {
    RecognizerParams c;
    for (std::size_t i = 0; i < conv_kernels.size(); ++i) {
      c.conv_kernels.push_back(conv_kernels[i].clone(requires_grad));
      c.conv_biases.push_back(conv_biases[i].clone(requires_grad));
    }
    c.attn_wf = attn_wf.clone(requires_grad);
    c.attn_wb = attn_wb.clone(requires_grad);
    c.attn_ws = attn_ws.clone(requires_grad);
    c.attn_wa = attn_wa.clone(requires_grad);
    c.embed = embed.clone(requires_grad);
    c.gru_wz = gru_wz.clone(requires_grad);
    c.gru_bz = gru_bz.clone(requires_grad);
    c.gru_wr = gru_wr.clone(requires_grad);
    c.gru_br = gru_br.clone(requires_grad);
    c.gru_wh = gru_wh.clone(requires_grad);
    c.gru_bh = gru_bh.clone(requires_grad);
    c.out_w = out_w.clone(requires_grad);
    c.out_b = out_b.clone(requires_grad);
    if (hint_proj.defined()) c.hint_proj = hint_proj.clone(requires_grad);
    return c;
  }

  void copy_data_from(const RecognizerParams& o) {
    auto dst = all();
    auto src = o.all();
    if (dst.size() != src.size())
      throw DimensionError("copy_data_from: parameter lists differ");
    for (std::size_t i = 0; i < dst.size(); ++i)
      dst[i].data() = src[i].data();
  }
};

template <typename Real>
struct Recognizer {
  RecognizerConfig cfg;
  RecognizerParams<Real> params;
};

namespace detail {

template <typename Real>
Tensor<Real> init_uniform(Rng& rng, std::vector<int> shape, int fan_in,
                          const std::string& name) {
  const double a = std::sqrt(1.0 / std::max(1, fan_in));
  std::vector<Real> data(numel(shape));
  for (auto& v : data) v = static_cast<Real>(rng.uniform(-a, a));
  auto t = Tensor<Real>::from(std::move(shape), std::move(data));
  t.set_name(name);
  return t;
}

template <typename Real>
Tensor<Real> init_zeros(std::vector<int> shape, const std::string& name) {
  Tensor<Real> t(std::move(shape));
  t.set_name(name);
  return t;
}

}  // namespace detail

// Fresh parameters: uniform(-a, a) with a = sqrt(1/fan_in), biases zero.
// Fully determined by the seed.
template <typename Real>
Recognizer<Real> make_recognizer(const RecognizerConfig& cfg,
                                 std::uint64_t seed) {
  cfg.validate();
  Rng rng(seed, "init");
  Recognizer<Real> m;
  m.cfg = cfg;
  auto& p = m.params;
  int ci = 1;
  for (std::size_t i = 0; i < cfg.widths.size(); ++i) {
    const int co = cfg.widths[i];
    const std::string tag = "conv" + std::to_string(i);
    p.conv_kernels.push_back(detail::init_uniform<Real>(
        rng, {3, 3, ci, co}, 9 * ci, tag + ".kernel"));
    p.conv_biases.push_back(detail::init_zeros<Real>({co}, tag + ".bias"));
    ci = co;
  }
  const int d = cfg.feat_dim();
  const int v = cfg.vocab.size();
  const int gin = cfg.embed + d + cfg.hidden;
  p.attn_wf = detail::init_uniform<Real>(rng, {d, d}, d, "attn.wf");
  p.attn_wb = detail::init_uniform<Real>(rng, {3, 3, d, d}, 9 * d, "attn.wb");
  p.attn_ws =
      detail::init_uniform<Real>(rng, {cfg.hidden, d}, cfg.hidden, "attn.ws");
  p.attn_wa = detail::init_uniform<Real>(rng, {d}, d, "attn.wa");
  p.embed =
      detail::init_uniform<Real>(rng, {v + 1, cfg.embed}, cfg.embed, "embed");
  p.gru_wz = detail::init_uniform<Real>(rng, {cfg.hidden, gin}, gin, "gru.wz");
  p.gru_bz = detail::init_zeros<Real>({cfg.hidden}, "gru.bz");
  p.gru_wr = detail::init_uniform<Real>(rng, {cfg.hidden, gin}, gin, "gru.wr");
  p.gru_br = detail::init_zeros<Real>({cfg.hidden}, "gru.br");
  p.gru_wh = detail::init_uniform<Real>(rng, {cfg.hidden, gin}, gin, "gru.wh");
  p.gru_bh = detail::init_zeros<Real>({cfg.hidden}, "gru.bh");
  p.out_w =
      detail::init_uniform<Real>(rng, {v, cfg.hidden}, cfg.hidden, "out.w");
  p.out_b = detail::init_zeros<Real>({v}, "out.b");
  return m;
}

// One teacher-forced pass, everything the distillation losses need.
template <typename Real>
struct ForwardTrace {
  Tensor<Real> feature_map;              // [h', w', d]
  Tensor<Real> feature_mat;              // [h'*w', d], same values
  std::vector<Tensor<Real>> logits;      // [|V|] per step
  std::vector<Tensor<Real>> probs;       // [|V|] per step (tau = 1)
  std::vector<Tensor<Real>> alphas;      // [h', w'] per step
  std::vector<Tensor<Real>> glimpses;    // [d] per step
  std::vector<Tensor<Real>> hiddens;     // [hidden] per step (s_t)
  std::vector<Tensor<Real>> outputs;     // [hidden] per step (o_t)
  int feat_h = 0, feat_w = 0;

  int steps() const { return static_cast<int>(logits.size()); }
};

template <typename Real>
Tensor<Real> backbone_forward(Tape<Real>& tape, const Tensor<Real>& image,
                              const Recognizer<Real>& model) {
  const auto& cfg = model.cfg;
  if (image.ndim() != 3 || image.dim(0) != cfg.input_h ||
      image.dim(1) != cfg.input_w || image.dim(2) != 1)
    throw ConfigError("backbone_forward: image " + shape_str(image.shape()) +
                      " does not match config " +
                      std::to_string(cfg.input_h) + "x" +
                      std::to_string(cfg.input_w) + "x1");
  Tensor<Real> x = image;
  for (std::size_t i = 0; i < cfg.widths.size(); ++i) {
    x = conv2d_3x3(tape, x, model.params.conv_kernels[i]);
    x = add_channel_bias(tape, x, model.params.conv_biases[i]);
    x = tanh(tape, x);
    x = maxpool2x2(tape, x);
  }
  return x;
}

// The parts of Eq-style attention that do not depend on the decoder state:
// per-cell linear map of the features plus the 3x3 neighbourhood conv.
template <typename Real>
struct AttentionContext {
  Tensor<Real> fmat;  // [hw, d]
  Tensor<Real> jpre;  // [hw, d]
  int h = 0, w = 0;
};

template <typename Real>
AttentionContext<Real> attention_precompute(Tape<Real>& tape,
                                            const Tensor<Real>& feature_map,
                                            const Recognizer<Real>& model) {
  if (feature_map.ndim() != 3)
    throw DimensionError("attention_precompute: expects [h,w,d]");
  const int h = feature_map.dim(0), w = feature_map.dim(1),
            d = feature_map.dim(2);
  if (d != model.cfg.feat_dim())
    throw DimensionError("attention_precompute: feature dim mismatch");
  AttentionContext<Real> ctx;
  ctx.h = h;
  ctx.w = w;
  ctx.fmat = reshape(tape, feature_map, {h * w, d});
  Tensor<Real> lin = matmul(tape, ctx.fmat, model.params.attn_wf);
  Tensor<Real> neigh = conv2d_3x3(tape, feature_map, model.params.attn_wb);
  ctx.jpre = add(tape, lin, reshape(tape, neigh, {h * w, d}));
  return ctx;
}

template <typename Real>
struct AttentionStep {
  Tensor<Real> alpha;    // [h, w], sums to 1
  Tensor<Real> glimpse;  // [d]
};

template <typename Real>
AttentionStep<Real> attention_step(Tape<Real>& tape,
                                   const AttentionContext<Real>& ctx,
                                   const Tensor<Real>& s_prev,
                                   const Recognizer<Real>& model) {
  Tensor<Real> srow = vecmat(tape, s_prev, model.params.attn_ws);  // [d]
  Tensor<Real> j = tanh(tape, add_row_to_all(tape, ctx.jpre, srow));
  Tensor<Real> scores = matvec(tape, j, model.params.attn_wa);  // [hw]
  Tensor<Real> alpha = softmax_temperature(tape, scores, Real(1));
  AttentionStep<Real> out;
  out.glimpse = vecmat(tape, alpha, ctx.fmat);  // [d]
  out.alpha = reshape(tape, alpha, {ctx.h, ctx.w});
  return out;
}

// Contract form: takes the raw feature map. The trace path precomputes the
// state-independent part once and calls the overload above; both paths run
// the same ops in the same order.
template <typename Real>
AttentionStep<Real> attention_step(Tape<Real>& tape,
                                   const Tensor<Real>& feature_map,
                                   const Tensor<Real>& s_prev,
                                   const Recognizer<Real>& model) {
  auto ctx = attention_precompute(tape, feature_map, model);
  return attention_step(tape, ctx, s_prev, model);
}

template <typename Real>
struct DecodeStep {
  Tensor<Real> output;  // o_t
  Tensor<Real> hidden;  // s_t
  Tensor<Real> logits;  // pre-softmax, [|V|]
};

// One GRU update on [E(y_prev), g] and the output projection. y_prev may be
// START (= |V|) at t = 1.
template <typename Real>
DecodeStep<Real> decode_step(Tape<Real>& tape, const Tensor<Real>& s_prev,
                             int y_prev, const Tensor<Real>& glimpse,
                             const Recognizer<Real>& model) {
  const auto& p = model.params;
  const int v = model.cfg.vocab.size();
  if (y_prev < 0 || y_prev > v)
    throw VocabError("decode_step: symbol index " + std::to_string(y_prev) +
                     " out of range (|V|=" + std::to_string(v) + ")");
  Tensor<Real> e = gather_row(tape, p.embed, y_prev);
  Tensor<Real> x = concat(tape, e, glimpse);
  Tensor<Real> xs = concat(tape, x, s_prev);
  Tensor<Real> z =
      sigmoid(tape, add(tape, matvec(tape, p.gru_wz, xs), p.gru_bz));
  Tensor<Real> r =
      sigmoid(tape, add(tape, matvec(tape, p.gru_wr, xs), p.gru_br));
  Tensor<Real> xrs = concat(tape, x, mul(tape, r, s_prev));
  Tensor<Real> hcand =
      tanh(tape, add(tape, matvec(tape, p.gru_wh, xrs), p.gru_bh));
  DecodeStep<Real> out;
  out.hidden = add(tape, mul(tape, affine(tape, z, Real(-1), Real(1)), s_prev),
                   mul(tape, z, hcand));
  out.output = out.hidden;  // single GRU cell: o_t is the new state
  out.logits = add(tape, matvec(tape, p.out_w, out.output), p.out_b);
  return out;
}

// Teacher-forced pass over an EOS-terminated label; step t consumes the
// ground-truth y_{t-1} (START at t=1). Teacher and student traces used for
// distillation are both produced this way so their time steps align.
template <typename Real>
ForwardTrace<Real> forward_teacher_forced(Tape<Real>& tape,
                                          const Tensor<Real>& image,
                                          const std::vector<int>& label,
                                          const Recognizer<Real>& model) {
  const int k = static_cast<int>(label.size());
  if (k < 1) throw InputError("forward_teacher_forced: empty label");
  if (k > model.cfg.max_len)
    throw InputError("forward_teacher_forced: label length " +
                     std::to_string(k) + " exceeds max decode length " +
                     std::to_string(model.cfg.max_len));
  ForwardTrace<Real> trace;
  trace.feature_map = backbone_forward(tape, image, model);
  auto ctx = attention_precompute(tape, trace.feature_map, model);
  trace.feature_mat = ctx.fmat;
  trace.feat_h = ctx.h;
  trace.feat_w = ctx.w;
  Tensor<Real> s(std::vector<int>{model.cfg.hidden});
  int prev = model.cfg.vocab.start();
  for (int t = 0; t < k; ++t) {
    auto att = attention_step(tape, ctx, s, model);
    auto dec = decode_step(tape, s, prev, att.glimpse, model);
    trace.alphas.push_back(att.alpha);
    trace.glimpses.push_back(att.glimpse);
    trace.hiddens.push_back(dec.hidden);
    trace.outputs.push_back(dec.output);
    trace.logits.push_back(dec.logits);
    trace.probs.push_back(softmax_temperature(tape, dec.logits, Real(1)));
    s = dec.hidden;
    prev = label[static_cast<std::size_t>(t)];
  }
  return trace;
}

// Free-running argmax decode; stops at EOS or max_len. Returns the decoded
// characters (EOS excluded). Never records onto a tape.
template <typename Real>
std::string greedy_decode(const Tensor<Real>& image,
                          const Recognizer<Real>& model, int max_len) {
  if (max_len < 1) throw InputError("greedy_decode: max_len must be >= 1");
  Tape<Real> tape(false);
  Tensor<Real> fmap = backbone_forward(tape, image, model);
  auto ctx = attention_precompute(tape, fmap, model);
  Tensor<Real> s(std::vector<int>{model.cfg.hidden});
  int prev = model.cfg.vocab.start();
  std::string out;
  for (int t = 0; t < max_len; ++t) {
    auto att = attention_step(tape, ctx, s, model);
    auto dec = decode_step(tape, s, prev, att.glimpse, model);
    const auto& l = dec.logits.data();
    int best = 0;
    for (int i = 1; i < static_cast<int>(l.size()); ++i)
      if (l[static_cast<std::size_t>(i)] > l[static_cast<std::size_t>(best)])
        best = i;
    if (best == model.cfg.vocab.eos()) break;
    out += model.cfg.vocab.char_at(best);
    s = dec.hidden;
    prev = best;
  }
  return out;
}

// L_C: negative log-likelihood summed over the sequence (not averaged over
// K). Batch averaging happens in the trainer.
template <typename Real>
Tensor<Real> sequence_cross_entropy(Tape<Real>& tape,
                                    const ForwardTrace<Real>& trace,
                                    const std::vector<int>& label) {
  if (static_cast<int>(label.size()) != trace.steps())
    throw UsageError("sequence_cross_entropy: trace has " +
                     std::to_string(trace.steps()) + " steps, label has " +
                     std::to_string(label.size()));
  Tensor<Real> loss;
  for (int t = 0; t < trace.steps(); ++t) {
    Tensor<Real> term = nll_from_probs(
        tape, trace.probs[static_cast<std::size_t>(t)],
        label[static_cast<std::size_t>(t)]);
    loss = loss.defined() ? add(tape, loss, term) : term;
  }
  return loss;
}

}  // namespace unitext
