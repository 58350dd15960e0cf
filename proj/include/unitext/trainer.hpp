#pragma once

// Teacher pretraining, the joint-training baseline, and the conditional
// distillation loop with its gate schedule. The three entry points share
// one batch-gradient engine so that distillation with all lambdas at zero
// reproduces the joint baseline step for step.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "unitext/adam.hpp"
#include "unitext/checkpoint.hpp"
#include "unitext/data.hpp"
#include "unitext/distill.hpp"
#include "unitext/errors.hpp"
#include "unitext/eval.hpp"
#include "unitext/recognizer.hpp"
#include "unitext/rng.hpp"
#include "unitext/threads.hpp"

namespace unitext {

struct TrainConfig {
  long long total_steps = 1200;
  long long check_every = 500;  // gate/validation cadence
  int batch_size = 32;
  double lr = 1e-3;
  double lr_decay = 0.9;
  long long decay_every = 2000;  // paper-scale preset is 10000
  double lr_floor = 1e-5;
  double omega = 1.05;
  std::uint64_t seed = 1;
  int threads = 1;
  long long log_every = 100;

  void validate() const {
    if (total_steps < 1) throw ConfigError("train config: total_steps < 1");
    if (check_every < 1 || check_every > total_steps)
      throw ConfigError("train config: need 1 <= check_every <= total_steps");
    if (batch_size < 1) throw ConfigError("train config: batch_size < 1");
    if (omega < 1.0) throw ConfigError("train config: omega must be >= 1");
    if (lr_floor > lr) throw ConfigError("train config: lr floor above lr");
    if (decay_every < 1) throw ConfigError("train config: decay_every < 1");
    if (threads < 1) throw ConfigError("train config: threads < 1");
  }
};

inline double lr_schedule_step(long long step, const TrainConfig& c) {
  const double lr =
      c.lr * std::pow(c.lr_decay, static_cast<double>(step / c.decay_every));
  return lr < c.lr_floor ? c.lr_floor : lr;
}

struct GateState {
  bool f_s = true;
  bool f_h = true;
  double kd_val_s = 0;  // validation KD loss against the scene teacher
  double kd_val_h = 0;
};

// Alg.-1 flag arithmetic. With omega >= 1 and nonnegative losses the two
// flags can never both be false: L_s > w*L_h and L_h > w*L_s would give
// L_s > w^2 * L_s.
inline GateState gates_from_losses(double loss_s, double loss_h,
                                   double omega) {
  GateState g;
  g.kd_val_s = loss_s;
  g.kd_val_h = loss_h;
  g.f_h = !(loss_s > omega * loss_h);
  g.f_s = !(loss_h > omega * loss_s);
  return g;
}

// Validation KD loss (lambda-weighted, no cross-entropy, no gradients)
// averaged over the full split for each (teacher, domain) pair, then the
// flag update. Flags are recomputed fresh on every call.
template <typename Real>
GateState update_gates(const Recognizer<Real>& teacher_s,
                       const Recognizer<Real>& teacher_h,
                       const Recognizer<Real>& student, const Dataset& val_s,
                       const Dataset& val_h, double omega,
                       const DistillConfig& cfg, int threads = 1) {
  if (val_s.empty() || val_h.empty())
    throw InputError("update_gates: empty validation split");
  auto mean_kd = [&](const Recognizer<Real>& teacher, const Dataset& val) {
    const std::size_t n = val.size();
    const int nchunks = threads <= 1 ? 1 : threads;
    std::vector<double> partial(static_cast<std::size_t>(nchunks), 0.0);
    parallel_chunks(n, threads, [&](std::size_t b, std::size_t e, int chunk) {
      double acc = 0;
      for (std::size_t i = b; i < e; ++i) {
        Tape<Real> tape(false);
        auto parts = sample_losses(tape, &teacher, student,
                                   val.image_tensor<Real>(i),
                                   val.label_ids(i, student.cfg.vocab), cfg,
                                   true);
        acc += parts.weighted_kd(cfg);
      }
      partial[static_cast<std::size_t>(chunk)] = acc;
    });
    double total = 0;
    for (double p : partial) total += p;
    return total / static_cast<double>(n);
  };
  const double ls = mean_kd(teacher_s, val_s);
  const double lh = mean_kd(teacher_h, val_h);
  return gates_from_losses(ls, lh, omega);
}

// ---------------------------------------------------------------------------
// Batch gradient engine
// ---------------------------------------------------------------------------

template <typename Real>
struct DomainBatch {
  const Dataset* data = nullptr;
  std::vector<std::size_t> indices;
  const Recognizer<Real>* teacher = nullptr;
  bool kd_on = false;
  bool is_scene = true;
};

inline std::vector<std::size_t> draw_batch(Rng& rng, std::size_t n, int b) {
  std::vector<std::size_t> idx(static_cast<std::size_t>(b));
  for (auto& v : idx)
    v = static_cast<std::size_t>(rng.below(static_cast<int>(n)));
  return idx;
}

// Accumulates d(mean loss)/d(theta) into the student parameter grads and
// returns the batch-averaged loss breakdown. Work is chunked over samples;
// each worker runs on its own parameter clone and the per-worker gradients
// are reduced in worker order, so results are deterministic for a fixed
// thread count.
template <typename Real>
DistillBreakdown accumulate_batch_gradients(
    Recognizer<Real>& student, const std::vector<DomainBatch<Real>>& batches,
    const DistillConfig& cfg, int threads) {
  if (batches.empty()) throw UsageError("accumulate_batch_gradients: no work");
  const std::size_t b0 = batches.front().indices.size();
  for (const auto& b : batches)
    if (b.indices.size() != b0 || b.indices.empty())
      throw UsageError("accumulate_batch_gradients: batch sizes must match");

  struct Item {
    const DomainBatch<Real>* batch;
    std::size_t index;
  };
  std::vector<Item> work;
  for (const auto& b : batches)
    for (std::size_t i : b.indices) work.push_back(Item{&b, i});

  auto params = student.params.all();
  zero_grads(params);

  struct Partial {
    DistillBreakdown bd;
    std::vector<std::vector<Real>> grads;  // per param, empty when direct
  };
  const int nchunks =
      threads <= 1
          ? 1
          : static_cast<int>(std::min<std::size_t>(
                static_cast<std::size_t>(threads), work.size()));
  std::vector<Partial> partials(static_cast<std::size_t>(nchunks));

  auto process = [&](Recognizer<Real>& model, const Item& item,
                     DistillBreakdown& bd) {
    Tape<Real> tape;
    auto parts = sample_losses(
        tape, item.batch->teacher, model,
        item.batch->data->template image_tensor<Real>(item.index),
        item.batch->data->label_ids(item.index, model.cfg.vocab), cfg,
        item.batch->kd_on);
    Tensor<Real> loss = parts.total;
    backward(loss, tape);
    if (item.batch->is_scene) {
      bd.ce_s += double(parts.ce.value());
      if (parts.logits.defined()) bd.logits_s += double(parts.logits.value());
      if (parts.attn.defined()) bd.attn_s += double(parts.attn.value());
      if (parts.hint.defined()) bd.hint_s += double(parts.hint.value());
      if (parts.aff.defined()) bd.aff_s += double(parts.aff.value());
    } else {
      bd.ce_h += double(parts.ce.value());
      if (parts.logits.defined()) bd.logits_h += double(parts.logits.value());
      if (parts.attn.defined()) bd.attn_h += double(parts.attn.value());
      if (parts.hint.defined()) bd.hint_h += double(parts.hint.value());
      if (parts.aff.defined()) bd.aff_h += double(parts.aff.value());
    }
  };

  if (nchunks == 1) {
    student.params.set_requires_grad(true);
    for (const auto& item : work) process(student, item, partials[0].bd);
  } else {
    std::vector<Recognizer<Real>> clones;
    clones.reserve(static_cast<std::size_t>(nchunks));
    for (int c = 0; c < nchunks; ++c) {
      Recognizer<Real> clone;
      clone.cfg = student.cfg;
      clone.params = student.params.clone(true);
      clones.push_back(std::move(clone));
    }
    parallel_chunks(work.size(), nchunks,
                    [&](std::size_t b, std::size_t e, int chunk) {
                      auto& clone = clones[static_cast<std::size_t>(chunk)];
                      auto& part = partials[static_cast<std::size_t>(chunk)];
                      for (std::size_t i = b; i < e; ++i)
                        process(clone, work[i], part.bd);
                      auto cp = clone.params.all();
                      part.grads.resize(cp.size());
                      for (std::size_t p = 0; p < cp.size(); ++p)
                        part.grads[p] = cp[p].grad();
                    });
    student.params.set_requires_grad(true);
    for (int c = 0; c < nchunks; ++c) {
      const auto& g = partials[static_cast<std::size_t>(c)].grads;
      for (std::size_t p = 0; p < params.size(); ++p) {
        Real* dst = params[p].grad().data();
        const Real* src = g[p].data();
        for (std::size_t i = 0; i < params[p].size(); ++i) dst[i] += src[i];
      }
    }
  }

  // mean over the per-domain batch size (unless sum reduction is asked for)
  const Real inv_b =
      cfg.sum_reduction ? Real(1) : Real(1) / static_cast<Real>(b0);
  if (inv_b != Real(1))
    for (auto& p : params) {
      Real* g = p.grad().data();
      for (std::size_t i = 0; i < p.size(); ++i) g[i] *= inv_b;
    }
  DistillBreakdown bd;
  for (const auto& part : partials) {
    bd.ce_s += part.bd.ce_s;
    bd.ce_h += part.bd.ce_h;
    bd.logits_s += part.bd.logits_s;
    bd.logits_h += part.bd.logits_h;
    bd.attn_s += part.bd.attn_s;
    bd.attn_h += part.bd.attn_h;
    bd.hint_s += part.bd.hint_s;
    bd.hint_h += part.bd.hint_h;
    bd.aff_s += part.bd.aff_s;
    bd.aff_h += part.bd.aff_h;
  }
  const double ib =
      cfg.sum_reduction ? 1.0 : 1.0 / static_cast<double>(b0);
  bd.ce_s *= ib;
  bd.ce_h *= ib;
  bd.logits_s *= ib;
  bd.logits_h *= ib;
  bd.attn_s *= ib;
  bd.attn_h *= ib;
  bd.hint_s *= ib;
  bd.hint_h *= ib;
  bd.aff_s *= ib;
  bd.aff_h *= ib;
  return bd;
}

// ---------------------------------------------------------------------------
// Training drivers
// ---------------------------------------------------------------------------

struct RunArtifacts {
  std::string checkpoint_path;
  std::string best_checkpoint_path;
  std::string log_path;
  GateState gates;
  double val_wra_s = -1;
  double val_wra_h = -1;
};

namespace detail {

inline void ensure_dir(const std::string& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir + ": " + ec.message());
}

class CsvLog {
 public:
  CsvLog(const std::string& path, const std::string& header) : f_(path) {
    if (!f_) throw IoError("cannot write log: " + path);
    f_ << header << "\n";
  }
  void row(const std::string& line) { f_ << line << "\n" << std::flush; }

 private:
  std::ofstream f_;
};

template <typename Real>
double mean_val_ce(const Recognizer<Real>& model, const Dataset& val,
                   int threads) {
  const std::size_t n = val.size();
  const int nchunks = threads <= 1 ? 1 : threads;
  std::vector<double> partial(static_cast<std::size_t>(nchunks), 0.0);
  parallel_chunks(n, threads, [&](std::size_t b, std::size_t e, int chunk) {
    double acc = 0;
    for (std::size_t i = b; i < e; ++i) {
      Tape<Real> tape(false);
      auto trace = forward_teacher_forced(
          tape, val.image_tensor<Real>(i),
          val.label_ids(i, model.cfg.vocab), model);
      acc += double(sequence_cross_entropy(tape, trace,
                                           val.label_ids(i, model.cfg.vocab))
                        .value());
    }
    partial[static_cast<std::size_t>(chunk)] = acc;
  });
  double total = 0;
  for (double p : partial) total += p;
  return total / static_cast<double>(n);
}

}  // namespace detail

// Single-domain teacher pretraining: cross-entropy only, Adam with the
// decay schedule, train/val loss logged every log_every steps.
template <typename Real>
RunArtifacts pretrain_specialist(const Dataset& train, const Dataset* val,
                                 const RecognizerConfig& rcfg,
                                 const TrainConfig& tcfg,
                                 const std::string& out_dir,
                                 Domain domain = Domain::scene) {
  tcfg.validate();
  rcfg.validate();
  if (train.empty()) throw InputError("pretrain_specialist: empty dataset");
  detail::ensure_dir(out_dir);

  Recognizer<Real> model = make_recognizer<Real>(rcfg, tcfg.seed);
  model.params.set_requires_grad(true);
  auto params = model.params.all();
  AdamState<Real> opt;
  Rng batch_rng(tcfg.seed, "batch");
  DistillConfig no_kd;
  no_kd.lambda1 = no_kd.lambda2 = no_kd.lambda3 = no_kd.lambda4 = 0;

  detail::CsvLog log(out_dir + "/train_log.csv", "step,lr,loss,val_loss");
  char line[256];
  const bool is_scene = domain == Domain::scene;

  for (long long step = 0; step < tcfg.total_steps; ++step) {
    const double lr = lr_schedule_step(step, tcfg);
    std::vector<DomainBatch<Real>> batches(1);
    batches[0].data = &train;
    batches[0].indices = draw_batch(batch_rng, train.size(), tcfg.batch_size);
    batches[0].is_scene = is_scene;
    auto bd = accumulate_batch_gradients(model, batches, no_kd, tcfg.threads);
    adam_step(params, opt, static_cast<Real>(lr));
    const double loss = is_scene ? bd.ce_s : bd.ce_h;
    if (!std::isfinite(loss))
      throw NumericError("pretrain_specialist: loss diverged at step " +
                         std::to_string(step));
    if (step % tcfg.log_every == 0 || step == tcfg.total_steps - 1) {
      if (val && !val->empty()) {
        const double vl = detail::mean_val_ce(model, *val, tcfg.threads);
        std::snprintf(line, sizeof line, "%lld,%.6g,%.6f,%.6f", step, lr,
                      loss, vl);
      } else {
        std::snprintf(line, sizeof line, "%lld,%.6g,%.6f,", step, lr, loss);
      }
      log.row(line);
    }
  }

  RunArtifacts art;
  art.checkpoint_path = out_dir + "/model.utxc";
  art.log_path = out_dir + "/train_log.csv";
  save_checkpoint(model, art.checkpoint_path);
  return art;
}

inline std::string kUnifiedLogHeader =
    "step,lr,loss,ce_s,ce_h,logits_s,logits_h,attn_s,attn_h,hint_s,hint_h,"
    "aff_s,aff_h,f_s,f_h,val_wra_s,val_wra_h";

namespace detail {

inline std::string unified_log_row(long long step, double lr,
                                   const DistillBreakdown& bd,
                                   const GateState& gates, double vs,
                                   double vh) {
  char line[512];
  std::string tail;
  if (vs >= 0) {
    char t[64];
    std::snprintf(t, sizeof t, "%.4f,%.4f", vs, vh);
    tail = t;
  } else {
    tail = ",";
  }
  std::snprintf(line, sizeof line,
                "%lld,%.6g,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,"
                "%.6f,%d,%d,%s",
                step, lr, bd.total, bd.ce_s, bd.ce_h, bd.logits_s, bd.logits_h,
                bd.attn_s, bd.attn_h, bd.hint_s, bd.hint_h, bd.aff_s, bd.aff_h,
                gates.f_s ? 1 : 0, gates.f_h ? 1 : 0, tail.c_str());
  return line;
}

}  // namespace detail

// Multi-Task joint baseline: one batch per domain per step, summed
// cross-entropies, one Adam update. No teachers, no distillation.
template <typename Real>
RunArtifacts train_joint_baseline(const Dataset& train_s,
                                  const Dataset& train_h, const Dataset* val_s,
                                  const Dataset* val_h,
                                  const RecognizerConfig& rcfg,
                                  const TrainConfig& tcfg,
                                  const std::string& out_dir) {
  tcfg.validate();
  rcfg.validate();
  if (train_s.empty() || train_h.empty())
    throw InputError("train_joint_baseline: empty dataset");
  detail::ensure_dir(out_dir);

  Recognizer<Real> model = make_recognizer<Real>(rcfg, tcfg.seed);
  model.params.set_requires_grad(true);
  auto params = model.params.all();
  AdamState<Real> opt;
  Rng batch_rng(tcfg.seed, "batch");
  DistillConfig no_kd;
  no_kd.lambda1 = no_kd.lambda2 = no_kd.lambda3 = no_kd.lambda4 = 0;
  GateState gates;

  detail::CsvLog log(out_dir + "/train_log.csv", kUnifiedLogHeader);

  for (long long step = 0; step < tcfg.total_steps; ++step) {
    const double lr = lr_schedule_step(step, tcfg);
    std::vector<DomainBatch<Real>> batches(2);
    batches[0].data = &train_s;
    batches[0].indices =
        draw_batch(batch_rng, train_s.size(), tcfg.batch_size);
    batches[0].is_scene = true;
    batches[1].data = &train_h;
    batches[1].indices =
        draw_batch(batch_rng, train_h.size(), tcfg.batch_size);
    batches[1].is_scene = false;
    auto bd = accumulate_batch_gradients(model, batches, no_kd, tcfg.threads);
    adam_step(params, opt, static_cast<Real>(lr));
    bd.total = bd.ce_s + bd.ce_h;
    if (!std::isfinite(bd.total))
      throw NumericError("train_joint_baseline: loss diverged at step " +
                         std::to_string(step));
    if (step % tcfg.log_every == 0 || step == tcfg.total_steps - 1)
      log.row(detail::unified_log_row(step, lr, bd, gates, -1, -1));
  }

  RunArtifacts art;
  art.checkpoint_path = out_dir + "/model.utxc";
  art.log_path = out_dir + "/train_log.csv";
  if (val_s && val_h && !val_s->empty() && !val_h->empty()) {
    art.val_wra_s = evaluate_wra(model, *val_s, tcfg.threads).wra;
    art.val_wra_h = evaluate_wra(model, *val_h, tcfg.threads).wra;
  }
  save_checkpoint(model, art.checkpoint_path);
  return art;
}

// Conditional distillation of two frozen specialists into one student.
// Per step: CE gradients for both domains always flow; each teacher's
// KD terms are added only while its gate is open; gates are recomputed on
// the validation splits every check_every steps. Saves the final model and
// the best-validation snapshot (mean of the two domain WRAs).
template <typename Real>
RunArtifacts distill_unified(const Dataset& train_s, const Dataset& train_h,
                             const Dataset& val_s, const Dataset& val_h,
                             const Recognizer<Real>& teacher_s,
                             const Recognizer<Real>& teacher_h,
                             const RecognizerConfig& student_cfg,
                             const TrainConfig& tcfg, const DistillConfig& dcfg,
                             const std::string& out_dir) {
  tcfg.validate();
  dcfg.validate();
  student_cfg.validate();
  if (train_s.empty() || train_h.empty())
    throw InputError("distill_unified: empty training split");
  if (val_s.empty() || val_h.empty())
    throw InputError("distill_unified: empty validation split");
  if (teacher_s.cfg.vocab != student_cfg.vocab ||
      teacher_h.cfg.vocab != student_cfg.vocab)
    throw ConfigError("distill_unified: teacher/student vocab mismatch");
  if (teacher_s.cfg.input_h != student_cfg.input_h ||
      teacher_s.cfg.input_w != student_cfg.input_w ||
      teacher_h.cfg.input_h != student_cfg.input_h ||
      teacher_h.cfg.input_w != student_cfg.input_w)
    throw ConfigError("distill_unified: input geometry mismatch");
  detail::ensure_dir(out_dir);

  Recognizer<Real> student = make_recognizer<Real>(student_cfg, tcfg.seed);
  // Non-identical glimpse spaces need the learnable projection; both
  // teachers must then agree on the target dim.
  if (student_cfg.feat_dim() != teacher_s.cfg.feat_dim()) {
    if (teacher_s.cfg.feat_dim() != teacher_h.cfg.feat_dim())
      throw ConfigError(
          "distill_unified: teachers disagree on glimpse dim; cannot share "
          "one hint projection");
    Rng rng(tcfg.seed, "proj");
    student.params.hint_proj = detail::init_uniform<Real>(
        rng, {student_cfg.feat_dim(), teacher_s.cfg.feat_dim()},
        student_cfg.feat_dim(), "hint.proj");
  }
  student.params.set_requires_grad(true);
  auto params = student.params.all();
  AdamState<Real> opt;
  Rng batch_rng(tcfg.seed, "batch");
  GateState gates;  // both open initially

  detail::CsvLog log(out_dir + "/train_log.csv", kUnifiedLogHeader);

  double best_mean_wra = -1;
  std::string best_bytes;
  RunArtifacts art;
  art.log_path = out_dir + "/train_log.csv";

  const bool kd_possible = dcfg.any_kd();

  for (long long step = 0; step < tcfg.total_steps; ++step) {
    const double lr = lr_schedule_step(step, tcfg);
    std::vector<DomainBatch<Real>> batches(2);
    batches[0].data = &train_s;
    batches[0].indices =
        draw_batch(batch_rng, train_s.size(), tcfg.batch_size);
    batches[0].is_scene = true;
    batches[0].teacher = &teacher_s;
    batches[0].kd_on = kd_possible && gates.f_s;
    batches[1].data = &train_h;
    batches[1].indices =
        draw_batch(batch_rng, train_h.size(), tcfg.batch_size);
    batches[1].is_scene = false;
    batches[1].teacher = &teacher_h;
    batches[1].kd_on = kd_possible && gates.f_h;
    auto bd = accumulate_batch_gradients(student, batches, dcfg, tcfg.threads);
    adam_step(params, opt, static_cast<Real>(lr));
    bd.gate_s = gates.f_s;
    bd.gate_h = gates.f_h;
    bd.total = bd.recompose(dcfg);
    if (!std::isfinite(bd.total))
      throw NumericError("distill_unified: loss diverged at step " +
                         std::to_string(step));

    const bool check_now = (step + 1) % tcfg.check_every == 0 ||
                           step == tcfg.total_steps - 1;
    double vs = -1, vh = -1;
    if (check_now) {
      if (dcfg.conditional && kd_possible)
        gates = update_gates(teacher_s, teacher_h, student, val_s, val_h,
                             tcfg.omega, dcfg, tcfg.threads);
      vs = evaluate_wra(student, val_s, tcfg.threads).wra;
      vh = evaluate_wra(student, val_h, tcfg.threads).wra;
      const double mean = (vs + vh) / 2;
      if (mean > best_mean_wra) {
        best_mean_wra = mean;
        best_bytes = serialize_checkpoint(student);
      }
      art.val_wra_s = vs;
      art.val_wra_h = vh;
    }
    if (step % tcfg.log_every == 0 || check_now)
      log.row(detail::unified_log_row(step, lr, bd, gates, vs, vh));
  }

  art.gates = gates;
  art.checkpoint_path = out_dir + "/model.utxc";
  save_checkpoint(student, art.checkpoint_path);
  art.best_checkpoint_path = out_dir + "/best.utxc";
  {
    std::ofstream f(art.best_checkpoint_path,
                    std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot write " + art.best_checkpoint_path);
    f.write(best_bytes.data(),
            static_cast<std::streamsize>(best_bytes.size()));
  }
  return art;
}

}  // namespace unitext
