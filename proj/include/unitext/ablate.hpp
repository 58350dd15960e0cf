#pragma once

// Ablation grid over the distillation configuration: per-loss toggles in
// the style of the contribution table, conditional distillation on/off, and
// hint-loss placement. All rows share the same teachers and seeds; the
// report states WRA per domain and asserts nothing about orderings.

#include <fstream>
#include <string>
#include <vector>

#include "unitext/checkpoint.hpp"
#include "unitext/distill.hpp"
#include "unitext/eval.hpp"
#include "unitext/trainer.hpp"

namespace unitext {

struct AblationRow {
  std::string name;
  DistillConfig cfg;
};

// Cumulative per-loss rows: none, +logits, +attn, +hint, +aff.
inline std::vector<AblationRow> ablation_loss_rows(const DistillConfig& base) {
  std::vector<AblationRow> rows;
  DistillConfig c = base;
  c.lambda1 = c.lambda2 = c.lambda3 = c.lambda4 = 0;
  rows.push_back({"ce_only", c});
  c.lambda1 = base.lambda1;
  rows.push_back({"logits", c});
  c.lambda2 = base.lambda2;
  rows.push_back({"logits_attn", c});
  c.lambda3 = base.lambda3;
  rows.push_back({"logits_attn_hint", c});
  c.lambda4 = base.lambda4;
  rows.push_back({"all", c});
  return rows;
}

// The loss rows plus conditional-distillation off and the two alternative
// hint placements.
inline std::vector<AblationRow> ablation_full_grid(const DistillConfig& base) {
  auto rows = ablation_loss_rows(base);
  DistillConfig c = base;
  c.conditional = false;
  rows.push_back({"all_unconditional", c});
  c = base;
  c.hint_source = HintSource::feature;
  rows.push_back({"hint_on_feature", c});
  c = base;
  c.hint_source = HintSource::hidden;
  rows.push_back({"hint_on_hidden", c});
  return rows;
}

struct AblationResult {
  AblationRow row;
  double wra_scene = 0;
  double wra_hand = 0;
  double cer_scene = 0;
  double cer_hand = 0;
};

inline void emit_ablation_csv(const std::vector<AblationResult>& results,
                              const std::string& teacher_s_hash,
                              const std::string& teacher_h_hash,
                              const std::string& path) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot write ablation report: " + path);
  f << "row,lambda1,lambda2,lambda3,lambda4,conditional,hint_source,"
       "wra_scene,wra_hand,cer_scene,cer_hand,teacher_s_hash,teacher_h_hash\n";
  char buf[160];
  for (const auto& r : results) {
    std::snprintf(buf, sizeof buf, "%g,%g,%g,%g,%d,%s,%.4f,%.4f,%.4f,%.4f",
                  r.row.cfg.lambda1, r.row.cfg.lambda2, r.row.cfg.lambda3,
                  r.row.cfg.lambda4, r.row.cfg.conditional ? 1 : 0,
                  hint_source_name(r.row.cfg.hint_source), r.wra_scene,
                  r.wra_hand, r.cer_scene, r.cer_hand);
    f << r.row.name << "," << buf << "," << teacher_s_hash << ","
      << teacher_h_hash << "\n";
  }
  if (!f) throw IoError("short write to ablation report: " + path);
}

// Runs distill_unified once per row (shared teachers and seeds), evaluates
// the best-validation snapshot on the test splits, and emits the CSV.
template <typename Real>
std::vector<AblationResult> ablation_report(
    const Dataset& train_s, const Dataset& train_h, const Dataset& val_s,
    const Dataset& val_h, const Dataset& test_s, const Dataset& test_h,
    const Recognizer<Real>& teacher_s, const Recognizer<Real>& teacher_h,
    const RecognizerConfig& student_cfg, const TrainConfig& tcfg,
    const std::vector<AblationRow>& rows, const std::string& out_dir) {
  detail::ensure_dir(out_dir);
  std::vector<AblationResult> results;
  for (const auto& row : rows) {
    const std::string row_dir = out_dir + "/" + row.name;
    auto art = distill_unified(train_s, train_h, val_s, val_h, teacher_s,
                               teacher_h, student_cfg, tcfg, row.cfg, row_dir);
    Recognizer<Real> best = load_checkpoint<Real>(art.best_checkpoint_path);
    AblationResult res;
    res.row = row;
    auto cs = evaluate_wra(best, test_s, tcfg.threads);
    auto ch = evaluate_wra(best, test_h, tcfg.threads);
    res.wra_scene = cs.wra;
    res.cer_scene = cs.cer;
    res.wra_hand = ch.wra;
    res.cer_hand = ch.cer;
    results.push_back(std::move(res));
  }
  return results;
}

}  // namespace unitext
