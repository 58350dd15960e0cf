// unitext CLI: dataset generation, teacher/joint/distillation training,
// evaluation, and gradient verification. Every run directory receives a
// run.cfg with the exact configuration that produced it; runs are
// reproducible from (run.cfg, seed).

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "unitext/ablate.hpp"
#include "unitext/checkpoint.hpp"
#include "unitext/datagen.hpp"
#include "unitext/eval.hpp"
#include "unitext/trainer.hpp"
#include "unitext/verify.hpp"

namespace {

using namespace unitext;

// run.cfg: one "option-name=value" line per option of the subcommand, in
// registration order. Values are the explicit ones when given, otherwise
// the defaults, so a run is reproducible from the file alone.
std::string emit_config_str(CLI::App* sub) {
  std::string out;
  for (const CLI::Option* opt : sub->get_options()) {
    if (opt->get_lnames().empty()) continue;
    const std::string name = opt->get_lnames()[0];
    if (name == "help" || name == "config") continue;
    std::string value;
    if (opt->get_expected_min() == 0) {
      value = opt->count() > 0 ? "true" : "false";
    } else if (opt->count() > 0) {
      const auto& rs = opt->results();
      for (std::size_t i = 0; i < rs.size(); ++i) {
        if (i) value += ",";
        value += rs[i];
      }
    } else {
      value = opt->get_default_str();
    }
    out += name + "=" + value + "\n";
  }
  return out;
}

void write_run_cfg(CLI::App* sub, const std::string& out_dir) {
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create " + out_dir + ": " + ec.message());
  const std::string path = out_dir + "/run.cfg";
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot write " + path);
  f << emit_config_str(sub);
}

void add_config_file(CLI::App* sub) {
  // Stripped out before parsing; registered so it shows up in --help.
  static std::string sink;
  sub->add_option("--config", sink,
                  "Read options from a run.cfg (command line wins)");
}

// Expands "--config FILE" into option tokens before CLI11 sees the argv.
// Keys already given explicitly are skipped; unknown keys turn into
// unknown options and fail parsing.
std::vector<std::string> expand_config(CLI::App& app,
                                       std::vector<std::string> args) {
  std::size_t cfg_at = args.size();
  for (std::size_t i = 0; i < args.size(); ++i)
    if (args[i] == "--config") {
      cfg_at = i;
      break;
    }
  if (cfg_at == args.size()) return args;
  if (cfg_at + 1 >= args.size())
    throw CLI::ParseError("--config requires a file path",
                          CLI::ExitCodes::InvalidError);
  if (args.empty() || args[0].empty() || args[0][0] == '-') return args;
  CLI::App* sub = app.get_subcommand_no_throw(args[0]);
  if (!sub) return args;

  std::set<std::string> given;
  for (const auto& a : args)
    if (a.rfind("--", 0) == 0) given.insert(a.substr(2));

  std::ifstream f(args[cfg_at + 1]);
  if (!f) throw IoError("cannot open config: " + args[cfg_at + 1]);
  std::vector<std::string> tokens;
  std::string line;
  while (std::getline(f, line)) {
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw FormatError("config line is not key=value: " + line);
    const std::string key = line.substr(0, eq);
    std::string value = line.substr(eq + 1);
    if (value.size() >= 2 && value.front() == '"' && value.back() == '"')
      value = value.substr(1, value.size() - 2);
    if (given.count(key)) continue;
    const CLI::Option* opt = sub->get_option_no_throw("--" + key);
    if (opt && opt->get_expected_min() == 0) {
      if (value == "true" || value == "1") tokens.push_back("--" + key);
      continue;
    }
    if (value.empty()) continue;
    tokens.push_back("--" + key);
    tokens.push_back(value);
  }
  args.erase(args.begin() + static_cast<std::ptrdiff_t>(cfg_at),
             args.begin() + static_cast<std::ptrdiff_t>(cfg_at) + 2);
  args.insert(args.begin() + static_cast<std::ptrdiff_t>(cfg_at),
              tokens.begin(), tokens.end());
  return args;
}

struct ModelFlags {
  std::string preset = "desk";
  std::vector<int> widths;
  int hidden = 0;
  int embed = 0;
  int max_len = 0;
  int input_h = 0;
  int input_w = 0;

  void add_to(CLI::App* sub) {
    sub->add_option("--preset", preset, "Model preset: desk or paper")
        ->check(CLI::IsMember({"desk", "paper"}))
        ->capture_default_str();
    sub->add_option("--widths", widths,
                    "Backbone stage widths (overrides preset)")
        ->delimiter(',');
    sub->add_option("--hidden", hidden, "Decoder hidden size");
    sub->add_option("--embed", embed, "Character embedding dim");
    sub->add_option("--max-len", max_len, "Max decode length");
    sub->add_option("--input-h", input_h, "Input image height");
    sub->add_option("--input-w", input_w, "Input image width");
  }

  RecognizerConfig resolve() const {
    RecognizerConfig cfg = preset == "paper" ? RecognizerConfig::paper_scale()
                                             : RecognizerConfig::desk_scale();
    if (!widths.empty()) cfg.widths = widths;
    if (hidden > 0) cfg.hidden = hidden;
    if (embed > 0) cfg.embed = embed;
    if (max_len > 0) cfg.max_len = max_len;
    if (input_h > 0) cfg.input_h = input_h;
    if (input_w > 0) cfg.input_w = input_w;
    cfg.validate();
    return cfg;
  }
};

struct TrainFlags {
  TrainConfig cfg;

  void add_to(CLI::App* sub) {
    sub->add_option("--steps", cfg.total_steps, "Total training steps")
        ->capture_default_str();
    sub->add_option("--batch", cfg.batch_size, "Batch size per domain")
        ->capture_default_str();
    sub->add_option("--lr", cfg.lr, "Initial learning rate")
        ->capture_default_str();
    sub->add_option("--lr-decay", cfg.lr_decay, "Decay factor")
        ->capture_default_str();
    sub->add_option("--decay-every", cfg.decay_every,
                    "Steps between decay applications")
        ->capture_default_str();
    sub->add_option("--lr-floor", cfg.lr_floor, "Learning rate floor")
        ->capture_default_str();
    sub->add_option("--check-every", cfg.check_every,
                    "Gate/validation check interval")
        ->capture_default_str();
    sub->add_option("--omega", cfg.omega, "Distillation gate threshold (>=1)")
        ->capture_default_str();
    sub->add_option("--seed", cfg.seed, "Run seed")
        ->envname("UNITEXT_SEED")
        ->capture_default_str();
    sub->add_option("--threads", cfg.threads, "Worker threads (1 = serial)")
        ->capture_default_str();
    sub->add_option("--log-every", cfg.log_every, "Log interval")
        ->capture_default_str();
  }
};

struct DistillFlags {
  DistillConfig cfg;
  std::string hint_source = "glimpse";
  bool no_conditional = false;

  void add_to(CLI::App* sub) {
    sub->add_option("--tau", cfg.tau, "Softmax temperature")
        ->capture_default_str();
    sub->add_option("--lambda1", cfg.lambda1, "Logits loss weight")
        ->capture_default_str();
    sub->add_option("--lambda2", cfg.lambda2, "Attention loss weight")
        ->capture_default_str();
    sub->add_option("--lambda3", cfg.lambda3, "Hint loss weight")
        ->capture_default_str();
    sub->add_option("--lambda4", cfg.lambda4, "Affinity loss weight")
        ->capture_default_str();
    sub->add_option("--hint-source", hint_source,
                    "Hint placement: glimpse, hidden, feature")
        ->check(CLI::IsMember({"glimpse", "hidden", "feature"}))
        ->capture_default_str();
    sub->add_flag("--no-conditional", no_conditional,
                  "Disable the conditional-distillation gates");
    sub->add_flag("--sum-reduction", cfg.sum_reduction,
                  "Sum losses over the batch instead of averaging");
  }

  DistillConfig resolve() const {
    DistillConfig c = cfg;
    c.hint_source = hint_source_from_name(hint_source);
    c.conditional = !no_conditional;
    c.validate();
    return c;
  }
};

Dataset load_split(const std::string& root, Domain dom, const char* split) {
  return Dataset::load_manifest(dataset_manifest_path(root, dom, split));
}

int run(int argc, char** argv) {
  CLI::App app{"unitext: two-domain text recognition with knowledge "
               "distillation"};
  app.require_subcommand(1);

  // gen-data ---------------------------------------------------------------
  auto* gen = app.add_subcommand("gen-data",
                                 "Synthesize the two-domain word corpus");
  GenSpec gspec;
  std::string gen_out;
  std::string lexicon_file;
  gen->add_option("--out", gen_out, "Output directory")->required();
  gen->add_option("--seed", gspec.seed, "Generator seed")
      ->envname("UNITEXT_SEED")
      ->capture_default_str();
  gen->add_option("--train-count", gspec.train_count, "Samples per domain")
      ->capture_default_str();
  gen->add_option("--val-count", gspec.val_count, "Validation samples")
      ->capture_default_str();
  gen->add_option("--test-count", gspec.test_count, "Test samples")
      ->capture_default_str();
  gen->add_option("--word-min", gspec.word_min, "Min word length")
      ->capture_default_str();
  gen->add_option("--word-max", gspec.word_max, "Max word length")
      ->capture_default_str();
  gen->add_option("--img-h", gspec.img_h, "Image height")
      ->capture_default_str();
  gen->add_option("--img-w", gspec.img_w, "Image width")
      ->capture_default_str();
  gen->add_option("--glyph-h", gspec.glyph_h, "Glyph height in pixels")
      ->capture_default_str();
  gen->add_option("--lexicon", lexicon_file,
                  "Optional word list file, one word per line");
  add_config_file(gen);
  gen->callback([&]() {
    if (!lexicon_file.empty()) {
      std::ifstream f(lexicon_file);
      if (!f) throw IoError("cannot open lexicon: " + lexicon_file);
      std::string w;
      while (std::getline(f, w))
        if (!w.empty()) gspec.lexicon.push_back(w);
    }
    write_run_cfg(gen, gen_out);
    auto summary = synthesize_dataset(gspec, gen_out);
    std::printf("dataset written to %s (train/val/test per domain: %d/%d/%d, "
                "lexicon %d words)\n",
                summary.out_dir.c_str(), summary.per_domain_counts[0],
                summary.per_domain_counts[1], summary.per_domain_counts[2],
                summary.lexicon_size);
  });

  // train-teacher ----------------------------------------------------------
  auto* tt = app.add_subcommand("train-teacher",
                                "Pretrain a single-domain specialist");
  std::string tt_data, tt_out, tt_domain;
  ModelFlags tt_model;
  TrainFlags tt_train;
  tt->add_option("--data", tt_data, "Dataset root (from gen-data)")
      ->required();
  tt->add_option("--domain", tt_domain, "scene or hand")
      ->required()
      ->check(CLI::IsMember({"scene", "hand"}));
  tt->add_option("--out", tt_out, "Run output directory")->required();
  tt_model.add_to(tt);
  tt_train.add_to(tt);
  add_config_file(tt);
  tt->callback([&]() {
    const Domain dom = domain_from_name(tt_domain);
    Dataset train = load_split(tt_data, dom, "train");
    Dataset val = load_split(tt_data, dom, "val");
    write_run_cfg(tt, tt_out);
    auto art = pretrain_specialist<float>(train, &val, tt_model.resolve(),
                                          tt_train.cfg, tt_out, dom);
    Recognizer<float> model = load_checkpoint<float>(art.checkpoint_path);
    auto cell = evaluate_wra(model, val, tt_train.cfg.threads);
    std::printf("teacher(%s): checkpoint %s  val WRA %.4f  CER %.4f\n",
                tt_domain.c_str(), art.checkpoint_path.c_str(), cell.wra,
                cell.cer);
  });

  // joint-train ------------------------------------------------------------
  auto* jt = app.add_subcommand(
      "joint-train", "Multi-task baseline on both domains (no distillation)");
  std::string jt_data, jt_out;
  ModelFlags jt_model;
  TrainFlags jt_train;
  jt->add_option("--data", jt_data, "Dataset root")->required();
  jt->add_option("--out", jt_out, "Run output directory")->required();
  jt_model.add_to(jt);
  jt_train.add_to(jt);
  add_config_file(jt);
  jt->callback([&]() {
    Dataset train_s = load_split(jt_data, Domain::scene, "train");
    Dataset train_h = load_split(jt_data, Domain::hand, "train");
    Dataset val_s = load_split(jt_data, Domain::scene, "val");
    Dataset val_h = load_split(jt_data, Domain::hand, "val");
    write_run_cfg(jt, jt_out);
    auto art = train_joint_baseline<float>(train_s, train_h, &val_s, &val_h,
                                           jt_model.resolve(), jt_train.cfg,
                                           jt_out);
    std::printf("joint: checkpoint %s  val WRA scene %.4f  hand %.4f\n",
                art.checkpoint_path.c_str(), art.val_wra_s, art.val_wra_h);
  });

  // distill ----------------------------------------------------------------
  auto* ds = app.add_subcommand(
      "distill", "Distill two frozen specialists into one unified student");
  std::string ds_data, ds_out, ds_teacher_s, ds_teacher_h;
  std::vector<int> ds_student_widths;
  int ds_student_hidden = 0, ds_student_embed = 0;
  TrainFlags ds_train;
  DistillFlags ds_distill;
  ds->add_option("--data", ds_data, "Dataset root")->required();
  ds->add_option("--teacher-scene", ds_teacher_s, "Scene teacher checkpoint")
      ->required();
  ds->add_option("--teacher-hand", ds_teacher_h, "Hand teacher checkpoint")
      ->required();
  ds->add_option("--out", ds_out, "Run output directory")->required();
  ds->add_option("--student-widths", ds_student_widths,
                 "Student backbone widths (default: same as scene teacher)")
      ->delimiter(',');
  ds->add_option("--student-hidden", ds_student_hidden,
                 "Student hidden size (default: teacher's)");
  ds->add_option("--student-embed", ds_student_embed,
                 "Student embedding dim (default: teacher's)");
  ds_train.add_to(ds);
  ds_distill.add_to(ds);
  add_config_file(ds);
  ds->callback([&]() {
    Dataset train_s = load_split(ds_data, Domain::scene, "train");
    Dataset train_h = load_split(ds_data, Domain::hand, "train");
    Dataset val_s = load_split(ds_data, Domain::scene, "val");
    Dataset val_h = load_split(ds_data, Domain::hand, "val");
    Recognizer<float> teacher_s = load_checkpoint<float>(ds_teacher_s);
    Recognizer<float> teacher_h =
        load_checkpoint<float>(ds_teacher_h, teacher_s.cfg.vocab);
    RecognizerConfig student_cfg = teacher_s.cfg;
    if (!ds_student_widths.empty()) student_cfg.widths = ds_student_widths;
    if (ds_student_hidden > 0) student_cfg.hidden = ds_student_hidden;
    if (ds_student_embed > 0) student_cfg.embed = ds_student_embed;
    student_cfg.validate();
    write_run_cfg(ds, ds_out);
    auto art = distill_unified(train_s, train_h, val_s, val_h, teacher_s,
                               teacher_h, student_cfg, ds_train.cfg,
                               ds_distill.resolve(), ds_out);
    std::printf(
        "unified: checkpoint %s  best %s  val WRA scene %.4f  hand %.4f  "
        "gates f_s=%d f_h=%d\n",
        art.checkpoint_path.c_str(), art.best_checkpoint_path.c_str(),
        art.val_wra_s, art.val_wra_h, art.gates.f_s ? 1 : 0,
        art.gates.f_h ? 1 : 0);
  });

  // eval -------------------------------------------------------------------
  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint on a manifest");
  std::string ev_model, ev_data, ev_out, ev_name = "model";
  int ev_threads = 1;
  ev->add_option("--model", ev_model, "Checkpoint path")->required();
  ev->add_option("--data", ev_data, "Manifest path")->required();
  ev->add_option("--out", ev_out, "Optional CSV output path");
  ev->add_option("--name", ev_name, "Model label used in the CSV")
      ->capture_default_str();
  ev->add_option("--threads", ev_threads, "Worker threads")
      ->capture_default_str();
  add_config_file(ev);
  ev->callback([&]() {
    Recognizer<float> model = load_checkpoint<float>(ev_model);
    Dataset data = Dataset::load_manifest(ev_data, model.cfg.vocab);
    EvalCell cell = evaluate_wra(model, data, ev_threads);
    cell.model = ev_name;
    cell.dataset = ev_data;
    cell.checkpoint_hash = hash_hex(file_content_hash(ev_model));
    std::printf("%s on %s: n=%d WRA %.4f CER %.4f\n", ev_model.c_str(),
                ev_data.c_str(), cell.n, cell.wra, cell.cer);
    if (!ev_out.empty()) emit_report({cell}, ev_out);
  });

  // cross-eval ---------------------------------------------------------------
  auto* ce = app.add_subcommand(
      "cross-eval",
      "Evaluate teachers, joint baseline and unified student on both "
      "domain test splits");
  std::string ce_data, ce_out, ce_ts, ce_th, ce_joint, ce_unified;
  std::string ce_split = "test";
  int ce_threads = 1;
  ce->add_option("--data", ce_data, "Dataset root")->required();
  ce->add_option("--teacher-scene", ce_ts, "Scene teacher checkpoint")
      ->required();
  ce->add_option("--teacher-hand", ce_th, "Hand teacher checkpoint")
      ->required();
  ce->add_option("--joint", ce_joint, "Joint baseline checkpoint")
      ->required();
  ce->add_option("--unified", ce_unified, "Unified student checkpoint")
      ->required();
  ce->add_option("--split", ce_split, "Dataset split to evaluate")
      ->capture_default_str();
  ce->add_option("--out", ce_out, "CSV output path")->required();
  ce->add_option("--threads", ce_threads, "Worker threads")
      ->capture_default_str();
  add_config_file(ce);
  ce->callback([&]() {
    std::vector<std::pair<std::string, std::string>> specs = {
        {"teacher_scene", ce_ts},
        {"teacher_hand", ce_th},
        {"joint", ce_joint},
        {"unified", ce_unified}};
    std::vector<Recognizer<float>> models;
    std::vector<NamedModel<float>> named;
    models.reserve(specs.size());
    for (const auto& [name, path] : specs) {
      models.push_back(load_checkpoint<float>(path));
      named.push_back(NamedModel<float>{
          name, &models.back(), hash_hex(file_content_hash(path))});
    }
    Dataset test_s = load_split(ce_data, Domain::scene, ce_split.c_str());
    Dataset test_h = load_split(ce_data, Domain::hand, ce_split.c_str());
    std::vector<NamedDataset> datasets = {{"scene_" + ce_split, &test_s},
                                          {"hand_" + ce_split, &test_h}};
    auto cells = cross_domain_matrix(named, datasets, ce_threads);
    emit_report(cells, ce_out);
    for (const auto& c : cells)
      std::printf("%-14s %-12s n=%-4d WRA %.4f CER %.4f\n", c.model.c_str(),
                  c.dataset.c_str(), c.n, c.wra, c.cer);
    std::printf("matrix written to %s\n", ce_out.c_str());
  });

  // ablate -------------------------------------------------------------------
  auto* ab = app.add_subcommand(
      "ablate", "Run the per-loss / conditional / hint-placement grid");
  std::string ab_data, ab_out, ab_ts, ab_th, ab_grid = "full";
  TrainFlags ab_train;
  DistillFlags ab_distill;
  ab->add_option("--data", ab_data, "Dataset root")->required();
  ab->add_option("--teacher-scene", ab_ts, "Scene teacher checkpoint")
      ->required();
  ab->add_option("--teacher-hand", ab_th, "Hand teacher checkpoint")
      ->required();
  ab->add_option("--out", ab_out, "Output directory")->required();
  ab->add_option("--grid", ab_grid, "Row set: loss (5 rows) or full")
      ->check(CLI::IsMember({"loss", "full"}))
      ->capture_default_str();
  ab_train.add_to(ab);
  ab_distill.add_to(ab);
  add_config_file(ab);
  ab->callback([&]() {
    Dataset train_s = load_split(ab_data, Domain::scene, "train");
    Dataset train_h = load_split(ab_data, Domain::hand, "train");
    Dataset val_s = load_split(ab_data, Domain::scene, "val");
    Dataset val_h = load_split(ab_data, Domain::hand, "val");
    Dataset test_s = load_split(ab_data, Domain::scene, "test");
    Dataset test_h = load_split(ab_data, Domain::hand, "test");
    Recognizer<float> teacher_s = load_checkpoint<float>(ab_ts);
    Recognizer<float> teacher_h =
        load_checkpoint<float>(ab_th, teacher_s.cfg.vocab);
    write_run_cfg(ab, ab_out);
    const DistillConfig base = ab_distill.resolve();
    const auto rows = ab_grid == "loss" ? ablation_loss_rows(base)
                                        : ablation_full_grid(base);
    auto results = ablation_report(train_s, train_h, val_s, val_h, test_s,
                                   test_h, teacher_s, teacher_h, teacher_s.cfg,
                                   ab_train.cfg, rows, ab_out);
    const std::string csv = ab_out + "/ablation.csv";
    emit_ablation_csv(results, hash_hex(file_content_hash(ab_ts)),
                      hash_hex(file_content_hash(ab_th)), csv);
    for (const auto& r : results)
      std::printf("%-20s WRA scene %.4f  hand %.4f\n", r.row.name.c_str(),
                  r.wra_scene, r.wra_hand);
    std::printf("ablation written to %s\n", csv.c_str());
  });

  // gradcheck ----------------------------------------------------------------
  auto* gc = app.add_subcommand(
      "gradcheck", "Finite-difference verification in 64-bit mode");
  std::uint64_t gc_seed = 1234;
  int gc_instances = 100;
  int gc_composite = 3;
  gc->add_option("--seed", gc_seed, "Verification seed")
      ->envname("UNITEXT_SEED")
      ->capture_default_str();
  gc->add_option("--instances", gc_instances, "Random instances per primitive")
      ->capture_default_str();
  gc->add_option("--composite-instances", gc_composite,
                 "Instances of the full combined objective")
      ->capture_default_str();
  gc->callback([&]() {
    auto prims = verify_primitive_gradients(gc_seed, gc_instances, 1e-5);
    std::printf("primitives: %d checks, worst rel err %.3e -> %s\n",
                prims.checks, prims.worst, prims.pass ? "PASS" : "FAIL");
    for (const auto& f : prims.failures) std::printf("  FAIL %s\n", f.c_str());
    auto comp = verify_composed_objective(gc_seed, gc_composite, 1e-4);
    std::printf("composed objective: %d checks, worst rel err %.3e -> %s\n",
                comp.checks, comp.worst, comp.pass ? "PASS" : "FAIL");
    for (const auto& f : comp.failures) std::printf("  FAIL %s\n", f.c_str());
    if (!prims.pass || !comp.pass)
      throw NumericError("gradient verification failed");
  });

  try {
    std::vector<std::string> args(argv + 1, argv + argc);
    args = expand_config(app, std::move(args));
    std::reverse(args.begin(), args.end());  // CLI11 consumes reversed argv
    app.parse(args);
  } catch (const CLI::CallForHelp&) {
    std::cout << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    std::cout << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n" << app.help();
    return 1;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const unitext::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
