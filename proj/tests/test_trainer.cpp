#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>

#include "unitext/checkpoint.hpp"
#include "unitext/datagen.hpp"
#include "unitext/trainer.hpp"

using namespace unitext;
using Catch::Approx;
namespace fs = std::filesystem;

namespace {

std::string fresh_dir(const std::string& tag) {
  const auto dir = fs::temp_directory_path() /
                   ("unitext_trainer_" + tag + "_" +
                    std::to_string(::getpid()));
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir.string();
}

std::string read_bytes(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  REQUIRE(f);
  return std::string((std::istreambuf_iterator<char>(f)),
                     std::istreambuf_iterator<char>());
}

GenSpec small_gen(int train, int val, int test, std::uint64_t seed) {
  GenSpec g;
  g.img_h = 16;
  g.img_w = 48;
  g.glyph_h = 10;
  g.word_min = 1;
  g.word_max = 2;
  g.train_count = train;
  g.val_count = val;
  g.test_count = test;
  g.seed = seed;
  return g;
}

RecognizerConfig small_cfg() {
  RecognizerConfig cfg;
  cfg.input_h = 16;
  cfg.input_w = 48;
  cfg.widths = {6, 8};
  cfg.hidden = 16;
  cfg.embed = 12;
  cfg.max_len = 6;
  return cfg;
}

struct SmallData {
  std::string root;
  Dataset train_s, train_h, val_s, val_h;
};

SmallData make_small_data(const std::string& tag, int train = 8, int val = 4) {
  SmallData d;
  d.root = fresh_dir(tag);
  synthesize_dataset(small_gen(train, val, 2, 99), d.root);
  d.train_s = Dataset::load_manifest(
      dataset_manifest_path(d.root, Domain::scene, "train"));
  d.train_h = Dataset::load_manifest(
      dataset_manifest_path(d.root, Domain::hand, "train"));
  d.val_s =
      Dataset::load_manifest(dataset_manifest_path(d.root, Domain::scene, "val"));
  d.val_h =
      Dataset::load_manifest(dataset_manifest_path(d.root, Domain::hand, "val"));
  return d;
}

}  // namespace

TEST_CASE("gate arithmetic follows the algorithm") {
  {
    auto g = gates_from_losses(1.2, 1.0, 1.05);
    CHECK_FALSE(g.f_h);  // 1.2 > 1.05 * 1.0
    CHECK(g.f_s);        // 1.0 <= 1.05 * 1.2
  }
  {
    auto g = gates_from_losses(0.8, 0.8, 1.05);
    CHECK(g.f_s);
    CHECK(g.f_h);
  }
  {
    auto g = gates_from_losses(1.0, 2.0, 1.05);
    CHECK_FALSE(g.f_s);
    CHECK(g.f_h);
  }
}

TEST_CASE("gate exclusion: never both closed for omega >= 1") {
  Rng rng(17);
  for (int it = 0; it < 10000; ++it) {
    const double ls = rng.uniform(0, 10);
    const double lh = rng.uniform(0, 10);
    const double omega = 1.0 + rng.uniform(0, 0.5);
    auto g = gates_from_losses(ls, lh, omega);
    CHECK((g.f_s || g.f_h));
  }
}

TEST_CASE("learning rate schedule") {
  TrainConfig c;
  c.lr = 1e-3;
  c.lr_decay = 0.9;
  c.decay_every = 2000;
  c.lr_floor = 1e-5;
  CHECK(lr_schedule_step(0, c) == Approx(1e-3));
  CHECK(lr_schedule_step(1999, c) == Approx(1e-3));
  CHECK(lr_schedule_step(2000, c) == Approx(9e-4));
  CHECK(lr_schedule_step(20000000, c) == Approx(1e-5));  // exact floor
  double prev = 1e9;
  for (long long s = 0; s < 100000; s += 777) {
    const double lr = lr_schedule_step(s, c);
    CHECK(lr <= prev + 1e-18);
    CHECK(lr >= 1e-5);
    prev = lr;
  }
}

TEST_CASE("checkpoint round trip is byte-identical") {
  const auto dir = fresh_dir("ckpt");
  auto model = make_recognizer<float>(small_cfg(), 123);
  const std::string p1 = dir + "/a.utxc";
  const std::string p2 = dir + "/b.utxc";
  save_checkpoint(model, p1);
  auto loaded = load_checkpoint<float>(p1);
  save_checkpoint(loaded, p2);
  CHECK(read_bytes(p1) == read_bytes(p2));
  CHECK(loaded.cfg.widths == model.cfg.widths);
  CHECK(loaded.cfg.vocab == model.cfg.vocab);
}

TEST_CASE("checkpoint format errors") {
  const auto dir = fresh_dir("ckpt_err");
  auto model = make_recognizer<float>(small_cfg(), 5);
  const std::string path = dir + "/m.utxc";
  save_checkpoint(model, path);

  {  // truncation -> format error naming an offset, not a crash
    auto bytes = read_bytes(path);
    std::ofstream f(dir + "/trunc.utxc", std::ios::binary);
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size() / 2));
    f.close();
    CHECK_THROWS_AS(load_checkpoint<float>(dir + "/trunc.utxc"), FormatError);
  }
  {  // bad magic
    auto bytes = read_bytes(path);
    bytes[0] = 'X';
    std::ofstream f(dir + "/magic.utxc", std::ios::binary);
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    f.close();
    CHECK_THROWS_AS(load_checkpoint<float>(dir + "/magic.utxc"), FormatError);
  }
  {  // cross-config load with vocabulary expectations
    RecognizerConfig other = small_cfg();
    other.vocab = Vocabulary("ABC");
    auto m2 = make_recognizer<float>(other, 6);
    save_checkpoint(m2, dir + "/abc.utxc");
    CHECK_THROWS_AS(load_checkpoint<float>(dir + "/abc.utxc", Vocabulary()),
                    ConfigError);
    CHECK_NOTHROW(load_checkpoint<float>(dir + "/abc.utxc", Vocabulary("ABC")));
  }
  CHECK_THROWS_AS(load_checkpoint<float>(dir + "/missing.utxc"), IoError);
}

TEST_CASE("pretrain memorizes a single sample") {
  const auto root = fresh_dir("overfit");
  synthesize_dataset(small_gen(1, 1, 1, 7), root);
  auto train = Dataset::load_manifest(
      dataset_manifest_path(root, Domain::scene, "train"));
  REQUIRE(train.size() == 1);

  TrainConfig tcfg;
  tcfg.total_steps = 200;
  tcfg.check_every = 200;
  tcfg.batch_size = 2;
  tcfg.log_every = 50;
  tcfg.seed = 3;
  tcfg.lr = 5e-3;  // small model memorizes fast at this rate
  auto art = pretrain_specialist<float>(train, nullptr, small_cfg(), tcfg,
                                        root + "/run", Domain::scene);
  auto model = load_checkpoint<float>(art.checkpoint_path);
  double loss = 0;
  {
    Tape<float> tape(false);
    auto tr = forward_teacher_forced(tape, train.image_tensor<float>(0),
                                     train.label_ids(0), model);
    loss = sequence_cross_entropy(tape, tr, train.label_ids(0)).value();
  }
  CHECK(loss < 0.1);
}

TEST_CASE("pretrain rejects an empty dataset and is seed-deterministic") {
  auto data = make_small_data("determinism");
  TrainConfig tcfg;
  tcfg.total_steps = 30;
  tcfg.check_every = 30;
  tcfg.batch_size = 4;
  tcfg.seed = 11;

  Dataset empty;
  CHECK_THROWS_AS(pretrain_specialist<float>(empty, nullptr, small_cfg(),
                                             tcfg, data.root + "/x",
                                             Domain::scene),
                  InputError);

  auto a = pretrain_specialist<float>(data.train_s, &data.val_s, small_cfg(),
                                      tcfg, data.root + "/run_a",
                                      Domain::scene);
  auto b = pretrain_specialist<float>(data.train_s, &data.val_s, small_cfg(),
                                      tcfg, data.root + "/run_b",
                                      Domain::scene);
  CHECK(read_bytes(a.checkpoint_path) == read_bytes(b.checkpoint_path));
}

TEST_CASE("distillation with all lambdas zero reproduces the joint baseline") {
  auto data = make_small_data("reduction");
  TrainConfig tcfg;
  tcfg.total_steps = 50;
  tcfg.check_every = 50;
  tcfg.batch_size = 4;
  tcfg.seed = 21;

  auto joint = train_joint_baseline<float>(data.train_s, data.train_h,
                                           &data.val_s, &data.val_h,
                                           small_cfg(), tcfg,
                                           data.root + "/joint");

  TrainConfig t2 = tcfg;  // teachers for the distill path (content unused
                          // at lambda zero, but the loop requires them)
  t2.total_steps = 5;
  t2.check_every = 5;
  auto ts = pretrain_specialist<float>(data.train_s, nullptr, small_cfg(), t2,
                                       data.root + "/ts", Domain::scene);
  auto th = pretrain_specialist<float>(data.train_h, nullptr, small_cfg(), t2,
                                       data.root + "/th", Domain::hand);
  auto teacher_s = load_checkpoint<float>(ts.checkpoint_path);
  auto teacher_h = load_checkpoint<float>(th.checkpoint_path);

  DistillConfig dcfg;
  dcfg.lambda1 = dcfg.lambda2 = dcfg.lambda3 = dcfg.lambda4 = 0;
  auto dist = distill_unified(data.train_s, data.train_h, data.val_s,
                              data.val_h, teacher_s, teacher_h, small_cfg(),
                              tcfg, dcfg, data.root + "/dist");

  CHECK(read_bytes(joint.checkpoint_path) == read_bytes(dist.checkpoint_path));
}

TEST_CASE("teacher checkpoints survive distillation byte-identical") {
  auto data = make_small_data("immutable");
  TrainConfig tcfg;
  tcfg.total_steps = 20;
  tcfg.check_every = 10;
  tcfg.batch_size = 4;
  tcfg.seed = 33;

  auto ts = pretrain_specialist<float>(data.train_s, nullptr, small_cfg(),
                                       tcfg, data.root + "/ts", Domain::scene);
  auto th = pretrain_specialist<float>(data.train_h, nullptr, small_cfg(),
                                       tcfg, data.root + "/th", Domain::hand);
  const auto bytes_s = read_bytes(ts.checkpoint_path);
  const auto bytes_h = read_bytes(th.checkpoint_path);

  auto teacher_s = load_checkpoint<float>(ts.checkpoint_path);
  auto teacher_h = load_checkpoint<float>(th.checkpoint_path);
  DistillConfig dcfg;  // all four losses on
  auto art = distill_unified(data.train_s, data.train_h, data.val_s,
                             data.val_h, teacher_s, teacher_h, small_cfg(),
                             tcfg, dcfg, data.root + "/dist");
  CHECK(read_bytes(ts.checkpoint_path) == bytes_s);
  CHECK(read_bytes(th.checkpoint_path) == bytes_h);
  CHECK(fs::exists(art.best_checkpoint_path));
  CHECK(fs::exists(art.log_path));
  // gate state after a full run still satisfies the exclusion invariant
  CHECK((art.gates.f_s || art.gates.f_h));
}

TEST_CASE("update_gates computes lambda-weighted validation KD losses") {
  auto data = make_small_data("gates", 6, 3);
  auto teacher_s = make_recognizer<float>(small_cfg(), 61);
  auto teacher_h = make_recognizer<float>(small_cfg(), 62);
  auto student = make_recognizer<float>(small_cfg(), 63);
  DistillConfig dcfg;
  auto g = update_gates(teacher_s, teacher_h, student, data.val_s, data.val_h,
                        1.05, dcfg);
  CHECK((g.f_s || g.f_h));
  CHECK(g.kd_val_s > 0);
  CHECK(g.kd_val_h > 0);
  CHECK(gates_from_losses(g.kd_val_s, g.kd_val_h, 1.05).f_s == g.f_s);
  CHECK(gates_from_losses(g.kd_val_s, g.kd_val_h, 1.05).f_h == g.f_h);

  Dataset empty;
  CHECK_THROWS_AS(update_gates(teacher_s, teacher_h, student, empty,
                               data.val_h, 1.05, dcfg),
                  InputError);
}

TEST_CASE("threaded batch gradients match the serial path deterministically") {
  auto data = make_small_data("threads");
  auto model1 = make_recognizer<float>(small_cfg(), 71);
  auto model2 = make_recognizer<float>(small_cfg(), 71);
  model1.params.set_requires_grad(true);
  model2.params.set_requires_grad(true);
  DistillConfig no_kd;
  no_kd.lambda1 = no_kd.lambda2 = no_kd.lambda3 = no_kd.lambda4 = 0;

  auto make_batches = [&](Recognizer<float>&) {
    std::vector<DomainBatch<float>> batches(2);
    batches[0].data = &data.train_s;
    batches[0].indices = {0, 1, 2, 3, 4, 5};
    batches[0].is_scene = true;
    batches[1].data = &data.train_h;
    batches[1].indices = {5, 4, 3, 2, 1, 0};
    batches[1].is_scene = false;
    return batches;
  };
  auto bd1 = accumulate_batch_gradients(model1, make_batches(model1), no_kd, 1);
  auto bd2 = accumulate_batch_gradients(model2, make_batches(model2), no_kd, 2);
  CHECK(bd1.ce_s == Approx(bd2.ce_s).margin(1e-5));
  CHECK(bd1.ce_h == Approx(bd2.ce_h).margin(1e-5));
  auto p1 = model1.params.all();
  auto p2 = model2.params.all();
  for (std::size_t i = 0; i < p1.size(); ++i)
    for (std::size_t j = 0; j < p1[i].size(); ++j)
      CHECK(p1[i].grad()[j] == Approx(p2[i].grad()[j]).margin(1e-5));

  // and the threaded path is self-deterministic
  auto model3 = make_recognizer<float>(small_cfg(), 71);
  model3.params.set_requires_grad(true);
  accumulate_batch_gradients(model3, make_batches(model3), no_kd, 2);
  auto p3 = model3.params.all();
  for (std::size_t i = 0; i < p2.size(); ++i)
    for (std::size_t j = 0; j < p2[i].size(); ++j)
      CHECK(p2[i].grad()[j] == p3[i].grad()[j]);
}
