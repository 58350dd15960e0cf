#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>

#include "unitext/checkpoint.hpp"
#include "unitext/datagen.hpp"
#include "unitext/eval.hpp"

using namespace unitext;
using Catch::Approx;
namespace fs = std::filesystem;

namespace {

std::string fresh_dir(const std::string& tag) {
  const auto dir = fs::temp_directory_path() /
                   ("unitext_eval_" + tag + "_" + std::to_string(::getpid()));
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir.string();
}

std::string slurp(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  REQUIRE(f);
  return std::string((std::istreambuf_iterator<char>(f)),
                     std::istreambuf_iterator<char>());
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

GenSpec small_gen(std::uint64_t seed, int n = 10) {
  GenSpec g;
  g.img_h = 16;
  g.img_w = 48;
  g.glyph_h = 10;
  g.word_min = 2;
  g.word_max = 3;
  g.train_count = n;
  g.val_count = 4;
  g.test_count = 4;
  g.seed = seed;
  return g;
}

}  // namespace

TEST_CASE("levenshtein distance") {
  CHECK(levenshtein("", "") == 0);
  CHECK(levenshtein("CAT", "CAT") == 0);
  CHECK(levenshtein("DOG", "DOO") == 1);
  CHECK(levenshtein("", "ABC") == 3);
  CHECK(levenshtein("ABC", "") == 3);
  CHECK(levenshtein("KITTEN", "SITTING") == 3);
  CHECK(levenshtein("AB", "BA") == 2);
}

TEST_CASE("metric arithmetic: oracle, empty-output, and mixed cases") {
  {  // oracle predictions: ground truth fed straight back
    auto cell = metrics_from_pairs({{"CAT", "CAT"}, {"DOG", "DOG"}});
    CHECK(cell.wra == 1.0);
    CHECK(cell.cer == 0.0);
  }
  {  // model emitting empty strings
    auto cell = metrics_from_pairs({{"", "CAT"}, {"", "DOG"}});
    CHECK(cell.wra == 0.0);
    CHECK(cell.cer == 1.0);
  }
  {  // hand-computed mixed case
    auto cell = metrics_from_pairs({{"CAT", "CAT"}, {"DOO", "DOG"}});
    CHECK(cell.wra == Approx(0.5));
    CHECK(cell.cer == Approx((0.0 + 1.0 / 3.0) / 2).margin(1e-9));
    CHECK(cell.cer == Approx(0.1667).margin(5e-5));
  }
  CHECK_THROWS_AS(metrics_from_pairs({}), InputError);
}

TEST_CASE("evaluate_wra on an EOS-forcing model gives WRA 0, CER 1") {
  const auto dir = fresh_dir("eos");
  synthesize_dataset(small_gen(1), dir);
  auto ds = Dataset::load_manifest(
      dataset_manifest_path(dir, Domain::scene, "train"));
  auto model = make_recognizer<float>(small_cfg(), 3);
  for (auto& t : model.params.all())
    std::fill(t.data().begin(), t.data().end(), 0.0f);
  model.params.out_b.data()[static_cast<std::size_t>(
      model.cfg.vocab.eos())] = 5.0f;
  auto cell = evaluate_wra(model, ds);
  CHECK(cell.n == static_cast<int>(ds.size()));
  CHECK(cell.wra == 0.0);
  CHECK(cell.cer == 1.0);
}

TEST_CASE("evaluation is deterministic, thread-count independent, read-only") {
  const auto dir = fresh_dir("det");
  synthesize_dataset(small_gen(2), dir);
  auto ds = Dataset::load_manifest(
      dataset_manifest_path(dir, Domain::hand, "train"));
  auto model = make_recognizer<float>(small_cfg(), 9);
  const std::string before = serialize_checkpoint(model);
  auto a = evaluate_wra(model, ds, 1);
  auto b = evaluate_wra(model, ds, 2);
  auto c = evaluate_wra(model, ds, 1);
  CHECK(a.wra == b.wra);
  CHECK(a.cer == b.cer);
  CHECK(a.wra == c.wra);
  CHECK(serialize_checkpoint(model) == before);  // params untouched
}

TEST_CASE("evaluate_wra is permutation invariant over dataset order") {
  const auto dir = fresh_dir("perm");
  synthesize_dataset(small_gen(3), dir);
  const std::string m1 = dataset_manifest_path(dir, Domain::scene, "train");
  // rewrite the manifest with reversed record order
  auto lines = [&]() {
    std::vector<std::string> ls;
    std::ifstream f(m1);
    std::string l;
    std::getline(f, l);  // header
    while (std::getline(f, l))
      if (!l.empty()) ls.push_back(l);
    return ls;
  }();
  const std::string m2 = dir + "/scene/train/reversed.txt";
  {
    std::ofstream f(m2);
    f << kManifestHeader << "\n";
    for (auto it = lines.rbegin(); it != lines.rend(); ++it) f << *it << "\n";
  }
  auto d1 = Dataset::load_manifest(m1);
  auto d2 = Dataset::load_manifest(m2);
  auto model = make_recognizer<float>(small_cfg(), 5);
  auto c1 = evaluate_wra(model, d1);
  auto c2 = evaluate_wra(model, d2);
  CHECK(c1.wra == Approx(c2.wra).margin(1e-12));
  CHECK(c1.cer == Approx(c2.cer).margin(1e-12));
}

TEST_CASE("vocab mismatch is a configuration error") {
  const auto dir = fresh_dir("vocab");
  synthesize_dataset(small_gen(4), dir);
  auto ds = Dataset::load_manifest(
      dataset_manifest_path(dir, Domain::scene, "train"));
  RecognizerConfig cfg = small_cfg();
  cfg.vocab = Vocabulary("AB");  // generated labels use the full charset
  auto model = make_recognizer<float>(cfg, 1);
  CHECK_THROWS_AS(evaluate_wra(model, ds), ConfigError);
}

TEST_CASE("report CSV: fixed columns, stable bytes, right line counts") {
  const auto dir = fresh_dir("csv");
  {  // empty matrix -> header-only file
    emit_report({}, dir + "/empty.csv");
    CHECK(slurp(dir + "/empty.csv") ==
          "model,dataset,n,wra,cer,checkpoint_hash\n");
  }
  std::vector<EvalCell> cells;
  for (int m = 0; m < 4; ++m)
    for (int d = 0; d < 2; ++d) {
      EvalCell c;
      c.model = "model" + std::to_string(m);
      c.dataset = d ? "hand_test" : "scene_test";
      c.n = 200;
      c.wra = 0.123456 + m * 0.1;
      c.cer = 0.05 + d * 0.01;
      c.checkpoint_hash = "deadbeef";
      cells.push_back(c);
    }
  emit_report(cells, dir + "/m.csv");
  const auto text = slurp(dir + "/m.csv");
  int nlines = 0;
  for (char ch : text) nlines += ch == '\n';
  CHECK(nlines == 9);  // header + 8 cells
  CHECK(text.find("model0,scene_test,200,0.1235,0.0500,deadbeef") !=
        std::string::npos);
  emit_report(cells, dir + "/m2.csv");
  CHECK(slurp(dir + "/m.csv") == slurp(dir + "/m2.csv"));  // re-emit identical
}

TEST_CASE("cross_domain_matrix produces one cell per model x dataset") {
  const auto dir = fresh_dir("matrix");
  synthesize_dataset(small_gen(5), dir);
  auto test_s = Dataset::load_manifest(
      dataset_manifest_path(dir, Domain::scene, "test"));
  auto test_h =
      Dataset::load_manifest(dataset_manifest_path(dir, Domain::hand, "test"));
  auto m1 = make_recognizer<float>(small_cfg(), 1);
  auto m2 = make_recognizer<float>(small_cfg(), 2);
  std::vector<NamedModel<float>> models = {{"a", &m1, "h1"}, {"b", &m2, "h2"}};
  std::vector<NamedDataset> datasets = {{"scene_test", &test_s},
                                        {"hand_test", &test_h}};
  auto cells = cross_domain_matrix(models, datasets);
  REQUIRE(cells.size() == 4);
  CHECK(cells[0].model == "a");
  CHECK(cells[0].dataset == "scene_test");
  CHECK(cells[0].n == 4);
  CHECK(cells[3].model == "b");
  CHECK(cells[3].dataset == "hand_test");
  CHECK(cells[3].checkpoint_hash == "h2");
  auto again = cross_domain_matrix(models, datasets);
  for (std::size_t i = 0; i < cells.size(); ++i) {
    CHECK(cells[i].wra == again[i].wra);
    CHECK(cells[i].cer == again[i].cer);
  }
}
