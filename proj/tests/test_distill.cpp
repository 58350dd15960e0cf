#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "oracles.hpp"
#include "unitext/distill.hpp"
#include "unitext/gradcheck.hpp"
#include "unitext/recognizer.hpp"
#include "unitext/rng.hpp"
#include "unitext/verify.hpp"

using namespace unitext;
using Catch::Approx;

namespace {

// Synthetic trace with hand-set step tensors.
ForwardTrace<double> trace_from(
    const std::vector<std::vector<double>>& logits,
    const std::vector<std::vector<double>>& glimpses,
    const std::vector<std::vector<double>>& alphas, int ah, int aw,
    bool requires_grad) {
  ForwardTrace<double> tr;
  Tape<double> scratch(false);
  tr.feat_h = ah;
  tr.feat_w = aw;
  for (std::size_t t = 0; t < logits.size(); ++t) {
    auto l = Tensor<double>::from({static_cast<int>(logits[t].size())},
                                  std::vector<double>(logits[t]),
                                  requires_grad);
    tr.logits.push_back(l);
    tr.probs.push_back(softmax_temperature(scratch, l, 1.0));
    auto g = Tensor<double>::from({static_cast<int>(glimpses[t].size())},
                                  std::vector<double>(glimpses[t]),
                                  requires_grad);
    tr.glimpses.push_back(g);
    tr.hiddens.push_back(g);
    tr.outputs.push_back(g);
    tr.alphas.push_back(Tensor<double>::from(
        {ah, aw}, std::vector<double>(alphas[t]), requires_grad));
  }
  return tr;
}

std::vector<std::vector<double>> rand_rows(Rng& rng, int rows, int cols) {
  std::vector<std::vector<double>> out(static_cast<std::size_t>(rows));
  for (auto& r : out) {
    r.resize(static_cast<std::size_t>(cols));
    for (auto& v : r) v = rng.uniform(-1, 1);
  }
  return out;
}

std::vector<std::vector<double>> rand_prob_rows(Rng& rng, int rows, int cols) {
  auto out = rand_rows(rng, rows, cols);
  for (auto& r : out) {
    double z = 0;
    for (auto& v : r) {
      v = std::exp(v);
      z += v;
    }
    for (auto& v : r) v /= z;
  }
  return out;
}

}  // namespace

TEST_CASE("logits distillation: stationarity at identical logits") {
  Rng rng(1);
  const int k = 3, n = 5;
  auto logits = rand_rows(rng, k, n);
  auto glimpses = rand_rows(rng, k, 4);
  auto alphas = rand_prob_rows(rng, k, 6);
  auto teacher = trace_from(logits, glimpses, alphas, 2, 3, false);
  auto student = trace_from(logits, glimpses, alphas, 2, 3, true);

  for (double tau : {1.0, 2.0, 4.0}) {
    Tape<double> tape;
    auto loss = distill_logits_loss(tape, teacher, student, tau);
    // value equals the summed entropy of the softened teacher
    double want = 0;
    for (int t = 0; t < k; ++t) {
      auto p = oracles::softmax(logits[static_cast<std::size_t>(t)], tau);
      for (double v : p) want -= v * std::log(v);
    }
    CHECK(loss.value() == Approx(want).margin(1e-9));
    backward(loss, tape);
    for (int t = 0; t < k; ++t)
      for (double g : student.logits[static_cast<std::size_t>(t)].grad())
        CHECK(std::fabs(g) <= 1e-6);
    for (auto& l : student.logits) l.zero_grad();
  }
}

TEST_CASE("logits distillation: hand-computed K=1 case") {
  auto teacher = trace_from({{0, 0}}, {{1}}, {{1}}, 1, 1, false);
  auto student = trace_from({{std::log(3.0), 0}}, {{1}}, {{1}}, 1, 1, false);
  Tape<double> tape(false);
  auto loss = distill_logits_loss(tape, teacher, student, 1.0);
  // teacher (0.5, 0.5), student (0.75, 0.25)
  const double want = -(0.5 * std::log(0.75) + 0.5 * std::log(0.25));
  CHECK(loss.value() == Approx(want).margin(1e-9));
  CHECK(loss.value() == Approx(0.8370).margin(5e-4));
}

TEST_CASE("logits distillation: raising tau approaches uniform entropy") {
  Rng rng(77);
  const int n = 6;
  for (int it = 0; it < 20; ++it) {
    auto lt = rand_rows(rng, 2, n);
    auto ls = rand_rows(rng, 2, n);
    auto g = rand_rows(rng, 2, 3);
    auto a = rand_prob_rows(rng, 2, 4);
    auto teacher = trace_from(lt, g, a, 2, 2, false);
    auto student = trace_from(ls, g, a, 2, 2, false);
    const double target = 2 * std::log(static_cast<double>(n));
    double prev = -1;
    bool first = true;
    Tape<double> tape(false);
    for (double tau : {1.0, 2.0, 4.0, 8.0}) {
      const double d = std::fabs(
          distill_logits_loss(tape, teacher, student, tau).value() - target);
      if (!first) CHECK(d <= prev + 1e-9);
      prev = d;
      first = false;
    }
    CHECK(prev <= 0.2);  // tau = 8 sits close to the uniform limit
  }
}

TEST_CASE("distillation losses: trace length mismatch is a usage error") {
  Rng rng(2);
  auto t1 = trace_from(rand_rows(rng, 2, 3), rand_rows(rng, 2, 2),
                       rand_prob_rows(rng, 2, 2), 1, 2, false);
  auto t2 = trace_from(rand_rows(rng, 3, 3), rand_rows(rng, 3, 2),
                       rand_prob_rows(rng, 3, 2), 1, 2, false);
  Tape<double> tape(false);
  CHECK_THROWS_AS(distill_logits_loss(tape, t1, t2, 1.0), UsageError);
  CHECK_THROWS_AS(hint_loss(tape, t1, t2, 1e-8), UsageError);
  CHECK_THROWS_AS(attention_distill_loss(tape, t1, t2, 1e-8), UsageError);
  CHECK_THROWS_AS(affinity_distill_loss(tape, t1, t2, 1e-8), UsageError);
}

TEST_CASE("hint loss: zero at identity, Pythagorean case, naive oracle") {
  Tape<double> tape(false);
  {
    auto tr = trace_from({{0, 0}}, {{0.3, -2}}, {{1}}, 1, 1, false);
    CHECK(hint_loss(tape, tr, tr, 0.0).value() == 0.0);
  }
  {
    auto teacher = trace_from({{0, 0}}, {{1, 0}}, {{1}}, 1, 1, false);
    auto student = trace_from({{0, 0}}, {{0, 1}}, {{1}}, 1, 1, false);
    CHECK(hint_loss(tape, teacher, student, 0.0).value() ==
          Approx(std::sqrt(2.0)).margin(1e-9));
  }
  Rng rng(4);
  const int k = 4, d = 5;
  auto gt = rand_rows(rng, k, d);
  auto gs = rand_rows(rng, k, d);
  auto lt = rand_rows(rng, k, 3);
  auto pa = rand_prob_rows(rng, k, 4);
  auto teacher = trace_from(lt, gt, pa, 2, 2, false);
  auto student = trace_from(lt, gs, pa, 2, 2, false);
  const double eps = 1e-8;
  CHECK(hint_loss(tape, teacher, student, eps).value() ==
        Approx(oracles::norm_loss(gs, gt, eps)).margin(1e-6));
}

TEST_CASE("hint loss: dimension mismatch needs a projection") {
  Rng rng(5);
  auto teacher = trace_from(rand_rows(rng, 2, 3), rand_rows(rng, 2, 4),
                            rand_prob_rows(rng, 2, 2), 1, 2, false);
  auto student = trace_from(rand_rows(rng, 2, 3), rand_rows(rng, 2, 2),
                            rand_prob_rows(rng, 2, 2), 1, 2, false);
  Tape<double> tape(false);
  CHECK_THROWS_AS(hint_loss(tape, teacher, student, 1e-8), ConfigError);

  auto p = Tensor<double>::from({2, 4}, {1, 0, 0, 0, 0, 1, 0, 0});
  CHECK_NOTHROW(hint_loss(tape, teacher, student, 1e-8, p));
}

TEST_CASE("project_hidden: identity passthrough, zero map, gradients") {
  Tape<double> tape(false);
  auto g = Tensor<double>::from({3}, {0.5, -1, 2});
  auto eye = Tensor<double>::from({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  auto out = project_hidden(tape, g, eye);
  for (int i = 0; i < 3; ++i) CHECK(out.data()[i] == Approx(g.data()[i]));

  auto zero = Tensor<double>({2, 3});
  auto g2 = Tensor<double>::from({2}, {4, -4});
  auto out2 = project_hidden(tape, g2, zero);
  for (double v : out2.data()) CHECK(v == 0.0);

  Rng rng(6);
  auto gs = Tensor<double>::from({2}, {0.3, 0.7}, true);
  std::vector<double> pd(8);
  for (auto& v : pd) v = rng.uniform(-1, 1);
  auto proj = Tensor<double>::from({2, 4}, std::move(pd), true);
  auto gt = Tensor<double>::from({4}, {0.1, -0.2, 0.5, 0.9});
  std::vector<Tensor<double>> params = {gs, proj};
  auto rep = gradcheck(
      [&](Tape<double>& t) {
        return l2norm_smoothed(t, sub(t, project_hidden(t, gs, proj), gt),
                               1e-8);
      },
      params, 1e-4, 1e-5);
  CHECK(rep.pass);
}

TEST_CASE("attention distillation: zero at identity and 1x2 case") {
  Tape<double> tape(false);
  Rng rng(7);
  auto a = rand_prob_rows(rng, 3, 6);
  auto tr = trace_from(rand_rows(rng, 3, 2), rand_rows(rng, 3, 2), a, 2, 3,
                       false);
  CHECK(attention_distill_loss(tape, tr, tr, 0.0).value() == 0.0);

  auto teacher = trace_from({{0}}, {{1}}, {{1, 0}}, 1, 2, false);
  auto student = trace_from({{0}}, {{1}}, {{0, 1}}, 1, 2, false);
  CHECK(attention_distill_loss(tape, teacher, student, 0.0).value() ==
        Approx(std::sqrt(2.0)).margin(1e-9));
}

TEST_CASE("attention distillation: resize policy and uniform preservation") {
  Tape<double> tape(false);
  // uniform map stays uniform and sums to 1 under resize, any scale
  for (auto [h, w, oh, ow] :
       {std::array<int, 4>{2, 3, 4, 6}, std::array<int, 4>{4, 6, 2, 3},
        std::array<int, 4>{2, 2, 5, 7}}) {
    auto uni = Tensor<double>::from(
        {h, w}, std::vector<double>(static_cast<std::size_t>(h) * w,
                                    1.0 / (h * w)));
    auto resized = bilinear_resize_prob(tape, uni, oh, ow);
    double sum = 0;
    for (double v : resized.data()) {
      CHECK(v == Approx(1.0 / (oh * ow)).margin(1e-12));
      sum += v;
    }
    CHECK(sum == Approx(1.0).margin(1e-9));
  }

  Rng rng(8);
  auto teacher = trace_from(rand_rows(rng, 2, 3), rand_rows(rng, 2, 2),
                            rand_prob_rows(rng, 2, 12), 3, 4, false);
  auto student = trace_from(rand_rows(rng, 2, 3), rand_rows(rng, 2, 2),
                            rand_prob_rows(rng, 2, 6), 2, 3, false);
  CHECK_THROWS_AS(attention_distill_loss(tape, teacher, student, 1e-8, false),
                  ConfigError);
  CHECK_NOTHROW(attention_distill_loss(tape, teacher, student, 1e-8, true));
}

TEST_CASE("affinity matrix: trivial cases, oracle, invariants") {
  {
    auto tr = trace_from({{0}}, {{0.4, 0.3}}, {{1}}, 1, 1, false);
    auto a = compute_affinity(tr, 1e-12);
    REQUIRE(a.shape() == std::vector<int>{1, 1});
    CHECK(a.data()[0] == Approx(1.0).margin(1e-6));
  }
  {
    auto tr =
        trace_from({{0}, {0}}, {{1, 0}, {0, 1}}, {{1}, {1}}, 1, 1, false);
    auto a = compute_affinity(tr, 1e-12);
    CHECK(a.data()[0] == Approx(0.25).margin(1e-6));
    CHECK(a.data()[3] == Approx(0.25).margin(1e-6));
    CHECK(a.data()[1] == Approx(0.0).margin(1e-9));
    CHECK(a.data()[2] == Approx(0.0).margin(1e-9));
  }
  Rng rng(9);
  for (int it = 0; it < 20; ++it) {
    const int k = 1 + rng.below(5), d = 1 + rng.below(6);
    auto g = rand_rows(rng, k, d);
    auto tr = trace_from(rand_rows(rng, k, 2), g, rand_prob_rows(rng, k, 2),
                         1, 2, false);
    auto a = compute_affinity(tr, 1e-8);
    auto ref = oracles::affinity(g, 1e-8);
    const double bound = 1.0 / (k * k);
    for (int i = 0; i < k; ++i)
      for (int j = 0; j < k; ++j) {
        const double v = a.data()[static_cast<std::size_t>(i) * k + j];
        CHECK(v == Approx(ref[static_cast<std::size_t>(i) * k + j])
                       .margin(1e-6));
        CHECK(v ==
              a.data()[static_cast<std::size_t>(j) * k + i]);  // symmetric
        CHECK(std::fabs(v) <= bound + 1e-9);
        if (i == j) CHECK(v == Approx(bound).margin(1e-6));
      }
  }
}

TEST_CASE("affinity distillation: zero at identity, hand case, gradients") {
  Tape<double> tape(false);
  Rng rng(10);
  {
    auto g = rand_rows(rng, 3, 4);
    auto tr = trace_from(rand_rows(rng, 3, 2), g, rand_prob_rows(rng, 3, 2),
                         1, 2, false);
    CHECK(affinity_distill_loss(tape, tr, tr, 0.0).value() ==
          Approx(0.0).margin(1e-12));
  }
  {
    // teacher orthogonal pair, student parallel pair
    auto teacher =
        trace_from({{0}, {0}}, {{1, 0}, {0, 1}}, {{1}, {1}}, 1, 1, false);
    auto student =
        trace_from({{0}, {0}}, {{1, 0}, {2, 0}}, {{1}, {1}}, 1, 1, false);
    const double got = affinity_distill_loss(tape, teacher, student, 0.0)
                           .value();
    CHECK(got == Approx(std::sqrt(2 * 0.25 * 0.25)).margin(1e-6));
    CHECK(got == Approx(0.35355).margin(5e-5));
  }
  {
    auto gt = rand_rows(rng, 3, 4);
    auto teacher = trace_from(rand_rows(rng, 3, 2), gt,
                              rand_prob_rows(rng, 3, 2), 1, 2, false);
    auto student = trace_from(rand_rows(rng, 3, 2), rand_rows(rng, 3, 4),
                              rand_prob_rows(rng, 3, 2), 1, 2, true);
    std::vector<Tensor<double>> params = student.glimpses;
    auto rep = gradcheck(
        [&](Tape<double>& t) {
          return affinity_distill_loss(t, teacher, student, 1e-8);
        },
        params, 1e-4, 1e-5);
    CHECK(rep.pass);
  }
}

TEST_CASE("combined objective: lambda-zero reduction and gate semantics") {
  Rng rng(11);
  const RecognizerConfig cfg = tiny_config();
  auto teacher_s = make_recognizer<double>(cfg, 100);
  auto teacher_h = make_recognizer<double>(cfg, 200);
  auto student = make_recognizer<double>(cfg, 300);
  auto batch_s = tiny_batch<double>(cfg, rng, 2, 3);
  auto batch_h = tiny_batch<double>(cfg, rng, 2, 3);

  DistillConfig zero;
  zero.lambda1 = zero.lambda2 = zero.lambda3 = zero.lambda4 = 0;
  Tape<double> t1(false);
  auto [l0, bd0] = combined_distill_objective(t1, batch_s, batch_h, &teacher_s,
                                              &teacher_h, student, zero, true,
                                              true);
  CHECK(l0.value() == Approx(bd0.ce_s + bd0.ce_h).margin(1e-9));
  CHECK(bd0.logits_s == 0.0);
  CHECK(bd0.aff_h == 0.0);

  DistillConfig full;  // defaults
  Tape<double> t2(false);
  auto [lgated, bdg] = combined_distill_objective(
      t2, batch_s, batch_h, &teacher_s, &teacher_h, student, full, false,
      false);
  CHECK(lgated.value() == l0.value());  // gates closed == all-lambda-zero

  Tape<double> t3(false);
  auto [lfull, bdf] = combined_distill_objective(
      t3, batch_s, batch_h, &teacher_s, &teacher_h, student, full, true, true);
  CHECK(bdf.total == Approx(bdf.recompose(full)).margin(1e-6));
  CHECK(lfull.value() > l0.value());  // KD terms are nonnegative additions
  CHECK(bdf.logits_s > 0);
  CHECK(bdf.attn_h > 0);
  CHECK(bdf.hint_s >= 0);
  CHECK(bdf.aff_h >= 0);

  DistillConfig kd_without_teacher;  // missing teacher -> config error
  Tape<double> t4(false);
  const Recognizer<double>* no_teacher = nullptr;
  CHECK_THROWS_AS(
      combined_distill_objective(t4, batch_s, batch_h, no_teacher, no_teacher,
                                 student, kd_without_teacher, true, true),
      ConfigError);
}

TEST_CASE("self-distillation fixed point") {
  Rng rng(12);
  const RecognizerConfig cfg = tiny_config();
  auto teacher = make_recognizer<double>(cfg, 41);
  Recognizer<double> student;
  student.cfg = cfg;
  student.params = teacher.params.clone(true);  // copied weights

  const double eps = 1e-8;
  const double floor = std::sqrt(eps);

  auto one_case = [&](int k) {
    auto batch = tiny_batch<double>(cfg, rng, 1, k);
    Tape<double> tape;
    auto ttrace = forward_teacher_forced(tape, batch[0].image, batch[0].label,
                                         teacher);
    auto strace = forward_teacher_forced(tape, batch[0].image, batch[0].label,
                                         student);
    const double hint = hint_loss(tape, ttrace, strace, eps).value();
    const double attn =
        attention_distill_loss(tape, ttrace, strace, eps).value();
    const double aff =
        affinity_distill_loss(tape, ttrace, strace, eps).value();
    // per-step eps floor: sqrt(eps) per summed term, single sqrt for the
    // affinity Frobenius norm
    CHECK(hint <= k * floor + 1e-9);
    CHECK(attn <= k * floor + 1e-9);
    CHECK(aff <= floor + 1e-9);
    if (k == 1) {
      CHECK(hint <= floor + 1e-9);
      CHECK(attn <= floor + 1e-9);
    }
    auto params = student.params.all();
    zero_grads(params);
    auto lloss = distill_logits_loss(tape, ttrace, strace, 2.0);
    backward(lloss, tape);
    for (auto& p : params)
      for (double g : p.grad()) CHECK(std::fabs(g) <= 1e-5);
  };
  one_case(1);
  one_case(4);
}

TEST_CASE("no gradient ever reaches teacher parameters") {
  Rng rng(13);
  const RecognizerConfig cfg = tiny_config();
  auto teacher = make_recognizer<double>(cfg, 51);
  auto student = make_recognizer<double>(cfg, 52);
  student.params.set_requires_grad(true);
  auto batch = tiny_batch<double>(cfg, rng, 1, 3);

  Tape<double> tape;
  DistillConfig full;
  auto parts = sample_losses(tape, &teacher, student, batch[0].image,
                             batch[0].label, full, true);
  Tensor<double> loss = parts.total;
  backward(loss, tape);

  for (auto& p : teacher.params.all()) {
    CHECK_FALSE(p.requires_grad());
    CHECK_THROWS_AS(p.grad(), UsageError);
  }
  // and the student actually received some gradient
  double norm = 0;
  for (auto& p : student.params.all())
    for (double g : p.grad()) norm += g * g;
  CHECK(norm > 0);
}

TEST_CASE("all four losses are nonnegative on random trace pairs") {
  Rng rng(14);
  Tape<double> tape(false);
  for (int it = 0; it < 30; ++it) {
    const int k = 1 + rng.below(4);
    auto teacher = trace_from(rand_rows(rng, k, 4), rand_rows(rng, k, 3),
                              rand_prob_rows(rng, k, 6), 2, 3, false);
    auto student = trace_from(rand_rows(rng, k, 4), rand_rows(rng, k, 3),
                              rand_prob_rows(rng, k, 6), 2, 3, false);
    CHECK(distill_logits_loss(tape, teacher, student, 2.0).value() >= 0);
    CHECK(hint_loss(tape, teacher, student, 1e-8).value() >= 0);
    CHECK(attention_distill_loss(tape, teacher, student, 1e-8).value() >= 0);
    CHECK(affinity_distill_loss(tape, teacher, student, 1e-8).value() >= 0);
  }
}
