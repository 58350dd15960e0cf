#pragma once

// Central finite-difference gradient checker. Runs in 64-bit mode; the
// function under test is re-evaluated 2*numel times per parameter, so keep
// the probe problems small.

#include <cmath>
#include <cstdio>
#include <functional>
#include <string>
#include <vector>

#include "unitext/tensor.hpp"

namespace unitext {

struct GradCheckEntry {
  std::string param;
  double max_rel_err = 0.0;
  bool pass = true;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double worst = 0.0;
  bool pass = true;

  std::string to_string() const {
    std::string s;
    char line[160];
    for (const auto& e : entries) {
      std::snprintf(line, sizeof line, "%-24s max_rel_err=%10.3e  %s\n",
                    e.param.c_str(), e.max_rel_err,
                    e.pass ? "pass" : "FAIL");
      s += line;
    }
    std::snprintf(line, sizeof line, "gradcheck %s (worst %.3e)\n",
                  pass ? "PASS" : "FAIL", worst);
    s += line;
    return s;
  }
};

// f: Tape<double>& -> scalar Tensor<double>, deterministic, closed over
// `params`. Reports per-parameter worst relative error; never throws on a
// mismatch. Relative error is measured against the largest gradient
// component of the parameter so that near-zero components do not dominate.
template <typename F>
GradCheckReport gradcheck(F&& f, std::vector<Tensor<double>>& params,
                          double eps = 1e-4, double tol = 1e-5) {
  GradCheckReport report;

  Tape<double> tape;
  tape.check_finite = true;
  Tensor<double> loss = f(tape);
  zero_grads(params);
  backward(loss, tape);

  std::vector<std::vector<double>> analytic;
  analytic.reserve(params.size());
  for (auto& p : params) analytic.push_back(p.grad());

  Tape<double> probe(false);
  auto eval = [&]() { return f(probe).value(); };

  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    auto& p = params[pi];
    std::vector<double> numeric(p.size());
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double v = p.data()[i];
      p.data()[i] = v + eps;
      const double fp = eval();
      p.data()[i] = v - eps;
      const double fm = eval();
      p.data()[i] = v;
      numeric[i] = (fp - fm) / (2.0 * eps);
    }
    double scale = 1e-8;
    for (std::size_t i = 0; i < p.size(); ++i) {
      scale = std::max(scale, std::fabs(analytic[pi][i]));
      scale = std::max(scale, std::fabs(numeric[i]));
    }
    double err = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i)
      err = std::max(err, std::fabs(analytic[pi][i] - numeric[i]) / scale);

    GradCheckEntry e;
    e.param = p.name().empty() ? ("param" + std::to_string(pi)) : p.name();
    e.max_rel_err = err;
    e.pass = err <= tol && std::isfinite(err);
    report.worst = std::max(report.worst, err);
    report.pass = report.pass && e.pass;
    report.entries.push_back(std::move(e));
  }
  return report;
}

}  // namespace unitext
