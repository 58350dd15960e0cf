#pragma once

// Adam with bias correction. Gradients live inside the parameter tensors;
// moment buffers are kept per parameter in call order.

#include <cmath>
#include <vector>

#include "unitext/errors.hpp"
#include "unitext/tensor.hpp"

namespace unitext {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <typename Real>
struct AdamState {
  long long step = 0;
  std::vector<std::vector<Real>> m;
  std::vector<std::vector<Real>> v;
};

template <typename Real>
void adam_step(std::vector<Tensor<Real>>& params, AdamState<Real>& state,
               Real lr, const AdamConfig& cfg = {}) {
  if (state.m.empty()) {
    state.m.resize(params.size());
    state.v.resize(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
      state.m[i].assign(params[i].size(), Real(0));
      state.v[i].assign(params[i].size(), Real(0));
    }
  }
  if (state.m.size() != params.size())
    throw DimensionError("adam_step: state does not match parameter list");

  state.step += 1;
  const Real b1 = static_cast<Real>(cfg.beta1);
  const Real b2 = static_cast<Real>(cfg.beta2);
  const Real eps = static_cast<Real>(cfg.eps);
  const Real c1 =
      Real(1) / (Real(1) - static_cast<Real>(std::pow(cfg.beta1,
                                                      double(state.step))));
  const Real c2 =
      Real(1) / (Real(1) - static_cast<Real>(std::pow(cfg.beta2,
                                                      double(state.step))));

  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i];
    if (state.m[i].size() != p.size())
      throw DimensionError("adam_step: moment buffer shape mismatch");
    const Real* g = p.grad().data();
    Real* m = state.m[i].data();
    Real* v = state.v[i].data();
    Real* w = p.data().data();
    for (std::size_t j = 0; j < p.size(); ++j) {
      m[j] = b1 * m[j] + (Real(1) - b1) * g[j];
      v[j] = b2 * v[j] + (Real(1) - b2) * g[j] * g[j];
      const Real mhat = m[j] * c1;
      const Real vhat = v[j] * c2;
      w[j] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
  }
}

}  // namespace unitext
