#pragma once

// Reverse-mode autodiff tensor engine. Small by design: dense row-major
// tensors, an explicit tape, and exactly the primitives the recognizer and
// the distillation losses need. Templated on the scalar type so the same
// code runs in 32-bit for training and 64-bit for gradient verification.
//
// Shapes are explicit everywhere; there is no implicit broadcasting. Ops
// that need a broadcast-like behaviour (bias over channels, row vector over
// a matrix) exist as their own named primitives.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "unitext/errors.hpp"

namespace unitext {

inline std::size_t numel(const std::vector<int>& shape) {
  std::size_t n = 1;
  for (int d : shape) {
    if (d <= 0) throw DimensionError("tensor dimension must be positive");
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

inline std::string shape_str(const std::vector<int>& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

template <typename Real>
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<int> shape, Real fill = Real(0),
                  bool requires_grad = false) {
    s_ = std::make_shared<Storage>();
    s_->shape = std::move(shape);
    s_->data.assign(numel(s_->shape), fill);
    s_->requires_grad = requires_grad;
    if (requires_grad) s_->grad.assign(s_->data.size(), Real(0));
  }

  static Tensor scalar(Real v, bool requires_grad = false) {
    Tensor t(std::vector<int>{1}, v, requires_grad);
    return t;
  }

  static Tensor from(std::vector<int> shape, std::vector<Real> data,
                     bool requires_grad = false) {
    Tensor t;
    t.s_ = std::make_shared<Storage>();
    if (numel(shape) != data.size())
      throw DimensionError("data length does not match shape " +
                           shape_str(shape));
    t.s_->shape = std::move(shape);
    t.s_->data = std::move(data);
    t.s_->requires_grad = requires_grad;
    if (requires_grad) t.s_->grad.assign(t.s_->data.size(), Real(0));
    return t;
  }

  bool defined() const { return static_cast<bool>(s_); }
  const std::vector<int>& shape() const { return s_->shape; }
  int dim(int i) const { return s_->shape[static_cast<std::size_t>(i)]; }
  int ndim() const { return static_cast<int>(s_->shape.size()); }
  std::size_t size() const { return s_->data.size(); }

  // Tensor is a shared handle: const-ness of the handle does not protect
  // the storage (same convention as shared_ptr). Backward closures rely on
  // this to accumulate gradients through captured handles.
  std::vector<Real>& data() const { return s_->data; }

  bool requires_grad() const { return s_->requires_grad; }
  void set_requires_grad(bool rg) {
    s_->requires_grad = rg;
    if (rg)
      s_->grad.assign(s_->data.size(), Real(0));
    else
      s_->grad.clear();
  }

  std::vector<Real>& grad() const {
    if (!s_->requires_grad) throw UsageError("tensor has no grad buffer");
    return s_->grad;
  }

  void zero_grad() const {
    if (s_->requires_grad) std::fill(s_->grad.begin(), s_->grad.end(), Real(0));
  }

  Real value() const {
    if (size() != 1) throw UsageError("value() on non-scalar tensor");
    return s_->data[0];
  }

  void set_name(std::string name) { s_->name = std::move(name); }
  const std::string& name() const { return s_->name; }

  bool same_storage(const Tensor& o) const { return s_ == o.s_; }
  const void* storage_id() const { return s_.get(); }

  bool all_finite() const {
    for (Real v : s_->data)
      if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }

  // Deep copy of values (and a fresh grad buffer when requested).
  Tensor clone(bool requires_grad) const {
    Tensor t;
    t.s_ = std::make_shared<Storage>();
    t.s_->shape = s_->shape;
    t.s_->data = s_->data;
    t.s_->requires_grad = requires_grad;
    t.s_->name = s_->name;
    if (requires_grad) t.s_->grad.assign(t.s_->data.size(), Real(0));
    return t;
  }

  template <typename Other>
  Tensor<Other> cast() const {
    std::vector<Other> d(s_->data.size());
    for (std::size_t i = 0; i < d.size(); ++i)
      d[i] = static_cast<Other>(s_->data[i]);
    auto t = Tensor<Other>::from(s_->shape, std::move(d), s_->requires_grad);
    t.set_name(s_->name);
    return t;
  }

 private:
  struct Storage {
    std::vector<int> shape;
    std::vector<Real> data;
    std::vector<Real> grad;
    bool requires_grad = false;
    std::string name;
  };
  std::shared_ptr<Storage> s_;
};

// Ordered record of executed ops. backward() replays it in exact reverse
// order. A tape and the tensors it references form a single-owner unit:
// one thread builds and runs it.
template <typename Real>
class Tape {
 public:
  explicit Tape(bool recording = true) : recording_(recording) {}

  bool recording() const { return recording_; }
  std::size_t size() const { return nodes_.size(); }
  void clear() { nodes_.clear(); }

  // When set, backward() validates gradients after each node and names the
  // op that produced a non-finite value. Off by default (hot path).
  bool check_finite = false;

  void record(const char* op, std::vector<Tensor<Real>> inputs,
              std::function<void()> fn) {
    nodes_.push_back(Node{op, std::move(inputs), std::move(fn)});
  }

  struct Node {
    const char* op;
    std::vector<Tensor<Real>> inputs;
    std::function<void()> fn;
  };
  std::vector<Node> nodes_;

 private:
  bool recording_ = false;
};

namespace detail {

template <typename Real>
inline bool track(const Tape<Real>& tape, const Tensor<Real>& a) {
  return tape.recording() && a.requires_grad();
}
template <typename Real>
inline bool track(const Tape<Real>& tape, const Tensor<Real>& a,
                  const Tensor<Real>& b) {
  return tape.recording() && (a.requires_grad() || b.requires_grad());
}

template <typename Real>
inline void check_same_shape(const Tensor<Real>& a, const Tensor<Real>& b,
                             const char* op) {
  if (a.shape() != b.shape())
    throw DimensionError(std::string(op) + ": shape mismatch " +
                         shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

}  // namespace detail

// Runs reverse-mode accumulation for a scalar loss. Grad buffers of leaf
// tensors accumulate across calls; intermediate (op output) grads are
// scratch and reset on every call.
template <typename Real>
inline void backward(Tensor<Real>& loss, Tape<Real>& tape) {
  if (loss.size() != 1) throw UsageError("backward: loss must be scalar");
  if (!loss.requires_grad())
    throw UsageError("backward: loss does not require grad");
  if (!std::isfinite(static_cast<double>(loss.value())))
    throw NumericError("backward: loss is not finite");

  // Intermediate grads are scratch: zero the grad of every tensor produced
  // by a recorded op so repeated backward calls stay well defined. Ops
  // register their output as inputs.back(); leaves never appear there, so
  // leaf grads accumulate across calls.
  for (auto& n : tape.nodes_) {
    Tensor<Real>& out = n.inputs.back();
    if (out.requires_grad()) out.zero_grad();
  }

  loss.grad()[0] = Real(1);
  for (auto it = tape.nodes_.rbegin(); it != tape.nodes_.rend(); ++it) {
    it->fn();
    if (tape.check_finite) {
      for (auto& t : it->inputs) {
        if (!t.requires_grad()) continue;
        for (Real g : t.grad())
          if (!std::isfinite(static_cast<double>(g)))
            throw NumericError(std::string("backward: op '") + it->op +
                               "' produced non-finite gradient");
      }
    }
  }
}

template <typename Real>
inline void zero_grads(std::vector<Tensor<Real>>& params) {
  for (auto& p : params) p.zero_grad();
}

// ---------------------------------------------------------------------------
// Primitives. Convention: the op output is appended as the LAST element of
// the recorded inputs vector so backward() can reset intermediate grads.
// ---------------------------------------------------------------------------

template <typename Real>
Tensor<Real> matmul(Tape<Real>& tape, const Tensor<Real>& a,
                    const Tensor<Real>& b) {
  if (a.ndim() != 2 || b.ndim() != 2)
    throw DimensionError("matmul: expects 2-D operands");
  if (a.dim(1) != b.dim(0))
    throw DimensionError("matmul: inner dimensions disagree " +
                         shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor<Real> out(std::vector<int>{m, n}, Real(0),
                   detail::track(tape, a, b));
  const Real* ap = a.data().data();
  const Real* bp = b.data().data();
  Real* op = out.data().data();
  for (int i = 0; i < m; ++i)
    for (int kk = 0; kk < k; ++kk) {
      const Real av = ap[i * k + kk];
      const Real* br = bp + kk * n;
      Real* orow = op + i * n;
      for (int j = 0; j < n; ++j) orow[j] += av * br[j];
    }
  if (out.requires_grad()) {
    tape.record("matmul", {a, b, out}, [a, b, out, m, k, n]() mutable {
      const Real* g = out.grad().data();
      if (a.requires_grad()) {  // dA += G B^T
        Real* da = a.grad().data();
        const Real* bp2 = b.data().data();
        for (int i = 0; i < m; ++i)
          for (int kk = 0; kk < k; ++kk) {
            Real acc = 0;
            const Real* grow = g + i * n;
            const Real* brow = bp2 + kk * n;
            for (int j = 0; j < n; ++j) acc += grow[j] * brow[j];
            da[i * k + kk] += acc;
          }
      }
      if (b.requires_grad()) {  // dB += A^T G
        Real* db = b.grad().data();
        const Real* ap2 = a.data().data();
        for (int kk = 0; kk < k; ++kk)
          for (int i = 0; i < m; ++i) {
            const Real av = ap2[i * k + kk];
            const Real* grow = g + i * n;
            Real* brow = db + kk * n;
            for (int j = 0; j < n; ++j) brow[j] += av * grow[j];
          }
      }
    });
  }
  return out;
}

// y = A x, A: [m x n], x: [n] -> [m]
template <typename Real>
Tensor<Real> matvec(Tape<Real>& tape, const Tensor<Real>& a,
                    const Tensor<Real>& x) {
  if (a.ndim() != 2 || x.ndim() != 1 || a.dim(1) != x.dim(0))
    throw DimensionError("matvec: shape mismatch " + shape_str(a.shape()) +
                         " vs " + shape_str(x.shape()));
  const int m = a.dim(0), n = a.dim(1);
  Tensor<Real> out(std::vector<int>{m}, Real(0), detail::track(tape, a, x));
  const Real* ap = a.data().data();
  const Real* xp = x.data().data();
  Real* op = out.data().data();
  for (int i = 0; i < m; ++i) {
    Real acc = 0;
    const Real* arow = ap + i * n;
    for (int j = 0; j < n; ++j) acc += arow[j] * xp[j];
    op[i] = acc;
  }
  if (out.requires_grad()) {
    tape.record("matvec", {a, x, out}, [a, x, out, m, n]() mutable {
      const Real* g = out.grad().data();
      if (a.requires_grad()) {
        Real* da = a.grad().data();
        const Real* xp2 = x.data().data();
        for (int i = 0; i < m; ++i) {
          const Real gi = g[i];
          Real* arow = da + i * n;
          for (int j = 0; j < n; ++j) arow[j] += gi * xp2[j];
        }
      }
      if (x.requires_grad()) {
        Real* dx = x.grad().data();
        const Real* ap2 = a.data().data();
        for (int i = 0; i < m; ++i) {
          const Real gi = g[i];
          const Real* arow = ap2 + i * n;
          for (int j = 0; j < n; ++j) dx[j] += gi * arow[j];
        }
      }
    });
  }
  return out;
}

// y = x A, x: [m], A: [m x n] -> [n]
template <typename Real>
Tensor<Real> vecmat(Tape<Real>& tape, const Tensor<Real>& x,
                    const Tensor<Real>& a) {
  if (a.ndim() != 2 || x.ndim() != 1 || a.dim(0) != x.dim(0))
    throw DimensionError("vecmat: shape mismatch " + shape_str(x.shape()) +
                         " vs " + shape_str(a.shape()));
  const int m = a.dim(0), n = a.dim(1);
  Tensor<Real> out(std::vector<int>{n}, Real(0), detail::track(tape, x, a));
  const Real* ap = a.data().data();
  const Real* xp = x.data().data();
  Real* op = out.data().data();
  for (int i = 0; i < m; ++i) {
    const Real xi = xp[i];
    const Real* arow = ap + i * n;
    for (int j = 0; j < n; ++j) op[j] += xi * arow[j];
  }
  if (out.requires_grad()) {
    tape.record("vecmat", {x, a, out}, [x, a, out, m, n]() mutable {
      const Real* g = out.grad().data();
      if (x.requires_grad()) {
        Real* dx = x.grad().data();
        const Real* ap2 = a.data().data();
        for (int i = 0; i < m; ++i) {
          Real acc = 0;
          const Real* arow = ap2 + i * n;
          for (int j = 0; j < n; ++j) acc += g[j] * arow[j];
          dx[i] += acc;
        }
      }
      if (a.requires_grad()) {
        Real* da = a.grad().data();
        const Real* xp2 = x.data().data();
        for (int i = 0; i < m; ++i) {
          const Real xi = xp2[i];
          Real* arow = da + i * n;
          for (int j = 0; j < n; ++j) arow[j] += xi * g[j];
        }
      }
    });
  }
  return out;
}

// Cross-correlation with a 3x3 kernel and zero padding 1; spatial size is
// preserved. input: [h x w x ci], kernel: [3 x 3 x ci x co].
template <typename Real>
Tensor<Real> conv2d_3x3(Tape<Real>& tape, const Tensor<Real>& input,
                        const Tensor<Real>& kernel) {
  if (input.ndim() != 3 || kernel.ndim() != 4)
    throw DimensionError("conv2d_3x3: expects [h,w,ci] and [3,3,ci,co]");
  if (kernel.dim(0) != 3 || kernel.dim(1) != 3)
    throw DimensionError("conv2d_3x3: kernel spatial dims must be 3x3");
  if (kernel.dim(2) != input.dim(2))
    throw DimensionError("conv2d_3x3: channel mismatch, input " +
                         shape_str(input.shape()) + " kernel " +
                         shape_str(kernel.shape()));
  const int h = input.dim(0), w = input.dim(1), ci = input.dim(2),
            co = kernel.dim(3);
  Tensor<Real> out(std::vector<int>{h, w, co}, Real(0),
                   detail::track(tape, input, kernel));
  const Real* in = input.data().data();
  const Real* kp = kernel.data().data();
  Real* op = out.data().data();
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      Real* orow = op + (y * w + x) * co;
      for (int ky = 0; ky < 3; ++ky) {
        const int yy = y + ky - 1;
        if (yy < 0 || yy >= h) continue;
        for (int kx = 0; kx < 3; ++kx) {
          const int xx = x + kx - 1;
          if (xx < 0 || xx >= w) continue;
          const Real* irow = in + (yy * w + xx) * ci;
          const Real* krow = kp + ((ky * 3 + kx) * ci) * co;
          for (int c = 0; c < ci; ++c) {
            const Real iv = irow[c];
            const Real* kc = krow + c * co;
            for (int o = 0; o < co; ++o) orow[o] += iv * kc[o];
          }
        }
      }
    }
  if (out.requires_grad()) {
    tape.record(
        "conv2d_3x3", {input, kernel, out},
        [input, kernel, out, h, w, ci, co]() mutable {
          const Real* g = out.grad().data();
          const Real* in2 = input.data().data();
          const Real* kp2 = kernel.data().data();
          Real* din = input.requires_grad() ? input.grad().data() : nullptr;
          Real* dk = kernel.requires_grad() ? kernel.grad().data() : nullptr;
          for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
              const Real* grow = g + (y * w + x) * co;
              for (int ky = 0; ky < 3; ++ky) {
                const int yy = y + ky - 1;
                if (yy < 0 || yy >= h) continue;
                for (int kx = 0; kx < 3; ++kx) {
                  const int xx = x + kx - 1;
                  if (xx < 0 || xx >= w) continue;
                  const std::size_t ibase =
                      static_cast<std::size_t>(yy * w + xx) * ci;
                  const std::size_t kbase =
                      static_cast<std::size_t>((ky * 3 + kx) * ci) * co;
                  if (din) {
                    for (int c = 0; c < ci; ++c) {
                      const Real* kc = kp2 + kbase + c * co;
                      Real acc = 0;
                      for (int o = 0; o < co; ++o) acc += grow[o] * kc[o];
                      din[ibase + c] += acc;
                    }
                  }
                  if (dk) {
                    for (int c = 0; c < ci; ++c) {
                      const Real iv = in2[ibase + c];
                      Real* kc = dk + kbase + c * co;
                      for (int o = 0; o < co; ++o) kc[o] += iv * grow[o];
                    }
                  }
                }
              }
            }
        });
  }
  return out;
}

// x: [h x w x c] + b: [c], bias added at every spatial position.
template <typename Real>
Tensor<Real> add_channel_bias(Tape<Real>& tape, const Tensor<Real>& x,
                              const Tensor<Real>& b) {
  if (x.ndim() != 3 || b.ndim() != 1 || b.dim(0) != x.dim(2))
    throw DimensionError("add_channel_bias: shape mismatch " +
                         shape_str(x.shape()) + " vs " + shape_str(b.shape()));
  const int cells = x.dim(0) * x.dim(1), c = x.dim(2);
  Tensor<Real> out(x.shape(), Real(0), detail::track(tape, x, b));
  const Real* xp = x.data().data();
  const Real* bp = b.data().data();
  Real* op = out.data().data();
  for (int i = 0; i < cells; ++i)
    for (int j = 0; j < c; ++j) op[i * c + j] = xp[i * c + j] + bp[j];
  if (out.requires_grad()) {
    tape.record("add_channel_bias", {x, b, out}, [x, b, out, cells,
                                                  c]() mutable {
      const Real* g = out.grad().data();
      if (x.requires_grad()) {
        Real* dx = x.grad().data();
        for (std::size_t i = 0; i < x.size(); ++i) dx[i] += g[i];
      }
      if (b.requires_grad()) {
        Real* db = b.grad().data();
        for (int i = 0; i < cells; ++i)
          for (int j = 0; j < c; ++j) db[j] += g[i * c + j];
      }
    });
  }
  return out;
}

// 2x2 mean pooling, stride 2. Spatial dims must be even.
template <typename Real>
Tensor<Real> avgpool2x2(Tape<Real>& tape, const Tensor<Real>& x) {
  if (x.ndim() != 3) throw DimensionError("avgpool2x2: expects [h,w,c]");
  const int h = x.dim(0), w = x.dim(1), c = x.dim(2);
  if (h % 2 || w % 2)
    throw DimensionError("avgpool2x2: spatial dims must be even, got " +
                         shape_str(x.shape()));
  const int oh = h / 2, ow = w / 2;
  Tensor<Real> out(std::vector<int>{oh, ow, c}, Real(0),
                   detail::track(tape, x));
  const Real* xp = x.data().data();
  Real* op = out.data().data();
  for (int y = 0; y < oh; ++y)
    for (int xcol = 0; xcol < ow; ++xcol) {
      Real* orow = op + (y * ow + xcol) * c;
      const Real* r0 = xp + ((2 * y) * w + 2 * xcol) * c;
      const Real* r1 = xp + ((2 * y + 1) * w + 2 * xcol) * c;
      for (int j = 0; j < c; ++j)
        orow[j] = (r0[j] + r0[c + j] + r1[j] + r1[c + j]) * Real(0.25);
    }
  if (out.requires_grad()) {
    tape.record("avgpool2x2", {x, out}, [x, out, oh, ow, w, c]() mutable {
      const Real* g = out.grad().data();
      Real* dx = x.grad().data();
      for (int y = 0; y < oh; ++y)
        for (int xcol = 0; xcol < ow; ++xcol) {
          const Real* grow = g + (y * ow + xcol) * c;
          Real* r0 = dx + ((2 * y) * w + 2 * xcol) * c;
          Real* r1 = dx + ((2 * y + 1) * w + 2 * xcol) * c;
          for (int j = 0; j < c; ++j) {
            const Real gv = grow[j] * Real(0.25);
            r0[j] += gv;
            r0[c + j] += gv;
            r1[j] += gv;
            r1[c + j] += gv;
          }
        }
    });
  }
  return out;
}

// 2x2 max pooling, stride 2. Spatial dims must be even. The backward pass
// routes the gradient to the argmax tap (first occurrence on ties).
template <typename Real>
Tensor<Real> maxpool2x2(Tape<Real>& tape, const Tensor<Real>& x) {
  if (x.ndim() != 3) throw DimensionError("maxpool2x2: expects [h,w,c]");
  const int h = x.dim(0), w = x.dim(1), c = x.dim(2);
  if (h % 2 || w % 2)
    throw DimensionError("maxpool2x2: spatial dims must be even, got " +
                         shape_str(x.shape()));
  const int oh = h / 2, ow = w / 2;
  Tensor<Real> out(std::vector<int>{oh, ow, c}, Real(0),
                   detail::track(tape, x));
  std::vector<int> arg(out.size());
  const Real* xp = x.data().data();
  Real* op = out.data().data();
  for (int y = 0; y < oh; ++y)
    for (int xcol = 0; xcol < ow; ++xcol)
      for (int j = 0; j < c; ++j) {
        const int idx[4] = {((2 * y) * w + 2 * xcol) * c + j,
                            ((2 * y) * w + 2 * xcol + 1) * c + j,
                            ((2 * y + 1) * w + 2 * xcol) * c + j,
                            ((2 * y + 1) * w + 2 * xcol + 1) * c + j};
        int best = idx[0];
        for (int k = 1; k < 4; ++k)
          if (xp[idx[k]] > xp[best]) best = idx[k];
        const std::size_t o = static_cast<std::size_t>((y * ow + xcol) * c + j);
        op[o] = xp[best];
        arg[o] = best;
      }
  if (out.requires_grad())
    tape.record("maxpool2x2", {x, out},
                [x, out, arg = std::move(arg)]() mutable {
                  const Real* g = out.grad().data();
                  Real* dx = x.grad().data();
                  for (std::size_t i = 0; i < out.size(); ++i)
                    dx[static_cast<std::size_t>(arg[i])] += g[i];
                });
  return out;
}

// Copying reshape; element count must match.
template <typename Real>
Tensor<Real> reshape(Tape<Real>& tape, const Tensor<Real>& x,
                     std::vector<int> shape) {
  if (numel(shape) != x.size())
    throw DimensionError("reshape: element count mismatch " +
                         shape_str(x.shape()) + " -> " + shape_str(shape));
  Tensor<Real> out = Tensor<Real>::from(std::move(shape), x.data(),
                                        detail::track(tape, x));
  if (out.requires_grad()) {
    tape.record("reshape", {x, out}, [x, out]() mutable {
      const Real* g = out.grad().data();
      Real* dx = x.grad().data();
      for (std::size_t i = 0; i < x.size(); ++i) dx[i] += g[i];
    });
  }
  return out;
}

namespace detail {

template <typename Real, typename Fwd, typename Bwd>
Tensor<Real> binary_same_shape(Tape<Real>& tape, const char* name,
                               const Tensor<Real>& a, const Tensor<Real>& b,
                               Fwd fwd, Bwd bwd) {
  check_same_shape(a, b, name);
  Tensor<Real> out(a.shape(), Real(0), track(tape, a, b));
  const Real* ap = a.data().data();
  const Real* bp = b.data().data();
  Real* op = out.data().data();
  for (std::size_t i = 0; i < a.size(); ++i) op[i] = fwd(ap[i], bp[i]);
  if (out.requires_grad())
    tape.record(name, {a, b, out}, [a, b, out, bwd]() mutable {
      const Real* g = out.grad().data();
      Real* da = a.requires_grad() ? a.grad().data() : nullptr;
      Real* db = b.requires_grad() ? b.grad().data() : nullptr;
      const Real* ap2 = a.data().data();
      const Real* bp2 = b.data().data();
      for (std::size_t i = 0; i < a.size(); ++i)
        bwd(g[i], ap2[i], bp2[i], da ? da + i : nullptr,
            db ? db + i : nullptr);
    });
  return out;
}

}  // namespace detail

template <typename Real>
Tensor<Real> add(Tape<Real>& tape, const Tensor<Real>& a,
                 const Tensor<Real>& b) {
  return detail::binary_same_shape(
      tape, "add", a, b, [](Real x, Real y) { return x + y; },
      [](Real g, Real, Real, Real* da, Real* db) {
        if (da) *da += g;
        if (db) *db += g;
      });
}

template <typename Real>
Tensor<Real> sub(Tape<Real>& tape, const Tensor<Real>& a,
                 const Tensor<Real>& b) {
  return detail::binary_same_shape(
      tape, "sub", a, b, [](Real x, Real y) { return x - y; },
      [](Real g, Real, Real, Real* da, Real* db) {
        if (da) *da += g;
        if (db) *db -= g;
      });
}

template <typename Real>
Tensor<Real> mul(Tape<Real>& tape, const Tensor<Real>& a,
                 const Tensor<Real>& b) {
  return detail::binary_same_shape(
      tape, "mul", a, b, [](Real x, Real y) { return x * y; },
      [](Real g, Real x, Real y, Real* da, Real* db) {
        if (da) *da += g * y;
        if (db) *db += g * x;
      });
}

template <typename Real>
Tensor<Real> scale(Tape<Real>& tape, const Tensor<Real>& x, Real c) {
  Tensor<Real> out(x.shape(), Real(0), detail::track(tape, x));
  for (std::size_t i = 0; i < x.size(); ++i) out.data()[i] = x.data()[i] * c;
  if (out.requires_grad())
    tape.record("scale", {x, out}, [x, out, c]() mutable {
      const Real* g = out.grad().data();
      Real* dx = x.grad().data();
      for (std::size_t i = 0; i < x.size(); ++i) dx[i] += g[i] * c;
    });
  return out;
}

// a*x + b, elementwise with scalar constants.
template <typename Real>
Tensor<Real> affine(Tape<Real>& tape, const Tensor<Real>& x, Real a, Real b) {
  Tensor<Real> out(x.shape(), Real(0), detail::track(tape, x));
  for (std::size_t i = 0; i < x.size(); ++i)
    out.data()[i] = a * x.data()[i] + b;
  if (out.requires_grad())
    tape.record("affine", {x, out}, [x, out, a]() mutable {
      const Real* g = out.grad().data();
      Real* dx = x.grad().data();
      for (std::size_t i = 0; i < x.size(); ++i) dx[i] += g[i] * a;
    });
  return out;
}

// M: [m x n], v: [n]; adds v to every row.
template <typename Real>
Tensor<Real> add_row_to_all(Tape<Real>& tape, const Tensor<Real>& m,
                            const Tensor<Real>& v) {
  if (m.ndim() != 2 || v.ndim() != 1 || v.dim(0) != m.dim(1))
    throw DimensionError("add_row_to_all: shape mismatch " +
                         shape_str(m.shape()) + " vs " + shape_str(v.shape()));
  const int rows = m.dim(0), n = m.dim(1);
  Tensor<Real> out(m.shape(), Real(0), detail::track(tape, m, v));
  const Real* mp = m.data().data();
  const Real* vp = v.data().data();
  Real* op = out.data().data();
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < n; ++j) op[i * n + j] = mp[i * n + j] + vp[j];
  if (out.requires_grad())
    tape.record("add_row_to_all", {m, v, out}, [m, v, out, rows,
                                                n]() mutable {
      const Real* g = out.grad().data();
      if (m.requires_grad()) {
        Real* dm = m.grad().data();
        for (std::size_t i = 0; i < m.size(); ++i) dm[i] += g[i];
      }
      if (v.requires_grad()) {
        Real* dv = v.grad().data();
        for (int i = 0; i < rows; ++i)
          for (int j = 0; j < n; ++j) dv[j] += g[i * n + j];
      }
    });
  return out;
}

// 1-D concatenation.
template <typename Real>
Tensor<Real> concat(Tape<Real>& tape, const Tensor<Real>& a,
                    const Tensor<Real>& b) {
  if (a.ndim() != 1 || b.ndim() != 1)
    throw DimensionError("concat: expects 1-D operands");
  const int na = a.dim(0), nb = b.dim(0);
  Tensor<Real> out(std::vector<int>{na + nb}, Real(0),
                   detail::track(tape, a, b));
  std::copy(a.data().begin(), a.data().end(), out.data().begin());
  std::copy(b.data().begin(), b.data().end(), out.data().begin() + na);
  if (out.requires_grad())
    tape.record("concat", {a, b, out}, [a, b, out, na, nb]() mutable {
      const Real* g = out.grad().data();
      if (a.requires_grad()) {
        Real* da = a.grad().data();
        for (int i = 0; i < na; ++i) da[i] += g[i];
      }
      if (b.requires_grad()) {
        Real* db = b.grad().data();
        for (int i = 0; i < nb; ++i) db[i] += g[na + i];
      }
    });
  return out;
}

template <typename Real>
Tensor<Real> tanh(Tape<Real>& tape, const Tensor<Real>& x) {
  Tensor<Real> out(x.shape(), Real(0), detail::track(tape, x));
  for (std::size_t i = 0; i < x.size(); ++i)
    out.data()[i] = std::tanh(x.data()[i]);
  if (out.requires_grad())
    tape.record("tanh", {x, out}, [x, out]() mutable {
      const Real* g = out.grad().data();
      const Real* y = out.data().data();
      Real* dx = x.grad().data();
      for (std::size_t i = 0; i < x.size(); ++i)
        dx[i] += g[i] * (Real(1) - y[i] * y[i]);
    });
  return out;
}

template <typename Real>
Tensor<Real> sigmoid(Tape<Real>& tape, const Tensor<Real>& x) {
  Tensor<Real> out(x.shape(), Real(0), detail::track(tape, x));
  for (std::size_t i = 0; i < x.size(); ++i) {
    const Real v = x.data()[i];
    out.data()[i] = Real(1) / (Real(1) + std::exp(-v));
  }
  if (out.requires_grad())
    tape.record("sigmoid", {x, out}, [x, out]() mutable {
      const Real* g = out.grad().data();
      const Real* y = out.data().data();
      Real* dx = x.grad().data();
      for (std::size_t i = 0; i < x.size(); ++i)
        dx[i] += g[i] * y[i] * (Real(1) - y[i]);
    });
  return out;
}

// softmax(x / tau) with max subtraction. tau == 1 is the plain softmax.
template <typename Real>
Tensor<Real> softmax_temperature(Tape<Real>& tape, const Tensor<Real>& x,
                                 Real tau) {
  if (!(tau > Real(0)))
    throw ParameterError("softmax_temperature: tau must be > 0");
  if (x.ndim() != 1)
    throw DimensionError("softmax_temperature: expects 1-D logits");
  const int n = x.dim(0);
  Tensor<Real> out(x.shape(), Real(0), detail::track(tape, x));
  const Real* xp = x.data().data();
  Real* op = out.data().data();
  Real mx = xp[0] / tau;
  for (int i = 1; i < n; ++i) mx = std::max(mx, xp[i] / tau);
  Real z = 0;
  for (int i = 0; i < n; ++i) {
    op[i] = std::exp(xp[i] / tau - mx);
    z += op[i];
  }
  const Real inv = Real(1) / z;
  for (int i = 0; i < n; ++i) op[i] *= inv;
  if (out.requires_grad())
    tape.record("softmax_temperature", {x, out}, [x, out, tau, n]() mutable {
      const Real* g = out.grad().data();
      const Real* y = out.data().data();
      Real* dx = x.grad().data();
      Real dot = 0;
      for (int i = 0; i < n; ++i) dot += g[i] * y[i];
      const Real itau = Real(1) / tau;
      for (int i = 0; i < n; ++i) dx[i] += itau * y[i] * (g[i] - dot);
    });
  return out;
}

// Row lookup, the embedding primitive. Gradient accumulates into the row.
template <typename Real>
Tensor<Real> gather_row(Tape<Real>& tape, const Tensor<Real>& table, int row) {
  if (table.ndim() != 2) throw DimensionError("gather_row: expects 2-D table");
  if (row < 0 || row >= table.dim(0))
    throw DimensionError("gather_row: row " + std::to_string(row) +
                         " out of range for " + shape_str(table.shape()));
  const int n = table.dim(1);
  Tensor<Real> out(std::vector<int>{n}, Real(0), detail::track(tape, table));
  std::copy(table.data().begin() + static_cast<std::size_t>(row) * n,
            table.data().begin() + static_cast<std::size_t>(row + 1) * n,
            out.data().begin());
  if (out.requires_grad())
    tape.record("gather_row", {table, out}, [table, out, row, n]() mutable {
      const Real* g = out.grad().data();
      Real* dt = table.grad().data() + static_cast<std::size_t>(row) * n;
      for (int i = 0; i < n; ++i) dt[i] += g[i];
    });
  return out;
}

template <typename Real>
Tensor<Real> sum_all(Tape<Real>& tape, const Tensor<Real>& x) {
  Tensor<Real> out(std::vector<int>{1}, Real(0), detail::track(tape, x));
  Real acc = 0;
  for (Real v : x.data()) acc += v;
  out.data()[0] = acc;
  if (out.requires_grad())
    tape.record("sum_all", {x, out}, [x, out]() mutable {
      const Real g = out.grad()[0];
      Real* dx = x.grad().data();
      for (std::size_t i = 0; i < x.size(); ++i) dx[i] += g;
    });
  return out;
}

template <typename Real>
Tensor<Real> dot(Tape<Real>& tape, const Tensor<Real>& a,
                 const Tensor<Real>& b) {
  detail::check_same_shape(a, b, "dot");
  Tensor<Real> out(std::vector<int>{1}, Real(0), detail::track(tape, a, b));
  Real acc = 0;
  for (std::size_t i = 0; i < a.size(); ++i)
    acc += a.data()[i] * b.data()[i];
  out.data()[0] = acc;
  if (out.requires_grad())
    tape.record("dot", {a, b, out}, [a, b, out]() mutable {
      const Real g = out.grad()[0];
      if (a.requires_grad()) {
        Real* da = a.grad().data();
        const Real* bp = b.data().data();
        for (std::size_t i = 0; i < a.size(); ++i) da[i] += g * bp[i];
      }
      if (b.requires_grad()) {
        Real* db = b.grad().data();
        const Real* ap = a.data().data();
        for (std::size_t i = 0; i < a.size(); ++i) db[i] += g * ap[i];
      }
    });
  return out;
}

// y = x / s with s a scalar tensor.
template <typename Real>
Tensor<Real> div_by_scalar(Tape<Real>& tape, const Tensor<Real>& x,
                           const Tensor<Real>& s) {
  if (s.size() != 1) throw DimensionError("div_by_scalar: s must be scalar");
  const Real sv = s.data()[0];
  Tensor<Real> out(x.shape(), Real(0), detail::track(tape, x, s));
  for (std::size_t i = 0; i < x.size(); ++i) out.data()[i] = x.data()[i] / sv;
  if (out.requires_grad())
    tape.record("div_by_scalar", {x, s, out}, [x, s, out, sv]() mutable {
      const Real* g = out.grad().data();
      if (x.requires_grad()) {
        Real* dx = x.grad().data();
        for (std::size_t i = 0; i < x.size(); ++i) dx[i] += g[i] / sv;
      }
      if (s.requires_grad()) {
        const Real* y = out.data().data();
        Real acc = 0;
        for (std::size_t i = 0; i < x.size(); ++i) acc += g[i] * y[i];
        s.grad()[0] -= acc / sv;
      }
    });
  return out;
}

// sqrt(sum(x^2) + eps). With eps > 0 the gradient is finite everywhere,
// including at the zero vector.
template <typename Real>
Tensor<Real> l2norm_smoothed(Tape<Real>& tape, const Tensor<Real>& x,
                             Real eps) {
  if (eps < Real(0)) throw ParameterError("l2norm_smoothed: eps must be >= 0");
  Tensor<Real> out(std::vector<int>{1}, Real(0), detail::track(tape, x));
  Real acc = eps;
  for (Real v : x.data()) acc += v * v;
  const Real nrm = std::sqrt(acc);
  out.data()[0] = nrm;
  if (out.requires_grad())
    tape.record("l2norm_smoothed", {x, out}, [x, out, nrm]() mutable {
      const Real g = out.grad()[0];
      Real* dx = x.grad().data();
      const Real* xp = x.data().data();
      if (nrm > Real(0)) {
        const Real s = g / nrm;
        for (std::size_t i = 0; i < x.size(); ++i) dx[i] += s * xp[i];
      }
    });
  return out;
}

// Packs scalar tensors into a vector; gradient scatters back.
template <typename Real>
Tensor<Real> stack_scalars(Tape<Real>& tape,
                           const std::vector<Tensor<Real>>& xs) {
  const int n = static_cast<int>(xs.size());
  if (n == 0) throw DimensionError("stack_scalars: empty input");
  bool rg = false;
  for (const auto& t : xs) {
    if (t.size() != 1) throw DimensionError("stack_scalars: non-scalar input");
    rg = rg || t.requires_grad();
  }
  Tensor<Real> out(std::vector<int>{n}, Real(0), tape.recording() && rg);
  for (int i = 0; i < n; ++i) out.data()[i] = xs[i].data()[0];
  if (out.requires_grad()) {
    std::vector<Tensor<Real>> rec = xs;
    rec.push_back(out);
    tape.record("stack_scalars", std::move(rec), [xs, out, n]() mutable {
      const Real* g = out.grad().data();
      for (int i = 0; i < n; ++i)
        if (xs[i].requires_grad()) xs[i].grad()[0] += g[i];
    });
  }
  return out;
}

// -log(max(p[idx], clamp)) for a probability vector p.
template <typename Real>
Tensor<Real> nll_from_probs(Tape<Real>& tape, const Tensor<Real>& probs,
                            int idx, Real clamp = Real(1e-12)) {
  if (probs.ndim() != 1)
    throw DimensionError("nll_from_probs: expects 1-D probabilities");
  if (idx < 0 || idx >= probs.dim(0))
    throw DimensionError("nll_from_probs: index out of range");
  const Real p = probs.data()[static_cast<std::size_t>(idx)];
  Tensor<Real> out(std::vector<int>{1}, Real(0), detail::track(tape, probs));
  const bool clamped = p < clamp;
  out.data()[0] = -std::log(clamped ? clamp : p);
  if (out.requires_grad())
    tape.record("nll_from_probs", {probs, out},
                [probs, out, idx, p, clamped]() mutable {
                  if (clamped) return;
                  const Real g = out.grad()[0];
                  probs.grad()[static_cast<std::size_t>(idx)] -= g / p;
                });
  return out;
}

// Cross-entropy H(target, p) = -sum_i target_i log(max(p_i, clamp)).
// `target` is treated as a constant; no gradient flows into it.
template <typename Real>
Tensor<Real> cross_entropy_vs(Tape<Real>& tape, const Tensor<Real>& target,
                              const Tensor<Real>& probs,
                              Real clamp = Real(1e-12)) {
  detail::check_same_shape(target, probs, "cross_entropy_vs");
  Tensor<Real> out(std::vector<int>{1}, Real(0), detail::track(tape, probs));
  Real acc = 0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const Real p = std::max(probs.data()[i], clamp);
    acc -= target.data()[i] * std::log(p);
  }
  out.data()[0] = acc;
  if (out.requires_grad())
    tape.record("cross_entropy_vs", {probs, out},
                [target, probs, out, clamp]() mutable {
                  const Real g = out.grad()[0];
                  Real* dp = probs.grad().data();
                  for (std::size_t i = 0; i < probs.size(); ++i) {
                    const Real p = probs.data()[i];
                    if (p >= clamp) dp[i] -= g * target.data()[i] / p;
                  }
                });
  return out;
}

}  // namespace unitext
