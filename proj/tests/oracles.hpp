#pragma once

// Independent naive-loop references used as oracles. These deliberately
// avoid the tensor engine: plain vectors, plain loops, written straight
// from the math. They must stay independent of the implementation paths
// they check.

#include <cmath>
#include <cstddef>
#include <vector>

namespace oracles {

inline std::vector<double> matmul(const std::vector<double>& a, int m, int k,
                                  const std::vector<double>& b, int n) {
  std::vector<double> c(static_cast<std::size_t>(m) * n, 0.0);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) {
      double acc = 0;
      for (int p = 0; p < k; ++p) acc += a[i * k + p] * b[p * n + j];
      c[i * n + j] = acc;
    }
  return c;
}

// Cross-correlation, kernel [3,3,ci,co], zero padding 1.
inline std::vector<double> conv3x3(const std::vector<double>& in, int h, int w,
                                   int ci, const std::vector<double>& k,
                                   int co) {
  std::vector<double> out(static_cast<std::size_t>(h) * w * co, 0.0);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int o = 0; o < co; ++o) {
        double acc = 0;
        for (int ky = 0; ky < 3; ++ky)
          for (int kx = 0; kx < 3; ++kx) {
            const int yy = y + ky - 1, xx = x + kx - 1;
            if (yy < 0 || yy >= h || xx < 0 || xx >= w) continue;
            for (int c = 0; c < ci; ++c)
              acc += in[(yy * w + xx) * ci + c] *
                     k[((ky * 3 + kx) * ci + c) * co + o];
          }
        out[(y * w + x) * co + o] = acc;
      }
  return out;
}

inline std::vector<double> softmax(const std::vector<double>& v, double tau) {
  std::vector<double> out(v.size());
  double mx = v[0] / tau;
  for (double x : v) mx = std::max(mx, x / tau);
  double z = 0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    out[i] = std::exp(v[i] / tau - mx);
    z += out[i];
  }
  for (auto& x : out) x /= z;
  return out;
}

struct AttentionOut {
  std::vector<double> alpha;    // h*w
  std::vector<double> glimpse;  // d
};

// Straight from the attention equations: J = tanh(F.wf + conv(F, wb) + s.ws)
// per cell, scores = J.wa, alpha = softmax, glimpse = sum alpha * F.
inline AttentionOut attention(const std::vector<double>& f, int h, int w,
                              int d, const std::vector<double>& wf,
                              const std::vector<double>& wb,
                              const std::vector<double>& ws, int hidden,
                              const std::vector<double>& wa,
                              const std::vector<double>& s) {
  const auto conv = conv3x3(f, h, w, d, wb, d);
  std::vector<double> scores(static_cast<std::size_t>(h) * w);
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j) {
      double score = 0;
      for (int c = 0; c < d; ++c) {
        double lin = 0;
        for (int k = 0; k < d; ++k) lin += f[(i * w + j) * d + k] * wf[k * d + c];
        double sq = 0;
        for (int k = 0; k < hidden; ++k) sq += s[k] * ws[k * d + c];
        const double jval = std::tanh(lin + conv[(i * w + j) * d + c] + sq);
        score += jval * wa[c];
      }
      scores[i * w + j] = score;
    }
  AttentionOut out;
  out.alpha = softmax(scores, 1.0);
  out.glimpse.assign(static_cast<std::size_t>(d), 0.0);
  for (int cell = 0; cell < h * w; ++cell)
    for (int c = 0; c < d; ++c)
      out.glimpse[static_cast<std::size_t>(c)] +=
          out.alpha[static_cast<std::size_t>(cell)] * f[cell * d + c];
  return out;
}

inline double sequence_ce(const std::vector<std::vector<double>>& probs,
                          const std::vector<int>& label) {
  double loss = 0;
  for (std::size_t t = 0; t < label.size(); ++t) {
    double p = probs[t][static_cast<std::size_t>(label[t])];
    if (p < 1e-12) p = 1e-12;
    loss -= std::log(p);
  }
  return loss;
}

inline double logits_distill(const std::vector<std::vector<double>>& lt,
                             const std::vector<std::vector<double>>& ls,
                             double tau) {
  double loss = 0;
  for (std::size_t t = 0; t < lt.size(); ++t) {
    const auto pt = softmax(lt[t], tau);
    const auto ps = softmax(ls[t], tau);
    for (std::size_t i = 0; i < pt.size(); ++i)
      loss -= pt[i] * std::log(std::max(ps[i], 1e-12));
  }
  return loss;
}

inline double norm_loss(const std::vector<std::vector<double>>& a,
                        const std::vector<std::vector<double>>& b,
                        double eps) {
  double loss = 0;
  for (std::size_t t = 0; t < a.size(); ++t) {
    double sq = eps;
    for (std::size_t i = 0; i < a[t].size(); ++i) {
      const double d = a[t][i] - b[t][i];
      sq += d * d;
    }
    loss += std::sqrt(sq);
  }
  return loss;
}

inline std::vector<double> affinity(
    const std::vector<std::vector<double>>& glimpses, double eps) {
  const int k = static_cast<int>(glimpses.size());
  std::vector<double> a(static_cast<std::size_t>(k) * k);
  for (int i = 0; i < k; ++i)
    for (int j = 0; j < k; ++j) {
      double ni = eps, nj = eps, dot = 0;
      for (std::size_t c = 0; c < glimpses[0].size(); ++c) {
        ni += glimpses[static_cast<std::size_t>(i)][c] *
              glimpses[static_cast<std::size_t>(i)][c];
        nj += glimpses[static_cast<std::size_t>(j)][c] *
              glimpses[static_cast<std::size_t>(j)][c];
        dot += glimpses[static_cast<std::size_t>(i)][c] *
               glimpses[static_cast<std::size_t>(j)][c];
      }
      a[static_cast<std::size_t>(i) * k + j] =
          dot / (std::sqrt(ni) * std::sqrt(nj) * k * k);
    }
  return a;
}

inline double affinity_loss(const std::vector<double>& at,
                            const std::vector<double>& as, double eps) {
  double sq = eps;
  for (std::size_t i = 0; i < at.size(); ++i) {
    const double d = at[i] - as[i];
    sq += d * d;
  }
  return std::sqrt(sq);
}

// Scalar Adam recurrence, written independently of the optimizer.
struct ScalarAdam {
  double m = 0, v = 0;
  long long t = 0;
  double step(double& w, double g, double lr, double b1 = 0.9,
              double b2 = 0.999, double eps = 1e-8) {
    ++t;
    m = b1 * m + (1 - b1) * g;
    v = b2 * v + (1 - b2) * g * g;
    const double mhat = m / (1 - std::pow(b1, static_cast<double>(t)));
    const double vhat = v / (1 - std::pow(b2, static_cast<double>(t)));
    w -= lr * mhat / (std::sqrt(vhat) + eps);
    return w;
  }
};

}  // namespace oracles
