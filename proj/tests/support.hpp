#pragma once

// Test-only helpers: random fixtures and straight-line reference
// implementations that share no code path with the library's forward pass.

#include <cmath>
#include <vector>

#include "icl/model.hpp"
#include "icl/rng.hpp"

namespace icl::test {

inline Matrix random_matrix(RngState& rng, std::size_t rows, std::size_t cols, double scale = 1.0) {
  return scale * gaussian(rng, rows, cols);
}

inline Vec random_vec(RngState& rng, std::size_t n, double scale = 1.0) {
  return random_matrix(rng, n, 1, scale).col(0);
}

inline std::vector<Matrix> random_sequences(RngState& rng, std::size_t batch, std::size_t width,
                                            std::size_t seq_len) {
  std::vector<Matrix> out;
  for (std::size_t b = 0; b < batch; ++b) out.push_back(random_matrix(rng, width, seq_len));
  return out;
}

// Moves biases and LN affine parameters away from their zero/one init so every
// parameter influences the output.
inline void perturb(ModelParams& params, RngState& rng, double scale = 0.3) {
  for (auto& b : params.blocks) {
    for (double& v : b.mlp.b) v += scale * rng.next_gaussian();
    for (double& v : b.mlp.b_out) v += scale * rng.next_gaussian();
    for (auto* ln : {&b.ln_attn, &b.ln_mlp}) {
      if (!ln->has_value()) continue;
      for (double& v : (*ln)->gamma) v += scale * rng.next_gaussian();
      for (double& v : (*ln)->beta) v += scale * rng.next_gaussian();
    }
  }
}

inline ModelParams random_model(BlockVariant variant, std::uint64_t seed, std::size_t width = 3,
                                std::size_t hidden = 12, std::size_t heads = 3, std::size_t layers = 2) {
  RngState rng(seed);
  ModelShape shape{variant, width, hidden, heads, layers, 1e-5};
  ModelParams p = init_model(shape, rng);
  perturb(p, rng);
  return p;
}

namespace ref {

inline double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0))); }

inline Vec ln(const Vec& x, const LnParams& p) {
  const double n = static_cast<double>(x.size());
  double mean = 0.0;
  for (double v : x) mean += v;
  mean /= n;
  double var = 0.0;
  for (double v : x) var += (v - mean) * (v - mean);
  var /= n;
  Vec out(x.size());
  for (std::size_t k = 0; k < x.size(); ++k)
    out[k] = p.gamma[k] * (x[k] - mean) / std::sqrt(var + p.eps) + p.beta[k];
  return out;
}

inline Vec mat_vec(const Matrix& m, const Vec& x) {
  Vec out(m.rows(), 0.0);
  for (std::size_t r = 0; r < m.rows(); ++r)
    for (std::size_t c = 0; c < m.cols(); ++c) out[r] += m(r, c) * x[c];
  return out;
}

// Causal multi-head attention output at token i, computed token by token.
inline Vec attention_at(const AttentionParams& a, const std::vector<Vec>& cols, std::size_t i) {
  const std::size_t d = a.wq.rows();
  const std::size_t dh = d / a.heads;
  const Vec q = mat_vec(a.wq, cols[i]);
  Vec concat(d, 0.0);
  for (std::size_t h = 0; h < a.heads; ++h) {
    std::vector<double> s(i + 1);
    double mx = -1e300;
    for (std::size_t j = 0; j <= i; ++j) {
      const Vec k = mat_vec(a.wk, cols[j]);
      double dotp = 0.0;
      for (std::size_t r = h * dh; r < (h + 1) * dh; ++r) dotp += q[r] * k[r];
      s[j] = dotp / std::sqrt(static_cast<double>(dh));
      mx = std::max(mx, s[j]);
    }
    double z = 0.0;
    for (auto& v : s) z += (v = std::exp(v - mx));
    for (std::size_t j = 0; j <= i; ++j) {
      const Vec v = mat_vec(a.wv, cols[j]);
      for (std::size_t r = h * dh; r < (h + 1) * dh; ++r) concat[r] += s[j] / z * v[r];
    }
  }
  return mat_vec(a.wo, concat);
}

inline Vec mlp(const MlpParams& m, const Vec& g) {
  Vec hdn = mat_vec(m.w, g);
  for (std::size_t k = 0; k < hdn.size(); ++k) hdn[k] = gelu(hdn[k] + m.b[k]);
  Vec out = mat_vec(m.w_out, hdn);
  for (std::size_t k = 0; k < out.size(); ++k) out[k] += m.b_out[k];
  return out;
}

inline std::vector<Vec> columns(const Matrix& m) {
  std::vector<Vec> cols;
  for (std::size_t c = 0; c < m.cols(); ++c) cols.push_back(m.col(c));
  return cols;
}

inline Vec plus(const Vec& a, const Vec& b) {
  Vec out(a.size());
  for (std::size_t k = 0; k < a.size(); ++k) out[k] = a[k] + b[k];
  return out;
}

inline std::vector<Vec> block(const BlockParams& p, BlockVariant variant, const std::vector<Vec>& z) {
  std::vector<Vec> attn_in = z;
  if (variant == BlockVariant::PreLn)
    for (auto& c : attn_in) c = ln(c, *p.ln_attn);
  std::vector<Vec> out;
  for (std::size_t i = 0; i < z.size(); ++i) {
    const Vec a = attention_at(p.attention, attn_in, i);
    const Vec q = plus(z[i], a);
    switch (variant) {
      case BlockVariant::Plain: out.push_back(mlp(p.mlp, a)); break;
      case BlockVariant::DherinSkip: out.push_back(plus(q, mlp(p.mlp, a))); break;
      case BlockVariant::Skip: out.push_back(plus(q, mlp(p.mlp, q))); break;
      case BlockVariant::PreLn: out.push_back(plus(q, mlp(p.mlp, ln(q, *p.ln_mlp)))); break;
    }
  }
  return out;
}

inline double predict(const ModelParams& params, const Matrix& input) {
  std::vector<Vec> z = columns(input);
  for (const auto& b : params.blocks) z = block(b, params.variant, z);
  return z.back()[params.readout];
}

}  // namespace ref

}  // namespace icl::test
