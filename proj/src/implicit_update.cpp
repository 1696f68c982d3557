#include "icl/implicit_update.hpp"

#include <limits>
#include <string>

namespace icl {

double degenerate_threshold(std::size_t width) { return 1e-12 * static_cast<double>(width); }

Matrix general_weight_update(const Matrix& w, std::span<const double> g, std::span<const double> f) {
  if (g.size() != w.cols() || f.size() != w.cols())
    throw DimensionError("general_weight_update: g and f must have length d");
  const double norm2 = squared_norm(f);
  if (!(norm2 >= degenerate_threshold(f.size())))
    throw DegenerateQueryError("query-only MLP input has squared norm " + std::to_string(norm2) +
                               ", below the degeneracy threshold");
  Vec u = matvec(w, sub(g, f));
  for (double& v : u) v /= norm2;
  Matrix delta = outer(u, f);
  require_finite(delta.data(), "general_weight_update");
  return delta;
}

Vec general_bias_update(std::span<const double> q, std::span<const double> p) { return sub(q, p); }

std::vector<ImplicitUpdate> extract_updates(const ForwardTrace& trace, const MlpParams& mlp,
                                            BlockVariant variant, std::size_t block) {
  const std::size_t n = trace.g.cols();
  const std::size_t d = trace.g.rows();
  if (trace.f.size() != d || trace.q.cols() != n || trace.p.size() != d || mlp.w.cols() != d)
    throw DimensionError("extract_updates: trace does not match the MLP width");
  std::vector<ImplicitUpdate> updates;
  updates.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    ImplicitUpdate u;
    u.block = block;
    u.token = i + 1;
    u.delta_w = general_weight_update(mlp.w, trace.g.col(i), trace.f);
    u.delta_b = has_residual(variant) ? general_bias_update(trace.q.col(i), trace.p) : Vec(d, 0.0);
    updates.push_back(std::move(u));
  }
  return updates;
}

StackedUpdate stack_updates(std::span<const ImplicitUpdate> updates, const Matrix& w,
                            std::span<const double> b_out) {
  if (updates.empty()) throw DimensionError("stack_updates: no updates");
  const std::size_t h = w.rows();
  const std::size_t d = w.cols();
  const std::size_t n = updates.size();
  StackedUpdate s{Matrix(h * n, d), Matrix(h * n, d), Vec(), Vec()};
  s.biases.reserve(b_out.size() * n);
  s.delta_biases.reserve(b_out.size() * n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& u = updates[i];
    if (u.delta_w.rows() != h || u.delta_w.cols() != d || u.delta_b.size() != b_out.size())
      throw DimensionError("stack_updates: update " + std::to_string(i + 1) + " has the wrong shape");
    for (std::size_t r = 0; r < h; ++r)
      for (std::size_t c = 0; c < d; ++c) {
        s.weights(i * h + r, c) = w(r, c);
        s.delta_weights(i * h + r, c) = u.delta_w(r, c);
      }
    s.biases.insert(s.biases.end(), b_out.begin(), b_out.end());
    s.delta_biases.insert(s.delta_biases.end(), u.delta_b.begin(), u.delta_b.end());
  }
  return s;
}

UpdateRank update_rank(const Matrix& delta) {
  const auto [s1, s2] = top_two_singular_values(delta);
  const double tiny = std::numeric_limits<double>::min();
  return {s1, s2, s2 / std::max(s1, tiny)};
}

}  // namespace icl
