#pragma once

#include <vector>

#include "icl/model.hpp"

namespace icl {

// The (delta_w, delta_b) pair that makes the query-only block reproduce the
// context block at one token. Token indices are 1-based.
struct ImplicitUpdate {
  std::size_t block = 1;
  std::size_t token = 1;
  Matrix delta_w;  // h x d, rank <= 1
  Vec delta_b;     // d
};

// N copies of W / b' and the per-token updates, stacked in token order.
// b' has length d, so the bias stacks have length dN.
struct StackedUpdate {
  Matrix weights;        // hN x d
  Matrix delta_weights;  // hN x d
  Vec biases;            // dN
  Vec delta_biases;      // dN
};

struct UpdateRank {
  double sigma1 = 0.0;
  double sigma2 = 0.0;
  double ratio = 0.0;
};

// ||f||^2 below this is treated as a degenerate query.
double degenerate_threshold(std::size_t width);

// W (g - f) f^T / ||f||^2, so that (W + dW) f = W g.
Matrix general_weight_update(const Matrix& w, std::span<const double> g, std::span<const double> f);
// q - p
Vec general_bias_update(std::span<const double> q, std::span<const double> p);

// One update per token of a block's trace. Plain blocks get a zero bias update.
std::vector<ImplicitUpdate> extract_updates(const ForwardTrace& trace, const MlpParams& mlp,
                                            BlockVariant variant, std::size_t block);

StackedUpdate stack_updates(std::span<const ImplicitUpdate> updates, const Matrix& w,
                            std::span<const double> b_out);

UpdateRank update_rank(const Matrix& delta);

}  // namespace icl
