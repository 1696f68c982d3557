#pragma once

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "icl/rng.hpp"
#include "icl/tensor.hpp"

namespace icl {

// Plain:      T(i) = W' gelu(W A_i + b) + b'
// DherinSkip: T(i) = z_i + A_i + W' gelu(W A_i + b) + b'          (MLP sees A only)
// Skip:       T(i) = z_i + A_i + W' gelu(W (A_i + z_i) + b) + b'
// PreLn:      T(i) = z_i + A(LN z)_i + W' gelu(W LN'(A(LN z)_i + z_i) + b) + b'
enum class BlockVariant { Plain, DherinSkip, Skip, PreLn };

inline constexpr BlockVariant kAllVariants[] = {BlockVariant::Plain, BlockVariant::DherinSkip,
                                                BlockVariant::Skip, BlockVariant::PreLn};

std::string_view to_string(BlockVariant v);
BlockVariant parse_variant(std::string_view name);
bool has_residual(BlockVariant v);

// Per-head projections are row slices of the d x d matrices: head k owns rows
// [k * d/H, (k+1) * d/H) of wq, wk and wv. No projection biases.
struct AttentionParams {
  std::size_t heads = 1;
  Matrix wq, wk, wv, wo;

  std::size_t width() const { return wq.rows(); }
  std::size_t head_width() const { return width() / heads; }
};

struct MlpParams {
  Matrix w;      // h x d
  Vec b;         // h
  Matrix w_out;  // d x h
  Vec b_out;     // d
};

struct LnParams {
  Vec gamma;
  Vec beta;
  double eps = 1e-5;
};

struct BlockParams {
  AttentionParams attention;
  MlpParams mlp;
  std::optional<LnParams> ln_attn;  // PreLn only
  std::optional<LnParams> ln_mlp;   // PreLn only
};

struct ModelParams {
  BlockVariant variant = BlockVariant::Skip;
  std::vector<BlockParams> blocks;
  std::size_t readout = 0;  // row of the final residual read as the prediction

  std::size_t width() const { return blocks.front().attention.width(); }
  std::size_t hidden() const { return blocks.front().mlp.w.rows(); }
  std::size_t layers() const { return blocks.size(); }
};

struct ModelShape {
  BlockVariant variant = BlockVariant::Skip;
  std::size_t width = 3;
  std::size_t hidden = 0;  // 0 means 4 * width
  std::size_t heads = 3;
  std::size_t layers = 5;
  double ln_eps = 1e-5;
};

// Projections ~ N(0, 1/d), biases zero, LN gamma = 1 and beta = 0.
ModelParams init_model(const ModelShape& shape, RngState& rng);
void validate(const BlockParams& block, BlockVariant variant);
void validate(const ModelParams& params);

// Flat views over every trainable tensor, in a fixed order shared by
// tensor_names(). Gradients and optimizer moments reuse ModelParams.
std::vector<std::span<double>> tensors(ModelParams& params);
std::vector<std::span<const double>> tensors(const ModelParams& params);
std::vector<std::string> tensor_names(const ModelParams& params);
ModelParams zeros_like(const ModelParams& params);

struct AttentionCache {
  Matrix input;               // what the attention saw (post-LN for PreLn)
  Matrix q, k, v;             // d x N projections
  std::vector<Matrix> probs;  // per head, N x N: probs(j, i) = weight of key j for query i
  Matrix heads_out;           // d x N concatenated head outputs before wo
};

Matrix attention_forward(const AttentionParams& params, const Matrix& x, bool causal,
                         AttentionCache* cache = nullptr);

// A(C, x) over the full sequence and A(x) on the length-1 sequence, both causal.
Matrix contextual_layer(const AttentionParams& params, const Matrix& context,
                        std::span<const double> query);
Vec contextual_layer_query_only(const AttentionParams& params, std::span<const double> query);

// One block on one sequence. g/f are the full MLP inputs with and without
// context; q/p are the full contextual-layer outputs (skip included) with and
// without context. The query-only fields come from an independent pass on the
// length-1 sequence (x_l).
struct ForwardTrace {
  Matrix input;  // (C_l, x_l), d x N
  Vec query;     // x_l
  AttentionCache attention;
  std::vector<LayerNormStats> ln_attn_stats;  // per token, PreLn only
  std::vector<LayerNormStats> ln_mlp_stats;   // per token, PreLn only
  Matrix attn_out;  // A(C_l, x_l), LN inside for PreLn
  Vec attn_query;   // A(x_l)
  Matrix g;         // d x N
  Vec f;
  Matrix q;  // d x N
  Vec p;
  Matrix hidden_pre;  // W g + b, h x N
  Matrix output;      // d x N
};

ForwardTrace block_forward(const BlockParams& params, BlockVariant variant, const Matrix& input);
ForwardTrace block_forward(const BlockParams& params, BlockVariant variant, const Matrix& context,
                           std::span<const double> query);

// Query-only side of the equivalence: the block on x_l alone with the MLP's
// first weight matrix and last bias patched by (delta_w, delta_b).
Vec query_only_block_forward(const BlockParams& params, BlockVariant variant,
                             std::span<const double> query, const Matrix& delta_w,
                             std::span<const double> delta_b);

struct QueryBranch {
  Vec attn;  // A(x) (through LN for PreLn)
  Vec f;
  Vec p;
};
QueryBranch query_branch(const BlockParams& params, BlockVariant variant,
                         std::span<const double> query);

Vec mlp_forward(const MlpParams& mlp, std::span<const double> input);

using SequenceTrace = std::vector<ForwardTrace>;

struct ModelOutput {
  Vec predictions;
  std::vector<SequenceTrace> traces;  // [sequence][block]
};

// Inputs are (d_x + 1) x N sequences; prediction is the final residual at
// (readout, N).
ModelOutput model_forward(const ModelParams& params, std::span<const Matrix> inputs);
SequenceTrace sequence_forward(const ModelParams& params, const Matrix& input);
// Predictions without retaining traces.
Vec predict(const ModelParams& params, std::span<const Matrix> inputs);

}  // namespace icl
