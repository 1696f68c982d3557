#include "icl/model.hpp"

#include <cmath>
#include <string>

namespace icl {

std::string_view to_string(BlockVariant v) {
  switch (v) {
    case BlockVariant::Plain: return "plain";
    case BlockVariant::DherinSkip: return "dherin-skip";
    case BlockVariant::Skip: return "skip";
    case BlockVariant::PreLn: return "pre-ln";
  }
  return "unknown";
}

BlockVariant parse_variant(std::string_view name) {
  for (auto v : kAllVariants)
    if (to_string(v) == name) return v;
  throw std::invalid_argument("unknown block variant '" + std::string(name) +
                              "' (expected plain, dherin-skip, skip or pre-ln)");
}

bool has_residual(BlockVariant v) { return v != BlockVariant::Plain; }

namespace {

void require_shape(const Matrix& m, std::size_t rows, std::size_t cols, const char* what) {
  if (m.rows() != rows || m.cols() != cols)
    throw DimensionError(std::string(what) + ": expected " + std::to_string(rows) + "x" +
                         std::to_string(cols) + ", got " + std::to_string(m.rows()) + "x" +
                         std::to_string(m.cols()));
}

void require_length(std::span<const double> v, std::size_t n, const char* what) {
  if (v.size() != n)
    throw DimensionError(std::string(what) + ": expected length " + std::to_string(n) + ", got " +
                         std::to_string(v.size()));
}

Matrix scaled_gaussian(RngState& rng, std::size_t rows, std::size_t cols, double stddev) {
  return stddev * gaussian(rng, rows, cols);
}

LnParams unit_ln(std::size_t d, double eps) { return {Vec(d, 1.0), Vec(d, 0.0), eps}; }

Matrix assemble(const Matrix& context, std::span<const double> query) {
  const std::size_t d = query.size();
  if (!context.empty() && context.rows() != d)
    throw DimensionError("context rows must match query length");
  const std::size_t n_ctx = context.empty() ? 0 : context.cols();
  Matrix seq(d, n_ctx + 1);
  for (std::size_t r = 0; r < d; ++r) {
    for (std::size_t c = 0; c < n_ctx; ++c) seq(r, c) = context(r, c);
    seq(r, n_ctx) = query[r];
  }
  return seq;
}

Vec apply_ln(const LnParams& ln, std::span<const double> x, LayerNormStats* stats = nullptr) {
  if (stats) *stats = layer_norm_stats(x, ln.eps);
  return layer_norm(x, ln.gamma, ln.beta, ln.eps);
}

}  // namespace

ModelParams init_model(const ModelShape& shape, RngState& rng) {
  if (shape.layers < 1) throw std::invalid_argument("init_model: layers must be >= 1");
  if (shape.heads < 1 || shape.width % shape.heads != 0)
    throw std::invalid_argument("init_model: heads must divide width");
  const std::size_t d = shape.width;
  const std::size_t h = shape.hidden == 0 ? 4 * d : shape.hidden;
  const double stddev = 1.0 / std::sqrt(static_cast<double>(d));

  ModelParams params;
  params.variant = shape.variant;
  params.readout = d - 1;
  for (std::size_t l = 0; l < shape.layers; ++l) {
    BlockParams block;
    block.attention.heads = shape.heads;
    block.attention.wq = scaled_gaussian(rng, d, d, stddev);
    block.attention.wk = scaled_gaussian(rng, d, d, stddev);
    block.attention.wv = scaled_gaussian(rng, d, d, stddev);
    block.attention.wo = scaled_gaussian(rng, d, d, stddev);
    block.mlp.w = scaled_gaussian(rng, h, d, stddev);
    block.mlp.b = Vec(h, 0.0);
    block.mlp.w_out = scaled_gaussian(rng, d, h, stddev);
    block.mlp.b_out = Vec(d, 0.0);
    if (shape.variant == BlockVariant::PreLn) {
      block.ln_attn = unit_ln(d, shape.ln_eps);
      block.ln_mlp = unit_ln(d, shape.ln_eps);
    }
    params.blocks.push_back(std::move(block));
  }
  validate(params);
  return params;
}

void validate(const BlockParams& block, BlockVariant variant) {
  const auto& att = block.attention;
  const std::size_t d = att.wq.rows();
  if (d == 0) throw DimensionError("attention width must be >= 1");
  if (att.heads == 0 || d % att.heads != 0)
    throw DimensionError("attention heads must divide the width");
  require_shape(att.wq, d, d, "wq");
  require_shape(att.wk, d, d, "wk");
  require_shape(att.wv, d, d, "wv");
  require_shape(att.wo, d, d, "wo");
  const std::size_t h = block.mlp.w.rows();
  require_shape(block.mlp.w, h, d, "mlp.w");
  require_length(block.mlp.b, h, "mlp.b");
  require_shape(block.mlp.w_out, d, h, "mlp.w_out");
  require_length(block.mlp.b_out, d, "mlp.b_out");
  const bool want_ln = variant == BlockVariant::PreLn;
  if (block.ln_attn.has_value() != want_ln || block.ln_mlp.has_value() != want_ln)
    throw std::invalid_argument("layer norm parameters must be present iff the variant is pre-ln");
  if (want_ln) {
    for (const LnParams* ln : {&*block.ln_attn, &*block.ln_mlp}) {
      require_length(ln->gamma, d, "ln.gamma");
      require_length(ln->beta, d, "ln.beta");
      if (!(ln->eps > 0.0)) throw std::invalid_argument("ln.eps must be > 0");
    }
  }
}

void validate(const ModelParams& params) {
  if (params.blocks.empty()) throw std::invalid_argument("model needs at least one block");
  const std::size_t d = params.width();
  for (const auto& block : params.blocks) {
    validate(block, params.variant);
    if (block.attention.width() != d) throw DimensionError("all blocks must share the width");
  }
  if (params.readout >= d) throw DimensionError("readout row out of range");
}

std::vector<std::span<double>> tensors(ModelParams& params) {
  std::vector<std::span<double>> out;
  for (auto& block : params.blocks) {
    out.push_back(block.attention.wq.data());
    out.push_back(block.attention.wk.data());
    out.push_back(block.attention.wv.data());
    out.push_back(block.attention.wo.data());
    out.push_back(block.mlp.w.data());
    out.push_back(block.mlp.b);
    out.push_back(block.mlp.w_out.data());
    out.push_back(block.mlp.b_out);
    for (auto* ln : {&block.ln_attn, &block.ln_mlp}) {
      if (!ln->has_value()) continue;
      out.push_back((*ln)->gamma);
      out.push_back((*ln)->beta);
    }
  }
  return out;
}

std::vector<std::span<const double>> tensors(const ModelParams& params) {
  auto mutable_views = tensors(const_cast<ModelParams&>(params));
  return {mutable_views.begin(), mutable_views.end()};
}

std::vector<std::string> tensor_names(const ModelParams& params) {
  std::vector<std::string> names;
  for (std::size_t l = 0; l < params.blocks.size(); ++l) {
    const std::string prefix = "block" + std::to_string(l + 1) + ".";
    for (const char* n : {"attn.wq", "attn.wk", "attn.wv", "attn.wo", "mlp.w", "mlp.b",
                          "mlp.w_out", "mlp.b_out"})
      names.push_back(prefix + n);
    if (params.blocks[l].ln_attn) {
      names.push_back(prefix + "ln_attn.gamma");
      names.push_back(prefix + "ln_attn.beta");
    }
    if (params.blocks[l].ln_mlp) {
      names.push_back(prefix + "ln_mlp.gamma");
      names.push_back(prefix + "ln_mlp.beta");
    }
  }
  return names;
}

ModelParams zeros_like(const ModelParams& params) {
  ModelParams z = params;
  for (auto t : tensors(z)) std::fill(t.begin(), t.end(), 0.0);
  return z;
}

Matrix attention_forward(const AttentionParams& params, const Matrix& x, bool causal,
                         AttentionCache* cache) {
  const std::size_t d = params.width();
  const std::size_t n = x.cols();
  if (x.rows() != d) throw DimensionError("attention_forward: input rows must equal the width");
  if (n == 0) throw DimensionError("attention_forward: empty sequence");

  const Matrix q = matmul(params.wq, x);
  const Matrix k = matmul(params.wk, x);
  const Matrix v = matmul(params.wv, x);
  const std::size_t dh = params.head_width();
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  const Mask mask = causal ? Mask::causal(n) : Mask(n, n, true);

  Matrix heads_out(d, n);
  std::vector<Matrix> probs;
  probs.reserve(params.heads);
  for (std::size_t head = 0; head < params.heads; ++head) {
    const std::size_t r0 = head * dh;
    Matrix scores(n, n);
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t i = 0; i < n; ++i) {
        if (!mask.allowed(j, i)) continue;
        double s = 0.0;
        for (std::size_t r = r0; r < r0 + dh; ++r) s += k(r, j) * q(r, i);
        scores(j, i) = s * scale;
      }
    Matrix p = softmax_columns(scores, mask);
    for (std::size_t r = r0; r < r0 + dh; ++r)
      for (std::size_t i = 0; i < n; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j <= (causal ? i : n - 1); ++j) s += v(r, j) * p(j, i);
        heads_out(r, i) = s;
      }
    probs.push_back(std::move(p));
  }

  Matrix out = matmul(params.wo, heads_out);
  if (cache) {
    cache->input = x;
    cache->q = q;
    cache->k = k;
    cache->v = v;
    cache->probs = std::move(probs);
    cache->heads_out = std::move(heads_out);
  }
  return out;
}

Matrix contextual_layer(const AttentionParams& params, const Matrix& context,
                        std::span<const double> query) {
  return attention_forward(params, assemble(context, query), true);
}

Vec contextual_layer_query_only(const AttentionParams& params, std::span<const double> query) {
  return attention_forward(params, Matrix::column(query), true).col(0);
}

Vec mlp_forward(const MlpParams& mlp, std::span<const double> input) {
  Vec hidden = matvec(mlp.w, input);
  for (std::size_t k = 0; k < hidden.size(); ++k) hidden[k] = gelu(hidden[k] + mlp.b[k]);
  Vec out = matvec(mlp.w_out, hidden);
  for (std::size_t k = 0; k < out.size(); ++k) out[k] += mlp.b_out[k];
  return out;
}

QueryBranch query_branch(const BlockParams& params, BlockVariant variant,
                         std::span<const double> query) {
  validate(params, variant);
  require_length(query, params.attention.width(), "query");
  QueryBranch qb;
  switch (variant) {
    case BlockVariant::Plain:
      qb.attn = contextual_layer_query_only(params.attention, query);
      qb.f = qb.attn;
      qb.p = qb.attn;
      break;
    case BlockVariant::DherinSkip:
      qb.attn = contextual_layer_query_only(params.attention, query);
      qb.f = qb.attn;
      qb.p = add(query, qb.attn);
      break;
    case BlockVariant::Skip:
      qb.attn = contextual_layer_query_only(params.attention, query);
      qb.p = add(query, qb.attn);
      qb.f = qb.p;
      break;
    case BlockVariant::PreLn:
      qb.attn = contextual_layer_query_only(params.attention, apply_ln(*params.ln_attn, query));
      qb.p = add(query, qb.attn);
      qb.f = apply_ln(*params.ln_mlp, qb.p);
      break;
  }
  return qb;
}

ForwardTrace block_forward(const BlockParams& params, BlockVariant variant, const Matrix& input) {
  validate(params, variant);
  const std::size_t d = params.attention.width();
  const std::size_t n = input.cols();
  if (input.rows() != d || n == 0)
    throw DimensionError("block_forward: input must be d x N with N >= 1");

  ForwardTrace t;
  t.input = input;
  t.query = input.col(n - 1);

  Matrix attn_in = input;
  if (variant == BlockVariant::PreLn) {
    t.ln_attn_stats.resize(n);
    for (std::size_t i = 0; i < n; ++i)
      attn_in.set_col(i, apply_ln(*params.ln_attn, input.col(i), &t.ln_attn_stats[i]));
  }
  t.attn_out = attention_forward(params.attention, attn_in, true, &t.attention);

  t.g = Matrix(d, n);
  t.q = Matrix(d, n);
  if (variant == BlockVariant::PreLn) t.ln_mlp_stats.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const Vec a = t.attn_out.col(i);
    const Vec z = input.col(i);
    switch (variant) {
      case BlockVariant::Plain:
        t.g.set_col(i, a);
        t.q.set_col(i, a);
        break;
      case BlockVariant::DherinSkip:
        t.g.set_col(i, a);
        t.q.set_col(i, add(z, a));
        break;
      case BlockVariant::Skip: {
        const Vec q = add(z, a);
        t.g.set_col(i, q);
        t.q.set_col(i, q);
        break;
      }
      case BlockVariant::PreLn: {
        const Vec q = add(z, a);
        t.q.set_col(i, q);
        t.g.set_col(i, apply_ln(*params.ln_mlp, q, &t.ln_mlp_stats[i]));
        break;
      }
    }
  }

  const auto& mlp = params.mlp;
  t.hidden_pre = matmul(mlp.w, t.g);
  for (std::size_t r = 0; r < t.hidden_pre.rows(); ++r)
    for (std::size_t i = 0; i < n; ++i) t.hidden_pre(r, i) += mlp.b[r];
  Matrix act = t.hidden_pre;
  for (double& v : act.data()) v = gelu(v);
  t.output = matmul(mlp.w_out, act);
  const bool residual = has_residual(variant);
  // same association as query_only_block_forward: (W' act + b') + q
  for (std::size_t r = 0; r < d; ++r)
    for (std::size_t i = 0; i < n; ++i) {
      t.output(r, i) += mlp.b_out[r];
      if (residual) t.output(r, i) += t.q(r, i);
    }
  require_finite(t.output.data(), "block_forward output");

  QueryBranch qb = query_branch(params, variant, t.query);
  t.attn_query = std::move(qb.attn);
  t.f = std::move(qb.f);
  t.p = std::move(qb.p);
  return t;
}

ForwardTrace block_forward(const BlockParams& params, BlockVariant variant, const Matrix& context,
                           std::span<const double> query) {
  return block_forward(params, variant, assemble(context, query));
}

Vec query_only_block_forward(const BlockParams& params, BlockVariant variant,
                             std::span<const double> query, const Matrix& delta_w,
                             std::span<const double> delta_b) {
  require_shape(delta_w, params.mlp.w.rows(), params.mlp.w.cols(), "delta_w");
  require_length(delta_b, params.mlp.b_out.size(), "delta_b");
  const QueryBranch qb = query_branch(params, variant, query);

  MlpParams patched = params.mlp;
  patched.w += delta_w;
  for (std::size_t k = 0; k < delta_b.size(); ++k) patched.b_out[k] += delta_b[k];
  Vec out = mlp_forward(patched, qb.f);
  if (has_residual(variant))
    for (std::size_t k = 0; k < out.size(); ++k) out[k] += qb.p[k];
  require_finite(out, "query_only_block_forward");
  return out;
}

SequenceTrace sequence_forward(const ModelParams& params, const Matrix& input) {
  if (input.rows() != params.width())
    throw DimensionError("model input rows must equal the model width");
  SequenceTrace traces;
  traces.reserve(params.layers());
  const Matrix* x = &input;
  for (const auto& block : params.blocks) {
    traces.push_back(block_forward(block, params.variant, *x));
    x = &traces.back().output;
  }
  return traces;
}

ModelOutput model_forward(const ModelParams& params, std::span<const Matrix> inputs) {
  validate(params);
  ModelOutput out;
  out.predictions.reserve(inputs.size());
  out.traces.reserve(inputs.size());
  for (const auto& input : inputs) {
    out.traces.push_back(sequence_forward(params, input));
    const Matrix& last = out.traces.back().back().output;
    out.predictions.push_back(last(params.readout, last.cols() - 1));
  }
  return out;
}

Vec predict(const ModelParams& params, std::span<const Matrix> inputs) {
  validate(params);
  Vec preds;
  preds.reserve(inputs.size());
  for (const auto& input : inputs) {
    const SequenceTrace t = sequence_forward(params, input);
    const Matrix& last = t.back().output;
    preds.push_back(last(params.readout, last.cols() - 1));
  }
  return preds;
}

}  // namespace icl
