#include "icl/train.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <thread>

#include "icl/implicit_update.hpp"
#include "icl/taskgen.hpp"

namespace icl {

double loss(std::span<const double> predictions, std::span<const double> targets) {
  if (predictions.empty()) throw std::invalid_argument("loss: empty batch");
  if (predictions.size() != targets.size()) throw DimensionError("loss: length mismatch");
  double s = 0.0;
  for (std::size_t b = 0; b < predictions.size(); ++b) {
    const double r = targets[b] - predictions[b];
    s += r * r;
  }
  return s / (2.0 * static_cast<double>(predictions.size()));
}

namespace {

void add_row_sums(const Matrix& m, std::span<double> out) {
  for (std::size_t r = 0; r < m.rows(); ++r)
    for (double v : m.row(r)) out[r] += v;
}

// Backward through one column's layer norm; accumulates gamma/beta grads.
Vec layer_norm_backward(const LnParams& ln, std::span<const double> x, const LayerNormStats& stats,
                        std::span<const double> dy, LnParams& grad) {
  const std::size_t n = x.size();
  Vec xhat(n), dxhat(n);
  double mean_dxhat = 0.0, mean_dxhat_xhat = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    xhat[k] = (x[k] - stats.mean) * stats.inv_std;
    grad.gamma[k] += dy[k] * xhat[k];
    grad.beta[k] += dy[k];
    dxhat[k] = dy[k] * ln.gamma[k];
    mean_dxhat += dxhat[k];
    mean_dxhat_xhat += dxhat[k] * xhat[k];
  }
  mean_dxhat /= static_cast<double>(n);
  mean_dxhat_xhat /= static_cast<double>(n);
  Vec dx(n);
  for (std::size_t k = 0; k < n; ++k)
    dx[k] = stats.inv_std * (dxhat[k] - mean_dxhat - xhat[k] * mean_dxhat_xhat);
  return dx;
}

Matrix attention_backward(const AttentionParams& params, const AttentionCache& cache,
                          const Matrix& d_out, AttentionParams& grad) {
  const std::size_t d = params.width();
  const std::size_t n = cache.input.cols();
  const std::size_t dh = params.head_width();
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  grad.wo += matmul_nt(d_out, cache.heads_out);
  const Matrix d_heads = matmul_tn(params.wo, d_out);

  Matrix dq(d, n), dk(d, n), dv(d, n);
  Matrix dp(n, n), ds(n, n);
  for (std::size_t head = 0; head < params.heads; ++head) {
    const std::size_t r0 = head * dh;
    const Matrix& p = cache.probs[head];
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j <= i; ++j) {
        double s = 0.0;
        for (std::size_t r = r0; r < r0 + dh; ++r) {
          s += cache.v(r, j) * d_heads(r, i);
          dv(r, j) += d_heads(r, i) * p(j, i);
        }
        dp(j, i) = s;
      }
      double weighted = 0.0;
      for (std::size_t j = 0; j <= i; ++j) weighted += p(j, i) * dp(j, i);
      for (std::size_t j = 0; j <= i; ++j) ds(j, i) = p(j, i) * (dp(j, i) - weighted) * scale;
    }
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j <= i; ++j)
        for (std::size_t r = r0; r < r0 + dh; ++r) {
          dq(r, i) += ds(j, i) * cache.k(r, j);
          dk(r, j) += ds(j, i) * cache.q(r, i);
        }
  }

  grad.wq += matmul_nt(dq, cache.input);
  grad.wk += matmul_nt(dk, cache.input);
  grad.wv += matmul_nt(dv, cache.input);
  Matrix dx = matmul_tn(params.wq, dq);
  dx += matmul_tn(params.wk, dk);
  dx += matmul_tn(params.wv, dv);
  return dx;
}

Matrix block_backward(const BlockParams& params, BlockVariant variant, const ForwardTrace& t,
                      const Matrix& d_out, BlockParams& grad) {
  const auto& mlp = params.mlp;
  const std::size_t d = t.input.rows();
  const std::size_t n = t.input.cols();

  Matrix act = t.hidden_pre;
  for (double& v : act.data()) v = gelu(v);
  grad.mlp.w_out += matmul_nt(d_out, act);
  add_row_sums(d_out, grad.mlp.b_out);
  Matrix d_pre = matmul_tn(mlp.w_out, d_out);
  for (std::size_t r = 0; r < d_pre.rows(); ++r)
    for (std::size_t i = 0; i < n; ++i) d_pre(r, i) *= gelu_derivative(t.hidden_pre(r, i));
  grad.mlp.w += matmul_nt(d_pre, t.g);
  add_row_sums(d_pre, grad.mlp.b);
  const Matrix d_g = matmul_tn(mlp.w, d_pre);

  Matrix d_attn(d, n);
  Matrix d_input(d, n);
  switch (variant) {
    case BlockVariant::Plain:
      d_attn = d_g;
      break;
    case BlockVariant::DherinSkip:
      d_attn = d_out + d_g;
      d_input = d_out;
      break;
    case BlockVariant::Skip:
      d_attn = d_out + d_g;
      d_input = d_attn;
      break;
    case BlockVariant::PreLn: {
      Matrix d_q = d_out;
      for (std::size_t i = 0; i < n; ++i) {
        const Vec dq_ln =
            layer_norm_backward(*params.ln_mlp, t.q.col(i), t.ln_mlp_stats[i], d_g.col(i), *grad.ln_mlp);
        for (std::size_t r = 0; r < d; ++r) d_q(r, i) += dq_ln[r];
      }
      d_attn = d_q;
      d_input = d_q;
      break;
    }
  }

  const Matrix d_attn_in = attention_backward(params.attention, t.attention, d_attn, grad.attention);
  if (variant == BlockVariant::PreLn) {
    for (std::size_t i = 0; i < n; ++i) {
      const Vec dz = layer_norm_backward(*params.ln_attn, t.input.col(i), t.ln_attn_stats[i],
                                         d_attn_in.col(i), *grad.ln_attn);
      for (std::size_t r = 0; r < d; ++r) d_input(r, i) += dz[r];
    }
  } else {
    d_input += d_attn_in;
  }
  return d_input;
}

void accumulate(ModelParams& into, const ModelParams& from) {
  auto dst = tensors(into);
  const auto src = tensors(from);
  for (std::size_t k = 0; k < dst.size(); ++k)
    for (std::size_t e = 0; e < dst[k].size(); ++e) dst[k][e] += src[k][e];
}

}  // namespace

GradientSet backward(const ModelParams& params, const SequenceTrace& trace, double d_prediction) {
  if (trace.size() != params.layers())
    throw DimensionError("backward: trace has the wrong number of blocks");
  GradientSet grads = zeros_like(params);
  const Matrix& last = trace.back().output;
  Matrix d_out(last.rows(), last.cols());
  d_out(params.readout, last.cols() - 1) = d_prediction;
  for (std::size_t l = params.layers(); l-- > 0;)
    d_out = block_backward(params.blocks[l], params.variant, trace[l], d_out, grads.blocks[l]);
  for (auto t : tensors(grads)) require_finite(t, "backward");
  return grads;
}

BatchGradient batch_gradient(const ModelParams& params, std::span<const Matrix> inputs,
                             std::span<const double> targets, unsigned threads) {
  validate(params);
  const std::size_t batch = inputs.size();
  if (batch == 0) throw std::invalid_argument("batch_gradient: empty batch");
  if (targets.size() != batch) throw DimensionError("batch_gradient: targets length mismatch");

  BatchGradient result;
  result.predictions.assign(batch, 0.0);
  std::vector<GradientSet> per_item(batch);
  auto work = [&](std::size_t b) {
    const SequenceTrace trace = sequence_forward(params, inputs[b]);
    const Matrix& last = trace.back().output;
    const double pred = last(params.readout, last.cols() - 1);
    result.predictions[b] = pred;
    per_item[b] = backward(params, trace, (pred - targets[b]) / static_cast<double>(batch));
  };

  const unsigned workers = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(batch)));
  if (workers == 1) {
    for (std::size_t b = 0; b < batch; ++b) work(b);
  } else {
    std::vector<std::exception_ptr> errors(workers);
    std::vector<std::thread> pool;
    for (unsigned w = 0; w < workers; ++w)
      pool.emplace_back([&, w] {
        try {
          for (std::size_t b = w; b < batch; b += workers) work(b);
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
    for (auto& th : pool) th.join();
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
  }

  for (std::size_t stride = 1; stride < batch; stride *= 2)
    for (std::size_t i = 0; i + stride < batch; i += 2 * stride) accumulate(per_item[i], per_item[i + stride]);
  result.grads = std::move(per_item[0]);
  result.loss = loss(result.predictions, targets);
  return result;
}

OptimizerState make_optimizer(const ModelParams& params, const AdamConfig& config) {
  if (!(config.lr > 0.0)) throw std::invalid_argument("learning rate must be > 0");
  return {config, zeros_like(params), zeros_like(params), 0};
}

void adam_step(ModelParams& params, const GradientSet& grads, OptimizerState& state) {
  auto theta = tensors(params);
  const auto g = tensors(grads);
  auto m = tensors(state.m);
  auto v = tensors(state.v);
  if (g.size() != theta.size() || m.size() != theta.size())
    throw DimensionError("adam_step: gradient layout does not match the parameters");
  const auto& c = state.config;
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(c.beta1, t);
  const double bc2 = 1.0 - std::pow(c.beta2, t);
  for (std::size_t k = 0; k < theta.size(); ++k) {
    if (g[k].size() != theta[k].size()) throw DimensionError("adam_step: tensor size mismatch");
    for (std::size_t e = 0; e < theta[k].size(); ++e) {
      m[k][e] = c.beta1 * m[k][e] + (1.0 - c.beta1) * g[k][e];
      v[k][e] = c.beta2 * v[k][e] + (1.0 - c.beta2) * g[k][e] * g[k][e];
      const double m_hat = m[k][e] / bc1;
      const double v_hat = v[k][e] / bc2;
      theta[k][e] -= c.lr * m_hat / (std::sqrt(v_hat) + c.eps);
    }
  }
}

GradCheckReport gradient_check(const ModelParams& params, std::span<const Matrix> inputs,
                               std::span<const double> targets, double step) {
  const BatchGradient analytic = batch_gradient(params, inputs, targets);
  const auto grads = tensors(analytic.grads);
  const auto names = tensor_names(params);

  // Coordinates far below the largest gradient sit under the difference
  // quotient's roundoff floor, so they are compared on that scale.
  double scale = 0.0;
  for (auto g : grads) scale = std::max(scale, max_abs(g));
  const double floor = std::max(1e-8, 1e-6 * scale);

  GradCheckReport report;
  report.variant = params.variant;
  ModelParams probe = params;
  auto theta = tensors(probe);
  for (std::size_t k = 0; k < theta.size(); ++k) {
    for (std::size_t e = 0; e < theta[k].size(); ++e) {
      const double saved = theta[k][e];
      auto at = [&](double offset) {
        theta[k][e] = saved + offset;
        return loss(predict(probe, inputs), targets);
      };
      // sixth-order central stencil: truncation O(h^6) allows a step large
      // enough to keep roundoff small; differences are taken first so a
      // parameter with no effect yields exactly zero
      const double d1 = at(step) - at(-step);
      const double d2 = at(2 * step) - at(-2 * step);
      const double d3 = at(3 * step) - at(-3 * step);
      const double numeric = (45.0 * d1 - 9.0 * d2 + d3) / (60.0 * step);
      theta[k][e] = saved;
      const double a = grads[k][e];
      const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), floor});
      ++report.checked;
      if (rel >= report.max_rel_error) {
        report.max_rel_error = rel;
        report.worst = {names[k], e, a, numeric, rel};
      }
    }
  }
  return report;
}

TestEvaluation evaluate_test_loss(const ModelParams& params, std::span<const Matrix> inputs,
                                  std::span<const double> targets) {
  validate(params);
  Vec empirical, theoretical;
  empirical.reserve(inputs.size());
  theoretical.reserve(inputs.size());
  const BlockParams& last_block = params.blocks.back();
  for (const auto& input : inputs) {
    const SequenceTrace trace = sequence_forward(params, input);
    const ForwardTrace& t = trace.back();
    const std::size_t n = t.output.cols();
    empirical.push_back(t.output(params.readout, n - 1));

    const Matrix dw = general_weight_update(last_block.mlp.w, t.g.col(n - 1), t.f);
    const Vec db = has_residual(params.variant) ? general_bias_update(t.q.col(n - 1), t.p)
                                                : Vec(t.p.size(), 0.0);
    theoretical.push_back(
        query_only_block_forward(last_block, params.variant, t.query, dw, db)[params.readout]);
  }
  return {0, loss(empirical, targets), loss(theoretical, targets)};
}

TrainResult train(const TrainConfig& config, const TrainObserver& observer) {
  if (config.tasks == 0 || config.seq_len == 0 || config.input_dim == 0)
    throw std::invalid_argument("train: B, N and d_x must be >= 1");
  if (config.test_repeats == 0) throw std::invalid_argument("train: test repeats must be >= 1");

  const RngState root(config.seed);
  RngState init_rng = root.substream("init");
  RngState train_rng = root.substream("train-tasks");
  RngState test_rng = root.substream("test-tasks");

  ModelShape shape = config.shape;
  shape.width = config.input_dim + 1;
  ModelParams params = init_model(shape, init_rng);
  OptimizerState opt = make_optimizer(params, config.adam);
  const TaskBatch pool = sample_tasks(train_rng, config.tasks, config.seq_len, config.input_dim);

  auto is_eval = [&](std::size_t t) {
    return std::find(config.eval_steps.begin(), config.eval_steps.end(), t) != config.eval_steps.end();
  };
  auto check = [](double value, std::size_t t) {
    if (!std::isfinite(value) || value > 1e6)
      throw DivergenceError("training diverged at step " + std::to_string(t) +
                            ": loss = " + std::to_string(value));
  };

  TrainResult result;
  for (std::size_t t = 0;; ++t) {
    std::optional<BatchGradient> bg;
    double train_loss;
    if (t < config.steps) {
      bg = batch_gradient(params, pool.sequences, pool.targets, config.threads);
      train_loss = bg->loss;
    } else {
      train_loss = loss(predict(params, pool.sequences), pool.targets);
    }
    check(train_loss, t);

    std::optional<double> test_loss;
    if (is_eval(t)) {
      const TaskBatch test = sample_tasks(test_rng, config.tasks * config.test_repeats,
                                          config.seq_len, config.input_dim);
      TestEvaluation ev = evaluate_test_loss(params, test.sequences, test.targets);
      ev.step = t;
      check(ev.empirical, t);
      test_loss = ev.empirical;
      result.evaluations.push_back(ev);
      result.checkpoints.emplace(t, params);
      if (observer) observer(ev);
    }
    if (t > 0) result.log.push_back({t, train_loss, test_loss});
    if (t >= config.steps) break;
    adam_step(params, bg->grads, opt);
  }
  return result;
}

}  // namespace icl
