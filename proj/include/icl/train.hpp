#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <vector>

#include "icl/model.hpp"

namespace icl {

// Same layout as the parameters; one gradient per trainable entry.
using GradientSet = ModelParams;

// (1 / 2B) * sum_b (y_b - yhat_b)^2
double loss(std::span<const double> predictions, std::span<const double> targets);

// Gradient of one sequence's contribution given dL/d(prediction).
GradientSet backward(const ModelParams& params, const SequenceTrace& trace, double d_prediction);

struct BatchGradient {
  double loss = 0.0;
  Vec predictions;
  GradientSet grads;
};

// Loss and gradient over a batch. Per-sequence gradients are combined with a
// fixed pairwise tree, so the result does not depend on `threads`.
BatchGradient batch_gradient(const ModelParams& params, std::span<const Matrix> inputs,
                             std::span<const double> targets, unsigned threads = 1);

struct AdamConfig {
  double lr = 5e-2;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct OptimizerState {
  AdamConfig config;
  ModelParams m;
  ModelParams v;
  std::uint64_t step = 0;
};

OptimizerState make_optimizer(const ModelParams& params, const AdamConfig& config);
void adam_step(ModelParams& params, const GradientSet& grads, OptimizerState& state);

struct GradCheckEntry {
  std::string tensor;
  std::size_t index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_error = 0.0;
};

struct GradCheckReport {
  BlockVariant variant = BlockVariant::Skip;
  double max_rel_error = 0.0;
  GradCheckEntry worst;
  std::size_t checked = 0;
};

// Seven-point central finite differences over every parameter coordinate.
// rel error = |a - n| / max(|a|, |n|, 1e-8, 1e-6 * max_k |a_k|).
GradCheckReport gradient_check(const ModelParams& params, std::span<const Matrix> inputs,
                               std::span<const double> targets, double step = 1e-3);

struct TrainConfig {
  ModelShape shape;
  std::size_t tasks = 128;  // B: batch size and size of the fixed training task pool
  std::size_t seq_len = 51;
  std::size_t input_dim = 2;
  std::size_t steps = 100;
  AdamConfig adam;
  std::vector<std::size_t> eval_steps = {0, 25, 50, 75, 100};
  std::size_t test_repeats = 1;
  std::uint64_t seed = 0;
  unsigned threads = 1;
};

struct LossRecord {
  std::size_t step = 0;
  double train_loss = 0.0;
  std::optional<double> test_loss;
};

// Test loss measured through both sides of the equivalence at the last block
// and token: the ordinary forward (empirical) and the query-only block with
// implicit updates (theoretical).
struct TestEvaluation {
  std::size_t step = 0;
  double empirical = 0.0;
  double theoretical = 0.0;
};

struct TrainResult {
  std::map<std::size_t, ModelParams> checkpoints;  // keyed by step, for each eval step reached
  std::vector<LossRecord> log;                     // one row per optimizer step 1..steps
  std::vector<TestEvaluation> evaluations;         // one per eval step reached (includes 0)
};

// Called after each evaluation; lets callers stream progress.
using TrainObserver = std::function<void(const TestEvaluation&)>;

TrainResult train(const TrainConfig& config, const TrainObserver& observer = {});

// Empirical and theoretical test loss of `params` on the given sequences.
TestEvaluation evaluate_test_loss(const ModelParams& params, std::span<const Matrix> inputs,
                                  std::span<const double> targets);

}  // namespace icl
