#include "icl/harness.hpp"

#include <cmath>
#include <string>

namespace icl {

namespace {

constexpr double kZeroNorm = 1e-14;

std::string locate(std::size_t b, std::size_t l) {
  return "sequence " + std::to_string(b + 1) + ", block " + std::to_string(l);
}

}  // namespace

MsdReport verify_equivalence(const ModelParams& params, std::span<const Matrix> inputs, RunInfo run) {
  validate(params);
  if (inputs.empty()) throw std::invalid_argument("verify_equivalence: empty batch");
  MsdReport report;
  report.run = run;
  report.variant = params.variant;
  report.batch = inputs.size();
  report.seq_len = inputs.front().cols();
  report.width = params.width();
  report.msd.assign(params.layers(), 0.0);

  for (std::size_t b = 0; b < inputs.size(); ++b) {
    if (inputs[b].cols() != report.seq_len)
      throw DimensionError("verify_equivalence: sequences must share N");
    const SequenceTrace trace = sequence_forward(params, inputs[b]);
    for (std::size_t l = 0; l < params.layers(); ++l) {
      const BlockParams& block = params.blocks[l];
      const ForwardTrace& t = trace[l];
      std::vector<ImplicitUpdate> updates;
      try {
        updates = extract_updates(t, block.mlp, params.variant, l + 1);
      } catch (const DegenerateQueryError& e) {
        throw DegenerateQueryError(locate(b, l + 1) + ": " + e.what());
      }
      for (const auto& u : updates) {
        const Vec rhs = query_only_block_forward(block, params.variant, t.query, u.delta_w, u.delta_b);
        for (std::size_t r = 0; r < rhs.size(); ++r) {
          const double diff = t.output(r, u.token - 1) - rhs[r];
          report.msd[l] += diff * diff;
        }
      }
    }
  }
  const double denom =
      static_cast<double>(report.batch * report.seq_len * report.width);
  for (double& m : report.msd) m /= denom;
  return report;
}

double directional_alignment(const Matrix& u, const Matrix& v) {
  const double nu = frobenius_norm(u);
  const double nv = frobenius_norm(v);
  if (nu <= kZeroNorm || nv <= kZeroNorm)
    throw std::invalid_argument("directional_alignment: zero-norm operand");
  return frobenius_inner(u, v) / (nu * nv);
}

namespace {

AlignmentMatrix alignment_of(const std::vector<const Matrix*>& updates) {
  const std::size_t n = updates.size();
  AlignmentMatrix m;
  m.values.assign(n, std::vector<std::optional<double>>(n));
  std::vector<double> norms(n);
  for (std::size_t i = 0; i < n; ++i) {
    norms[i] = frobenius_norm(*updates[i]);
    m.labels.push_back(i + 1);
  }
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i; j < n; ++j) {
      if (norms[i] <= kZeroNorm || norms[j] <= kZeroNorm) continue;
      const double da = i == j ? 1.0 : directional_alignment(*updates[i], *updates[j]);
      m.values[i][j] = da;
      m.values[j][i] = da;
    }
  return m;
}

}  // namespace

std::vector<AlignmentMatrix> token_alignment_matrix(const ModelParams& params, const Matrix& input,
                                                    std::size_t task, RunInfo run) {
  validate(params);
  const SequenceTrace trace = sequence_forward(params, input);
  std::vector<AlignmentMatrix> out;
  for (std::size_t l = 0; l < params.layers(); ++l) {
    const auto updates = extract_updates(trace[l], params.blocks[l].mlp, params.variant, l + 1);
    std::vector<const Matrix*> views;
    for (const auto& u : updates) views.push_back(&u.delta_w);
    AlignmentMatrix m = alignment_of(views);
    m.run = run;
    m.task = task;
    m.block = l + 1;
    out.push_back(std::move(m));
  }
  return out;
}

AlignmentMatrix block_alignment_matrix(const ModelParams& params, const Matrix& input,
                                       std::size_t task, RunInfo run) {
  validate(params);
  if (params.layers() < 2) throw std::invalid_argument("block_alignment_matrix: needs L >= 2");
  const SequenceTrace trace = sequence_forward(params, input);
  std::vector<Matrix> last;
  for (std::size_t l = 0; l < params.layers(); ++l) {
    const ForwardTrace& t = trace[l];
    last.push_back(general_weight_update(params.blocks[l].mlp.w, t.g.col(t.g.cols() - 1), t.f));
  }
  std::vector<const Matrix*> views;
  for (const auto& m : last) views.push_back(&m);
  AlignmentMatrix m = alignment_of(views);
  m.run = run;
  m.task = task;
  m.block = 0;
  return m;
}

std::string_view to_string(SweepAxis a) {
  switch (a) {
    case SweepAxis::Tasks: return "tasks";
    case SweepAxis::SeqLen: return "seq-len";
    case SweepAxis::InputDim: return "input-dim";
  }
  return "unknown";
}

SweepAxis parse_sweep_axis(std::string_view name) {
  for (auto a : {SweepAxis::Tasks, SweepAxis::SeqLen, SweepAxis::InputDim})
    if (to_string(a) == name) return a;
  throw std::invalid_argument("unknown sweep axis '" + std::string(name) +
                              "' (expected tasks, seq-len or input-dim)");
}

SweepResult sweep(SweepAxis axis, std::span<const std::size_t> values, const TrainConfig& base) {
  if (values.empty()) throw std::invalid_argument("sweep: no values");
  SweepResult result;
  for (std::size_t value : values) {
    TrainConfig cfg = base;
    switch (axis) {
      case SweepAxis::Tasks: cfg.tasks = value; break;
      case SweepAxis::SeqLen: cfg.seq_len = value; break;
      case SweepAxis::InputDim: cfg.input_dim = value; break;
    }
    const std::size_t width = cfg.input_dim + 1;
    if (width % cfg.shape.heads != 0) {
      std::size_t heads = cfg.shape.heads;
      while (width % heads != 0) --heads;
      result.notes.push_back(std::string(to_string(axis)) + "=" + std::to_string(value) + ": width " +
                             std::to_string(width) + " not divisible by " +
                             std::to_string(cfg.shape.heads) + " heads, using " +
                             std::to_string(heads));
      cfg.shape.heads = heads;
    }
    try {
      const TrainResult run = train(cfg);
      for (const auto& ev : run.evaluations)
        result.rows.push_back({axis, value, ev.step, ev.empirical, ev.theoretical});
    } catch (const DivergenceError& e) {
      result.failures.push_back(std::string(to_string(axis)) + "=" + std::to_string(value) + ": " +
                                e.what());
    } catch (const DegenerateQueryError& e) {
      result.failures.push_back(std::string(to_string(axis)) + "=" + std::to_string(value) + ": " +
                                e.what());
    }
  }
  return result;
}

}  // namespace icl
