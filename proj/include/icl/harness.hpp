#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "icl/implicit_update.hpp"
#include "icl/model.hpp"
#include "icl/train.hpp"

namespace icl {

struct RunInfo {
  std::uint64_t seed = 0;
  std::size_t step = 0;
};

// Mean squared difference between the context block output at every token and
// the patched query-only block output, per block: (1/BNd) sum_b sum_i ||LHS - RHS||^2.
struct MsdReport {
  RunInfo run;
  BlockVariant variant = BlockVariant::Skip;
  std::size_t batch = 0;
  std::size_t seq_len = 0;
  std::size_t width = 0;
  std::vector<double> msd;  // index l - 1
};

MsdReport verify_equivalence(const ModelParams& params, std::span<const Matrix> inputs,
                             RunInfo run = {});

// <U, V>_F / (||U||_F ||V||_F)
double directional_alignment(const Matrix& u, const Matrix& v);

// Symmetric DA matrix; entries involving a zero update are empty.
struct AlignmentMatrix {
  RunInfo run;
  std::size_t task = 0;
  std::size_t block = 0;           // 1-based; 0 for block-vs-block matrices
  std::vector<std::size_t> labels;  // 1-based token or block indices
  std::vector<std::vector<std::optional<double>>> values;
};

// One N x N matrix per block for a single sequence.
std::vector<AlignmentMatrix> token_alignment_matrix(const ModelParams& params, const Matrix& input,
                                                    std::size_t task, RunInfo run = {});
// L x L matrix over the last-token updates of each block, one per task.
AlignmentMatrix block_alignment_matrix(const ModelParams& params, const Matrix& input,
                                       std::size_t task, RunInfo run = {});

enum class SweepAxis { Tasks, SeqLen, InputDim };
std::string_view to_string(SweepAxis a);
SweepAxis parse_sweep_axis(std::string_view name);

struct SweepRow {
  SweepAxis axis = SweepAxis::Tasks;
  std::size_t value = 0;
  std::size_t step = 0;
  double empirical = 0.0;
  double theoretical = 0.0;
};

struct SweepResult {
  std::vector<SweepRow> rows;
  std::vector<std::string> failures;  // one message per value whose training diverged
  std::vector<std::string> notes;     // head-count adjustments for widths H does not divide
};

SweepResult sweep(SweepAxis axis, std::span<const std::size_t> values, const TrainConfig& base);

}  // namespace icl
