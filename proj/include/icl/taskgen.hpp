#pragma once

#include <filesystem>
#include <vector>

#include "icl/rng.hpp"
#include "icl/tensor.hpp"

namespace icl {

// One linear function h(x) = <w, x> with its N inputs; the last input is the query.
struct Task {
  Vec weights;    // d_x
  Matrix inputs;  // d_x x N

  std::size_t input_dim() const { return inputs.rows(); }
  std::size_t seq_len() const { return inputs.cols(); }
  double label(std::size_t j) const;
  double target() const { return label(seq_len() - 1); }
};

struct TaskBatch {
  std::vector<Task> tasks;
  std::vector<Matrix> sequences;  // (d_x + 1) x N model inputs
  Vec targets;

  std::size_t size() const { return tasks.size(); }
};

TaskBatch sample_tasks(RngState& rng, std::size_t batch, std::size_t seq_len, std::size_t input_dim);

// Column j < N holds [x_j, <w, x_j>]; column N holds [x_query, 0].
Matrix build_sequence(const Task& task);

struct Pair {
  Vec x;
  double y;
};
// Inverse of build_sequence for the N - 1 context columns.
std::vector<Pair> read_context_pairs(const Matrix& sequence);

void write_task_dump(const TaskBatch& batch, const std::filesystem::path& path);
TaskBatch read_task_dump(const std::filesystem::path& path);

}  // namespace icl
