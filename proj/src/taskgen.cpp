#include "icl/taskgen.hpp"

#include <fstream>

#include <json.hpp>

namespace icl {

double Task::label(std::size_t j) const {
  double y = 0.0;
  for (std::size_t k = 0; k < weights.size(); ++k) y += weights[k] * inputs(k, j);
  return y;
}

namespace {

TaskBatch assemble_batch(std::vector<Task> tasks) {
  TaskBatch batch;
  batch.tasks = std::move(tasks);
  for (const auto& task : batch.tasks) {
    batch.sequences.push_back(build_sequence(task));
    batch.targets.push_back(task.target());
  }
  return batch;
}

}  // namespace

TaskBatch sample_tasks(RngState& rng, std::size_t batch, std::size_t seq_len, std::size_t input_dim) {
  if (batch == 0 || seq_len == 0 || input_dim == 0)
    throw std::invalid_argument("sample_tasks: B, N and d_x must be >= 1");
  std::vector<Task> tasks;
  tasks.reserve(batch);
  for (std::size_t b = 0; b < batch; ++b) {
    Task task;
    task.weights = gaussian(rng, input_dim, 1).col(0);
    task.inputs = Matrix(input_dim, seq_len);
    for (std::size_t j = 0; j < seq_len; ++j)
      for (std::size_t k = 0; k < input_dim; ++k) task.inputs(k, j) = rng.next_gaussian();
    tasks.push_back(std::move(task));
  }
  return assemble_batch(std::move(tasks));
}

Matrix build_sequence(const Task& task) {
  const std::size_t dx = task.input_dim();
  const std::size_t n = task.seq_len();
  if (task.weights.size() != dx || n == 0) throw DimensionError("build_sequence: malformed task");
  Matrix seq(dx + 1, n);
  for (std::size_t j = 0; j < n; ++j) {
    for (std::size_t k = 0; k < dx; ++k) seq(k, j) = task.inputs(k, j);
    seq(dx, j) = j + 1 < n ? task.label(j) : 0.0;
  }
  return seq;
}

std::vector<Pair> read_context_pairs(const Matrix& sequence) {
  const std::size_t dx = sequence.rows() - 1;
  std::vector<Pair> pairs;
  for (std::size_t j = 0; j + 1 < sequence.cols(); ++j) {
    Vec col = sequence.col(j);
    const double y = col.back();
    col.resize(dx);
    pairs.push_back({std::move(col), y});
  }
  return pairs;
}

void write_task_dump(const TaskBatch& batch, const std::filesystem::path& path) {
  nlohmann::json doc;
  doc["format"] = "iclab-tasks";
  doc["version"] = 1;
  auto& arr = doc["tasks"] = nlohmann::json::array();
  for (const auto& task : batch.tasks) {
    nlohmann::json t;
    t["weights"] = task.weights;
    t["shape"] = {task.inputs.rows(), task.inputs.cols()};
    t["inputs"] = std::vector<double>(task.inputs.data().begin(), task.inputs.data().end());
    arr.push_back(std::move(t));
  }
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << doc.dump(1) << '\n';
}

TaskBatch read_task_dump(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
    if (doc.at("format") != "iclab-tasks" || doc.at("version") != 1)
      throw FormatError("unsupported task dump format");
    std::vector<Task> tasks;
    for (const auto& t : doc.at("tasks")) {
      Task task;
      task.weights = t.at("weights").get<Vec>();
      const auto shape = t.at("shape").get<std::vector<std::size_t>>();
      const auto values = t.at("inputs").get<Vec>();
      if (shape.size() != 2 || values.size() != shape[0] * shape[1])
        throw FormatError("task inputs do not match their shape header");
      task.inputs = Matrix(shape[0], shape[1]);
      std::copy(values.begin(), values.end(), task.inputs.data().begin());
      tasks.push_back(std::move(task));
    }
    return assemble_batch(std::move(tasks));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

}  // namespace icl
