#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "icl/taskgen.hpp"

using namespace icl;

TEST_CASE("task labels are inner products") {
  Task task{Vec{2.0}, Matrix{{3.0, -1.0}}};
  CHECK(task.label(0) == 6.0);
  CHECK(task.target() == -2.0);
}

TEST_CASE("build_sequence layout") {
  Task task{Vec{1.0, 2.0}, Matrix{{1.0, 0.5}, {0.0, -1.0}}};
  const Matrix seq = build_sequence(task);
  REQUIRE(seq.rows() == 3);
  CHECK(seq.col(0) == Vec{1.0, 0.0, 1.0});
  CHECK(seq.col(1) == Vec{0.5, -1.0, 0.0});

  Task task3{Vec{3.0, 1.0}, Matrix{{1.0, 2.0}, {0.0, 5.0}}};
  CHECK(build_sequence(task3).col(0) == Vec{1.0, 0.0, 3.0});
}

TEST_CASE("sample_tasks") {
  RngState a(5), b(5);
  const TaskBatch x = sample_tasks(a, 4, 9, 3);
  const TaskBatch y = sample_tasks(b, 4, 9, 3);
  REQUIRE(x.size() == 4);
  for (std::size_t k = 0; k < 4; ++k) {
    CHECK(x.sequences[k] == y.sequences[k]);
    CHECK(x.targets[k] == x.tasks[k].target());
    const Matrix& seq = x.sequences[k];
    CHECK(seq.rows() == 4);
    CHECK(seq.cols() == 9);
    CHECK(seq(3, 8) == 0.0);

    const auto pairs = read_context_pairs(seq);
    REQUIRE(pairs.size() == 8);
    for (std::size_t j = 0; j < 8; ++j) {
      CHECK(pairs[j].x == x.tasks[k].inputs.col(j));
      CHECK(pairs[j].y == x.tasks[k].label(j));
    }
  }
  CHECK_THROWS(sample_tasks(a, 0, 9, 3));
}

TEST_CASE("label variance equals the input dimension") {
  RngState rng(77);
  for (std::size_t dx : {1u, 2u, 4u}) {
    const TaskBatch batch = sample_tasks(rng, 20000, 1, dx);
    double mean = 0.0, var = 0.0;
    for (const auto& t : batch.tasks) mean += t.label(0);
    mean /= 20000.0;
    for (const auto& t : batch.tasks) var += (t.label(0) - mean) * (t.label(0) - mean);
    var /= 20000.0;
    // Var(<w, x>) = d_x; the sample variance of a product of normals has
    // standard error of about sqrt(8 d_x / n) at these sizes.
    CHECK(std::abs(var - static_cast<double>(dx)) <= 5.0 * std::sqrt(8.0 * dx / 20000.0));
  }
}

TEST_CASE("train and test streams are disjoint") {
  const RngState root(3);
  RngState train_rng = root.substream("train-tasks");
  RngState test_rng = root.substream("test-tasks");
  const TaskBatch train = sample_tasks(train_rng, 64, 3, 2);
  const TaskBatch test = sample_tasks(test_rng, 64, 3, 2);
  for (const auto& a : train.tasks)
    for (const auto& b : test.tasks) CHECK(a.weights != b.weights);
}

TEST_CASE("task dump round trip") {
  RngState rng(9);
  const TaskBatch batch = sample_tasks(rng, 3, 5, 2);
  const auto path = std::filesystem::temp_directory_path() / "iclab_tasks_test.json";
  write_task_dump(batch, path);
  const TaskBatch back = read_task_dump(path);
  REQUIRE(back.size() == 3);
  for (std::size_t k = 0; k < 3; ++k) {
    CHECK(back.sequences[k] == batch.sequences[k]);
    CHECK(back.targets[k] == batch.targets[k]);
  }
  std::filesystem::remove(path);
}
