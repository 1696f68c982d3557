#include <doctest.h>

#include <cmath>

#include "icl/harness.hpp"
#include "icl/taskgen.hpp"
#include "support.hpp"

using namespace icl;

namespace {

// Per (b, l, i, r) double loop with an explicit squared-difference sum.
std::vector<double> naive_msd(const ModelParams& params, const std::vector<Matrix>& inputs) {
  const std::size_t n = inputs.front().cols(), d = params.width();
  std::vector<double> out(params.layers(), 0.0);
  for (std::size_t l = 0; l < params.layers(); ++l) {
    double total = 0.0;
    for (const Matrix& x : inputs) {
      const SequenceTrace trace = sequence_forward(params, x);
      const ForwardTrace& t = trace[l];
      const auto updates = extract_updates(t, params.blocks[l].mlp, params.variant, l + 1);
      for (std::size_t i = 0; i < n; ++i) {
        const Vec rhs = query_only_block_forward(params.blocks[l], params.variant, t.query,
                                                 updates[i].delta_w, updates[i].delta_b);
        for (std::size_t r = 0; r < d; ++r) total += std::pow(t.output(r, i) - rhs[r], 2);
      }
    }
    out[l] = total / static_cast<double>(inputs.size() * n * d);
  }
  return out;
}

}  // namespace

TEST_CASE("verify_equivalence") {
  for (auto variant : kAllVariants) {
    CAPTURE(to_string(variant));
    const ModelParams model = test::random_model(variant, 3, 3, 12, 3, 3);
    RngState rng(4);
    const auto inputs = test::random_sequences(rng, 4, 3, 11);
    const MsdReport report = verify_equivalence(model, inputs, {5, 25});
    REQUIRE(report.msd.size() == 3);
    CHECK(report.batch == 4);
    CHECK(report.seq_len == 11);
    CHECK(report.width == 3);
    CHECK(report.run.step == 25);
    const auto expected = naive_msd(model, inputs);
    for (std::size_t l = 0; l < 3; ++l) {
      CHECK(report.msd[l] >= 0.0);
      CHECK(report.msd[l] <= 1e-12);
      CHECK(std::abs(report.msd[l] - expected[l]) <= 1e-15 * std::max(expected[l], 1e-300));
    }
  }
}

TEST_CASE("verify_equivalence on untrained paper-shaped models") {
  for (auto variant : kAllVariants) {
    CAPTURE(to_string(variant));
    RngState init(17);
    const ModelParams model = init_model({variant, 3, 12, 3, 5, 1e-5}, init);
    RngState tasks(18);
    const TaskBatch batch = sample_tasks(tasks, 8, 51, 2);
    for (double m : verify_equivalence(model, batch.sequences).msd) CHECK(m <= 1e-12);
  }
}

TEST_CASE("verify_equivalence reports the location of a degenerate query") {
  RngState rng(1);
  ModelParams model = init_model({BlockVariant::Plain, 3, 12, 3, 2, 1e-5}, rng);
  for (auto* m : {&model.blocks[1].attention.wv}) m->fill(0.0);
  const auto inputs = test::random_sequences(rng, 2, 3, 4);
  try {
    verify_equivalence(model, inputs);
    FAIL("expected DegenerateQueryError");
  } catch (const DegenerateQueryError& e) {
    CHECK(std::string(e.what()).find("sequence 1, block 2") != std::string::npos);
  }
}

TEST_CASE("directional_alignment") {
  RngState rng(21);
  for (int trial = 0; trial < 200; ++trial) {
    const Matrix u = test::random_matrix(rng, 4, 3);
    const Matrix v = test::random_matrix(rng, 4, 3);
    CHECK(std::abs(directional_alignment(u, u) - 1.0) <= 1e-12);
    CHECK(std::abs(directional_alignment(u, -1.0 * u) + 1.0) <= 1e-12);
    const double c = 3.0 * rng.next_gaussian();
    const double da = directional_alignment(u, v);
    CHECK(std::abs(directional_alignment(c * u, v) - (c > 0 ? da : -da)) <= 1e-12);
    CHECK(std::abs(da - directional_alignment(v, u)) <= 1e-12);
    CHECK(std::abs(da) <= 1.0 + 1e-12);
  }
  CHECK(directional_alignment(Matrix{{1, 0}}, Matrix{{0, 1}}) == 0.0);
  CHECK_THROWS(directional_alignment(Matrix(2, 2), Matrix::identity(2)));
  CHECK_THROWS(directional_alignment(Matrix(2, 2, 1.0), Matrix(2, 3, 1.0)));
}

TEST_CASE("token_alignment_matrix") {
  const ModelParams model = test::random_model(BlockVariant::Skip, 8, 3, 12, 3, 2);
  RngState rng(9);
  const Matrix input = test::random_matrix(rng, 3, 7);
  const auto mats = token_alignment_matrix(model, input, 4, {1, 50});
  REQUIRE(mats.size() == 2);
  for (const auto& m : mats) {
    CHECK(m.task == 4);
    CHECK(m.run.step == 50);
    REQUIRE(m.values.size() == 7);
    CHECK(m.labels.front() == 1);
    CHECK(m.labels.back() == 7);
    for (std::size_t i = 0; i < 7; ++i) {
      REQUIRE(m.values[i][i].has_value());
      CHECK(*m.values[i][i] == 1.0);
      for (std::size_t j = 0; j < 7; ++j) {
        REQUIRE(m.values[i][j].has_value());
        CHECK(std::abs(*m.values[i][j] - *m.values[j][i]) <= 1e-12);
        CHECK(std::abs(*m.values[i][j]) <= 1.0 + 1e-12);
      }
    }
  }
}

TEST_CASE("token_alignment_matrix with two tokens matches a direct computation") {
  const ModelParams model = test::random_model(BlockVariant::PreLn, 10, 3, 12, 3, 1);
  RngState rng(11);
  const Matrix input = test::random_matrix(rng, 3, 2);
  const auto m = token_alignment_matrix(model, input, 0).front();
  const ForwardTrace t = block_forward(model.blocks[0], BlockVariant::PreLn, input);
  const Matrix& w = model.blocks[0].mlp.w;
  // the two updates computed directly from the trace
  const Matrix u1 = general_weight_update(w, t.g.col(0), t.f);
  const Matrix u2 = general_weight_update(w, t.g.col(1), t.f);
  REQUIRE(m.values[0][0].has_value());
  CHECK(*m.values[0][0] == 1.0);
  if (frobenius_norm(u2) > 1e-14) {
    CHECK(std::abs(*m.values[0][1] - directional_alignment(u1, u2)) <= 1e-12);
  } else {
    CHECK_FALSE(m.values[0][1].has_value());
    CHECK_FALSE(m.values[1][0].has_value());
  }
}

TEST_CASE("block_alignment_matrix") {
  SUBCASE("two blocks equal the direct alignment") {
    const ModelParams model = test::random_model(BlockVariant::Skip, 12, 3, 12, 3, 2);
    RngState rng(13);
    const Matrix input = test::random_matrix(rng, 3, 6);
    const AlignmentMatrix m = block_alignment_matrix(model, input, 2);
    const SequenceTrace trace = sequence_forward(model, input);
    const Matrix u1 = general_weight_update(model.blocks[0].mlp.w, trace[0].g.col(5), trace[0].f);
    const Matrix u2 = general_weight_update(model.blocks[1].mlp.w, trace[1].g.col(5), trace[1].f);
    CHECK(m.block == 0);
    CHECK(m.task == 2);
    CHECK(m.labels == std::vector<std::size_t>{1, 2});
    CHECK(*m.values[0][0] == 1.0);
    CHECK(*m.values[1][1] == 1.0);
    CHECK(std::abs(*m.values[0][1] - directional_alignment(u1, u2)) <= 1e-12);
    CHECK(*m.values[0][1] == *m.values[1][0]);
  }
  SUBCASE("needs at least two blocks") {
    const ModelParams model = test::random_model(BlockVariant::Skip, 12, 3, 12, 3, 1);
    CHECK_THROWS(block_alignment_matrix(model, Matrix(3, 4, 1.0), 0));
  }
}

TEST_CASE("sweep") {
  TrainConfig base;
  base.tasks = 6;
  base.seq_len = 5;
  base.steps = 3;
  base.eval_steps = {3};
  base.shape.layers = 2;

  SUBCASE("single value gives one row") {
    const std::vector<std::size_t> values{4};
    const SweepResult r = sweep(SweepAxis::Tasks, values, base);
    REQUIRE(r.rows.size() == 1);
    CHECK(r.rows[0].value == 4);
    CHECK(r.rows[0].step == 3);
    CHECK(r.failures.empty());
  }
  SUBCASE("empirical and theoretical losses agree on every axis") {
    const std::vector<std::size_t> values{1, 2, 3};
    for (auto axis : {SweepAxis::Tasks, SweepAxis::SeqLen, SweepAxis::InputDim}) {
      const SweepResult r = sweep(axis, values, base);
      CHECK(r.rows.size() == 3);
      for (const auto& row : r.rows) CHECK(std::abs(row.empirical - row.theoretical) <= 1e-8);
      if (axis == SweepAxis::InputDim) CHECK(r.notes.size() == 2);
    }
  }
  SUBCASE("empty value list") {
    CHECK_THROWS(sweep(SweepAxis::Tasks, std::vector<std::size_t>{}, base));
  }
  CHECK(parse_sweep_axis("seq-len") == SweepAxis::SeqLen);
  CHECK_THROWS(parse_sweep_axis("width"));
}
