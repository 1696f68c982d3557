#include <doctest.h>

#include <cmath>

#include "icl/implicit_update.hpp"
#include "support.hpp"

using namespace icl;

namespace {

double cosine(std::span<const double> a, std::span<const double> b) {
  return dot(a, b) / std::sqrt(squared_norm(a) * squared_norm(b));
}

}  // namespace

TEST_CASE("general_weight_update") {
  SUBCASE("no context effect") {
    RngState rng(1);
    const Matrix w = test::random_matrix(rng, 4, 3);
    const Vec f = test::random_vec(rng, 3);
    CHECK(max_abs(general_weight_update(w, f, f).data()) == 0.0);
  }
  SUBCASE("hand computed") {
    const Matrix dw = general_weight_update(Matrix::identity(2), Vec{1, 1}, Vec{1, 0});
    CHECK(dw == Matrix{{0, 0}, {1, 0}});
    CHECK(matvec(Matrix::identity(2) + dw, Vec{1, 0}) == Vec{1, 1});
  }
  SUBCASE("defining identity on random inputs") {
    RngState rng(2);
    for (int trial = 0; trial < 200; ++trial) {
      const Matrix w = test::random_matrix(rng, 12, 3);
      const Vec g = test::random_vec(rng, 3, 2.0);
      const Vec f = test::random_vec(rng, 3, 0.5);
      const Matrix dw = general_weight_update(w, g, f);
      const Vec lhs = matvec(w + dw, f);
      const Vec rhs = matvec(w, g);
      CHECK(max_abs(sub(lhs, rhs)) <= 1e-12 * std::max(1.0, max_abs(rhs)));
      const UpdateRank r = update_rank(dw);
      CHECK(r.ratio <= 1e-10);
    }
  }
  SUBCASE("degenerate query") {
    CHECK_THROWS_AS(general_weight_update(Matrix::identity(2), Vec{1, 1}, Vec{0, 1e-7}),
                    DegenerateQueryError);
    CHECK_THROWS_AS(general_weight_update(Matrix::identity(2), Vec{1, 1}, Vec{0, 0}),
                    DegenerateQueryError);
  }
  SUBCASE("shape mismatch") {
    CHECK_THROWS_AS(general_weight_update(Matrix::identity(2), Vec{1, 1, 1}, Vec{1, 0}),
                    DimensionError);
  }
}

TEST_CASE("general_bias_update") {
  CHECK(general_bias_update(Vec{3, 4}, Vec{3, 4}) == Vec{0, 0});
  CHECK(general_bias_update(Vec{1, 2}, Vec{0, 2}) == Vec{1, 0});
  CHECK_THROWS_AS(general_bias_update(Vec{1, 2}, Vec{1}), DimensionError);
}

TEST_CASE("skip bias update is the attention delta plus the skip delta") {
  const ModelParams model = test::random_model(BlockVariant::Skip, 3, 3, 12, 3, 1);
  RngState rng(4);
  const Matrix input = test::random_matrix(rng, 3, 6);
  const ForwardTrace t = block_forward(model.blocks[0], BlockVariant::Skip, input);
  const auto updates = extract_updates(t, model.blocks[0].mlp, BlockVariant::Skip, 1);
  const Vec a_query = contextual_layer_query_only(model.blocks[0].attention, t.query);
  for (const auto& u : updates) {
    const Vec delta_a = sub(t.attn_out.col(u.token - 1), a_query);
    const Vec delta_z = sub(input.col(u.token - 1), t.query);
    CHECK(max_abs(sub(u.delta_b, add(delta_a, delta_z))) <= 1e-14);
  }
}

TEST_CASE("plain variant recovers the last-token update of the first block") {
  const ModelParams model = test::random_model(BlockVariant::Plain, 5, 3, 12, 3, 2);
  RngState rng(6);
  const Matrix input = test::random_matrix(rng, 3, 9);
  const SequenceTrace trace = sequence_forward(model, input);
  const auto updates = extract_updates(trace[0], model.blocks[0].mlp, BlockVariant::Plain, 1);
  const ImplicitUpdate& last = updates.back();
  CHECK(last.token == 9);
  CHECK(last.block == 1);
  for (double v : last.delta_b) CHECK(v == 0.0);

  // W dA_N A(x)^T / ||A(x)||^2 through the reference attention.
  const auto& att = model.blocks[0].attention;
  const auto cols = test::ref::columns(input);
  const Vec a_ctx = test::ref::attention_at(att, cols, 8);
  const Vec a_query = test::ref::attention_at(att, {cols.back()}, 0);
  Vec u = test::ref::mat_vec(model.blocks[0].mlp.w, sub(a_ctx, a_query));
  const double norm2 = squared_norm(a_query);
  for (double& v : u) v /= norm2;
  const Matrix direct = outer(u, a_query);
  CHECK(max_abs((direct - last.delta_w).data()) <= 1e-12);
}

TEST_CASE("single-token sequences give zero updates") {
  for (auto variant : kAllVariants) {
    CAPTURE(to_string(variant));
    const ModelParams model = test::random_model(variant, 7);
    RngState rng(8);
    const Matrix input = test::random_matrix(rng, 3, 1);
    const SequenceTrace trace = sequence_forward(model, input);
    for (std::size_t l = 0; l < model.layers(); ++l) {
      const auto updates = extract_updates(trace[l], model.blocks[l].mlp, variant, l + 1);
      REQUIRE(updates.size() == 1);
      CHECK(max_abs(updates[0].delta_w.data()) <= 1e-15);
      CHECK(max_abs(updates[0].delta_b) <= 1e-15);
    }
  }
}

TEST_CASE("pre-ln bias update differs from the MLP-input difference") {
  const ModelParams model = test::random_model(BlockVariant::PreLn, 9, 3, 12, 3, 1);
  RngState rng(10);
  const Matrix input = test::random_matrix(rng, 3, 5);
  const ForwardTrace t = block_forward(model.blocks[0], BlockVariant::PreLn, input);
  const auto updates = extract_updates(t, model.blocks[0].mlp, BlockVariant::PreLn, 1);
  for (std::size_t i = 0; i + 1 < updates.size(); ++i) {
    const Vec g_minus_f = sub(t.g.col(i), t.f);
    CHECK(max_abs(sub(updates[i].delta_b, g_minus_f)) > 1e-6);
  }
}

TEST_CASE("updates satisfy the defining identity and are rank one for every variant") {
  for (auto variant : kAllVariants) {
    CAPTURE(to_string(variant));
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      const ModelParams model = test::random_model(variant, 100 + seed, 3, 12, 3, 3);
      RngState rng(200 + seed);
      const Matrix input = test::random_matrix(rng, 3, 12);
      const SequenceTrace trace = sequence_forward(model, input);
      for (std::size_t l = 0; l < model.layers(); ++l) {
        const Matrix& w = model.blocks[l].mlp.w;
        const auto updates = extract_updates(trace[l], model.blocks[l].mlp, variant, l + 1);
        for (const auto& u : updates) {
          const Vec wg = matvec(w, trace[l].g.col(u.token - 1));
          const Vec lhs = matvec(w + u.delta_w, trace[l].f);
          CHECK(max_abs(sub(lhs, wg)) <= 1e-11 * std::max(1.0, max_abs(wg)));
          const UpdateRank r = update_rank(u.delta_w);
          if (r.sigma1 > 1e-14) CHECK(r.ratio <= 1e-10);
          // every row of the update lies along f
          for (std::size_t row = 0; row < u.delta_w.rows(); ++row) {
            const auto rv = u.delta_w.row(row);
            if (max_abs(rv) < 1e-14) continue;
            CHECK(std::abs(std::abs(cosine(rv, trace[l].f)) - 1.0) <= 1e-10);
          }
        }
        const StackedUpdate s = stack_updates(updates, w, model.blocks[l].mlp.b_out);
        const UpdateRank r = update_rank(s.delta_weights);
        if (r.sigma1 > 1e-14) CHECK(r.ratio <= 1e-10);
      }
    }
  }
}

TEST_CASE("stack_updates") {
  const ModelParams model = test::random_model(BlockVariant::Skip, 11, 3, 12, 3, 1);
  const MlpParams& mlp = model.blocks[0].mlp;
  RngState rng(12);

  SUBCASE("single token") {
    const Matrix input = test::random_matrix(rng, 3, 1);
    const auto updates = extract_updates(block_forward(model.blocks[0], BlockVariant::Skip, input),
                                         mlp, BlockVariant::Skip, 1);
    const StackedUpdate s = stack_updates(updates, mlp.w, mlp.b_out);
    CHECK(s.delta_weights == updates[0].delta_w);
    CHECK(s.weights == mlp.w);
  }

  SUBCASE("layout") {
    const Matrix input = test::random_matrix(rng, 3, 6);
    const auto updates = extract_updates(block_forward(model.blocks[0], BlockVariant::Skip, input),
                                         mlp, BlockVariant::Skip, 1);
    const StackedUpdate s = stack_updates(updates, mlp.w, mlp.b_out);
    CHECK(s.weights.rows() == 12 * 6);
    CHECK(s.delta_biases.size() == 3 * 6);
    CHECK(s.biases.size() == 3 * 6);
    for (std::size_t i = 0; i < 6; ++i)
      for (std::size_t r = 0; r < 12; ++r)
        for (std::size_t c = 0; c < 3; ++c) {
          CHECK(s.weights(i * 12 + r, c) == mlp.w(r, c));
          CHECK(s.delta_weights(i * 12 + r, c) == updates[i].delta_w(r, c));
        }
  }

  SUBCASE("shape mismatch") {
    ImplicitUpdate bad{1, 1, Matrix(2, 3), Vec(3)};
    CHECK_THROWS_AS(stack_updates(std::span(&bad, 1), mlp.w, mlp.b_out), DimensionError);
    CHECK_THROWS_AS(stack_updates({}, mlp.w, mlp.b_out), DimensionError);
  }
}

TEST_CASE("update_rank") {
  const UpdateRank zero = update_rank(Matrix(4, 3));
  CHECK(zero.sigma1 == 0.0);
  CHECK(zero.sigma2 == 0.0);
  CHECK(zero.ratio == 0.0);

  RngState rng(13);
  const UpdateRank r1 = update_rank(outer(test::random_vec(rng, 9), test::random_vec(rng, 3)));
  CHECK(r1.ratio <= 1e-10);

  CHECK_THROWS_AS(update_rank(Matrix{{INFINITY}}), NonFiniteError);
}
