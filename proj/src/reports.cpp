#include "icl/reports.hpp"

#include <cmath>

namespace icl {

namespace {

std::string str(std::size_t v) { return std::to_string(v); }
std::string str(BlockVariant v) { return std::string(to_string(v)); }

}  // namespace

CsvTable loss_table(std::span<const LossRecord> log, BlockVariant variant, const Provenance& prov) {
  CsvTable t({"step", "train_loss", "test_loss", "seed", "variant"}, prov);
  for (const auto& r : log)
    t.add_row({str(r.step), format_double(r.train_loss), format_optional(r.test_loss),
               std::to_string(prov.seed), str(variant)});
  return t;
}

CsvTable test_eval_table(std::span<const TestEvaluation> evals, BlockVariant variant,
                         const Provenance& prov) {
  CsvTable t({"step", "empirical_loss", "theoretical_loss", "seed", "variant"}, prov);
  for (const auto& e : evals)
    t.add_row({str(e.step), format_double(e.empirical), format_double(e.theoretical),
               std::to_string(prov.seed), str(variant)});
  return t;
}

CsvTable msd_table(std::span<const MsdReport> reports, const Provenance& prov) {
  CsvTable t({"seed", "variant", "step", "block", "msd"}, prov);
  for (const auto& r : reports)
    for (std::size_t l = 0; l < r.msd.size(); ++l)
      t.add_row({std::to_string(r.run.seed), str(r.variant), str(r.run.step), str(l + 1),
                 format_double(r.msd[l])});
  return t;
}

CsvTable token_alignment_table(std::span<const AlignmentMatrix> matrices, const Provenance& prov) {
  CsvTable t({"seed", "step", "block", "task", "i", "j", "da"}, prov);
  for (const auto& m : matrices)
    for (std::size_t i = 0; i < m.values.size(); ++i)
      for (std::size_t j = 0; j < m.values.size(); ++j)
        t.add_row({std::to_string(m.run.seed), str(m.run.step), str(m.block), str(m.task),
                   str(m.labels[i]), str(m.labels[j]), format_optional(m.values[i][j])});
  return t;
}

CsvTable block_alignment_table(std::span<const AlignmentMatrix> matrices, const Provenance& prov) {
  CsvTable t({"seed", "step", "task", "l", "k", "da"}, prov);
  for (const auto& m : matrices)
    for (std::size_t i = 0; i < m.values.size(); ++i)
      for (std::size_t j = 0; j < m.values.size(); ++j)
        t.add_row({std::to_string(m.run.seed), str(m.run.step), str(m.task), str(m.labels[i]),
                   str(m.labels[j]), format_optional(m.values[i][j])});
  return t;
}

CsvTable sweep_table(std::span<const SweepRow> rows, const Provenance& prov) {
  CsvTable t({"axis", "value", "step", "empirical_loss", "theoretical_loss"}, prov);
  for (const auto& r : rows)
    t.add_row({std::string(to_string(r.axis)), str(r.value), str(r.step), format_double(r.empirical),
               format_double(r.theoretical)});
  return t;
}

CsvTable update_table(std::span<const UpdateRow> rows, const Provenance& prov) {
  CsvTable t({"seed", "step", "variant", "block", "token", "sigma1", "sigma2", "ratio",
              "delta_b_norm"},
             prov);
  for (const auto& r : rows)
    t.add_row({std::to_string(prov.seed), str(r.step), str(r.variant), str(r.block), str(r.token),
               format_double(r.rank.sigma1), format_double(r.rank.sigma2),
               format_double(r.rank.ratio), format_double(r.delta_b_norm)});
  return t;
}

}  // namespace icl
