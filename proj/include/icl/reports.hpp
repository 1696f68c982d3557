#pragma once

#include <span>
#include <string>

#include "icl/csv.hpp"
#include "icl/harness.hpp"
#include "icl/implicit_update.hpp"
#include "icl/train.hpp"

namespace icl {

// Column layouts of the CSV artifacts (after the provenance comment line):
//   losses.csv        step,train_loss,test_loss,seed,variant
//   test_eval.csv     step,empirical_loss,theoretical_loss,seed,variant
//   msd.csv           seed,variant,step,block,msd
//   align_tokens.csv  seed,step,block,task,i,j,da
//   align_blocks.csv  seed,step,task,l,k,da
//   sweep.csv         axis,value,step,empirical_loss,theoretical_loss
//   updates.csv       seed,step,variant,block,token,sigma1,sigma2,ratio,delta_b_norm
// Tokens, blocks and tasks are 1-based except `task`, which is the 0-based
// index into the evaluated batch. An empty da cell marks a zero update.

CsvTable loss_table(std::span<const LossRecord> log, BlockVariant variant, const Provenance& prov);
CsvTable test_eval_table(std::span<const TestEvaluation> evals, BlockVariant variant,
                         const Provenance& prov);
CsvTable msd_table(std::span<const MsdReport> reports, const Provenance& prov);
CsvTable token_alignment_table(std::span<const AlignmentMatrix> matrices, const Provenance& prov);
CsvTable block_alignment_table(std::span<const AlignmentMatrix> matrices, const Provenance& prov);
CsvTable sweep_table(std::span<const SweepRow> rows, const Provenance& prov);

struct UpdateRow {
  std::size_t step = 0;
  BlockVariant variant = BlockVariant::Skip;
  std::size_t block = 1;
  std::size_t token = 1;
  UpdateRank rank;
  double delta_b_norm = 0.0;
};
CsvTable update_table(std::span<const UpdateRow> rows, const Provenance& prov);

}  // namespace icl
