// iclab: train contextual-block transformers on in-context linear regression
// and verify the implicit weight-update equivalence.

#include <CLI11.hpp>

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <map>
#include <thread>

#include "icl/checkpoint.hpp"
#include "icl/config.hpp"
#include "icl/harness.hpp"
#include "icl/implicit_update.hpp"
#include "icl/reports.hpp"
#include "icl/taskgen.hpp"
#include "icl/train.hpp"

using namespace icl;
namespace fs = std::filesystem;

namespace {

enum Exit : int {
  kOk = 0,
  kUsage = 2,
  kBadConfig = 3,
  kMissingInput = 4,
  kNumerical = 5,
  kIo = 6,
};

struct CliError : std::runtime_error {
  int code;
  CliError(int c, const std::string& msg) : std::runtime_error(msg), code(c) {}
};

struct KeyFlag {
  const char* key;
  const char* flag;
  const char* help;
};

// Every config key is settable from the command line.
constexpr KeyFlag kKeyFlags[] = {
    {"seed", "--seed", "top-level RNG seed"},
    {"variant", "--variant", "block variant: plain, dherin-skip, skip, pre-ln"},
    {"layers", "--layers", "number of blocks L"},
    {"input_dim", "--input-dim", "input dimension d_x (model width is d_x + 1)"},
    {"seq_len", "--seq-len", "sequence length N, query included"},
    {"tasks", "--tasks", "batch size B (tasks per batch)"},
    {"heads", "--heads", "attention heads H, must divide the width"},
    {"hidden", "--hidden", "MLP hidden width h, or 'auto' for 4 * width"},
    {"steps", "--steps", "Adam steps"},
    {"lr", "--lr", "Adam learning rate"},
    {"eval_steps", "--eval-steps", "comma-separated steps for test evaluation and checkpoints"},
    {"test_repeats", "--test-repeats", "fresh test batches of size B per evaluation"},
    {"ln_eps", "--ln-eps", "layer-norm epsilon"},
    {"output_dir", "--out", "output directory (default: $ICLAB_OUT_DIR, else 'out')"},
    {"sweep_axis", "--sweep-axis", "sweep axis: tasks, seq-len, input-dim"},
    {"sweep_values", "--sweep-values", "comma-separated sweep values"},
    {"align_tasks", "--task", "comma-separated 0-based task indices for align and update dumps"},
};

struct Options {
  std::string config_path;
  std::map<std::string, std::string> values;
  std::map<const CLI::App*, std::map<std::string, CLI::Option*>> flags;
  const CLI::App* active = nullptr;
  unsigned threads = 1;
  std::vector<std::string> checkpoints;
  bool dump_updates = false;
};

void add_common(CLI::App* cmd, Options& o) {
  cmd->add_option("--config", o.config_path, "experiment config file (key = value lines)");
  for (const auto& kf : kKeyFlags) o.flags[cmd][kf.key] = cmd->add_option(kf.flag, o.values[kf.key], kf.help);
  cmd->add_option("--threads", o.threads, "worker threads for gradient evaluation")
      ->check(CLI::PositiveNumber);
}

// defaults < $ICLAB_OUT_DIR < config file < flags. Without --config, a
// checkpoint's embedded run config stands in for the file.
ExperimentConfig resolve_config(const Options& o, const std::string* embedded = nullptr) {
  ExperimentConfig c;
  if (const char* env = std::getenv("ICLAB_OUT_DIR"); env && *env) c.output_dir = env;
  const std::string env_dir = c.output_dir;
  if (!o.config_path.empty()) {
    if (!fs::exists(o.config_path)) throw CliError(kMissingInput, "config file not found: " + o.config_path);
    c = load_config(o.config_path);
  } else if (embedded && !embedded->empty()) {
    c = parse_config(*embedded);
  }
  // a file without output_dir keeps the environment default
  if (c.output_dir == ExperimentConfig{}.output_dir) c.output_dir = env_dir;
  for (const auto& [key, opt] : o.flags.at(o.active))
    if (opt->count() > 0) set_config_value(c, key, o.values.at(key));
  validate(c);
  return c;
}

bool flag_given(const Options& o, const std::string& key) { return o.flags.at(o.active).at(key)->count() > 0; }

Provenance provenance(const ExperimentConfig& c) { return {c.seed, config_hash(c)}; }

// Artifacts derived from checkpoints trace back to the run that produced them.
Provenance provenance(const ExperimentConfig& c, const Checkpoint& ck) {
  return ck.config_hash.empty() ? provenance(c) : Provenance{ck.seed, ck.config_hash};
}

void write_csv(const CsvTable& t, const fs::path& path) {
  try {
    t.write(path);
  } catch (const std::exception& e) {
    throw CliError(kIo, "cannot write " + path.string() + ": " + e.what());
  }
  std::cerr << "wrote " << path.string() << "\n";
}

std::vector<Checkpoint> load_checkpoints(const Options& o) {
  if (o.checkpoints.empty()) throw CliError(kUsage, "at least one --checkpoint is required");
  for (const auto& p : o.checkpoints)
    if (!fs::exists(p)) throw CliError(kMissingInput, "checkpoint not found: " + p);
  std::vector<Checkpoint> out;
  for (const auto& p : o.checkpoints) {
    try {
      out.push_back(read_checkpoint(p));
    } catch (const FormatError& e) {
      throw CliError(kMissingInput, "unreadable checkpoint " + p + ": " + e.what());
    }
  }
  return out;
}

// The evaluation batch for a checkpoint: the first test batch of its run.
TaskBatch evaluation_batch(const Checkpoint& ck, const ExperimentConfig& c) {
  RngState rng = RngState(ck.seed).substream("test-tasks");
  return sample_tasks(rng, c.tasks, c.seq_len, ck.params.width() - 1);
}

void check_variant(const Options& o, const ExperimentConfig& c, const Checkpoint& ck,
                   const std::string& path) {
  if (flag_given(o, "variant") && ck.params.variant != c.variant)
    throw CliError(kBadConfig, "checkpoint " + path + " holds a " +
                                   std::string(to_string(ck.params.variant)) + " model, not " +
                                   std::string(to_string(c.variant)));
}

int run_train(const Options& o) {
  const ExperimentConfig c = resolve_config(o);
  const fs::path out = c.output_dir;
  const TrainConfig tc = to_train_config(c, o.threads);
  const TrainResult r = train(tc, [](const TestEvaluation& ev) {
    std::cerr << "step " << ev.step << "  test loss " << format_double(ev.empirical) << "\n";
  });

  const Provenance prov = provenance(c);
  const std::string text = to_text(c);
  try {
    save_config(c, out / "config.cfg");
    for (const auto& [step, params] : r.checkpoints)
      write_checkpoint({params, c.seed, step, prov.config_hash, text},
                       out / ("ckpt_step_" + std::to_string(step) + ".json"));
  } catch (const CliError&) {
    throw;
  } catch (const std::exception& e) {
    throw CliError(kIo, e.what());
  }
  write_csv(loss_table(r.log, c.variant, prov), out / "losses.csv");
  write_csv(test_eval_table(r.evaluations, c.variant, prov), out / "test_eval.csv");
  return kOk;
}

int run_verify(const Options& o) {
  const auto ckpts = load_checkpoints(o);
  const ExperimentConfig c = resolve_config(o, &ckpts.front().config_text);
  std::vector<MsdReport> reports;
  std::vector<UpdateRow> update_rows;
  for (std::size_t k = 0; k < ckpts.size(); ++k) {
    const Checkpoint& ck = ckpts[k];
    check_variant(o, c, ck, o.checkpoints[k]);
    const TaskBatch batch = evaluation_batch(ck, c);
    reports.push_back(verify_equivalence(ck.params, batch.sequences, {ck.seed, ck.step}));
    for (std::size_t l = 0; l < ck.params.layers(); ++l)
      std::cerr << o.checkpoints[k] << "  block " << l + 1 << "  msd "
                << format_double(reports.back().msd[l]) << "\n";

    if (!o.dump_updates) continue;
    const std::size_t task = c.align_tasks.front();
    const SequenceTrace trace = sequence_forward(ck.params, batch.sequences.at(task));
    for (std::size_t l = 0; l < ck.params.layers(); ++l) {
      const auto updates = extract_updates(trace[l], ck.params.blocks[l].mlp, ck.params.variant, l + 1);
      for (const auto& u : updates) {
        const double bn = std::sqrt(squared_norm(u.delta_b));
        update_rows.push_back({ck.step, ck.params.variant, u.block, u.token, update_rank(u.delta_w), bn});
      }
    }
  }
  const Provenance prov = provenance(c, ckpts.front());
  write_csv(msd_table(reports, prov), fs::path(c.output_dir) / "msd.csv");
  if (o.dump_updates) write_csv(update_table(update_rows, prov), fs::path(c.output_dir) / "updates.csv");
  return kOk;
}

int run_align(const Options& o) {
  const auto ckpts = load_checkpoints(o);
  const ExperimentConfig c = resolve_config(o, &ckpts.front().config_text);
  std::vector<AlignmentMatrix> tokens, blocks;
  for (std::size_t k = 0; k < ckpts.size(); ++k) {
    const Checkpoint& ck = ckpts[k];
    check_variant(o, c, ck, o.checkpoints[k]);
    const TaskBatch batch = evaluation_batch(ck, c);
    for (std::size_t task : c.align_tasks) {
      const RunInfo run{ck.seed, ck.step};
      for (auto& m : token_alignment_matrix(ck.params, batch.sequences[task], task, run))
        tokens.push_back(std::move(m));
      if (ck.params.layers() >= 2)
        blocks.push_back(block_alignment_matrix(ck.params, batch.sequences[task], task, run));
    }
  }
  const Provenance prov = provenance(c, ckpts.front());
  write_csv(token_alignment_table(tokens, prov), fs::path(c.output_dir) / "align_tokens.csv");
  write_csv(block_alignment_table(blocks, prov), fs::path(c.output_dir) / "align_blocks.csv");
  return kOk;
}

int run_sweep(const Options& o) {
  const ExperimentConfig c = resolve_config(o);
  const SweepResult r = sweep(c.sweep_axis, c.sweep_values, to_train_config(c, o.threads));
  for (const auto& n : r.notes) std::cerr << "note: " << n << "\n";
  for (const auto& f : r.failures) std::cerr << "failed: " << f << "\n";
  write_csv(sweep_table(r.rows, provenance(c)), fs::path(c.output_dir) / "sweep.csv");
  return kOk;
}

// Tiny model: L = 2, d = 3, h = 4, H = 3, N = 5, B = 2.
int run_gradcheck(const Options& o) {
  const ExperimentConfig c = resolve_config(o);
  std::vector<BlockVariant> variants(std::begin(kAllVariants), std::end(kAllVariants));
  if (flag_given(o, "variant")) variants = {c.variant};
  constexpr double kTolerance = 1e-6;
  bool ok = true;
  for (auto variant : variants) {
    const RngState root(c.seed);
    RngState init = root.substream("init");
    const ModelParams params = init_model({variant, 3, 4, 3, 2, c.ln_eps}, init);
    RngState tasks = root.substream("train-tasks");
    const TaskBatch batch = sample_tasks(tasks, 2, 5, 2);
    const GradCheckReport r = gradient_check(params, batch.sequences, batch.targets);
    const bool pass = r.max_rel_error <= kTolerance;
    ok = ok && pass;
    std::printf("%-12s %s  max_rel_error=%.3e  checked=%zu  worst=%s[%zu] analytic=%.12e numeric=%.12e\n",
                std::string(to_string(variant)).c_str(), pass ? "PASS" : "FAIL", r.max_rel_error,
                r.checked, r.worst.tensor.c_str(), r.worst.index, r.worst.analytic, r.worst.numeric);
  }
  return ok ? kOk : kNumerical;
}

int run_dump_config(const Options& o) {
  std::cout << to_text(resolve_config(o));
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"iclab: implicit weight updates of contextual transformer blocks"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "help for every subcommand");

  Options o;
  auto* train_cmd = app.add_subcommand("train", "train a model; writes checkpoints, losses.csv, test_eval.csv");
  auto* verify_cmd = app.add_subcommand("verify", "per-block equivalence MSD of checkpoints; writes msd.csv");
  auto* align_cmd = app.add_subcommand("align", "directional alignment of updates; writes align_tokens.csv, align_blocks.csv");
  auto* sweep_cmd = app.add_subcommand("sweep", "train along one axis; writes sweep.csv");
  auto* grad_cmd = app.add_subcommand("gradcheck", "finite-difference gradient check on the tiny model");
  auto* dump_cmd = app.add_subcommand("dump-config", "print the resolved config");
  const std::string footer =
      "Settings resolve as: built-in defaults, then $ICLAB_OUT_DIR, then --config, then flags.\n"
      "Exit codes: 0 ok, 2 usage, 3 invalid config, 4 missing or unreadable input,\n"
      "5 numerical failure (divergence, degenerate query, failed gradcheck), 6 I/O failure.";
  app.footer(footer);
  for (auto* cmd : {train_cmd, verify_cmd, align_cmd, sweep_cmd, grad_cmd, dump_cmd}) {
    add_common(cmd, o);
    cmd->footer(footer);
  }
  for (auto* cmd : {verify_cmd, align_cmd})
    cmd->add_option("--checkpoint", o.checkpoints, "checkpoint file (repeatable)");
  verify_cmd->add_flag("--updates", o.dump_updates, "also write updates.csv for the first --task");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsage;
  }
  if (o.threads == 0) o.threads = 1;
  o.active = app.get_subcommands().front();

  try {
    if (*train_cmd) return run_train(o);
    if (*verify_cmd) return run_verify(o);
    if (*align_cmd) return run_align(o);
    if (*sweep_cmd) return run_sweep(o);
    if (*grad_cmd) return run_gradcheck(o);
    if (*dump_cmd) return run_dump_config(o);
  } catch (const CliError& e) {
    std::cerr << "iclab: " << e.what() << "\n";
    return e.code;
  } catch (const ConfigError& e) {
    std::cerr << "iclab: invalid config: " << e.what() << "\n";
    return kBadConfig;
  } catch (const DivergenceError& e) {
    std::cerr << "iclab: training diverged: " << e.what() << "\n";
    return kNumerical;
  } catch (const DegenerateQueryError& e) {
    std::cerr << "iclab: degenerate query: " << e.what() << "\n";
    return kNumerical;
  } catch (const NonFiniteError& e) {
    std::cerr << "iclab: non-finite value: " << e.what() << "\n";
    return kNumerical;
  } catch (const DimensionError& e) {
    std::cerr << "iclab: shape mismatch: " << e.what() << "\n";
    return kBadConfig;
  } catch (const std::out_of_range& e) {
    std::cerr << "iclab: " << e.what() << "\n";
    return kBadConfig;
  } catch (const std::exception& e) {
    std::cerr << "iclab: I/O failure: " << e.what() << "\n";
    return kIo;
  }
  return kUsage;
}
