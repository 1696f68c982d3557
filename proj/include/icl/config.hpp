#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "icl/harness.hpp"
#include "icl/model.hpp"
#include "icl/train.hpp"

namespace icl {

inline constexpr int kConfigVersion = 1;

// Defaults reproduce the reference setup: B = 128, N = 51, d_x = 2, L = 5,
// H = 3, 100 Adam steps at lr 5e-2.
struct ExperimentConfig {
  std::uint64_t seed = 0;
  BlockVariant variant = BlockVariant::Skip;
  std::size_t layers = 5;
  std::size_t input_dim = 2;
  std::size_t seq_len = 51;
  std::size_t tasks = 128;
  std::size_t heads = 3;
  std::size_t hidden = 0;  // 0 ("auto" in files): 4 * (input_dim + 1)
  std::size_t steps = 100;
  double lr = 5e-2;
  std::vector<std::size_t> eval_steps = {0, 25, 50, 75, 100};
  std::size_t test_repeats = 1;
  double ln_eps = 1e-5;
  std::string output_dir = "out";
  SweepAxis sweep_axis = SweepAxis::Tasks;
  std::vector<std::size_t> sweep_values = {8, 32, 128, 512};
  std::vector<std::size_t> align_tasks = {0};

  bool operator==(const ExperimentConfig&) const = default;

  std::size_t width() const { return input_dim + 1; }
  std::size_t resolved_hidden() const { return hidden == 0 ? 4 * width() : hidden; }
};

// Throws ConfigError naming the offending key.
void validate(const ExperimentConfig& config);

// Plain-text "key = value" document, one key per line, '#' comments. Lists
// are comma separated. `version`, `seed` and `variant` are required; other
// keys fall back to the defaults. Unknown keys are rejected.
std::string to_text(const ExperimentConfig& config);
ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config(const std::filesystem::path& path);
void save_config(const ExperimentConfig& config, const std::filesystem::path& path);

// Sets one key from its textual value (shared by the file parser and CLI overrides).
void set_config_value(ExperimentConfig& config, const std::string& key, const std::string& value);

// FNV-1a over the canonical text without output_dir, as 16 hex digits.
std::string config_hash(const ExperimentConfig& config);

TrainConfig to_train_config(const ExperimentConfig& config, unsigned threads = 1);

}  // namespace icl
