#include "icl/config.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "icl/csv.hpp"
#include "icl/rng.hpp"

namespace icl {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::uint64_t parse_u64(const std::string& key, const std::string& value) {
  std::uint64_t out = 0;
  const auto* end = value.data() + value.size();
  const auto [ptr, ec] = std::from_chars(value.data(), end, out);
  if (ec != std::errc() || ptr != end || value.empty())
    throw ConfigError(key + ": expected a non-negative integer, got '" + value + "'");
  return out;
}

double parse_double(const std::string& key, const std::string& value) {
  double out = 0.0;
  const auto* end = value.data() + value.size();
  const auto [ptr, ec] = std::from_chars(value.data(), end, out);
  if (ec != std::errc() || ptr != end || value.empty())
    throw ConfigError(key + ": expected a number, got '" + value + "'");
  return out;
}

std::vector<std::size_t> parse_list(const std::string& key, const std::string& value) {
  std::vector<std::size_t> out;
  std::stringstream ss(value);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_u64(key, trim(item)));
  return out;
}

std::string shortest(double v) {
  char buf[32];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

std::string join(const std::vector<std::size_t>& values) {
  std::string out;
  for (std::size_t k = 0; k < values.size(); ++k) {
    if (k) out += ',';
    out += std::to_string(values[k]);
  }
  return out;
}

std::string canonical(const ExperimentConfig& c, bool with_output_dir) {
  std::ostringstream os;
  os << "version = " << kConfigVersion << '\n'
     << "seed = " << c.seed << '\n'
     << "variant = " << to_string(c.variant) << '\n'
     << "layers = " << c.layers << '\n'
     << "input_dim = " << c.input_dim << '\n'
     << "seq_len = " << c.seq_len << '\n'
     << "tasks = " << c.tasks << '\n'
     << "heads = " << c.heads << '\n'
     << "hidden = " << (c.hidden == 0 ? std::string("auto") : std::to_string(c.hidden)) << '\n'
     << "steps = " << c.steps << '\n'
     << "lr = " << shortest(c.lr) << '\n'
     << "eval_steps = " << join(c.eval_steps) << '\n'
     << "test_repeats = " << c.test_repeats << '\n'
     << "ln_eps = " << shortest(c.ln_eps) << '\n';
  if (with_output_dir) os << "output_dir = " << c.output_dir << '\n';
  os << "sweep_axis = " << to_string(c.sweep_axis) << '\n'
     << "sweep_values = " << join(c.sweep_values) << '\n'
     << "align_tasks = " << join(c.align_tasks) << '\n';
  return os.str();
}

}  // namespace

void validate(const ExperimentConfig& c) {
  auto positive = [](const char* key, std::size_t v) {
    if (v < 1) throw ConfigError(std::string(key) + ": must be >= 1");
  };
  positive("layers", c.layers);
  positive("input_dim", c.input_dim);
  positive("seq_len", c.seq_len);
  positive("tasks", c.tasks);
  positive("heads", c.heads);
  positive("test_repeats", c.test_repeats);
  if (c.width() % c.heads != 0)
    throw ConfigError("heads: must divide the model width input_dim + 1 = " + std::to_string(c.width()));
  if (!(c.lr > 0.0) || !std::isfinite(c.lr)) throw ConfigError("lr: must be > 0");
  if (!(c.ln_eps > 0.0) || !std::isfinite(c.ln_eps)) throw ConfigError("ln_eps: must be > 0");
  if (c.sweep_values.empty()) throw ConfigError("sweep_values: must not be empty");
  for (auto v : c.sweep_values)
    if (v < 1) throw ConfigError("sweep_values: entries must be >= 1");
  if (c.align_tasks.empty()) throw ConfigError("align_tasks: must not be empty");
  for (auto t : c.align_tasks)
    if (t >= c.tasks) throw ConfigError("align_tasks: task index " + std::to_string(t) + " >= tasks");
  if (c.output_dir.empty()) throw ConfigError("output_dir: must not be empty");
}

void set_config_value(ExperimentConfig& c, const std::string& key, const std::string& value) {
  try {
    if (key == "version") {
      if (parse_u64(key, value) != kConfigVersion)
        throw ConfigError("version: unsupported config version " + value);
    } else if (key == "seed") c.seed = parse_u64(key, value);
    else if (key == "variant") c.variant = parse_variant(value);
    else if (key == "layers") c.layers = parse_u64(key, value);
    else if (key == "input_dim") c.input_dim = parse_u64(key, value);
    else if (key == "seq_len") c.seq_len = parse_u64(key, value);
    else if (key == "tasks") c.tasks = parse_u64(key, value);
    else if (key == "heads") c.heads = parse_u64(key, value);
    else if (key == "hidden") c.hidden = value == "auto" ? 0 : parse_u64(key, value);
    else if (key == "steps") c.steps = parse_u64(key, value);
    else if (key == "lr") c.lr = parse_double(key, value);
    else if (key == "eval_steps") c.eval_steps = parse_list(key, value);
    else if (key == "test_repeats") c.test_repeats = parse_u64(key, value);
    else if (key == "ln_eps") c.ln_eps = parse_double(key, value);
    else if (key == "output_dir") c.output_dir = value;
    else if (key == "sweep_axis") c.sweep_axis = parse_sweep_axis(value);
    else if (key == "sweep_values") c.sweep_values = parse_list(key, value);
    else if (key == "align_tasks") c.align_tasks = parse_list(key, value);
    else throw ConfigError("unknown key '" + key + "'");
  } catch (const std::invalid_argument& e) {
    throw ConfigError(key + ": " + e.what());
  }
}

std::string to_text(const ExperimentConfig& config) {
  return "# iclab experiment config\n" + canonical(config, true);
}

ExperimentConfig parse_config(const std::string& text) {
  ExperimentConfig c;
  std::set<std::string> seen;
  std::istringstream in(text);
  std::string raw;
  for (std::size_t line_no = 1; std::getline(in, raw); ++line_no) {
    const std::string line = trim(raw.substr(0, raw.find('#')));
    if (line.empty()) continue;
    const auto where = "line " + std::to_string(line_no) + ": ";
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(where + "expected 'key = value'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (!seen.insert(key).second) throw ConfigError(where + "duplicate key '" + key + "'");
    try {
      set_config_value(c, key, value);
    } catch (const ConfigError& e) {
      throw ConfigError(where + e.what());
    }
  }
  for (const char* required : {"version", "seed", "variant"})
    if (!seen.count(required)) throw ConfigError(std::string("missing required key '") + required + "'");
  validate(c);
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return parse_config(ss.str());
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

void save_config(const ExperimentConfig& config, const std::filesystem::path& path) {
  validate(config);
  write_file_atomic(path, to_text(config));
}

std::string config_hash(const ExperimentConfig& config) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(fnv1a64(canonical(config, false))));
  return buf;
}

TrainConfig to_train_config(const ExperimentConfig& c, unsigned threads) {
  validate(c);
  TrainConfig t;
  t.shape.variant = c.variant;
  t.shape.width = c.width();
  t.shape.hidden = c.hidden;
  t.shape.heads = c.heads;
  t.shape.layers = c.layers;
  t.shape.ln_eps = c.ln_eps;
  t.tasks = c.tasks;
  t.seq_len = c.seq_len;
  t.input_dim = c.input_dim;
  t.steps = c.steps;
  t.adam.lr = c.lr;
  t.eval_steps = c.eval_steps;
  t.test_repeats = c.test_repeats;
  t.seed = c.seed;
  t.threads = threads;
  return t;
}

}  // namespace icl
