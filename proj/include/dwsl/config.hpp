#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>
#include <string>
#include <vector>

namespace dwsl {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Plain-text key-value config with [section] headers; '#' starts a comment.
// Keys are stored as "section.key".
inline std::map<std::string, std::string> parse_config_text(std::istream& is) {
  std::map<std::string, std::string> out;
  std::string line, section;
  int line_no = 0;
  auto trim = [](std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return std::string();
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
  };
  while (std::getline(is, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']')
        throw ConfigError("line " + std::to_string(line_no) + ": unterminated section");
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("line " + std::to_string(line_no) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw ConfigError("line " + std::to_string(line_no) + ": empty key");
    out[section.empty() ? key : section + "." + key] = value;
  }
  return out;
}

enum class Algorithm { kDwsl, kGcsl, kAwr, kExpectile, kDwslB };

inline std::string algorithm_name(Algorithm a) {
  switch (a) {
    case Algorithm::kDwsl: return "dwsl";
    case Algorithm::kGcsl: return "gcsl";
    case Algorithm::kAwr: return "awr";
    case Algorithm::kExpectile: return "expectile";
    case Algorithm::kDwslB: return "dwsl_b";
  }
  return "?";
}

inline Algorithm algorithm_from_name(const std::string& name) {
  if (name == "dwsl") return Algorithm::kDwsl;
  if (name == "gcsl") return Algorithm::kGcsl;
  if (name == "awr") return Algorithm::kAwr;
  if (name == "expectile") return Algorithm::kExpectile;
  if (name == "dwsl_b") return Algorithm::kDwslB;
  throw ConfigError("unknown algorithm: " + name);
}

// Resolved run configuration. Defaults follow the reference hyperparameters:
// alpha 1, beta 0.05, clip 10, unit n_step, eval every 2000 steps with 100
// episodes.
struct RunConfig {
  std::string dataset_path;
  std::string env_id;  // optional; must match the dataset header when set
  Algorithm algorithm = Algorithm::kDwsl;
  std::string backend = "tabular";  // tabular | mlp
  int n_step = 1;
  double alpha = 1.0;
  double beta = 0.05;
  double clip = 10.0;
  long steps = 20000;
  int batch = 256;
  double lr = 1e-3;
  std::uint64_t seed = 1;
  double tau = 0.7;
  std::vector<int> hidden = {64, 64};
  int target_update_period = 20;
  double polyak = 0.05;
  long eval_cadence = 2000;
  int eval_episodes = 100;
  std::uint64_t eval_seed = 1000000;
  std::string eval_strategy = "all_reachable";  // all_reachable | dataset_states
  std::string out_dir = "run";

  std::string echo() const {
    std::ostringstream os;
    os << "[run]\n"
       << "data = " << dataset_path << "\n"
       << "env = " << env_id << "\n"
       << "algorithm = " << algorithm_name(algorithm) << "\n"
       << "backend = " << backend << "\n"
       << "out_dir = " << out_dir << "\n"
       << "[binning]\n"
       << "n_step = " << n_step << "\n"
       << "[train]\n"
       << "alpha = " << alpha << "\nbeta = " << beta << "\nclip = " << clip
       << "\nsteps = " << steps << "\nbatch = " << batch << "\nlr = " << lr
       << "\nseed = " << seed << "\ntau = " << tau << "\nhidden =";
    for (int h : hidden) os << " " << h;
    os << "\n[dwsl_b]\n"
       << "target_update_period = " << target_update_period << "\npolyak = " << polyak
       << "\n[eval]\n"
       << "cadence = " << eval_cadence << "\nepisodes = " << eval_episodes
       << "\nseed = " << eval_seed << "\nstrategy = " << eval_strategy << "\n";
    return os.str();
  }
};

namespace detail {

inline double to_double(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    const double v = std::stod(value, &used);
    if (used != value.size()) throw std::invalid_argument(value);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("bad numeric value for " + key + ": " + value);
  }
}

inline long to_long(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    const long v = std::stol(value, &used);
    if (used != value.size()) throw std::invalid_argument(value);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("bad integer value for " + key + ": " + value);
  }
}

}  // namespace detail

// Builds a RunConfig from parsed key-value pairs; unknown keys are errors so
// typos cannot silently fall back to defaults.
inline RunConfig resolve_config(const std::map<std::string, std::string>& kv) {
  RunConfig cfg;
  for (const auto& [key, value] : kv) {
    if (key == "run.data") cfg.dataset_path = value;
    else if (key == "run.env") cfg.env_id = value;
    else if (key == "run.algorithm") cfg.algorithm = algorithm_from_name(value);
    else if (key == "run.backend") cfg.backend = value;
    else if (key == "run.out_dir") cfg.out_dir = value;
    else if (key == "binning.n_step") cfg.n_step = static_cast<int>(detail::to_long(key, value));
    else if (key == "train.alpha") cfg.alpha = detail::to_double(key, value);
    else if (key == "train.beta") cfg.beta = detail::to_double(key, value);
    else if (key == "train.clip") {
      cfg.clip = value == "none" ? std::numeric_limits<double>::infinity()
                                 : detail::to_double(key, value);
    } else if (key == "train.steps") cfg.steps = detail::to_long(key, value);
    else if (key == "train.batch") cfg.batch = static_cast<int>(detail::to_long(key, value));
    else if (key == "train.lr") cfg.lr = detail::to_double(key, value);
    else if (key == "train.seed") cfg.seed = static_cast<std::uint64_t>(detail::to_long(key, value));
    else if (key == "train.tau") cfg.tau = detail::to_double(key, value);
    else if (key == "train.hidden") {
      cfg.hidden.clear();
      std::istringstream hs(value);
      int h;
      while (hs >> h) cfg.hidden.push_back(h);
      if (cfg.hidden.empty()) throw ConfigError("train.hidden needs at least one size");
    } else if (key == "dwsl_b.target_update_period")
      cfg.target_update_period = static_cast<int>(detail::to_long(key, value));
    else if (key == "dwsl_b.polyak") cfg.polyak = detail::to_double(key, value);
    else if (key == "eval.cadence") cfg.eval_cadence = detail::to_long(key, value);
    else if (key == "eval.episodes") cfg.eval_episodes = static_cast<int>(detail::to_long(key, value));
    else if (key == "eval.seed") cfg.eval_seed = static_cast<std::uint64_t>(detail::to_long(key, value));
    else if (key == "eval.strategy") cfg.eval_strategy = value;
    else throw ConfigError("unknown config key: " + key);
  }
  return cfg;
}

// Range and consistency checks; runs before any training work starts.
inline void validate_config(const RunConfig& cfg) {
  if (cfg.dataset_path.empty()) throw ConfigError("run.data is required");
  if (!std::filesystem::exists(cfg.dataset_path))
    throw ConfigError("dataset file does not exist: " + cfg.dataset_path);
  if (cfg.backend != "tabular" && cfg.backend != "mlp")
    throw ConfigError("backend must be tabular or mlp");
  if (cfg.n_step < 1) throw ConfigError("n_step must be >= 1");
  if (cfg.algorithm == Algorithm::kDwslB && cfg.n_step != 1)
    throw ConfigError("dwsl_b requires n_step = 1");
  if (cfg.algorithm == Algorithm::kExpectile && !(cfg.tau > 0.5 && cfg.tau < 1.0))
    throw ConfigError("expectile tau must be in (0.5, 1)");
  if (cfg.algorithm == Algorithm::kExpectile && cfg.backend == "tabular")
    throw ConfigError("the expectile variant needs the mlp backend");
  if (!(cfg.alpha > 0.0)) throw ConfigError("alpha must be positive");
  if (!(cfg.beta > 0.0)) throw ConfigError("beta must be positive");
  if (!(cfg.clip >= 1.0)) throw ConfigError("clip must be >= 1 (or none)");
  if (cfg.steps < 1 || cfg.batch < 1) throw ConfigError("steps and batch must be positive");
  if (!(cfg.lr > 0.0)) throw ConfigError("lr must be positive");
  if (cfg.target_update_period < 1) throw ConfigError("target_update_period must be >= 1");
  if (!(cfg.polyak > 0.0 && cfg.polyak <= 1.0)) throw ConfigError("polyak must be in (0, 1]");
  if (cfg.eval_cadence < 1) throw ConfigError("eval.cadence must be >= 1");
  if (cfg.eval_episodes < 1) throw ConfigError("eval.episodes must be >= 1");
  if (cfg.eval_strategy != "all_reachable" && cfg.eval_strategy != "dataset_states")
    throw ConfigError("eval.strategy must be all_reachable or dataset_states");
  if (cfg.out_dir.empty()) throw ConfigError("run.out_dir is required");
}

inline RunConfig load_config(const std::string& path,
                             const std::map<std::string, std::string>& overrides = {}) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config: " + path);
  auto kv = parse_config_text(is);
  for (const auto& [k, v] : overrides) kv[k] = v;
  RunConfig cfg = resolve_config(kv);
  validate_config(cfg);
  return cfg;
}

}  // namespace dwsl
