#include "tap/run_config.hpp"

#include <fstream>
#include <sstream>

#include "tap/strutil.hpp"

namespace tap {

namespace {

// Registry order is the canonical echo order.
const std::vector<std::pair<std::string, std::string>>& default_entries() {
  static const std::vector<std::pair<std::string, std::string>> defaults = {
      {"env.name", "pointreach"},
      {"env.state_dim", "8"},
      {"env.action_dim", "8"},
      {"env.horizon_max", "60"},
      {"env.gamma", "0.99"},
      {"env.deterministic", "false"},
      {"data.episodes", "150"},
      {"data.seed", "1"},
      {"data.modes", "4"},
      {"data.noise", "0.15"},
      {"data.stride", "4"},
      {"data.path", ""},
      {"data.generate", "true"},
      {"model.preset", "toy"},
      {"model.d_model", "128"},
      {"model.n_layers", "3"},
      {"model.n_heads", "4"},
      {"model.d_ff", "0"},
      {"model.dropout", "0.1"},
      {"model.codebook_size", "64"},
      {"model.latent_step", "3"},
      {"model.segment_len", "24"},
      {"model.commitment_weight", "0.25"},
      {"model.loss_weight_state", "1"},
      {"model.loss_weight_action", "1"},
      {"model.loss_weight_reward", "1"},
      {"model.loss_weight_rtg", "1"},
      {"model.condition_decoder_on_state", "true"},
      {"train.epochs", "10"},
      {"train.lr", "0.0002"},
      {"train.batch_size", "32"},
      {"train.seed", "1"},
      {"plan.horizon_steps", "15"},
      {"plan.samples", "64"},
      {"plan.beam_width", "64"},
      {"plan.expansion", "4"},
      {"plan.alpha", "0"},
      {"plan.beta", "0.05"},
      {"plan.temperature", "1"},
      {"plan.sample_source", "prior"},
      {"plan.search", "beam"},
      {"eval.episodes", "20"},
      {"eval.seed", "100"},
  };
  return defaults;
}

}  // namespace

RunConfig::RunConfig() : values_(default_entries()) {}

RunConfig RunConfig::from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open: " + path);
  RunConfig cfg;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = strutil::trim(line);
    if (line.empty()) continue;
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config: line " + std::to_string(line_no) +
                        " is not `key = value`: " + line);
    cfg.set(strutil::trim(line.substr(0, eq)), strutil::trim(line.substr(eq + 1)));
  }
  return cfg;
}

int RunConfig::find(const std::string& key) const {
  for (std::size_t i = 0; i < values_.size(); ++i)
    if (values_[i].first == key) return static_cast<int>(i);
  return -1;
}

void RunConfig::set(const std::string& key, const std::string& value) {
  const int idx = find(key);
  if (idx < 0) throw ConfigError("config: unknown key '" + key + "'");
  values_[static_cast<std::size_t>(idx)].second = value;
}

bool RunConfig::has(const std::string& key) const { return find(key) >= 0; }

std::string RunConfig::get_string(const std::string& key) const {
  const int idx = find(key);
  if (idx < 0) throw ConfigError("config: unknown key '" + key + "'");
  return values_[static_cast<std::size_t>(idx)].second;
}

int RunConfig::get_int(const std::string& key) const {
  try {
    return strutil::parse_int(get_string(key));
  } catch (const ParseError& e) {
    throw ConfigError("config: key '" + key + "': " + e.what());
  }
}

float RunConfig::get_float(const std::string& key) const {
  try {
    return strutil::parse_float(get_string(key));
  } catch (const ParseError& e) {
    throw ConfigError("config: key '" + key + "': " + e.what());
  }
}

bool RunConfig::get_bool(const std::string& key) const {
  try {
    return strutil::parse_bool(get_string(key));
  } catch (const ParseError& e) {
    throw ConfigError("config: key '" + key + "': " + e.what());
  }
}

std::uint64_t RunConfig::get_u64(const std::string& key) const {
  try {
    return strutil::parse_u64(get_string(key));
  } catch (const ParseError& e) {
    throw ConfigError("config: key '" + key + "': " + e.what());
  }
}

EnvSpec RunConfig::env_spec() const {
  EnvSpec spec;
  spec.name = get_string("env.name");
  spec.state_dim = get_int("env.state_dim");
  spec.action_dim = get_int("env.action_dim");
  spec.horizon_max = get_int("env.horizon_max");
  spec.gamma = get_float("env.gamma");
  spec.deterministic = get_bool("env.deterministic");
  spec.validate();
  return spec;
}

TapConfig RunConfig::tap_config() const {
  TapConfig cfg;
  const std::string preset = get_string("model.preset");
  if (preset == "paper") {
    cfg = TapConfig::paper_defaults();
  } else if (preset != "toy") {
    throw ConfigError("config: model.preset must be 'toy' or 'paper'");
  }
  if (preset == "toy") {
    cfg.d_model = get_int("model.d_model");
    cfg.n_layers = get_int("model.n_layers");
    cfg.n_heads = get_int("model.n_heads");
    cfg.codebook_size = get_int("model.codebook_size");
    cfg.batch_size = get_int("train.batch_size");
    cfg.learning_rate = get_float("train.lr");
  }
  cfg.state_dim = get_int("env.state_dim");
  cfg.action_dim = get_int("env.action_dim");
  cfg.segment_len = get_int("model.segment_len");
  cfg.latent_step = get_int("model.latent_step");
  cfg.d_ff = get_int("model.d_ff");
  cfg.dropout_p = get_float("model.dropout");
  cfg.gamma = get_float("env.gamma");
  cfg.commitment_weight = get_float("model.commitment_weight");
  cfg.loss_weight_state = get_float("model.loss_weight_state");
  cfg.loss_weight_action = get_float("model.loss_weight_action");
  cfg.loss_weight_reward = get_float("model.loss_weight_reward");
  cfg.loss_weight_rtg = get_float("model.loss_weight_rtg");
  cfg.condition_decoder_on_state = get_bool("model.condition_decoder_on_state");
  cfg.validate();
  return cfg;
}

PlannerConfig RunConfig::planner_config() const {
  PlannerConfig cfg;
  cfg.horizon_steps = get_int("plan.horizon_steps");
  cfg.n_samples = get_int("plan.samples");
  cfg.beam_width = get_int("plan.beam_width");
  cfg.expansion = get_int("plan.expansion");
  cfg.alpha = get_float("plan.alpha");
  cfg.beta = get_float("plan.beta");
  cfg.gamma = get_float("env.gamma");
  cfg.temperature = get_float("plan.temperature");
  const std::string source = get_string("plan.sample_source");
  if (source == "prior") {
    cfg.sample_source = PlannerConfig::SampleSource::kPrior;
  } else if (source == "uniform") {
    cfg.sample_source = PlannerConfig::SampleSource::kUniform;
  } else {
    throw ConfigError("config: plan.sample_source must be 'prior' or 'uniform'");
  }
  const std::string search = get_string("plan.search");
  if (search == "beam") {
    cfg.search = PlannerConfig::Search::kBeam;
  } else if (search == "sample") {
    cfg.search = PlannerConfig::Search::kSample;
  } else {
    throw ConfigError("config: plan.search must be 'beam' or 'sample'");
  }
  return cfg;
}

std::string RunConfig::resolved_text() const {
  std::ostringstream os;
  for (const auto& [key, value] : values_) os << key << " = " << value << "\n";
  return os.str();
}

void RunConfig::write_resolved(const std::string& path) const {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("config: cannot write: " + path);
  out << resolved_text();
}

}  // namespace tap
