#include "tap/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include "tap/strutil.hpp"

namespace tap {

namespace {

using strutil::format_float;

void write_u32(std::ofstream& f, std::uint32_t v) {
  f.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

std::uint32_t read_u32(std::ifstream& f) {
  std::uint32_t v = 0;
  f.read(reinterpret_cast<char*>(&v), sizeof(v));
  return v;
}

void write_block(std::ofstream& f, const std::string& name,
                 const std::vector<int>& shape, std::span<const float> data) {
  write_u32(f, static_cast<std::uint32_t>(name.size()));
  f.write(name.data(), static_cast<std::streamsize>(name.size()));
  write_u32(f, static_cast<std::uint32_t>(shape.size()));
  for (int d : shape) write_u32(f, static_cast<std::uint32_t>(d));
  f.write(reinterpret_cast<const char*>(data.data()),
          static_cast<std::streamsize>(data.size() * sizeof(float)));
}

std::string config_text(const TapModel& model, const EnvSpec& env,
                        float max_abs_rtg) {
  const TapConfig& c = model.config();
  std::ostringstream os;
  os << "model.state_dim = " << c.state_dim << "\n";
  os << "model.action_dim = " << c.action_dim << "\n";
  os << "model.segment_len = " << c.segment_len << "\n";
  os << "model.latent_step = " << c.latent_step << "\n";
  os << "model.codebook_size = " << c.codebook_size << "\n";
  os << "model.d_model = " << c.d_model << "\n";
  os << "model.n_layers = " << c.n_layers << "\n";
  os << "model.n_heads = " << c.n_heads << "\n";
  os << "model.d_ff = " << c.d_ff << "\n";
  os << "model.dropout_p = " << format_float(c.dropout_p) << "\n";
  os << "model.gamma = " << format_float(c.gamma) << "\n";
  os << "model.learning_rate = " << format_float(c.learning_rate) << "\n";
  os << "model.batch_size = " << c.batch_size << "\n";
  os << "model.commitment_weight = " << format_float(c.commitment_weight) << "\n";
  os << "model.loss_weight_state = " << format_float(c.loss_weight_state) << "\n";
  os << "model.loss_weight_action = " << format_float(c.loss_weight_action) << "\n";
  os << "model.loss_weight_reward = " << format_float(c.loss_weight_reward) << "\n";
  os << "model.loss_weight_rtg = " << format_float(c.loss_weight_rtg) << "\n";
  os << "model.condition_decoder_on_state = "
     << (c.condition_decoder_on_state ? "true" : "false") << "\n";
  os << "env.name = " << env.name << "\n";
  os << "env.state_dim = " << env.state_dim << "\n";
  os << "env.action_dim = " << env.action_dim << "\n";
  os << "env.horizon_max = " << env.horizon_max << "\n";
  os << "env.gamma = " << format_float(env.gamma) << "\n";
  os << "env.deterministic = " << (env.deterministic ? "true" : "false") << "\n";
  os << "data.max_abs_rtg = " << format_float(max_abs_rtg) << "\n";
  return os.str();
}

std::map<std::string, std::string> parse_config_text(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    line = strutil::trim(line);
    if (line.empty() || line[0] == '#') continue;
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw CheckpointError("checkpoint: malformed config line: " + line);
    kv[strutil::trim(line.substr(0, eq))] = strutil::trim(line.substr(eq + 1));
  }
  return kv;
}

std::string require(const std::map<std::string, std::string>& kv,
                    const std::string& key) {
  auto it = kv.find(key);
  if (it == kv.end())
    throw CheckpointError("checkpoint: missing config key '" + key + "'");
  return it->second;
}

}  // namespace

void save_checkpoint(const std::string& path, const TapModel& model,
                     const EnvSpec& env, const NormalizationStats& stats,
                     float max_abs_rtg) {
  if (!stats.fitted)
    throw CheckpointError("checkpoint: normalization stats not fitted");
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw CheckpointError("checkpoint: cannot open for writing: " + path);
  f.write("TAPC", 4);
  write_u32(f, 1);
  const std::string cfg = config_text(model, env, max_abs_rtg);
  write_u32(f, static_cast<std::uint32_t>(cfg.size()));
  f.write(cfg.data(), static_cast<std::streamsize>(cfg.size()));

  const auto named = model.named_params();
  const std::uint32_t n_blocks = static_cast<std::uint32_t>(named.size()) + 8;
  write_u32(f, n_blocks);
  for (const auto& [name, p] : named) write_block(f, name, p.shape(), p.data());

  auto write_vec = [&](const std::string& name, const std::vector<float>& v) {
    write_block(f, name, {static_cast<int>(v.size())}, v);
  };
  auto write_scalar = [&](const std::string& name, float v) {
    write_block(f, name, {1}, std::span<const float>(&v, 1));
  };
  write_vec("stats.state_mean", stats.state_mean);
  write_vec("stats.state_std", stats.state_std);
  write_vec("stats.action_mean", stats.action_mean);
  write_vec("stats.action_std", stats.action_std);
  write_scalar("stats.reward_mean", stats.reward_mean);
  write_scalar("stats.reward_std", stats.reward_std);
  write_scalar("stats.rtg_mean", stats.rtg_mean);
  write_scalar("stats.rtg_std", stats.rtg_std);
  if (!f) throw CheckpointError("checkpoint: write failed: " + path);
}

CheckpointBundle load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw CheckpointError("checkpoint: cannot open: " + path);
  char magic[4];
  f.read(magic, 4);
  if (!f || std::memcmp(magic, "TAPC", 4) != 0)
    throw CheckpointError("checkpoint: bad magic (not a TAPC file): " + path);
  const std::uint32_t version = read_u32(f);
  if (version != 1)
    throw CheckpointError("checkpoint: unsupported version " +
                          std::to_string(version));
  const std::uint32_t cfg_len = read_u32(f);
  std::string cfg_text(cfg_len, '\0');
  f.read(cfg_text.data(), cfg_len);
  if (!f) throw CheckpointError("checkpoint: truncated config: " + path);
  const auto kv = parse_config_text(cfg_text);

  CheckpointBundle bundle;
  TapConfig& c = bundle.config;
  c.state_dim = strutil::parse_int(require(kv, "model.state_dim"));
  c.action_dim = strutil::parse_int(require(kv, "model.action_dim"));
  c.segment_len = strutil::parse_int(require(kv, "model.segment_len"));
  c.latent_step = strutil::parse_int(require(kv, "model.latent_step"));
  c.codebook_size = strutil::parse_int(require(kv, "model.codebook_size"));
  c.d_model = strutil::parse_int(require(kv, "model.d_model"));
  c.n_layers = strutil::parse_int(require(kv, "model.n_layers"));
  c.n_heads = strutil::parse_int(require(kv, "model.n_heads"));
  c.d_ff = strutil::parse_int(require(kv, "model.d_ff"));
  c.dropout_p = strutil::parse_float(require(kv, "model.dropout_p"));
  c.gamma = strutil::parse_float(require(kv, "model.gamma"));
  c.learning_rate = strutil::parse_float(require(kv, "model.learning_rate"));
  c.batch_size = strutil::parse_int(require(kv, "model.batch_size"));
  c.commitment_weight =
      strutil::parse_float(require(kv, "model.commitment_weight"));
  c.loss_weight_state = strutil::parse_float(require(kv, "model.loss_weight_state"));
  c.loss_weight_action = strutil::parse_float(require(kv, "model.loss_weight_action"));
  c.loss_weight_reward = strutil::parse_float(require(kv, "model.loss_weight_reward"));
  c.loss_weight_rtg = strutil::parse_float(require(kv, "model.loss_weight_rtg"));
  c.condition_decoder_on_state =
      strutil::parse_bool(require(kv, "model.condition_decoder_on_state"));
  bundle.env.name = require(kv, "env.name");
  bundle.env.state_dim = strutil::parse_int(require(kv, "env.state_dim"));
  bundle.env.action_dim = strutil::parse_int(require(kv, "env.action_dim"));
  bundle.env.horizon_max = strutil::parse_int(require(kv, "env.horizon_max"));
  bundle.env.gamma = strutil::parse_float(require(kv, "env.gamma"));
  bundle.env.deterministic = strutil::parse_bool(require(kv, "env.deterministic"));
  bundle.max_abs_rtg = strutil::parse_float(require(kv, "data.max_abs_rtg"));

  Rng init_rng(0);
  bundle.model = std::make_shared<TapModel>(c, init_rng);

  std::map<std::string, Tensor> by_name;
  for (auto& [name, p] : bundle.model->named_params()) by_name.emplace(name, p);

  const std::uint32_t n_blocks = read_u32(f);
  NormalizationStats& stats = bundle.stats;
  for (std::uint32_t bi = 0; bi < n_blocks; ++bi) {
    const std::uint32_t name_len = read_u32(f);
    std::string name(name_len, '\0');
    f.read(name.data(), name_len);
    const std::uint32_t ndims = read_u32(f);
    std::vector<int> shape(ndims);
    std::size_t count = 1;
    for (std::uint32_t d = 0; d < ndims; ++d) {
      shape[d] = static_cast<int>(read_u32(f));
      count *= static_cast<std::size_t>(shape[d]);
    }
    std::vector<float> data(count);
    f.read(reinterpret_cast<char*>(data.data()),
           static_cast<std::streamsize>(count * sizeof(float)));
    if (!f) throw CheckpointError("checkpoint: truncated block '" + name + "'");

    if (name.rfind("stats.", 0) == 0) {
      if (name == "stats.state_mean") stats.state_mean = data;
      else if (name == "stats.state_std") stats.state_std = data;
      else if (name == "stats.action_mean") stats.action_mean = data;
      else if (name == "stats.action_std") stats.action_std = data;
      else if (name == "stats.reward_mean") stats.reward_mean = data.at(0);
      else if (name == "stats.reward_std") stats.reward_std = data.at(0);
      else if (name == "stats.rtg_mean") stats.rtg_mean = data.at(0);
      else if (name == "stats.rtg_std") stats.rtg_std = data.at(0);
      else throw CheckpointError("checkpoint: unknown stats block '" + name + "'");
      continue;
    }
    auto it = by_name.find(name);
    if (it == by_name.end())
      throw CheckpointError("checkpoint: unknown parameter '" + name + "'");
    if (it->second.shape() != shape)
      throw CheckpointError("checkpoint: parameter '" + name +
                            "' shape does not match the stored config");
    std::copy(data.begin(), data.end(), it->second.data().begin());
    by_name.erase(it);
  }
  if (!by_name.empty())
    throw CheckpointError("checkpoint: missing parameter '" +
                          by_name.begin()->first + "'");
  if (stats.state_mean.empty())
    throw CheckpointError("checkpoint: missing normalization stats");
  stats.fitted = true;
  return bundle;
}

}  // namespace tap
