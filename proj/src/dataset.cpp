#include "tap/dataset.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>

#include "json.hpp"

namespace tap {

static_assert(std::endian::native == std::endian::little,
              "dataset files are little-endian");

using ordered_json = nlohmann::ordered_json;

std::vector<float> compute_rtg(std::span<const float> rewards, float gamma) {
  if (rewards.empty()) throw DataError("compute_rtg: empty reward sequence");
  std::vector<float> rtg(rewards.size());
  double acc = 0.0;
  for (int i = static_cast<int>(rewards.size()) - 1; i >= 0; --i) {
    acc = static_cast<double>(rewards[static_cast<std::size_t>(i)]) +
          static_cast<double>(gamma) * acc;
    rtg[static_cast<std::size_t>(i)] = static_cast<float>(acc);
  }
  return rtg;
}

OfflineDataset OfflineDataset::generate(Environment& env,
                                        BehaviorPolicy& behavior,
                                        int n_episodes, std::uint64_t seed) {
  if (n_episodes < 1) throw ArgumentError("generate: n_episodes must be >= 1");
  OfflineDataset ds;
  ds.env_spec = env.spec();
  ds.meta.seed = seed;
  ds.meta.behavior = behavior.describe();
  ds.meta.n_episodes = n_episodes;

  Rng master(seed);
  const int s_dim = env.spec().state_dim;
  const int a_dim = env.spec().action_dim;
  double return_sum = 0.0;
  float best = -std::numeric_limits<float>::infinity();
  float max_abs_rtg = 0.0f;
  for (int ep = 0; ep < n_episodes; ++ep) {
    Rng rng = master.split(static_cast<std::uint64_t>(ep));
    Episode e;
    std::vector<float> state = env.reset(rng);
    behavior.begin_episode(state, rng);
    e.states.insert(e.states.end(), state.begin(), state.end());
    for (int t = 0; t < env.spec().horizon_max; ++t) {
      const std::vector<float> action = behavior.act(state, rng);
      const Environment::StepResult r = env.step(action);
      e.actions.insert(e.actions.end(), action.begin(), action.end());
      e.rewards.push_back(r.reward);
      e.states.insert(e.states.end(), r.state.begin(), r.state.end());
      state = r.state;
      ++e.len;
      if (r.terminated) {
        e.terminated = true;
        break;
      }
    }
    e.rtg = compute_rtg(e.rewards, env.spec().gamma);
    for (float v : e.rtg) max_abs_rtg = std::max(max_abs_rtg, std::abs(v));
    const float ret = e.undiscounted_return();
    return_sum += ret;
    best = std::max(best, ret);
    ds.meta.total_steps += e.len;
    (void)s_dim;
    (void)a_dim;
    ds.episodes.push_back(std::move(e));
  }
  ds.meta.mean_return = static_cast<float>(return_sum / n_episodes);
  ds.meta.best_return = best;
  ds.meta.max_abs_rtg = max_abs_rtg;
  return ds;
}

void OfflineDataset::build_segments(int t, int segment_stride) {
  if (t < 1) throw ArgumentError("segments: length must be >= 1");
  if (segment_stride < 1) throw ArgumentError("segments: stride must be >= 1");
  segment_len = t;
  stride = segment_stride;
  segments.clear();
  const int s_dim = env_spec.state_dim;
  const int a_dim = env_spec.action_dim;
  for (const Episode& e : episodes) {
    if (e.len < 1) continue;
    // Full windows slide across the episode; an episode shorter than T yields
    // one padded window. Truncated (timeout) episodes exclude the last 5
    // steps from segment starts.
    int max_start = e.len - t;
    if (!e.terminated) max_start = std::min(max_start, e.len - 1 - 5);
    if (e.len < t) {
      if (!e.terminated) continue;
      max_start = 0;
    }
    for (int start = 0; start <= max_start; start += stride) {
      TrajectorySegment seg;
      seg.length = t;
      seg.states.resize(static_cast<std::size_t>(t) * s_dim);
      seg.actions.assign(static_cast<std::size_t>(t) * a_dim, 0.0f);
      seg.rewards.assign(static_cast<std::size_t>(t), 0.0f);
      seg.rtg.assign(static_cast<std::size_t>(t), 0.0f);
      seg.mask.assign(static_cast<std::size_t>(t), 0.0f);
      for (int r = 0; r < t; ++r) {
        const int step = start + r;
        if (step < e.len) {
          std::copy_n(e.states.data() + static_cast<std::size_t>(step) * s_dim,
                      s_dim, seg.states.data() + static_cast<std::size_t>(r) * s_dim);
          std::copy_n(e.actions.data() + static_cast<std::size_t>(step) * a_dim,
                      a_dim, seg.actions.data() + static_cast<std::size_t>(r) * a_dim);
          seg.rewards[static_cast<std::size_t>(r)] = e.rewards[static_cast<std::size_t>(step)];
          seg.rtg[static_cast<std::size_t>(r)] = e.rtg[static_cast<std::size_t>(step)];
          seg.mask[static_cast<std::size_t>(r)] = 1.0f;
        } else {
          // Pad by repeating the last observed state.
          std::copy_n(e.states.data() + static_cast<std::size_t>(e.len) * s_dim,
                      s_dim, seg.states.data() + static_cast<std::size_t>(r) * s_dim);
        }
      }
      segments.push_back(std::move(seg));
    }
  }
}

void OfflineDataset::fit_normalization() {
  if (segments.empty())
    throw DataError("fit_normalization: no segments (empty dataset?)");
  const int s_dim = env_spec.state_dim;
  const int a_dim = env_spec.action_dim;
  std::vector<double> s_sum(static_cast<std::size_t>(s_dim), 0.0),
      s_sq(static_cast<std::size_t>(s_dim), 0.0);
  std::vector<double> a_sum(static_cast<std::size_t>(a_dim), 0.0),
      a_sq(static_cast<std::size_t>(a_dim), 0.0);
  double r_sum = 0, r_sq = 0, g_sum = 0, g_sq = 0;
  std::int64_t count = 0;
  for (const TrajectorySegment& seg : segments) {
    for (int r = 0; r < seg.length; ++r) {
      if (seg.mask[static_cast<std::size_t>(r)] <= 0.5f) continue;
      ++count;
      for (int j = 0; j < s_dim; ++j) {
        const double v = seg.states[static_cast<std::size_t>(r) * s_dim + j];
        s_sum[static_cast<std::size_t>(j)] += v;
        s_sq[static_cast<std::size_t>(j)] += v * v;
      }
      for (int j = 0; j < a_dim; ++j) {
        const double v = seg.actions[static_cast<std::size_t>(r) * a_dim + j];
        a_sum[static_cast<std::size_t>(j)] += v;
        a_sq[static_cast<std::size_t>(j)] += v * v;
      }
      const double rv = seg.rewards[static_cast<std::size_t>(r)];
      const double gv = seg.rtg[static_cast<std::size_t>(r)];
      r_sum += rv;
      r_sq += rv * rv;
      g_sum += gv;
      g_sq += gv * gv;
    }
  }
  if (count == 0) throw DataError("fit_normalization: all steps masked");
  auto finish = [count](double sum, double sq, float& mean, float& sd) {
    const double mu = sum / static_cast<double>(count);
    const double var = std::max(0.0, sq / static_cast<double>(count) - mu * mu);
    mean = static_cast<float>(mu);
    sd = std::max(1e-6f, static_cast<float>(std::sqrt(var)));
  };
  stats.state_mean.resize(static_cast<std::size_t>(s_dim));
  stats.state_std.resize(static_cast<std::size_t>(s_dim));
  stats.action_mean.resize(static_cast<std::size_t>(a_dim));
  stats.action_std.resize(static_cast<std::size_t>(a_dim));
  for (int j = 0; j < s_dim; ++j)
    finish(s_sum[static_cast<std::size_t>(j)], s_sq[static_cast<std::size_t>(j)],
           stats.state_mean[static_cast<std::size_t>(j)],
           stats.state_std[static_cast<std::size_t>(j)]);
  for (int j = 0; j < a_dim; ++j)
    finish(a_sum[static_cast<std::size_t>(j)], a_sq[static_cast<std::size_t>(j)],
           stats.action_mean[static_cast<std::size_t>(j)],
           stats.action_std[static_cast<std::size_t>(j)]);
  finish(r_sum, r_sq, stats.reward_mean, stats.reward_std);
  finish(g_sum, g_sq, stats.rtg_mean, stats.rtg_std);
  stats.fitted = true;
}

TrajectorySegment normalize_segment(const TrajectorySegment& seg,
                                    const NormalizationStats& stats, int s_dim,
                                    int a_dim) {
  if (!stats.fitted) throw DataError("normalize: stats not fitted");
  TrajectorySegment out = seg;
  for (int r = 0; r < seg.length; ++r) {
    for (int j = 0; j < s_dim; ++j) {
      auto& v = out.states[static_cast<std::size_t>(r) * s_dim + j];
      v = (v - stats.state_mean[static_cast<std::size_t>(j)]) /
          stats.state_std[static_cast<std::size_t>(j)];
    }
    for (int j = 0; j < a_dim; ++j) {
      auto& v = out.actions[static_cast<std::size_t>(r) * a_dim + j];
      v = (v - stats.action_mean[static_cast<std::size_t>(j)]) /
          stats.action_std[static_cast<std::size_t>(j)];
    }
    out.rewards[static_cast<std::size_t>(r)] =
        (seg.rewards[static_cast<std::size_t>(r)] - stats.reward_mean) / stats.reward_std;
    out.rtg[static_cast<std::size_t>(r)] =
        (seg.rtg[static_cast<std::size_t>(r)] - stats.rtg_mean) / stats.rtg_std;
  }
  return out;
}

std::vector<float> normalize_state(std::span<const float> state,
                                   const NormalizationStats& stats) {
  if (!stats.fitted) throw DataError("normalize: stats not fitted");
  if (state.size() != stats.state_mean.size())
    throw DimensionError("normalize: state width mismatch");
  std::vector<float> out(state.size());
  for (std::size_t j = 0; j < state.size(); ++j)
    out[j] = (state[j] - stats.state_mean[j]) / stats.state_std[j];
  return out;
}

SegmentTokens segment_to_tokens(const TrajectorySegment& seg, int s_dim,
                                int a_dim) {
  const int t = seg.length;
  const int width = s_dim + a_dim + 2;
  std::vector<float> rows(static_cast<std::size_t>(t) * width);
  for (int r = 0; r < t; ++r) {
    float* dst = rows.data() + static_cast<std::size_t>(r) * width;
    std::copy_n(seg.states.data() + static_cast<std::size_t>(r) * s_dim, s_dim, dst);
    std::copy_n(seg.actions.data() + static_cast<std::size_t>(r) * a_dim, a_dim,
                dst + s_dim);
    dst[s_dim + a_dim] = seg.rewards[static_cast<std::size_t>(r)];
    dst[s_dim + a_dim + 1] = seg.rtg[static_cast<std::size_t>(r)];
  }
  SegmentTokens out;
  out.tokens = Tensor::from_data({t, width}, std::move(rows));
  out.mask = seg.mask;
  out.s1.assign(seg.states.begin(), seg.states.begin() + s_dim);
  return out;
}

namespace {

void write_u32(std::ofstream& f, std::uint32_t v) {
  f.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

std::uint32_t read_u32(std::ifstream& f) {
  std::uint32_t v = 0;
  f.read(reinterpret_cast<char*>(&v), sizeof(v));
  return v;
}

void write_floats(std::ofstream& f, const std::vector<float>& v) {
  f.write(reinterpret_cast<const char*>(v.data()),
          static_cast<std::streamsize>(v.size() * sizeof(float)));
}

ordered_json stats_to_json(const NormalizationStats& s) {
  if (!s.fitted) return nullptr;
  ordered_json j;
  j["state_mean"] = s.state_mean;
  j["state_std"] = s.state_std;
  j["action_mean"] = s.action_mean;
  j["action_std"] = s.action_std;
  j["reward_mean"] = s.reward_mean;
  j["reward_std"] = s.reward_std;
  j["rtg_mean"] = s.rtg_mean;
  j["rtg_std"] = s.rtg_std;
  return j;
}

NormalizationStats stats_from_json(const ordered_json& j) {
  NormalizationStats s;
  if (j.is_null()) return s;
  s.state_mean = j.at("state_mean").get<std::vector<float>>();
  s.state_std = j.at("state_std").get<std::vector<float>>();
  s.action_mean = j.at("action_mean").get<std::vector<float>>();
  s.action_std = j.at("action_std").get<std::vector<float>>();
  s.reward_mean = j.at("reward_mean").get<float>();
  s.reward_std = j.at("reward_std").get<float>();
  s.rtg_mean = j.at("rtg_mean").get<float>();
  s.rtg_std = j.at("rtg_std").get<float>();
  s.fitted = true;
  return s;
}

}  // namespace

void OfflineDataset::save(const std::string& path) const {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw DataError("dataset: cannot open for writing: " + path);

  ordered_json meta_json;
  meta_json["env"] = {{"name", env_spec.name},
                      {"state_dim", env_spec.state_dim},
                      {"action_dim", env_spec.action_dim},
                      {"horizon_max", env_spec.horizon_max},
                      {"gamma", env_spec.gamma},
                      {"deterministic", env_spec.deterministic}};
  meta_json["seed"] = meta.seed;
  meta_json["behavior"] = meta.behavior;
  meta_json["counts"] = {{"episodes", meta.n_episodes},
                         {"total_steps", meta.total_steps}};
  meta_json["mean_return"] = meta.mean_return;
  meta_json["best_return"] = meta.best_return;
  meta_json["max_abs_rtg"] = meta.max_abs_rtg;
  std::vector<int> terminated;
  terminated.reserve(episodes.size());
  for (const Episode& e : episodes) terminated.push_back(e.terminated ? 1 : 0);
  meta_json["terminated"] = terminated;
  meta_json["segment_len"] = segment_len;
  meta_json["stride"] = stride;
  meta_json["stats"] = stats_to_json(stats);
  const std::string meta_text = meta_json.dump();

  f.write("TAPD", 4);
  write_u32(f, 1);
  write_u32(f, static_cast<std::uint32_t>(meta_text.size()));
  f.write(meta_text.data(), static_cast<std::streamsize>(meta_text.size()));

  for (const Episode& e : episodes) write_floats(f, e.states);
  for (const Episode& e : episodes) write_floats(f, e.actions);
  for (const Episode& e : episodes) write_floats(f, e.rewards);
  for (const Episode& e : episodes)
    write_u32(f, static_cast<std::uint32_t>(e.len));
  if (!f) throw DataError("dataset: write failed: " + path);
}

OfflineDataset OfflineDataset::load(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("dataset: cannot open: " + path);
  char magic[4];
  f.read(magic, 4);
  if (!f || std::memcmp(magic, "TAPD", 4) != 0)
    throw DataError("dataset: bad magic (not a TAPD file): " + path);
  const std::uint32_t version = read_u32(f);
  if (version != 1)
    throw DataError("dataset: unsupported version " + std::to_string(version));
  const std::uint32_t meta_len = read_u32(f);
  std::string meta_text(meta_len, '\0');
  f.read(meta_text.data(), meta_len);
  if (!f) throw DataError("dataset: truncated metadata: " + path);

  ordered_json meta_json;
  try {
    meta_json = ordered_json::parse(meta_text);
  } catch (const std::exception& ex) {
    throw DataError(std::string("dataset: metadata parse failed: ") + ex.what());
  }

  OfflineDataset ds;
  const auto& env = meta_json.at("env");
  ds.env_spec.name = env.at("name").get<std::string>();
  ds.env_spec.state_dim = env.at("state_dim").get<int>();
  ds.env_spec.action_dim = env.at("action_dim").get<int>();
  ds.env_spec.horizon_max = env.at("horizon_max").get<int>();
  ds.env_spec.gamma = env.at("gamma").get<float>();
  ds.env_spec.deterministic = env.at("deterministic").get<bool>();
  ds.meta.seed = meta_json.at("seed").get<std::uint64_t>();
  ds.meta.behavior = meta_json.at("behavior").get<std::string>();
  ds.meta.n_episodes = meta_json.at("counts").at("episodes").get<int>();
  ds.meta.total_steps = meta_json.at("counts").at("total_steps").get<int>();
  ds.meta.mean_return = meta_json.at("mean_return").get<float>();
  ds.meta.best_return = meta_json.at("best_return").get<float>();
  ds.meta.max_abs_rtg = meta_json.at("max_abs_rtg").get<float>();
  const std::vector<int> terminated =
      meta_json.at("terminated").get<std::vector<int>>();
  const int seg_len = meta_json.at("segment_len").get<int>();
  const int seg_stride = meta_json.at("stride").get<int>();
  ds.stats = stats_from_json(meta_json.at("stats"));

  const int n = ds.meta.n_episodes;
  if (static_cast<int>(terminated.size()) != n)
    throw DataError("dataset: terminated flags do not match episode count");
  const int s_dim = ds.env_spec.state_dim;
  const int a_dim = ds.env_spec.action_dim;
  const std::size_t state_count =
      (static_cast<std::size_t>(ds.meta.total_steps) + static_cast<std::size_t>(n)) *
      static_cast<std::size_t>(s_dim);
  std::vector<float> states(state_count);
  std::vector<float> actions(static_cast<std::size_t>(ds.meta.total_steps) * a_dim);
  std::vector<float> rewards(static_cast<std::size_t>(ds.meta.total_steps));
  f.read(reinterpret_cast<char*>(states.data()),
         static_cast<std::streamsize>(states.size() * sizeof(float)));
  f.read(reinterpret_cast<char*>(actions.data()),
         static_cast<std::streamsize>(actions.size() * sizeof(float)));
  f.read(reinterpret_cast<char*>(rewards.data()),
         static_cast<std::streamsize>(rewards.size() * sizeof(float)));
  std::vector<std::uint32_t> lengths(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) lengths[static_cast<std::size_t>(i)] = read_u32(f);
  if (!f) throw DataError("dataset: truncated arrays: " + path);

  std::size_t s_off = 0, a_off = 0, r_off = 0;
  for (int i = 0; i < n; ++i) {
    Episode e;
    e.len = static_cast<int>(lengths[static_cast<std::size_t>(i)]);
    e.terminated = terminated[static_cast<std::size_t>(i)] != 0;
    const std::size_t s_n = (static_cast<std::size_t>(e.len) + 1) * s_dim;
    const std::size_t a_n = static_cast<std::size_t>(e.len) * a_dim;
    e.states.assign(states.begin() + s_off, states.begin() + s_off + s_n);
    e.actions.assign(actions.begin() + a_off, actions.begin() + a_off + a_n);
    e.rewards.assign(rewards.begin() + r_off,
                     rewards.begin() + r_off + static_cast<std::size_t>(e.len));
    e.rtg = compute_rtg(e.rewards, ds.env_spec.gamma);
    s_off += s_n;
    a_off += a_n;
    r_off += static_cast<std::size_t>(e.len);
    ds.episodes.push_back(std::move(e));
  }
  if (seg_len > 0) ds.build_segments(seg_len, seg_stride);
  return ds;
}

}  // namespace tap
