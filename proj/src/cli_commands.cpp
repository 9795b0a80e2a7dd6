#include "tap/cli_commands.hpp"

#include <filesystem>
#include <fstream>
#include <map>

#include "tap/ablate.hpp"
#include "tap/csv.hpp"
#include "tap/pipeline.hpp"
#include "tap/strutil.hpp"

namespace tap::cli {

namespace {

namespace fs = std::filesystem;
using strutil::format_double;

void prepare_dir(const std::string& out_dir) {
  fs::create_directories(out_dir);
}

void echo_config(const RunConfig& cfg, const std::string& out_dir) {
  cfg.write_resolved(out_dir + "/config.resolved");
}

}  // namespace

void cmd_gen_data(const RunConfig& cfg, const std::string& out_dir) {
  prepare_dir(out_dir);
  const OfflineDataset ds = build_dataset(cfg);
  ds.save(out_dir + "/dataset.tapd");
  echo_config(cfg, out_dir);
}

void cmd_train(const RunConfig& cfg, const std::string& out_dir) {
  prepare_dir(out_dir);
  echo_config(cfg, out_dir);
  CsvWriter metrics(out_dir + "/metrics.csv",
                    {"epoch", "recon_mse", "codebook_loss", "commitment_loss",
                     "prior_nll", "codes_used", "dead_resets"});
  const std::string ckpt = out_dir + "/checkpoint.tapc";
  const std::string ckpt_tmp = out_dir + "/checkpoint.tapc.tmp";
  const EnvSpec env = cfg.env_spec();

  OfflineDataset dataset = build_dataset(cfg);
  if (cfg.get_string("data.path").empty()) dataset.save(out_dir + "/dataset.tapd");

  const TapConfig model_cfg = cfg.tap_config();
  Rng init_rng(cfg.get_u64("train.seed"));
  TapModel model(model_cfg, init_rng);
  Trainer trainer(model, dataset, cfg.get_u64("train.seed"));
  const int epochs = cfg.get_int("train.epochs");
  for (int e = 0; e < epochs; ++e) {
    const TrainMetrics m = trainer.train_epoch();
    metrics.write_row({std::to_string(m.epoch), format_double(m.recon_mse),
                       format_double(m.codebook_loss),
                       format_double(m.commitment_loss),
                       format_double(m.prior_nll), std::to_string(m.codes_used),
                       std::to_string(m.dead_resets)});
    // Keep the newest good checkpoint on disk; a numeric abort in a later
    // epoch leaves this one behind.
    save_checkpoint(ckpt_tmp, model, env, dataset.stats, dataset.meta.max_abs_rtg);
    fs::rename(ckpt_tmp, ckpt);
  }
}

void cmd_eval(const RunConfig& cfg, const std::string& checkpoint_path,
              const std::string& out_dir) {
  prepare_dir(out_dir);
  echo_config(cfg, out_dir);
  const CheckpointBundle bundle = load_checkpoint(checkpoint_path);
  RunConfig merged = cfg;
  // The environment and model geometry come from the checkpoint.
  merged.set("env.name", bundle.env.name);
  merged.set("env.state_dim", std::to_string(bundle.env.state_dim));
  merged.set("env.action_dim", std::to_string(bundle.env.action_dim));
  merged.set("env.horizon_max", std::to_string(bundle.env.horizon_max));
  merged.set("env.gamma", strutil::format_float(bundle.env.gamma));
  merged.set("env.deterministic", bundle.env.deterministic ? "true" : "false");

  const EvalReport report =
      eval_pipeline(*bundle.model, bundle.stats, bundle.max_abs_rtg, merged,
                    out_dir + "/episodes.jsonl");
  CsvWriter summary(out_dir + "/summary.csv",
                    {"episodes", "mean_return", "std_return", "mean_latency_ms",
                     "median_latency_ms", "p95_latency_ms", "mean_best_score"});
  summary.write_row({std::to_string(report.n_episodes),
                     format_double(report.mean_return),
                     format_double(report.std_return),
                     format_double(report.mean_latency_ms),
                     format_double(report.median_latency_ms),
                     format_double(report.p95_latency_ms),
                     format_double(report.mean_best_score)});
}

void cmd_ablate(const RunConfig& cfg, const std::string& axis,
                const std::vector<std::string>& values,
                const std::vector<std::uint64_t>& seeds,
                const std::string& out_dir) {
  prepare_dir(out_dir);
  echo_config(cfg, out_dir);
  const auto rows = run_ablation(cfg, axis, values, seeds, nullptr);
  CsvWriter out(out_dir + "/ablation.csv",
                {"axis", "value", "seed", "mean_return", "std_return",
                 "final_recon_mse", "final_prior_nll", "mean_best_score",
                 "median_latency_ms"});
  for (const AblationRow& r : rows)
    out.write_row({r.axis, r.value, std::to_string(r.seed),
                   format_double(r.mean_return), format_double(r.std_return),
                   format_double(r.final_recon_mse),
                   format_double(r.final_prior_nll),
                   format_double(r.mean_best_score),
                   format_double(r.median_latency_ms)});
}

void cmd_bench_latency(const LatencyBenchConfig& bench, const std::string& out_dir) {
  prepare_dir(out_dir);
  {
    std::ofstream cfg_out(out_dir + "/config.resolved", std::ios::trunc);
    cfg_out << "bench.t = " << bench.horizon << "\n";
    cfg_out << "bench.reps = " << bench.reps << "\n";
    cfg_out << "bench.warmup = " << bench.warmup << "\n";
    cfg_out << "bench.d_model = " << bench.d_model << "\n";
    cfg_out << "bench.n_layers = " << bench.n_layers << "\n";
    cfg_out << "bench.n_heads = " << bench.n_heads << "\n";
    cfg_out << "bench.latent_step = " << bench.latent_step << "\n";
    cfg_out << "bench.codebook_size = " << bench.codebook_size << "\n";
    cfg_out << "bench.beam_width = " << bench.beam_width << "\n";
    cfg_out << "bench.expansion = " << bench.expansion << "\n";
    cfg_out << "bench.baseline_vocab = " << bench.baseline_vocab << "\n";
    cfg_out << "bench.seed = " << bench.seed << "\n";
    cfg_out << "bench.dims =";
    for (int d : bench.dims) cfg_out << " " << d;
    cfg_out << "\n";
  }
  const auto rows = run_latency_bench(bench);
  CsvWriter out(out_dir + "/latency.csv",
                {"tokenization", "d", "t", "median_latency_ms", "p95_latency_ms",
                 "tokens_processed"});
  for (const LatencyBenchRow& r : rows)
    out.write_row({r.tokenization, std::to_string(r.d), std::to_string(r.t),
                   format_double(r.median_latency_ms),
                   format_double(r.p95_latency_ms),
                   std::to_string(r.tokens_processed)});
}

void cmd_plot(const std::string& csv_path, const std::string& kind,
              const std::string& out_dir) {
  prepare_dir(out_dir);
  const CsvTable table = read_csv(csv_path);
  if (table.rows.empty()) throw ParseError("plot: no data rows in " + csv_path);
  std::ofstream out(out_dir + "/" + kind + ".dat", std::ios::trunc);
  if (!out) throw DataError("plot: cannot write output");

  if (kind == "latency") {
    const int c_tok = table.column("tokenization");
    const int c_d = table.column("d");
    const int c_med = table.column("median_latency_ms");
    std::map<int, std::pair<std::string, std::string>> by_d;
    for (const auto& row : table.rows) {
      const int d = strutil::parse_int(row[static_cast<std::size_t>(c_d)]);
      if (row[static_cast<std::size_t>(c_tok)] == "per_step")
        by_d[d].first = row[static_cast<std::size_t>(c_med)];
      else if (row[static_cast<std::size_t>(c_tok)] == "per_dimension")
        by_d[d].second = row[static_cast<std::size_t>(c_med)];
      else
        throw ParseError("plot: unknown tokenization '" +
                         row[static_cast<std::size_t>(c_tok)] + "'");
    }
    out << "# d per_step_median_ms per_dimension_median_ms\n";
    for (const auto& [d, pair] : by_d)
      out << d << " " << pair.first << " " << pair.second << "\n";
  } else if (kind == "ablation") {
    const int c_value = table.column("value");
    const int c_ret = table.column("mean_return");
    std::vector<std::string> order;
    std::map<std::string, std::pair<double, int>> acc;
    for (const auto& row : table.rows) {
      const std::string& v = row[static_cast<std::size_t>(c_value)];
      if (acc.find(v) == acc.end()) order.push_back(v);
      auto& slot = acc[v];
      slot.first += strutil::parse_double(row[static_cast<std::size_t>(c_ret)]);
      slot.second += 1;
    }
    out << "# value mean_return\n";
    for (const std::string& v : order)
      out << v << " " << format_double(acc[v].first / acc[v].second) << "\n";
  } else if (kind == "training") {
    const int c_epoch = table.column("epoch");
    const int c_recon = table.column("recon_mse");
    const int c_nll = table.column("prior_nll");
    out << "# epoch recon_mse prior_nll\n";
    for (const auto& row : table.rows)
      out << row[static_cast<std::size_t>(c_epoch)] << " "
          << row[static_cast<std::size_t>(c_recon)] << " "
          << row[static_cast<std::size_t>(c_nll)] << "\n";
  } else {
    throw ArgumentError("plot: kind must be latency|ablation|training");
  }
}

}  // namespace tap::cli
