// Command-line front end: train, eval, ablate, bench-latency, plot, gen-data.

#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "tap/cli_commands.hpp"
#include "tap/strutil.hpp"

namespace {

struct CommonArgs {
  std::string config_path;
  std::vector<std::string> sets;
  std::string out_dir = "out";
  std::int64_t seed = -1;
};

void add_common(CLI::App* sub, CommonArgs& args) {
  sub->add_option("--config", args.config_path, "key = value config file");
  sub->add_option("--set", args.sets, "override: key=value (repeatable)");
  sub->add_option("--out-dir", args.out_dir, "output directory");
  sub->add_option("--seed", args.seed, "master seed (data/train/eval)");
}

tap::RunConfig resolve_config(const CommonArgs& args) {
  tap::RunConfig cfg = args.config_path.empty()
                           ? tap::RunConfig()
                           : tap::RunConfig::from_file(args.config_path);
  for (const std::string& kv : args.sets) {
    const std::size_t eq = kv.find('=');
    if (eq == std::string::npos)
      throw tap::ConfigError("--set expects key=value, got '" + kv + "'");
    cfg.set(tap::strutil::trim(kv.substr(0, eq)),
            tap::strutil::trim(kv.substr(eq + 1)));
  }
  if (args.seed >= 0) {
    cfg.set("data.seed", std::to_string(args.seed));
    cfg.set("train.seed", std::to_string(args.seed));
    cfg.set("eval.seed", std::to_string(args.seed));
  }
  return cfg;
}

std::vector<std::uint64_t> parse_seed_list(const std::string& text) {
  std::vector<std::uint64_t> out;
  for (const std::string& part : tap::strutil::split(text, ','))
    out.push_back(tap::strutil::parse_u64(tap::strutil::trim(part)));
  return out;
}

std::vector<int> parse_int_list(const std::string& text) {
  std::vector<int> out;
  for (const std::string& part : tap::strutil::split(text, ','))
    out.push_back(tap::strutil::parse_int(tap::strutil::trim(part)));
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Trajectory autoencoding planner"};
  app.require_subcommand(1);

  CommonArgs gen_args, train_args, eval_args, ablate_args;
  std::string eval_checkpoint;
  std::string eval_beta, eval_source, eval_search, eval_horizon, eval_episodes;
  std::string train_epochs;
  std::string ablate_axis, ablate_values, ablate_seeds = "1,2,3";
  std::string bench_dims = "14,26,42,71";
  std::string plot_csv, plot_kind;
  std::string plot_out = "out";
  tap::LatencyBenchConfig bench;

  CLI::App* gen = app.add_subcommand("gen-data", "generate an offline dataset");
  add_common(gen, gen_args);

  CLI::App* train = app.add_subcommand("train", "train a model");
  add_common(train, train_args);
  train->add_option("--epochs", train_epochs, "training epochs");

  CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  add_common(eval, eval_args);
  eval->add_option("--checkpoint", eval_checkpoint, "checkpoint path")->required();
  eval->add_option("--beta", eval_beta, "probability threshold");
  eval->add_option("--sample-source", eval_source, "prior|uniform");
  eval->add_option("--search", eval_search, "beam|sample");
  eval->add_option("--horizon", eval_horizon, "planning horizon (raw steps)");
  eval->add_option("--episodes", eval_episodes, "evaluation episodes");

  CLI::App* ablate = app.add_subcommand("ablate", "run an ablation axis");
  add_common(ablate, ablate_args);
  ablate->add_option("--axis", ablate_axis, "latent_step|beta|horizon|sampler|unconditional_decoder")
      ->required();
  ablate->add_option("--values", ablate_values, "comma-separated values")->required();
  ablate->add_option("--seeds", ablate_seeds, "comma-separated training seeds");

  CLI::App* bench_cmd = app.add_subcommand("bench-latency", "decision latency benchmark");
  std::string bench_out = "out";
  bench_cmd->add_option("--dims", bench_dims, "comma-separated D = S+A+2 values");
  bench_cmd->add_option("--t", bench.horizon, "planning steps");
  bench_cmd->add_option("--reps", bench.reps, "measured repetitions (>= 10)");
  bench_cmd->add_option("--warmup", bench.warmup, "warmup repetitions (>= 3)");
  bench_cmd->add_option("--d-model", bench.d_model, "model width");
  bench_cmd->add_option("--layers", bench.n_layers, "transformer layers");
  bench_cmd->add_option("--beam-width", bench.beam_width, "beam width B");
  bench_cmd->add_option("--expansion", bench.expansion, "expansion factor E");
  bench_cmd->add_option("--seed", bench.seed, "seed");
  bench_cmd->add_option("--out-dir", bench_out, "output directory");

  CLI::App* plot = app.add_subcommand("plot", "turn a result CSV into plot data");
  plot->add_option("--csv", plot_csv, "input CSV")->required();
  plot->add_option("--kind", plot_kind, "latency|ablation|training")->required();
  plot->add_option("--out-dir", plot_out, "output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help
    app.exit(e);
    return 2;
  }

  try {
    if (gen->parsed()) {
      tap::cli::cmd_gen_data(resolve_config(gen_args), gen_args.out_dir);
    } else if (train->parsed()) {
      tap::RunConfig cfg = resolve_config(train_args);
      if (!train_epochs.empty()) cfg.set("train.epochs", train_epochs);
      tap::cli::cmd_train(cfg, train_args.out_dir);
    } else if (eval->parsed()) {
      tap::RunConfig cfg = resolve_config(eval_args);
      if (!eval_beta.empty()) cfg.set("plan.beta", eval_beta);
      if (!eval_source.empty()) cfg.set("plan.sample_source", eval_source);
      if (!eval_search.empty()) cfg.set("plan.search", eval_search);
      if (!eval_horizon.empty()) cfg.set("plan.horizon_steps", eval_horizon);
      if (!eval_episodes.empty()) cfg.set("eval.episodes", eval_episodes);
      tap::cli::cmd_eval(cfg, eval_checkpoint, eval_args.out_dir);
    } else if (ablate->parsed()) {
      std::vector<std::string> values;
      for (const std::string& part : tap::strutil::split(ablate_values, ','))
        values.push_back(tap::strutil::trim(part));
      tap::cli::cmd_ablate(resolve_config(ablate_args), ablate_axis, values,
                           parse_seed_list(ablate_seeds), ablate_args.out_dir);
    } else if (bench_cmd->parsed()) {
      bench.dims = parse_int_list(bench_dims);
      tap::cli::cmd_bench_latency(bench, bench_out);
    } else if (plot->parsed()) {
      tap::cli::cmd_plot(plot_csv, plot_kind, plot_out);
    }
  } catch (const tap::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const tap::ArgumentError& e) {
    std::cerr << "argument error: " << e.what() << "\n";
    return 2;
  } catch (const tap::ParseError& e) {
    std::cerr << "parse error: " << e.what() << "\n";
    return 2;
  } catch (const tap::NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
