#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tap/latency_bench.hpp"
#include "tap/run_config.hpp"

namespace tap::cli {

// Each command writes its artifacts plus the resolved configuration into
// out_dir, so a run can be re-created from its output directory alone.

void cmd_gen_data(const RunConfig& cfg, const std::string& out_dir);

// dataset (if generated), per-epoch checkpoint, metrics.csv.
void cmd_train(const RunConfig& cfg, const std::string& out_dir);

// summary.csv and episodes.jsonl from a stored checkpoint.
void cmd_eval(const RunConfig& cfg, const std::string& checkpoint_path,
              const std::string& out_dir);

void cmd_ablate(const RunConfig& cfg, const std::string& axis,
                const std::vector<std::string>& values,
                const std::vector<std::uint64_t>& seeds,
                const std::string& out_dir);

void cmd_bench_latency(const LatencyBenchConfig& bench, const std::string& out_dir);

// kind: latency | ablation | training. Writes <kind>.dat (gnuplot columns).
void cmd_plot(const std::string& csv_path, const std::string& kind,
              const std::string& out_dir);

}  // namespace tap::cli
