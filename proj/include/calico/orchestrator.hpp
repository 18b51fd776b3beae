#pragma once

// The train / query / annotate / update loop.

#include "calico/calibration.hpp"
#include "calico/data.hpp"
#include "calico/oracle.hpp"
#include "calico/query.hpp"
#include "calico/trainer.hpp"

#include <chrono>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace calico {

/// Moves the answered ids from D_u to D_l. Annotations may cover only part of
/// the query (a partial remote poll); an empty batch is a no-op.
PoolPartition apply_oracle_update(const PoolPartition& pools, std::span<const Index> query_ids,
                                  std::span<const Annotation> labels);

struct ALConfig {
  int num_rounds = 10;          // N_q
  Index label_budget = 0;       // cap on |D_l|; 0 = none
  bool budget_counts_seed = true;
  std::optional<double> stop_accuracy;
  int num_bins = kDefaultBins;
  bool log_initial_eval = false;
  std::uint64_t seed = 0;
  std::chrono::milliseconds poll_interval{200};
  std::filesystem::path run_dir;  // empty: keep the log in memory only
  bool resume = false;
  std::string config_snapshot;
};

struct RoundRecord {
  int round = 0;
  Index labeled = 0;    // after the oracle update
  Index unlabeled = 0;
  std::vector<QueryItem> query;
  std::vector<int> query_labels;  // oracle answers, 0-based, parallel to query
  CalibrationReport report;
  RoundMetrics train;
  double wall_seconds = 0;
};

struct RunLog {
  std::uint64_t seed = 0;
  std::string config_snapshot;
  std::optional<CalibrationReport> initial;
  std::vector<RoundRecord> rounds;
  bool failed = false;
  std::string failure;
  ModelState<double> final_state;
  PoolPartition final_pools;
};

RunLog run_al(const Dataset& dataset, PoolPartition pools, ModelState<double> model, const TrainConfig& train_cfg,
              const SGLDConfig& sgld_cfg, const QuerySpec& query_spec, Oracle& oracle, const ALConfig& config);

/// Rebuilds the recorded part of a persisted run (rounds, queries, reports).
RunLog load_run_log(const std::filesystem::path& run_dir);

/// Writes a finished log in the layout run_al produces (without checkpoints).
void save_run_log(const RunLog& log, const std::filesystem::path& run_dir);

void write_pools(const PoolPartition& pools, const std::filesystem::path& file);
PoolPartition read_pools(const std::filesystem::path& file);

}  // namespace calico
