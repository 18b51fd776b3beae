#pragma once

// Runs a variant over its seeds and turns the stored run logs into tables:
//
//   <output>/<variant>/config.ini
//   <output>/<variant>/seed_<s>/...          one run_al directory per seed
//   <output>/<variant>/learning_curve.csv    accuracy and ECE vs |D_l|, mean and sd over seeds
//   <output>/<variant>/reliability_seed_<s>.csv/.svg   final-model reliability diagram
//   <output>/<variant>/summary.csv           Best and Final ACC / ECE per seed
//
// Table values are percentages with two decimals.

#include "calico/config.hpp"
#include "calico/orchestrator.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace calico {

struct SeedOutcome {
  std::uint64_t seed = 0;
  std::filesystem::path dir;
  bool failed = false;
  std::string failure;
};

struct ExperimentResult {
  std::filesystem::path dir;  // the variant directory
  std::vector<SeedOutcome> seeds;
};

std::filesystem::path variant_dir(const ExperimentConfig& config);
std::filesystem::path seed_dir(const ExperimentConfig& config, std::uint64_t seed);

/// One seed of the configured variant, logged to run_dir. Baseline trains once
/// on every training sample; the other variants run the active learning loop
/// against `oracle`.
RunLog run_seed(const ExperimentConfig& config, std::uint64_t seed, const Dataset& dataset, Oracle& oracle,
                const std::filesystem::path& run_dir, bool resume = false);

/// Every seed with a simulated oracle, then emit_tables. The configuration is
/// validated before any compute; a failing seed is recorded and the rest run.
ExperimentResult run_experiment(const ExperimentConfig& config, bool resume = false);

/// Best: the round with the highest accuracy (earliest on ties) and its ECE.
/// Final: the last round.
struct SummaryRow {
  std::uint64_t seed = 0;
  bool failed = false;
  int best_round = 0;
  Index best_labeled = 0;
  double best_accuracy = 0;
  double best_ece = 0;
  int final_round = 0;
  Index final_labeled = 0;
  double final_accuracy = 0;
  double final_ece = 0;
};

SummaryRow summarize(const RunLog& log);

/// Rewrites the tables of a variant directory from its seed logs. Pure in the
/// logs: running it twice gives identical files.
void emit_tables(const std::filesystem::path& variant_dir);

/// Variant name, per-seed rows and their mean / sd, read from a variant directory.
struct VariantSummary {
  std::string variant;
  std::vector<SummaryRow> rows;
  SummaryRow mean;
  SummaryRow sd;
};

VariantSummary load_summary(const std::filesystem::path& variant_dir);

/// Side-by-side "Best ACC / ECE" and "Final ACC / ECE" table, one column per directory.
std::string compare(const std::vector<std::filesystem::path>& variant_dirs);

}  // namespace calico
