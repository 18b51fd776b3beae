#pragma once

// Experiment configuration: an INI file with sections
//   [experiment] variant, dataset, seeds, output, initial_labeled, eval_fraction,
//                rounds, label_budget, budget_counts_seed, stop_accuracy,
//                num_bins, log_initial_eval, oracle
//   [model]      arch (auto|mlp|cnn), hidden, conv_channels, activation
//   [train]      optimizer, learning_rate, momentum, batch_labeled, batch_all,
//                epochs_per_round, steps_per_epoch, warm_start, lambda_gen,
//                augmentation, grad_clip
//   [sgld]       steps, step_size, noise_std, init, yopo, yopo_inner_steps, clamp
//   [query]      strategy, query_size, labels_per_class
// Lists are comma separated. Unknown keys are errors.

#include "calico/data.hpp"
#include "calico/network.hpp"
#include "calico/oracle.hpp"
#include "calico/orchestrator.hpp"
#include "calico/query.hpp"
#include "calico/sgld.hpp"
#include "calico/trainer.hpp"

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace calico {

enum class Variant { baseline, active, calico, equal };

std::string to_string(Variant v);
Variant parse_variant(const std::string& name);

struct ExperimentConfig {
  Variant variant = Variant::calico;
  // A dataset directory or CSV file, or "synthetic:key=value,..." with keys
  // classes, per_class, radius, sigma, data_seed (default: the run seed).
  std::string dataset = "synthetic:classes=3,per_class=1000,radius=1,sigma=0.45";
  std::vector<std::uint64_t> seeds{1};
  std::filesystem::path output = "runs";
  Index initial_labeled = 20;
  double eval_fraction = 0.2;
  OracleKind oracle = OracleKind::simulated;

  std::string arch = "auto";  // auto: cnn for image datasets, mlp otherwise
  std::vector<int> hidden{64, 64};
  std::vector<int> conv_channels{16, 32};
  Activation activation = Activation::swish;

  TrainConfig train;
  SGLDConfig sgld;
  QuerySpec query;
  bool has_query = false;  // a [query] section was given

  int num_rounds = 10;
  Index label_budget = 0;
  bool budget_counts_seed = true;
  std::optional<double> stop_accuracy;
  int num_bins = kDefaultBins;
  bool log_initial_eval = false;

  /// Variant consistency. Throws ValidationError.
  void validate() const;
};

ExperimentConfig parse_config(std::istream& is);
ExperimentConfig load_config(const std::filesystem::path& file);

/// Canonical INI text; parse_config(to_ini(c)) reproduces c. Variants that do
/// not sample omit the [sgld] section, baseline omits [query].
std::string to_ini(const ExperimentConfig& config);

/// Synthetic 3-class protocol used for CI-scale comparisons.
ExperimentConfig desk_protocol(Variant variant);

/// MedMNIST-scale protocol: Q = 250, N_q = 16, 4000-label cap, SGD lr 0.1
/// (Adam lr 1e-4 for pneumonia).
/// `dataset` is a path; the equal variant takes its per-class quota from the
/// preset whose name matches the directory name.
ExperimentConfig paper_protocol(Variant variant, const std::string& dataset);

/// The output directory, placed under $CALICO_OUTPUT_ROOT when it is relative
/// and the variable is set.
std::filesystem::path resolve_output(const std::filesystem::path& output);

/// Loads or generates the dataset named by config.dataset for one seed.
Dataset build_dataset(const ExperimentConfig& config, std::uint64_t seed);

Arch build_arch(const ExperimentConfig& config, const Dataset& dataset);

}  // namespace calico
