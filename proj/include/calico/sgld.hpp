#pragma once

// Langevin sampling of negative particles from the energy model.
//
// One update is x' = x - (step_size / 2) * dE/dx + noise_std * eta, eta ~ N(0, I).
// With noise_std = sqrt(step_size) the chain targets exp(-E); the practical
// default decouples the two (gradient step 1.0, noise 0.01) as is customary
// for energy models over normalized images.

#include "calico/core.hpp"
#include "calico/network.hpp"

#include <functional>
#include <span>
#include <vector>

namespace calico {

enum class InitMode { informative, uniform_noise };

struct SGLDConfig {
  int steps = 20;
  double step_size = 2.0;
  double noise_std = 0.01;
  InitMode init_mode = InitMode::informative;
  bool yopo = false;
  int yopo_inner_steps = 1;
  bool clamp = true;  // keep particles in [-1, 1]^D

  void validate() const;
};

/// Diagonal-covariance Gaussian mixture used to start chains near the data.
struct GaussianMixtureInit {
  static constexpr double variance_floor = 1e-4;

  std::vector<VectorXd> means;
  std::vector<VectorXd> variances;
  std::vector<double> weights;

  Index dim() const { return means.empty() ? 0 : means.front().size(); }
  /// Columns are draws: component by weight, then mean + sqrt(var) * z.
  MatrixXd sample(Index count, Rng& rng) const;
};

/// Per-class moments when labels are given (weights = class frequencies),
/// otherwise a single component over all columns.
GaussianMixtureInit fit_informative_init(const MatrixXd& features, std::span<const int> labels = {});

/// Returns the updated particles; x is untouched. Throws NumericError on a
/// non-finite gradient.
MatrixXd sgld_step(const MatrixXd& x, const MatrixXd& grad_energy, double step_size, double noise_std, Rng& rng,
                   bool clamp);

using EnergyGradient = std::function<MatrixXd(const MatrixXd&)>;
using ChainObserver = std::function<void(int step, const MatrixXd& particles)>;

/// Runs `steps` updates from `init` under an arbitrary energy gradient.
/// The observer, when set, sees the particles after every update.
MatrixXd run_chain(const EnergyGradient& grad_energy, MatrixXd init, const SGLDConfig& config, Rng& rng,
                   const ChainObserver& observer = {});

/// Initial particles for the model chain according to config.init_mode.
MatrixXd initial_particles(const SGLDConfig& config, const GaussianMixtureInit& init, Index dim, Index batch,
                           Rng& rng);

/// Negative samples from the model's energy E(x) = -LogSumExp(f(x)).
/// In YOPO mode the backward pass through layers above the first is computed
/// once per outer step and reused for yopo_inner_steps first-layer updates.
MatrixXd run_chain(const ModelState<double>& state, const SGLDConfig& config, const GaussianMixtureInit& init,
                   Index batch, Rng& rng, const ChainObserver& observer = {});

}  // namespace calico
