#include "calico/sgld.hpp"

#include <algorithm>
#include <cmath>

namespace calico {

namespace {
constexpr double kDivergenceBound = 1e2;

void check_divergence(const MatrixXd& x, int step) {
  if (x.cwiseAbs().maxCoeff() > kDivergenceBound)
    throw NumericError("SGLD chain diverged at step " + std::to_string(step));
}
}  // namespace

void SGLDConfig::validate() const {
  require(steps >= 0, "sgld: steps must be non-negative");
  require(step_size > 0.0, "sgld: step_size must be positive");
  require(noise_std >= 0.0, "sgld: noise_std must be non-negative");
  require(!yopo || yopo_inner_steps >= 1, "sgld: yopo_inner_steps must be at least 1");
}

MatrixXd GaussianMixtureInit::sample(Index count, Rng& rng) const {
  require(!means.empty(), "mixture has no components");
  std::discrete_distribution<int> pick(weights.begin(), weights.end());
  std::normal_distribution<double> normal(0.0, 1.0);
  MatrixXd out(dim(), count);
  for (Index j = 0; j < count; ++j) {
    const auto k = std::size_t(pick(rng));
    for (Index i = 0; i < dim(); ++i) out(i, j) = means[k](i) + std::sqrt(variances[k](i)) * normal(rng);
  }
  return out;
}

GaussianMixtureInit fit_informative_init(const MatrixXd& features, std::span<const int> labels) {
  require(features.cols() > 0, "informative init needs at least one sample");
  require(labels.empty() || labels.size() == std::size_t(features.cols()), "informative init: label count mismatch");

  auto moments = [&](const std::vector<Index>& cols, GaussianMixtureInit& g) {
    VectorXd mean = VectorXd::Zero(features.rows());
    for (Index c : cols) mean += features.col(c);
    mean /= double(cols.size());
    VectorXd var = VectorXd::Zero(features.rows());
    for (Index c : cols) var += (features.col(c) - mean).cwiseAbs2();
    var /= double(cols.size());
    var = var.cwiseMax(GaussianMixtureInit::variance_floor);
    g.means.push_back(std::move(mean));
    g.variances.push_back(std::move(var));
    g.weights.push_back(double(cols.size()) / double(features.cols()));
  };

  GaussianMixtureInit g;
  if (labels.empty()) {
    std::vector<Index> all(std::size_t(features.cols()));
    for (Index j = 0; j < features.cols(); ++j) all[std::size_t(j)] = j;
    moments(all, g);
    return g;
  }
  const int k_max = *std::max_element(labels.begin(), labels.end());
  std::vector<std::vector<Index>> by_class(std::size_t(k_max + 1));
  for (std::size_t j = 0; j < labels.size(); ++j) by_class[std::size_t(labels[j])].push_back(Index(j));
  for (const auto& cols : by_class)
    if (!cols.empty()) moments(cols, g);
  return g;
}

MatrixXd sgld_step(const MatrixXd& x, const MatrixXd& grad_energy, double step_size, double noise_std, Rng& rng,
                   bool clamp) {
  if (!grad_energy.allFinite()) throw NumericError("SGLD: non-finite energy gradient");
  MatrixXd next = x - (0.5 * step_size) * grad_energy;
  if (noise_std > 0.0) {
    std::normal_distribution<double> normal(0.0, 1.0);
    for (Index k = 0; k < next.size(); ++k) next.data()[k] += noise_std * normal(rng);
  }
  if (clamp) next = next.cwiseMax(-1.0).cwiseMin(1.0);
  return next;
}

MatrixXd run_chain(const EnergyGradient& grad_energy, MatrixXd x, const SGLDConfig& config, Rng& rng,
                   const ChainObserver& observer) {
  config.validate();
  for (int step = 1; step <= config.steps; ++step) {
    x = sgld_step(x, grad_energy(x), config.step_size, config.noise_std, rng, config.clamp);
    if (!config.clamp) check_divergence(x, step);
    if (observer) observer(step, x);
  }
  return x;
}

MatrixXd initial_particles(const SGLDConfig& config, const GaussianMixtureInit& init, Index dim, Index batch,
                           Rng& rng) {
  if (config.init_mode == InitMode::informative) {
    require(init.dim() == dim, "informative init dimension does not match the model input");
    MatrixXd x = init.sample(batch, rng);
    if (config.clamp) x = x.cwiseMax(-1.0).cwiseMin(1.0);
    return x;
  }
  std::uniform_real_distribution<double> uniform(-1.0, 1.0);
  MatrixXd x(dim, batch);
  for (Index k = 0; k < x.size(); ++k) x.data()[k] = uniform(rng);
  return x;
}

MatrixXd run_chain(const ModelState<double>& state, const SGLDConfig& config, const GaussianMixtureInit& init,
                   Index batch, Rng& rng, const ChainObserver& observer) {
  config.validate();
  const Network<double> net(state.arch);
  MatrixXd x = initial_particles(config, init, net.input_dim(), batch, rng);
  Network<double>::Tape tape;
  const int inner = config.yopo ? config.yopo_inner_steps : 1;
  int step = 0;
  for (int outer = 0; outer < config.steps; ++outer) {
    const MatrixXd l = net.forward(state.params, x, &tape);
    const MatrixXd dfirst = net.backward_to_first_output(state.params, tape, -softmax(l), nullptr);
    // Layer 0 is linear, so its input gradient is the same for every inner step.
    const MatrixXd grad = net.first_layer_input_grad(state.params, dfirst);
    for (int k = 0; k < inner; ++k) {
      x = sgld_step(x, grad, config.step_size, config.noise_std, rng, config.clamp);
      ++step;
      if (!config.clamp) check_divergence(x, step);
      if (observer) observer(step, x);
    }
  }
  return x;
}

}  // namespace calico
