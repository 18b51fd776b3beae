#include "calico/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

namespace calico {

void TrainConfig::validate() const {
  require(learning_rate > 0.0, "train: learning_rate must be positive");
  require(batch_labeled >= 1 && batch_all >= 1, "train: batch sizes must be at least 1");
  require(epochs_per_round >= 0, "train: epochs_per_round must be non-negative");
  require(steps_per_epoch >= 0, "train: steps_per_epoch must be non-negative");
  require(lambda_gen >= 0.0, "train: lambda_gen must be non-negative");
  require(momentum >= 0.0 && momentum < 1.0, "train: momentum must lie in [0, 1)");
}

JointLoss joint_loss_and_grads(const ModelState<double>& state, const MatrixXd& labeled_x,
                               std::span<const int> labeled_y, const MatrixXd& all_x, const MatrixXd& negatives,
                               double lambda_gen) {
  require(labeled_x.cols() == Index(labeled_y.size()), "joint loss: labeled batch and labels differ in size");
  const Network<double> net(state.arch);
  Network<double>::Tape tape;
  JointLoss out;
  out.grad = VectorXd::Zero(net.num_params());

  if (labeled_x.cols() > 0) {
    const MatrixXd l = net.forward(state.params, labeled_x, &tape);
    out.ce = cross_entropy(l, labeled_y);
    MatrixXd d = softmax(l);
    for (Index j = 0; j < d.cols(); ++j) {
      const int y = labeled_y[std::size_t(j)];
      require(y >= 0 && y < net.num_classes(), "joint loss: label out of range");
      d(y, j) -= 1.0;
    }
    d /= double(labeled_x.cols());
    net.backward(state.params, tape, d, &out.grad, nullptr);
  }

  if (lambda_gen > 0.0) {
    require(all_x.cols() > 0, "joint loss: empty MLE batch");
    require(negatives.cols() > 0, "joint loss: no negative samples");
    // dE/dlogits = -softmax
    const MatrixXd lp = net.forward(state.params, all_x, &tape);
    out.energy_data = energy(lp).mean();
    net.backward(state.params, tape, softmax(lp) * (-lambda_gen / double(all_x.cols())), &out.grad, nullptr);

    const MatrixXd ln = net.forward(state.params, negatives, &tape);
    out.energy_negative = energy(ln).mean();
    net.backward(state.params, tape, softmax(ln) * (lambda_gen / double(negatives.cols())), &out.grad, nullptr);
    out.energy_gap = out.energy_data - out.energy_negative;
  }

  out.loss = out.ce + lambda_gen * out.energy_gap;
  if (!std::isfinite(out.loss) || !out.grad.allFinite()) throw NumericError("joint loss is not finite");
  return out;
}

Optimizer::Optimizer(const TrainConfig& config, Index num_params)
    : config_(config), m_(VectorXd::Zero(num_params)), v_(VectorXd::Zero(num_params)) {}

void Optimizer::step(VectorXd& params, const VectorXd& grad) {
  ++t_;
  if (config_.optimizer == OptimizerKind::sgd) {
    if (config_.momentum > 0.0) {
      m_ = config_.momentum * m_ + grad;
      params -= config_.learning_rate * m_;
    } else {
      params -= config_.learning_rate * grad;
    }
    return;
  }
  constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  m_ = b1 * m_ + (1 - b1) * grad;
  v_ = b2 * v_ + (1 - b2) * grad.cwiseAbs2();
  const double c1 = 1 - std::pow(b1, double(t_));
  const double c2 = 1 - std::pow(b2, double(t_));
  params.array() -= config_.learning_rate * (m_.array() / c1) / ((v_.array() / c2).sqrt() + eps);
}

VectorXd augment_image(const VectorXd& image, const ImageShape& s, Rng& rng) {
  constexpr int pad = 4;
  std::uniform_int_distribution<int> shift(-pad, pad);
  std::bernoulli_distribution flip(0.5);
  const int dy = shift(rng), dx = shift(rng);
  const bool mirror = flip(rng);
  auto reflect = [](int i, int n) {
    if (n == 1) return 0;
    while (i < 0 || i >= n) i = i < 0 ? -i : 2 * (n - 1) - i;
    return i;
  };
  VectorXd out(image.size());
  for (int c = 0; c < s.channels; ++c)
    for (int y = 0; y < s.height; ++y)
      for (int x = 0; x < s.width; ++x) {
        const int sx = mirror ? s.width - 1 - x : x;
        const int iy = reflect(y + dy, s.height), ix = reflect(sx + dx, s.width);
        out((Index(c) * s.height + y) * s.width + x) = image((Index(c) * s.height + iy) * s.width + ix);
      }
  return out;
}

namespace {

std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t k, Rng& rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  for (std::size_t i = 0; i < k; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, n - 1);
    std::swap(idx[i], idx[pick(rng)]);
  }
  idx.resize(k);
  return idx;
}

// Positions into the labeled pool. Round-robin over the classes present when the
// pool is small, so tiny pools still give every batch every class.
std::vector<std::size_t> labeled_batch_positions(std::span<const int> labels, Index batch, int num_classes,
                                                 Rng& rng) {
  const std::size_t n = labels.size();
  const std::size_t k = std::min<std::size_t>(std::size_t(batch), n);
  if (n >= std::size_t(10 * num_classes)) return sample_without_replacement(n, k, rng);

  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < n; ++i) by_class[labels[i]].push_back(i);
  for (auto& [cls, members] : by_class) std::shuffle(members.begin(), members.end(), rng);
  std::vector<std::size_t> out;
  std::map<int, std::size_t> cursor;
  while (out.size() < k)
    for (auto& [cls, members] : by_class) {
      if (out.size() == k) break;
      std::size_t& c = cursor[cls];
      if (c < members.size()) out.push_back(members[c++]);
    }
  return out;
}

struct LabeledBatch {
  MatrixXd x;
  std::vector<int> y;
};

LabeledBatch assemble_labeled(const Dataset& ds, std::span<const Index> ids, std::span<const int> labels,
                              const std::vector<std::size_t>& pos, bool augment, Rng& rng, Index& augmented) {
  LabeledBatch b;
  b.x.resize(ds.dim(), Index(pos.size()));
  for (std::size_t j = 0; j < pos.size(); ++j) {
    VectorXd col = ds.features.col(ids[pos[j]]);
    if (augment) {
      col = augment_image(col, ds.image, rng);
      ++augmented;
    }
    b.x.col(Index(j)) = col;
    b.y.push_back(labels[pos[j]]);
  }
  return b;
}

}  // namespace

RoundResult train_round(const ModelState<double>& state, const PoolPartition& pools, const Dataset& dataset,
                        const TrainConfig& cfg, const SGLDConfig& sgld_cfg, Rng& rng) {
  cfg.validate();
  sgld_cfg.validate();
  RoundResult result{state, {}};
  if (cfg.epochs_per_round == 0) return result;

  const Network<double> net(state.arch);
  require(net.input_dim() == dataset.dim(), "train: model input does not match dataset dimension");

  std::vector<Index> all_ids = pools.labeled_ids;
  all_ids.insert(all_ids.end(), pools.unlabeled_ids.begin(), pools.unlabeled_ids.end());
  require(!all_ids.empty(), "train: both pools are empty");

  const bool generative = cfg.lambda_gen > 0.0;
  const bool augment = cfg.augmentation && dataset.image.valid();
  const Index steps_per_epoch = cfg.steps_per_epoch > 0
                                    ? cfg.steps_per_epoch
                                    : std::max<Index>(1, (Index(all_ids.size()) + cfg.batch_all - 1) / cfg.batch_all);

  GaussianMixtureInit mixture;
  if (generative && sgld_cfg.init_mode == InitMode::informative) {
    std::vector<Index> counts(std::size_t(dataset.num_classes), 0);
    for (int y : pools.labeled_labels) ++counts[std::size_t(y)];
    const bool per_class = std::all_of(counts.begin(), counts.end(), [](Index c) { return c >= 2; });
    mixture = per_class ? fit_informative_init(dataset.gather(pools.labeled_ids), pools.labeled_labels)
                        : fit_informative_init(dataset.gather(all_ids));
  }

  ModelState<double> cur = state;
  Optimizer opt(cfg, net.num_params());
  RoundMetrics& m = result.metrics;
  double sum_ce = 0, sum_gap = 0, sum_norm = 0, sum_ed = 0, sum_en = 0;

  for (int epoch = 0; epoch < cfg.epochs_per_round; ++epoch) {
    EpochMetrics em;
    em.epoch = epoch + 1;
    for (Index s = 0; s < steps_per_epoch; ++s) {
      LabeledBatch lb;
      lb.x.resize(dataset.dim(), 0);
      if (!pools.labeled_ids.empty()) {
        const auto pos = labeled_batch_positions(pools.labeled_labels, cfg.batch_labeled, dataset.num_classes, rng);
        lb = assemble_labeled(dataset, pools.labeled_ids, pools.labeled_labels, pos, augment, rng,
                              m.augmented_labeled);
      }
      MatrixXd all_x(dataset.dim(), 0), negatives(dataset.dim(), 0);
      if (generative) {
        const auto pos = sample_without_replacement(all_ids.size(), std::min(all_ids.size(), std::size_t(cfg.batch_all)), rng);
        std::vector<Index> ids;
        for (auto p : pos) ids.push_back(all_ids[p]);
        all_x = dataset.gather(ids);  // no augmentation on the MLE path
      }

      JointLoss jl;
      try {
        if (generative) negatives = run_chain(cur, sgld_cfg, mixture, all_x.cols(), rng);
        jl = joint_loss_and_grads(cur, lb.x, lb.y, all_x, negatives, cfg.lambda_gen);
      } catch (const NumericError& e) {
        throw TrainingDiverged(std::string("training diverged: ") + e.what(), state);
      }
      const double norm = jl.grad.norm();
      if (cfg.grad_clip > 0.0 && norm > cfg.grad_clip) jl.grad *= cfg.grad_clip / norm;
      opt.step(cur.params, jl.grad);
      if (!cur.params.allFinite()) throw TrainingDiverged("training diverged: non-finite parameters", state);

      em.ce += jl.ce;
      em.energy_gap += jl.energy_gap;
      em.grad_norm += norm;
      sum_ed += jl.energy_data;
      sum_en += jl.energy_negative;
      ++m.steps;
    }
    sum_ce += em.ce;
    sum_gap += em.energy_gap;
    sum_norm += em.grad_norm;
    em.ce /= double(steps_per_epoch);
    em.energy_gap /= double(steps_per_epoch);
    em.grad_norm /= double(steps_per_epoch);
    m.epochs.push_back(em);
  }
  const double n = double(m.steps);
  m.mean_ce = sum_ce / n;
  m.mean_energy_gap = sum_gap / n;
  m.mean_grad_norm = sum_norm / n;
  m.energy_data = sum_ed / n;
  m.energy_negative = sum_en / n;
  result.state = std::move(cur);
  return result;
}

RoundResult train_baseline(const ModelState<double>& state, std::span<const Index> labeled_ids,
                           std::span<const int> labels, const Dataset& dataset, const TrainConfig& train_cfg,
                           Rng& rng) {
  PoolPartition pools;
  pools.labeled_ids.assign(labeled_ids.begin(), labeled_ids.end());
  pools.labeled_labels.assign(labels.begin(), labels.end());
  TrainConfig cfg = train_cfg;
  cfg.lambda_gen = 0.0;
  return train_round(state, pools, dataset, cfg, SGLDConfig{}, rng);
}

}  // namespace calico
