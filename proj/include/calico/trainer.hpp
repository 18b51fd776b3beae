#pragma once

// Joint training of the classifier head and the energy head:
//   L = -sum_labeled log p(y|x) - sum_all log p(x).
// The second term's gradient is estimated contrastively,
//   grad E(x_data) - grad E(x_negative),
// with negatives drawn by the SGLD sampler. lambda_gen = 0 reduces the trainer
// to a plain softmax classifier.

#include "calico/data.hpp"
#include "calico/network.hpp"
#include "calico/sgld.hpp"

#include <span>
#include <vector>

namespace calico {

enum class OptimizerKind { sgd, adam };

struct TrainConfig {
  OptimizerKind optimizer = OptimizerKind::sgd;
  double learning_rate = 0.1;
  double momentum = 0.0;  // sgd only
  Index batch_labeled = 64;
  Index batch_all = 64;
  int epochs_per_round = 10;
  Index steps_per_epoch = 0;  // 0: ceil(|D_l u D_u| / batch_all)
  bool warm_start = true;
  double lambda_gen = 1.0;
  bool augmentation = false;  // labeled path only, image datasets only
  double grad_clip = 10.0;    // global L2 norm; <= 0 disables

  void validate() const;
};

struct JointLoss {
  double loss = 0;  // ce + lambda_gen * energy_gap, a surrogate for the intractable NLL
  double ce = 0;
  double energy_gap = 0;  // mean E(data) - mean E(negatives)
  double energy_data = 0;
  double energy_negative = 0;
  VectorXd grad;
};

/// Cross-entropy over the labeled batch plus lambda_gen times the energy gap
/// between data and negatives. Negatives are treated as constants.
JointLoss joint_loss_and_grads(const ModelState<double>& state, const MatrixXd& labeled_x,
                               std::span<const int> labeled_y, const MatrixXd& all_x, const MatrixXd& negatives,
                               double lambda_gen);

class Optimizer {
 public:
  Optimizer(const TrainConfig& config, Index num_params);
  void step(VectorXd& params, const VectorXd& grad);

 private:
  TrainConfig config_;
  VectorXd m_;
  VectorXd v_;
  long t_ = 0;
};

struct EpochMetrics {
  int epoch = 0;
  double ce = 0;
  double energy_gap = 0;
  double grad_norm = 0;  // before clipping
};

struct RoundMetrics {
  std::vector<EpochMetrics> epochs;
  double mean_ce = 0;
  double mean_energy_gap = 0;
  double mean_grad_norm = 0;
  double energy_data = 0;
  double energy_negative = 0;
  Index steps = 0;
  // Samples passed through augmentation, per path. The MLE path must stay at 0.
  Index augmented_labeled = 0;
  Index augmented_mle = 0;
};

/// Raised when the loss stops being finite; carries the state the round started from.
class TrainingDiverged : public NumericError {
 public:
  TrainingDiverged(const std::string& what, ModelState<double> last_good)
      : NumericError(what), last_good_(std::move(last_good)) {}
  const ModelState<double>& last_good() const { return last_good_; }

 private:
  ModelState<double> last_good_;
};

/// Random crop after 4-pixel reflect padding plus horizontal flip, on one
/// channel-major image column.
VectorXd augment_image(const VectorXd& image, const ImageShape& shape, Rng& rng);

struct RoundResult {
  ModelState<double> state;
  RoundMetrics metrics;
};

/// epochs_per_round passes over D_l u D_u. Labeled batches come from D_l with the
/// pool's oracle labels; MLE batches come from D_l u D_u and are never augmented.
RoundResult train_round(const ModelState<double>& state, const PoolPartition& pools, const Dataset& dataset,
                        const TrainConfig& train_cfg, const SGLDConfig& sgld_cfg, Rng& rng);

/// Softmax-only training on a fixed labeled set.
RoundResult train_baseline(const ModelState<double>& state, std::span<const Index> labeled_ids,
                           std::span<const int> labels, const Dataset& dataset, const TrainConfig& train_cfg,
                           Rng& rng);

}  // namespace calico
