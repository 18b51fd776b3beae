#pragma once

#include "calico/data.hpp"
#include "calico/network.hpp"

#include <span>
#include <vector>

namespace calico {

inline constexpr int kDefaultBins = 15;

struct CalibrationBin {
  double lower = 0;  // open
  double upper = 0;  // closed
  Index count = 0;
  double accuracy = 0;    // 0 when empty
  double confidence = 0;  // 0 when empty
};

struct CalibrationReport {
  int num_bins = kDefaultBins;
  std::vector<CalibrationBin> bins;
  double ece = 0;
  double accuracy = 0;
  Index num_samples = 0;
};

/// 1-based bin m with (m-1)/M < c <= m/M, boundaries evaluated as double(m)/M.
int bin_index(double confidence, int num_bins);

/// Expected calibration error over equal-width bins: sum_m |B_m|/N * |acc(B_m) - conf(B_m)|.
CalibrationReport compute_ece(std::span<const double> confidences, std::span<const bool> correct,
                              int num_bins = kDefaultBins);

/// Posterior, confidence and argmax prediction for every column of x, then ECE.
CalibrationReport evaluate_model(const ModelState<double>& state, const MatrixXd& x, std::span<const int> labels,
                                 int num_bins = kDefaultBins);
CalibrationReport evaluate_model(const ModelState<double>& state, const Dataset& dataset,
                                 std::span<const Index> eval_ids, int num_bins = kDefaultBins);

struct ReliabilityRow {
  int bin = 0;  // 1-based
  double lower = 0;
  double upper = 0;
  double midpoint = 0;
  double accuracy = 0;
  double confidence = 0;
  Index count = 0;
  double deviation = 0;  // accuracy - confidence
};

std::vector<ReliabilityRow> reliability_table(const CalibrationReport& report);

/// Mean negative log-likelihood of softmax(logits / T).
double temperature_nll(const MatrixXd& logits, std::span<const int> labels, double temperature);

/// Temperature minimizing held-out NLL: golden-section search over log T in [-3, 3].
double temperature_scale(const MatrixXd& logits, std::span<const int> labels, double tol = 1e-4);

}  // namespace calico
