#include "calico/calibration.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <set>

namespace calico {

int bin_index(double c, int num_bins) {
  int m = int(std::ceil(c * num_bins));
  m = std::clamp(m, 1, num_bins);
  while (m > 1 && c <= double(m - 1) / num_bins) --m;
  while (m < num_bins && c > double(m) / num_bins) ++m;
  return m;
}

CalibrationReport compute_ece(std::span<const double> confidences, std::span<const bool> correct, int num_bins) {
  require(confidences.size() == correct.size(), "ece: confidences and correctness differ in length");
  require(!confidences.empty(), "ece: empty input");
  require(num_bins >= 1, "ece: need at least one bin");

  CalibrationReport r;
  r.num_bins = num_bins;
  r.num_samples = Index(confidences.size());
  r.bins.resize(std::size_t(num_bins));
  std::vector<double> conf_sum(std::size_t(num_bins), 0.0), hits(std::size_t(num_bins), 0.0);
  double total_hits = 0;
  for (std::size_t i = 0; i < confidences.size(); ++i) {
    const double c = confidences[i];
    require(c > 0.0 && c <= 1.0, "ece: confidence outside (0, 1]");
    const auto b = std::size_t(bin_index(c, num_bins) - 1);
    ++r.bins[b].count;
    conf_sum[b] += c;
    hits[b] += correct[i] ? 1.0 : 0.0;
    total_hits += correct[i] ? 1.0 : 0.0;
  }
  const double n = double(confidences.size());
  for (int m = 0; m < num_bins; ++m) {
    auto& bin = r.bins[std::size_t(m)];
    bin.lower = double(m) / num_bins;
    bin.upper = double(m + 1) / num_bins;
    if (bin.count == 0) continue;
    bin.accuracy = hits[std::size_t(m)] / double(bin.count);
    bin.confidence = conf_sum[std::size_t(m)] / double(bin.count);
    r.ece += double(bin.count) / n * std::abs(bin.accuracy - bin.confidence);
  }
  r.accuracy = total_hits / n;
  return r;
}

CalibrationReport evaluate_model(const ModelState<double>& state, const MatrixXd& x, std::span<const int> labels,
                                 int num_bins) {
  require(x.cols() > 0, "evaluate: empty evaluation set");
  require(x.cols() == Index(labels.size()), "evaluate: label count mismatch");
  const MatrixXd p = softmax(logits(state, x));
  std::vector<double> conf(labels.size());
  std::vector<char> hit(labels.size());
  for (Index j = 0; j < p.cols(); ++j) {
    const auto c = confidence(p.col(j));
    conf[std::size_t(j)] = c.value;
    hit[std::size_t(j)] = c.cls == labels[std::size_t(j)];
  }
  std::unique_ptr<bool[]> correct(new bool[hit.size()]);
  for (std::size_t i = 0; i < hit.size(); ++i) correct[i] = hit[i] != 0;
  return compute_ece(conf, std::span<const bool>(correct.get(), hit.size()), num_bins);
}

CalibrationReport evaluate_model(const ModelState<double>& state, const Dataset& dataset,
                                 std::span<const Index> eval_ids, int num_bins) {
  const auto labels = dataset.gather_labels(eval_ids);
  return evaluate_model(state, dataset.gather(eval_ids), labels, num_bins);
}

std::vector<ReliabilityRow> reliability_table(const CalibrationReport& report) {
  std::vector<ReliabilityRow> rows;
  for (std::size_t m = 0; m < report.bins.size(); ++m) {
    const auto& b = report.bins[m];
    ReliabilityRow r;
    r.bin = int(m) + 1;
    r.lower = b.lower;
    r.upper = b.upper;
    r.midpoint = 0.5 * (b.lower + b.upper);
    r.count = b.count;
    r.accuracy = b.accuracy;
    r.confidence = b.confidence;
    r.deviation = b.count ? b.accuracy - b.confidence : 0.0;
    rows.push_back(r);
  }
  return rows;
}

double temperature_nll(const MatrixXd& logits, std::span<const int> labels, double temperature) {
  return cross_entropy(logits / temperature, labels);
}

double temperature_scale(const MatrixXd& logits, std::span<const int> labels, double tol) {
  require(logits.cols() > 0, "temperature scaling: empty held-out set");
  require(logits.cols() == Index(labels.size()), "temperature scaling: label count mismatch");
  require(std::set<int>(labels.begin(), labels.end()).size() >= 2,
          "temperature scaling: held-out set contains a single class");

  auto f = [&](double log_t) { return temperature_nll(logits, labels, std::exp(log_t)); };
  const double inv_phi = (std::sqrt(5.0) - 1.0) / 2.0;
  double a = -3.0, b = 3.0;
  double c = b - inv_phi * (b - a), d = a + inv_phi * (b - a);
  double fc = f(c), fd = f(d);
  while (b - a > tol) {
    if (fc < fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - inv_phi * (b - a);
      fc = f(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + inv_phi * (b - a);
      fd = f(d);
    }
  }
  return std::exp(0.5 * (a + b));
}

}  // namespace calico
