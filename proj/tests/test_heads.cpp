#include "calico/heads.hpp"

#include "support.hpp"

#include <doctest.h>

#include <vector>

using namespace calico;
using testing::random_matrix;
using testing::rel_error;

TEST_CASE("posterior columns sum to one") {
  const MatrixXd l = random_matrix(7, 1000, 11, 5.0);
  const MatrixXd p = softmax(l);
  for (Index j = 0; j < p.cols(); ++j) {
    CHECK(std::abs(p.col(j).sum() - 1.0) < 1e-9);
    CHECK(p.col(j).minCoeff() >= 0.0);
  }
}

TEST_CASE("posterior times exp(LogSumExp) recovers exp(logit)") {
  const MatrixXd l = random_matrix(5, 1000, 12, 4.0);
  const MatrixXd p = softmax(l);
  const RowVectorX<double> lse = log_sum_exp(l);
  double worst = 0;
  for (Index j = 0; j < l.cols(); ++j)
    for (Index y = 0; y < l.rows(); ++y) {
      // long double direct evaluation as the reference
      long double z = 0;
      for (Index k = 0; k < l.rows(); ++k) z += std::exp((long double)l(k, j));
      CHECK(rel_error(double(std::log(z)), lse(j)) < 1e-12);
      worst = std::max(worst, rel_error(p(y, j) * std::exp(lse(j)), std::exp(l(y, j))));
    }
  CHECK(worst < 1e-9);
}

TEST_CASE("LogSumExp stays finite for large logits") {
  MatrixXd l(3, 2);
  l << 1000, -1000, 1001, -1001, 999, -999;
  const RowVectorX<double> lse = log_sum_exp(l);
  CHECK(std::isfinite(lse(0)));
  CHECK(std::isfinite(lse(1)));
  CHECK(lse(0) == doctest::Approx(1001 + std::log(1 + std::exp(-1.0) + std::exp(-2.0))).epsilon(1e-14));
  CHECK(lse(1) == doctest::Approx(-999 + std::log(1 + std::exp(-1.0) + std::exp(-2.0))).epsilon(1e-14));
  CHECK(softmax(l).allFinite());
}

TEST_CASE("energy is the negative LogSumExp") {
  const MatrixXd l = random_matrix(4, 20, 13);
  CHECK((energy(l) + log_sum_exp(l)).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("log_softmax matches log of softmax") {
  const MatrixXd l = random_matrix(6, 50, 14, 3.0);
  CHECK((log_softmax(l) - softmax(l).array().log().matrix()).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("confidence returns max probability and breaks ties to the lowest class") {
  MatrixXd p(3, 3);
  p << 0.2, 0.4, 1.0 / 3, 0.5, 0.4, 1.0 / 3, 0.3, 0.2, 1.0 / 3;
  CHECK(confidence(p.col(0)).value == 0.5);
  CHECK(confidence(p.col(0)).cls == 1);
  CHECK(confidence(p.col(1)).value == 0.4);
  CHECK(confidence(p.col(1)).cls == 0);
  CHECK(confidence(p.col(2)).cls == 0);
}

TEST_CASE("cross entropy is the mean negative log posterior of the label") {
  const MatrixXd l = random_matrix(3, 4, 15);
  const std::vector<int> y{0, 2, 1, 2};
  double expected = 0;
  for (Index j = 0; j < 4; ++j) {
    double z = 0;
    for (Index k = 0; k < 3; ++k) z += std::exp(l(k, j));
    expected -= l(y[std::size_t(j)], j) - std::log(z);
  }
  CHECK(cross_entropy(l, y) == doctest::Approx(expected / 4).epsilon(1e-13));
}
