#pragma once

// Pooled logistic regression by iteratively reweighted least squares.

#include <Eigen/Dense>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "qalopt/common.hpp"

namespace qalopt {

struct LogisticFit {
  std::vector<double> beta;  // includes leading intercept
  int iterations = 0;
  double max_score = 0.0;  // final gradient sup-norm
};

class LogisticError : public std::runtime_error {
 public:
  LogisticError(const std::string& what, int feature = -1)
      : std::runtime_error(what), offending_feature(feature) {}
  int offending_feature;  // -1 when not feature specific
};

// X: row-major design (intercept NOT included; added internally),
// y: 0/1 responses. Converges when the gradient sup-norm drops below
// 1e-8, errors on separation or a singular information matrix.
inline LogisticFit fit_logistic(const std::vector<std::vector<double>>& X,
                                const std::vector<int>& y,
                                int max_iter = 100) {
  const std::size_t n = X.size();
  if (n == 0 || y.size() != n)
    throw LogisticError("fit_logistic: empty or mismatched data");
  const std::size_t d = X[0].size() + 1;
  int n1 = 0;
  for (int yi : y) n1 += yi;
  if (n1 == 0 || n1 == static_cast<int>(n))
    throw LogisticError("fit_logistic: single response class");

  Eigen::MatrixXd M(n, d);
  Eigen::VectorXd Y(n);
  for (std::size_t i = 0; i < n; ++i) {
    M(i, 0) = 1.0;
    for (std::size_t k = 0; k + 1 < d; ++k) M(i, k + 1) = X[i][k];
    Y(i) = y[i];
  }

  Eigen::VectorXd beta = Eigen::VectorXd::Zero(d);
  LogisticFit fit;
  for (int it = 0; it < max_iter; ++it) {
    Eigen::VectorXd lp = M * beta;
    Eigen::VectorXd p(n), w(n);
    for (std::size_t i = 0; i < n; ++i) {
      p(i) = logistic_cdf(lp(i));
      w(i) = std::max(p(i) * (1.0 - p(i)), 1e-12);
    }
    Eigen::VectorXd grad = M.transpose() * (Y - p);
    fit.iterations = it + 1;
    fit.max_score = grad.cwiseAbs().maxCoeff();
    if (fit.max_score < 1e-8) break;

    Eigen::MatrixXd info = M.transpose() * w.asDiagonal() * M;
    Eigen::LDLT<Eigen::MatrixXd> ldlt(info);
    if (ldlt.info() != Eigen::Success ||
        (ldlt.vectorD().array().abs() < 1e-12).any())
      throw LogisticError("fit_logistic: singular information matrix");
    beta += ldlt.solve(grad);

    // diverging coefficients signal complete separation
    double worst = 0.0;
    int worst_k = -1;
    for (std::size_t k = 0; k < d; ++k)
      if (std::abs(beta(k)) > worst) {
        worst = std::abs(beta(k));
        worst_k = static_cast<int>(k);
      }
    if (worst > 100.0)
      throw LogisticError("fit_logistic: complete separation suspected",
                          worst_k == 0 ? -1 : worst_k - 1);
  }
  fit.beta.assign(beta.data(), beta.data() + d);
  return fit;
}

inline double logistic_predict(const std::vector<double>& beta,
                               const std::vector<double>& features) {
  if (features.size() + 1 != beta.size())
    throw std::invalid_argument("logistic_predict: dimension mismatch");
  double lp = beta[0];
  for (std::size_t k = 0; k < features.size(); ++k) lp += beta[k + 1] * features[k];
  return logistic_cdf(lp);
}

}  // namespace qalopt
