#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include <json.hpp>

#include "heteo/common.hpp"

namespace heteo {

struct RLearnerSpec {
  int folds = 5;
  std::vector<double> lambda_grid;  // empty: 50 log-spaced points from λ_max to 1e-3·λ_max
  int grid_size = 50;
  double grid_ratio = 1e-3;
  double ridge_penalty = 1e-3;
  double tolerance = 1e-8;  // KKT residual at which coordinate descent stops
  int max_sweeps = 100000;
  std::optional<double> fixed_lambda;  // skip CV and use this λ
  std::uint64_t seed = 0;

  void validate() const;
};

struct RLearnerModel {
  VectorXd beta;
  double intercept = 0.0;
  double lambda = 0.0;
  double lambda_max = 0.0;
  double e_hat = 0.5;
  std::vector<VectorXd> m_hat;  // ridge coefficients per fold, intercept first
  double kkt_residual = 0.0;      // final fit
  double max_cv_kkt_residual = 0.0;  // worst over every CV fit
  int sweeps = 0;
};

/// Ridge regression with unpenalised intercept; returns (intercept, coefficients...).
VectorXd ridge_fit(const MatrixXd& x, const VectorXd& y, double penalty);
VectorXd ridge_predict(const VectorXd& coef, const MatrixXd& x);

/// Solution of  min Σ_i (r_i − z_i·(β₀ + x_i·β))² + λ‖β‖₁  (β₀ unpenalised).
struct WeightedLassoFit {
  double intercept = 0.0;
  VectorXd beta;
  double objective = 0.0;
  double kkt_residual = 0.0;
  int sweeps = 0;
};

class WeightedLasso {
public:
  WeightedLasso(const MatrixXd& x, const VectorXd& z, const VectorXd& r);

  /// Smallest λ at which β = 0 is optimal.
  double lambda_max() const { return lambda_max_; }
  double objective(double intercept, const VectorXd& beta, double lambda) const;
  double kkt_residual(double intercept, const VectorXd& beta, double lambda) const;

  /// Cyclic coordinate descent with soft-thresholding. Asserts a monotone
  /// objective per sweep; throws ConvergenceError after `max_sweeps`.
  WeightedLassoFit solve(double lambda, double tolerance, int max_sweeps,
                         const WeightedLassoFit* warm_start = nullptr) const;

private:
  MatrixXd a_;  // z_i * x_ij
  VectorXd z_;
  VectorXd r_;
  VectorXd col_sq_;
  double z_sq_ = 0.0;
  double lambda_max_ = 0.0;
};

std::vector<double> default_lambda_grid(double lambda_max, int size, double ratio);

/// Fold labels 0..k-1 for n units, balanced, shuffled by seed.
std::vector<int> assign_folds(std::size_t n, int k, std::uint64_t seed);

/// Cross-fitted R-learner: ridge m̂(x), ê = mean(W), lasso on residuals with
/// λ chosen by k-fold CV.
RLearnerModel fit_rlearner(const MatrixXd& x, const VectorXd& w, const VectorXd& y, const RLearnerSpec& spec);

VectorXd predict_rlearner(const RLearnerModel& model, const MatrixXd& x);

nlohmann::json to_json(const RLearnerModel& m);
RLearnerModel rlearner_from_json(const nlohmann::json& j);

}  // namespace heteo
