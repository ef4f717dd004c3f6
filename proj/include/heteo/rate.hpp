#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "heteo/cate.hpp"
#include "heteo/common.hpp"
#include "heteo/data_model.hpp"

namespace heteo {

enum class Weighting { Autoc, Qini };

std::string to_string(Weighting w);
Weighting weighting_from_string(const std::string& s);

/// Unit-level treatment-effect scores whose mean estimates the ATE.
struct DrScores {
  VectorXd gamma;
};

/// IPW scores with a known propensity.
DrScores dr_scores(const VectorXd& w, const VectorXd& y, double propensity);
DrScores dr_scores(const VectorXd& w, const VectorXd& y, const VectorXd& propensity);
/// AIPW scores with cross-fitted arm-specific outcome predictions.
DrScores dr_scores(const VectorXd& w, const VectorXd& y, const VectorXd& propensity, const VectorXd& m1_hat,
                   const VectorXd& m0_hat);

/// TOC(k/n) = mean(γ over the k highest scores) − mean(γ), k = 1..n.
/// Units are ordered by decreasing score; equal scores keep their original order.
struct TocCurve {
  VectorXd q;
  VectorXd toc;
  bool constant_scores = false;
  bool constant_gamma = false;

  Eigen::Index size() const { return toc.size(); }
};

TocCurve toc_curve(const VectorXd& scores, const VectorXd& gamma);

struct RateValue {
  double value = 0.0;
  bool degenerate = false;  // constant priority scores
};

/// (1/n) Σ α(k/n)·TOC(k/n); α ≡ 1 (AUTOC) or α(q) = q (QINI).
/// Constant scores or constant γ give exactly 0; constant scores also set the flag.
RateValue rate_point(const TocCurve& curve, Weighting weighting);
RateValue rate_point(const VectorXd& scores, const VectorXd& gamma, Weighting weighting);

struct RateSe {
  double se = 0.0;
  std::vector<double> replicates;
};

/// Half-sample bootstrap: B draws of ⌊N/2⌋ units without replacement,
/// se = √2 · sd(replicates).
RateSe rate_se(const VectorXd& scores, const VectorXd& gamma, Weighting weighting, int bootstrap = 200,
               std::uint64_t seed = 0);

struct FoldReport {
  double point = 0.0;
  double se = 0.0;
  double ratio = 0.0;
  std::size_t n = 0;
  bool degenerate = false;
};

struct RateReport {
  Weighting weighting = Weighting::Autoc;
  double point = 0.0;  // mean of fold points
  double se = 0.0;     // se of that mean, folds treated as independent
  double ratio = 0.0;  // mean of fold ratios (headline)
  bool significant = false;
  bool degenerate = false;
  int folds = 5;
  std::vector<FoldReport> per_fold;

  VectorXd held_out_scores;  // τ̂ for each unit from the model that did not see its fold
  std::vector<int> fold_of;
};

nlohmann::json to_json(const RateReport& r);
RateReport rate_report_from_json(const nlohmann::json& j);

struct CrossFitOptions {
  int folds = 5;
  int bootstrap = 200;
  std::uint64_t seed = 0;
};

/// Outcome data for cross-fitting, aligned with the covariate rows.
struct RateInputs {
  VectorXd w;
  VectorXd y;
  VectorXd propensity;
  std::vector<std::string> clusters;  // empty: no clustering

  static RateInputs from_table(const UnitTable& table, const Propensity& propensity);
};

/// Fold labels; whole clusters go to one fold when clusters are present.
std::vector<int> cross_fit_folds(const RateInputs& in, int folds, std::uint64_t seed);

RateReport cross_fit_rate(const RateInputs& in, const MatrixXd& x, const EstimatorSpec& estimator,
                          Weighting weighting, const CrossFitOptions& opts = {});

RateReport cross_fit_rate(const ExperimentDataset& dataset, const EmbeddingMatrix& embeddings,
                          const EstimatorSpec& estimator, Weighting weighting, const CrossFitOptions& opts = {});

struct Correlation {
  double value = 0.0;
  bool degenerate = false;
};

/// Pearson correlation; zero variance on either side gives 0 with the flag set.
Correlation truth_correlation(const VectorXd& tau_hat, const VectorXd& tau_true);

/// Ordinary least squares via column-pivoted QR.
struct OlsFit {
  std::vector<std::string> names;
  VectorXd coef;
  VectorXd se;
  double residual_variance = 0.0;
  double r2 = 0.0;
  double adj_r2 = 0.0;
  std::size_t n = 0;
};

OlsFit ols(const MatrixXd& x, const VectorXd& y, const std::vector<std::string>& names);

struct MetaRun {
  double rate_ratio = 0.0;
  bool is_video = false;
  bool with_tabular = false;
  bool weighting_is_qini = false;
  bool with_pc = false;
  std::string application;
  double log1p_params = 0.0;
};

/// Regresses RATE ratios on design factors (intercept, indicators,
/// application dummies against the first level, log(1+params)).
OlsFit meta_regression(const std::vector<MetaRun>& runs);
std::vector<MetaRun> read_meta_runs(const std::string& csv_path);
std::string render_regression_table(const OlsFit& fit);

}  // namespace heteo
