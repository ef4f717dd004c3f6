#pragma once

#include <string>
#include <variant>

#include <json.hpp>

#include "heteo/forest.hpp"
#include "heteo/rlearner.hpp"

namespace heteo {

enum class EstimatorKind { Forest, RLearner };

std::string to_string(EstimatorKind k);
EstimatorKind estimator_kind_from_string(const std::string& s);

struct EstimatorSpec {
  EstimatorKind kind = EstimatorKind::Forest;
  CausalForestSpec forest;
  RLearnerSpec rlearner;

  /// Same spec with its seeds replaced by streams derived from `seed`.
  EstimatorSpec reseeded(std::uint64_t seed) const;
};

/// Applies `params` (the estimator.params object of a run config) to `spec`.
/// Unknown keys are rejected.
void apply_estimator_params(EstimatorSpec& spec, const nlohmann::json& params);

/// A fitted heterogeneity model plus the fingerprint of the embedding
/// pipeline that produced its covariates.
struct CateModel {
  std::variant<CausalForestModel, RLearnerModel> model;
  std::string fingerprint;
  int n_features = 0;

  EstimatorKind kind() const;
};

CateModel fit_cate(const MatrixXd& x, const VectorXd& w, const VectorXd& y, const EstimatorSpec& spec,
                   std::string fingerprint = {});

/// Predictions for new rows (all trees for forests).
VectorXd predict_cate(const CateModel& model, const MatrixXd& x);

nlohmann::json to_json(const CateModel& m);
CateModel cate_from_json(const nlohmann::json& j);

void save_model(const CateModel& m, const std::string& path);
CateModel load_model(const std::string& path);

}  // namespace heteo
