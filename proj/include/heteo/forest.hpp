#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include <json.hpp>

#include "heteo/common.hpp"

namespace heteo {

struct CausalForestSpec {
  int n_trees = 500;
  double honesty_fraction = 0.5;
  int min_leaf_treated = 5;
  int min_leaf_control = 5;
  std::optional<int> mtry;       // default ceil(sqrt(d))
  std::optional<int> max_depth;  // default unbounded
  double subsample_fraction = 0.5;
  std::uint64_t seed = 0;

  void validate() const;
  int effective_mtry(int d) const;
};

struct TreeNode {
  int feature = -1;  // -1 for leaves
  double threshold = 0.0;
  int left = -1;
  int right = -1;
  double tau = 0.0;
  int n_treated = 0;  // estimation-half counts for leaves
  int n_control = 0;

  bool is_leaf() const { return feature < 0; }
};

struct CausalTree {
  std::vector<TreeNode> nodes;       // nodes[0] is the root
  std::vector<int> in_bag;           // sorted subsample indices
  std::vector<int> structure_half;   // sorted
  std::vector<int> estimation_half;  // sorted

  const TreeNode& leaf_for(const double* x) const;
  int depth() const;
};

struct CausalForestModel {
  CausalForestSpec spec;
  int n_features = 0;
  int n_train = 0;
  std::vector<CausalTree> trees;
};

/// Difference in arm means over the given units.
double leaf_effect(const std::vector<double>& treated_outcomes, const std::vector<double>& control_outcomes);

/// Honest causal forest. Each tree draws a subsample (stratified by arm),
/// splits it into a structure half and an estimation half, grows greedy splits
/// on the structure half maximising Σ n_child (τ_child − τ_parent)², and fills
/// leaves from the estimation half only.
CausalForestModel fit_causal_forest(const MatrixXd& x, const VectorXd& w, const VectorXd& y,
                                    const CausalForestSpec& spec);

/// Mean leaf effect over all trees.
VectorXd predict_forest(const CausalForestModel& model, const MatrixXd& x);

/// Out-of-bag prediction for the training rows (same order as in fitting).
VectorXd predict_forest_oob(const CausalForestModel& model, const MatrixXd& x_train);

VectorXd predict_forest(const CausalForestModel& model, const MatrixXd& x, bool oob);

nlohmann::json to_json(const CausalForestModel& m);
CausalForestModel forest_from_json(const nlohmann::json& j);

}  // namespace heteo
