#include "heteo/cate.hpp"

#include <fstream>

namespace heteo {

std::string to_string(EstimatorKind k) { return k == EstimatorKind::Forest ? "forest" : "rlearner"; }

EstimatorKind estimator_kind_from_string(const std::string& s) {
  if (s == "forest") return EstimatorKind::Forest;
  if (s == "rlearner") return EstimatorKind::RLearner;
  throw SpecError("unknown estimator '" + s + "' (expected forest or rlearner)");
}

EstimatorSpec EstimatorSpec::reseeded(std::uint64_t seed) const {
  EstimatorSpec s = *this;
  s.forest.seed = stream_seed(seed, 0xf0);
  s.rlearner.seed = stream_seed(seed, 0x71);
  return s;
}

void apply_estimator_params(EstimatorSpec& spec, const nlohmann::json& params) {
  if (params.is_null()) return;
  if (!params.is_object()) throw ValidationError("estimator.params must be an object");
  for (const auto& [key, v] : params.items()) {
    if (key == "n_trees") spec.forest.n_trees = v.get<int>();
    else if (key == "honesty_fraction") spec.forest.honesty_fraction = v.get<double>();
    else if (key == "min_leaf_treated") spec.forest.min_leaf_treated = v.get<int>();
    else if (key == "min_leaf_control") spec.forest.min_leaf_control = v.get<int>();
    else if (key == "mtry") spec.forest.mtry = v.get<int>();
    else if (key == "max_depth") spec.forest.max_depth = v.get<int>();
    else if (key == "subsample_fraction") spec.forest.subsample_fraction = v.get<double>();
    else if (key == "seed") spec.forest.seed = spec.rlearner.seed = v.get<std::uint64_t>();
    else if (key == "folds") spec.rlearner.folds = v.get<int>();
    else if (key == "lambda_grid") spec.rlearner.lambda_grid = v.get<std::vector<double>>();
    else if (key == "lambda") spec.rlearner.fixed_lambda = v.get<double>();
    else if (key == "ridge_penalty") spec.rlearner.ridge_penalty = v.get<double>();
    else if (key == "tolerance") spec.rlearner.tolerance = v.get<double>();
    else if (key == "max_sweeps") spec.rlearner.max_sweeps = v.get<int>();
    else throw ValidationError("unknown estimator parameter '" + key + "'");
  }
}

EstimatorKind CateModel::kind() const {
  return std::holds_alternative<CausalForestModel>(model) ? EstimatorKind::Forest : EstimatorKind::RLearner;
}

CateModel fit_cate(const MatrixXd& x, const VectorXd& w, const VectorXd& y, const EstimatorSpec& spec,
                   std::string fingerprint) {
  CateModel m;
  m.fingerprint = std::move(fingerprint);
  m.n_features = static_cast<int>(x.cols());
  if (spec.kind == EstimatorKind::Forest)
    m.model = fit_causal_forest(x, w, y, spec.forest);
  else
    m.model = fit_rlearner(x, w, y, spec.rlearner);
  return m;
}

VectorXd predict_cate(const CateModel& model, const MatrixXd& x) {
  return std::visit(
      [&](const auto& m) -> VectorXd {
        using T = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<T, CausalForestModel>)
          return predict_forest(m, x);
        else
          return predict_rlearner(m, x);
      },
      model.model);
}

nlohmann::json to_json(const CateModel& m) {
  nlohmann::json j = {{"format", "heteo-cate-v1"},
                      {"estimator", to_string(m.kind())},
                      {"fingerprint", m.fingerprint},
                      {"n_features", m.n_features}};
  std::visit([&](const auto& inner) { j["model"] = to_json(inner); }, m.model);
  return j;
}

CateModel cate_from_json(const nlohmann::json& j) {
  if (j.value("format", "") != "heteo-cate-v1") throw FormatError("not a heteo CATE model file");
  CateModel m;
  m.fingerprint = j.at("fingerprint").get<std::string>();
  m.n_features = j.at("n_features").get<int>();
  if (estimator_kind_from_string(j.at("estimator").get<std::string>()) == EstimatorKind::Forest)
    m.model = forest_from_json(j.at("model"));
  else
    m.model = rlearner_from_json(j.at("model"));
  return m;
}

void save_model(const CateModel& m, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path);
  out << to_json(m).dump() << '\n';
}

CateModel load_model(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  try {
    return cate_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed model JSON: ") + e.what());
  }
}

}  // namespace heteo
