#include "heteo/rate.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <set>

namespace heteo {

namespace {

bool all_equal(const VectorXd& v) {
  for (Eigen::Index i = 1; i < v.size(); ++i)
    if (v[i] != v[0]) return false;
  return true;
}

void check_propensity(double p) {
  if (!(p > 0.0 && p < 1.0)) throw DomainError("propensity " + std::to_string(p) + " outside (0,1)");
}

void check_arms(const VectorXd& w) {
  bool t = false, c = false;
  for (Eigen::Index i = 0; i < w.size(); ++i) {
    if (w[i] == 1.0) t = true;
    else if (w[i] == 0.0) c = true;
    else throw DomainError("treatment must be 0 or 1");
  }
  if (!t || !c) throw DegenerateDesignError("scores need both treatment arms");
}

VectorXd subset(const VectorXd& v, const std::vector<int>& idx) {
  VectorXd out(static_cast<Eigen::Index>(idx.size()));
  for (std::size_t i = 0; i < idx.size(); ++i) out[static_cast<Eigen::Index>(i)] = v[idx[i]];
  return out;
}

MatrixXd subset_rows(const MatrixXd& m, const std::vector<int>& idx) {
  MatrixXd out(static_cast<Eigen::Index>(idx.size()), m.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = m.row(idx[i]);
  return out;
}

}  // namespace

std::string to_string(Weighting w) { return w == Weighting::Autoc ? "autoc" : "qini"; }

Weighting weighting_from_string(const std::string& s) {
  std::string l = s;
  std::transform(l.begin(), l.end(), l.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (l == "autoc") return Weighting::Autoc;
  if (l == "qini") return Weighting::Qini;
  throw SpecError("unknown weighting '" + s + "' (expected autoc or qini)");
}

DrScores dr_scores(const VectorXd& w, const VectorXd& y, double propensity) {
  return dr_scores(w, y, VectorXd::Constant(w.size(), propensity));
}

DrScores dr_scores(const VectorXd& w, const VectorXd& y, const VectorXd& p) {
  if (y.size() != w.size() || p.size() != w.size()) throw ShapeError("score inputs differ in length");
  check_arms(w);
  DrScores s;
  s.gamma.resize(w.size());
  for (Eigen::Index i = 0; i < w.size(); ++i) {
    check_propensity(p[i]);
    s.gamma[i] = w[i] * y[i] / p[i] - (1.0 - w[i]) * y[i] / (1.0 - p[i]);
  }
  return s;
}

DrScores dr_scores(const VectorXd& w, const VectorXd& y, const VectorXd& p, const VectorXd& m1, const VectorXd& m0) {
  if (y.size() != w.size() || p.size() != w.size() || m1.size() != w.size() || m0.size() != w.size())
    throw ShapeError("score inputs differ in length");
  check_arms(w);
  DrScores s;
  s.gamma.resize(w.size());
  for (Eigen::Index i = 0; i < w.size(); ++i) {
    check_propensity(p[i]);
    s.gamma[i] = m1[i] - m0[i] + w[i] * (y[i] - m1[i]) / p[i] - (1.0 - w[i]) * (y[i] - m0[i]) / (1.0 - p[i]);
  }
  return s;
}

TocCurve toc_curve(const VectorXd& scores, const VectorXd& gamma) {
  const Eigen::Index n = scores.size();
  if (gamma.size() != n) throw ShapeError("scores and gamma differ in length");
  if (n < 2) throw SampleSizeError("TOC needs at least two units");
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::stable_sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) { return scores[a] > scores[b]; });

  VectorXd prefix(n);
  double acc = 0.0;
  for (Eigen::Index k = 0; k < n; ++k) {
    acc += gamma[order[static_cast<std::size_t>(k)]];
    prefix[k] = acc;
  }
  const double mean = prefix[n - 1] / static_cast<double>(n);
  TocCurve c;
  c.q.resize(n);
  c.toc.resize(n);
  for (Eigen::Index k = 0; k < n; ++k) {
    c.q[k] = static_cast<double>(k + 1) / static_cast<double>(n);
    c.toc[k] = prefix[k] / static_cast<double>(k + 1) - mean;
  }
  c.constant_scores = all_equal(scores);
  c.constant_gamma = all_equal(gamma);
  return c;
}

RateValue rate_point(const TocCurve& curve, Weighting weighting) {
  if (curve.constant_scores) return {0.0, true};
  if (curve.constant_gamma) return {0.0, false};
  const Eigen::Index n = curve.size();
  double acc = 0.0;
  for (Eigen::Index k = 0; k < n; ++k) {
    const double alpha = weighting == Weighting::Autoc ? 1.0 : curve.q[k];
    acc += alpha * curve.toc[k];
  }
  return {acc / static_cast<double>(n), false};
}

RateValue rate_point(const VectorXd& scores, const VectorXd& gamma, Weighting weighting) {
  return rate_point(toc_curve(scores, gamma), weighting);
}

RateSe rate_se(const VectorXd& scores, const VectorXd& gamma, Weighting weighting, int bootstrap,
               std::uint64_t seed) {
  const Eigen::Index n = scores.size();
  if (gamma.size() != n) throw ShapeError("scores and gamma differ in length");
  if (n < 10) throw SampleSizeError("RATE standard error needs N >= 10, got " + std::to_string(n));
  if (bootstrap < 2) throw SpecError("bootstrap needs at least two replicates");
  const auto half = static_cast<std::size_t>(n / 2);
  RateSe out;
  out.replicates.assign(static_cast<std::size_t>(bootstrap), 0.0);
  parallel_for(out.replicates.size(), [&](std::size_t b) {
    Rng rng(stream_seed(seed, b));
    std::vector<int> idx(static_cast<std::size_t>(n));
    std::iota(idx.begin(), idx.end(), 0);
    for (std::size_t i = 0; i < half; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, idx.size() - 1);
      std::swap(idx[i], idx[pick(rng)]);
    }
    idx.resize(half);
    std::sort(idx.begin(), idx.end());  // keep original order for tie-breaking
    out.replicates[b] = rate_point(subset(scores, idx), subset(gamma, idx), weighting).value;
  });
  const double mean = std::accumulate(out.replicates.begin(), out.replicates.end(), 0.0) / bootstrap;
  double ss = 0.0;
  for (double r : out.replicates) ss += (r - mean) * (r - mean);
  out.se = std::sqrt(2.0) * std::sqrt(ss / (bootstrap - 1));
  return out;
}

nlohmann::json to_json(const RateReport& r) {
  nlohmann::json folds = nlohmann::json::array();
  for (const auto& f : r.per_fold)
    folds.push_back({{"point", f.point}, {"se", f.se}, {"ratio", f.ratio}, {"n", f.n}, {"degenerate", f.degenerate}});
  return {{"weighting", to_string(r.weighting)},
          {"point", r.point},
          {"se", r.se},
          {"ratio", r.ratio},
          {"significant", r.significant},
          {"folds", r.folds},
          {"per_fold", folds},
          {"degenerate", r.degenerate}};
}

RateReport rate_report_from_json(const nlohmann::json& j) {
  RateReport r;
  r.weighting = weighting_from_string(j.at("weighting").get<std::string>());
  r.point = j.at("point").get<double>();
  r.se = j.at("se").get<double>();
  r.ratio = j.at("ratio").get<double>();
  r.significant = j.at("significant").get<bool>();
  r.degenerate = j.at("degenerate").get<bool>();
  r.folds = j.value("folds", static_cast<int>(j.at("per_fold").size()));
  for (const auto& f : j.at("per_fold"))
    r.per_fold.push_back({f.at("point").get<double>(), f.at("se").get<double>(), f.at("ratio").get<double>(),
                          f.value("n", std::size_t{0}), f.value("degenerate", false)});
  return r;
}

RateInputs RateInputs::from_table(const UnitTable& table, const Propensity& propensity) {
  RateInputs in;
  in.w = table.treatments();
  in.y = table.outcomes();
  in.propensity.resize(static_cast<Eigen::Index>(table.size()));
  for (std::size_t i = 0; i < table.size(); ++i)
    in.propensity[static_cast<Eigen::Index>(i)] = propensity.for_unit(table.units[i]);
  if (table.has_clusters) {
    for (const auto& u : table.units) in.clusters.push_back(u.cluster_id.value_or("unit:" + u.id));
  }
  return in;
}

std::vector<int> cross_fit_folds(const RateInputs& in, int folds, std::uint64_t seed) {
  const auto n = static_cast<std::size_t>(in.w.size());
  if (folds < 2) throw FoldError("cross-fitting needs at least 2 folds");
  if (in.clusters.empty()) return assign_folds(n, folds, seed);
  if (in.clusters.size() != n) throw AlignmentError("cluster labels do not match unit count");

  const std::set<std::string> uniq(in.clusters.begin(), in.clusters.end());
  const std::vector<std::string> names(uniq.begin(), uniq.end());
  if (names.size() < static_cast<std::size_t>(2 * folds))
    throw FoldError("only " + std::to_string(names.size()) + " clusters for " + std::to_string(folds) +
                    " folds; each fold needs at least 2 clusters, use fewer folds");
  const auto cluster_fold = assign_folds(names.size(), folds, seed);
  std::map<std::string, int> lookup;
  for (std::size_t c = 0; c < names.size(); ++c) lookup[names[c]] = cluster_fold[c];
  std::vector<int> labels(n);
  for (std::size_t i = 0; i < n; ++i) labels[i] = lookup.at(in.clusters[i]);
  return labels;
}

RateReport cross_fit_rate(const RateInputs& in, const MatrixXd& x, const EstimatorSpec& estimator,
                          Weighting weighting, const CrossFitOptions& opts) {
  const Eigen::Index n = x.rows();
  if (in.w.size() != n || in.y.size() != n || in.propensity.size() != n)
    throw AlignmentError("outcome data and covariates differ in length");
  if (n < 5 * opts.folds)
    throw SampleSizeError("cross-fitting needs at least 5 units per fold, got N=" + std::to_string(n));

  RateReport report;
  report.weighting = weighting;
  report.folds = opts.folds;
  report.fold_of = cross_fit_folds(in, opts.folds, opts.seed);
  report.held_out_scores = VectorXd::Zero(n);

  for (int f = 0; f < opts.folds; ++f) {
    std::vector<int> train, test;
    for (Eigen::Index i = 0; i < n; ++i) (report.fold_of[static_cast<std::size_t>(i)] == f ? test : train).push_back(static_cast<int>(i));
    if (test.empty()) throw FoldError("fold " + std::to_string(f) + " is empty");
    // The scoring model must never see the fold's outcomes.
    std::vector<int> overlap;
    std::set_intersection(train.begin(), train.end(), test.begin(), test.end(), std::back_inserter(overlap));
    if (!overlap.empty()) throw ContractError("cross-fit fold bookkeeping leaked evaluation units into training");

    EstimatorSpec spec = estimator;
    spec.forest.seed = stream_seed(estimator.forest.seed, static_cast<std::uint64_t>(f));
    spec.rlearner.seed = stream_seed(estimator.rlearner.seed, static_cast<std::uint64_t>(f));
    const CateModel model = fit_cate(subset_rows(x, train), subset(in.w, train), subset(in.y, train), spec);
    const VectorXd scores = predict_cate(model, subset_rows(x, test));
    for (std::size_t i = 0; i < test.size(); ++i) report.held_out_scores[test[i]] = scores[static_cast<Eigen::Index>(i)];

    const DrScores gamma = dr_scores(subset(in.w, test), subset(in.y, test), subset(in.propensity, test));
    const RateValue point = rate_point(scores, gamma.gamma, weighting);
    const RateSe se = rate_se(scores, gamma.gamma, weighting, opts.bootstrap, stream_seed(opts.seed, 0xb007, f));

    FoldReport fr;
    fr.n = test.size();
    fr.point = point.value;
    fr.se = se.se;
    fr.degenerate = point.degenerate || !(se.se >= 1e-12);
    fr.ratio = fr.degenerate ? 0.0 : fr.point / fr.se;
    report.per_fold.push_back(fr);
  }

  double sum_point = 0.0, sum_ratio = 0.0, sum_var = 0.0;
  for (const auto& fr : report.per_fold) {
    sum_point += fr.point;
    sum_ratio += fr.ratio;
    sum_var += fr.se * fr.se;
    report.degenerate = report.degenerate || fr.degenerate;
  }
  const double k = static_cast<double>(report.per_fold.size());
  report.point = sum_point / k;
  report.se = std::sqrt(sum_var) / k;
  report.ratio = sum_ratio / k;
  report.significant = report.ratio > 1.96;
  return report;
}

RateReport cross_fit_rate(const ExperimentDataset& dataset, const EmbeddingMatrix& embeddings,
                          const EstimatorSpec& estimator, Weighting weighting, const CrossFitOptions& opts) {
  if (static_cast<std::size_t>(embeddings.rows()) != dataset.size())
    throw AlignmentError("embeddings and dataset differ in unit count");
  return cross_fit_rate(RateInputs::from_table(dataset.table, dataset.propensity), embeddings.values, estimator,
                        weighting, opts);
}

Correlation truth_correlation(const VectorXd& a, const VectorXd& b) {
  if (a.size() != b.size()) throw ShapeError("correlation inputs differ in length");
  if (a.size() < 3) throw SampleSizeError("correlation needs at least 3 values");
  const VectorXd ca = a.array() - a.mean();
  const VectorXd cb = b.array() - b.mean();
  const double saa = ca.squaredNorm();
  const double sbb = cb.squaredNorm();
  if (!(saa > 0.0) || !(sbb > 0.0) || all_equal(a) || all_equal(b)) return {0.0, true};
  return {std::clamp(ca.dot(cb) / std::sqrt(saa * sbb), -1.0, 1.0), false};
}

}  // namespace heteo
