#include "heteo/rlearner.hpp"

#include <Eigen/Cholesky>

#include <algorithm>
#include <cmath>
#include <numeric>

namespace heteo {

namespace {

double soft_threshold(double v, double t) {
  if (v > t) return v - t;
  if (v < -t) return v + t;
  return 0.0;
}

MatrixXd take_rows(const MatrixXd& m, const std::vector<int>& rows) {
  MatrixXd out(static_cast<Eigen::Index>(rows.size()), m.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = m.row(rows[i]);
  return out;
}

VectorXd take(const VectorXd& v, const std::vector<int>& rows) {
  VectorXd out(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) out[static_cast<Eigen::Index>(i)] = v[rows[i]];
  return out;
}

}  // namespace

void RLearnerSpec::validate() const {
  if (folds < 2) throw SpecError("R-learner needs folds >= 2");
  if (ridge_penalty < 0.0) throw SpecError("ridge penalty must be >= 0");
  if (!(tolerance > 0.0)) throw SpecError("tolerance must be positive");
  if (max_sweeps < 1) throw SpecError("max_sweeps must be >= 1");
  if (lambda_grid.empty() && (grid_size < 1 || !(grid_ratio > 0.0 && grid_ratio <= 1.0)))
    throw SpecError("invalid default lambda grid parameters");
  for (double l : lambda_grid)
    if (!(l >= 0.0)) throw SpecError("lambda values must be >= 0");
  if (fixed_lambda && !(*fixed_lambda >= 0.0)) throw SpecError("fixed lambda must be >= 0");
}

VectorXd ridge_fit(const MatrixXd& x, const VectorXd& y, double penalty) {
  const Eigen::Index n = x.rows();
  const Eigen::Index d = x.cols();
  if (n == 0) throw SampleSizeError("ridge regression needs at least one row");
  MatrixXd design(n, d + 1);
  design << VectorXd::Ones(n), x;
  MatrixXd gram = design.transpose() * design;
  gram.diagonal().tail(d).array() += penalty;
  return gram.ldlt().solve(design.transpose() * y);
}

VectorXd ridge_predict(const VectorXd& coef, const MatrixXd& x) {
  if (coef.size() != x.cols() + 1) throw ShapeError("ridge coefficients do not match feature count");
  return (x * coef.tail(x.cols())).array() + coef[0];
}

WeightedLasso::WeightedLasso(const MatrixXd& x, const VectorXd& z, const VectorXd& r) : z_(z), r_(r) {
  if (z.size() != x.rows() || r.size() != x.rows()) throw ShapeError("lasso inputs differ in length");
  a_ = z.asDiagonal() * x;
  col_sq_ = a_.colwise().squaredNorm().transpose();
  z_sq_ = z.squaredNorm();
  if (!(z_sq_ > 0.0)) throw DegenerateDesignError("centred treatment is identically zero");
  const double b0 = z.dot(r) / z_sq_;
  const VectorXd r0 = r - z * b0;
  lambda_max_ = a_.cols() > 0 ? 2.0 * (a_.transpose() * r0).cwiseAbs().maxCoeff() : 0.0;
}

double WeightedLasso::objective(double intercept, const VectorXd& beta, double lambda) const {
  const VectorXd res = r_ - z_ * intercept - a_ * beta;
  return res.squaredNorm() + lambda * beta.lpNorm<1>();
}

double WeightedLasso::kkt_residual(double intercept, const VectorXd& beta, double lambda) const {
  const VectorXd res = r_ - z_ * intercept - a_ * beta;
  const VectorXd grad = -2.0 * (a_.transpose() * res);
  double worst = std::abs(2.0 * z_.dot(res));
  for (Eigen::Index j = 0; j < beta.size(); ++j) {
    const double v = beta[j] == 0.0 ? std::max(0.0, std::abs(grad[j]) - lambda)
                                    : std::abs(grad[j] + lambda * (beta[j] > 0.0 ? 1.0 : -1.0));
    worst = std::max(worst, v);
  }
  return worst;
}

WeightedLassoFit WeightedLasso::solve(double lambda, double tolerance, int max_sweeps,
                                      const WeightedLassoFit* warm_start) const {
  const Eigen::Index d = a_.cols();
  WeightedLassoFit fit;
  fit.beta = VectorXd::Zero(d);
  if (warm_start && warm_start->beta.size() == d) {
    fit.beta = warm_start->beta;
    fit.intercept = warm_start->intercept;
  }
  if (lambda >= lambda_max_) {
    fit.beta.setZero();
    fit.intercept = z_.dot(r_) / z_sq_;
    fit.sweeps = 0;
    fit.objective = objective(fit.intercept, fit.beta, lambda);
    fit.kkt_residual = kkt_residual(fit.intercept, fit.beta, lambda);
    return fit;
  }
  VectorXd res = r_ - z_ * fit.intercept - a_ * fit.beta;
  double prev = res.squaredNorm() + lambda * fit.beta.lpNorm<1>();
  const double half = lambda / 2.0;

  for (int sweep = 1; sweep <= max_sweeps; ++sweep) {
    const double b0 = fit.intercept + z_.dot(res) / z_sq_;
    res -= z_ * (b0 - fit.intercept);
    fit.intercept = b0;
    for (Eigen::Index j = 0; j < d; ++j) {
      if (col_sq_[j] == 0.0) continue;
      const double old = fit.beta[j];
      const double rho = a_.col(j).dot(res) + col_sq_[j] * old;
      const double b = soft_threshold(rho, half) / col_sq_[j];
      if (b != old) {
        res -= a_.col(j) * (b - old);
        fit.beta[j] = b;
      }
    }
    if (sweep % 16 == 0) res = r_ - z_ * fit.intercept - a_ * fit.beta;
    const double obj = res.squaredNorm() + lambda * fit.beta.lpNorm<1>();
    if (obj > prev + 1e-10 * std::max(1.0, std::abs(prev)))
      throw ContractError("coordinate descent objective increased between sweeps");
    prev = obj;
    fit.sweeps = sweep;

    const VectorXd grad = -2.0 * (a_.transpose() * res);
    double kkt = std::abs(2.0 * z_.dot(res));
    for (Eigen::Index j = 0; j < d; ++j) {
      const double v = fit.beta[j] == 0.0 ? std::max(0.0, std::abs(grad[j]) - lambda)
                                          : std::abs(grad[j] + lambda * (fit.beta[j] > 0.0 ? 1.0 : -1.0));
      kkt = std::max(kkt, v);
    }
    if (kkt <= tolerance) break;
    if (sweep == max_sweeps) {
      throw ConvergenceError("coordinate descent did not converge in " + std::to_string(max_sweeps) +
                                 " sweeps (KKT residual " + std::to_string(kkt) + ")",
                             kkt);
    }
  }
  fit.objective = objective(fit.intercept, fit.beta, lambda);
  fit.kkt_residual = kkt_residual(fit.intercept, fit.beta, lambda);
  return fit;
}

std::vector<double> default_lambda_grid(double lambda_max, int size, double ratio) {
  std::vector<double> grid(static_cast<std::size_t>(size));
  if (size == 1) {
    grid[0] = lambda_max;
    return grid;
  }
  for (int i = 0; i < size; ++i)
    grid[static_cast<std::size_t>(i)] = lambda_max * std::pow(ratio, static_cast<double>(i) / (size - 1));
  return grid;
}

std::vector<int> assign_folds(std::size_t n, int k, std::uint64_t seed) {
  if (k < 1) throw FoldError("fold count must be >= 1");
  std::vector<int> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  Rng rng(stream_seed(seed, 0xf01d));
  std::shuffle(perm.begin(), perm.end(), rng);
  std::vector<int> labels(n);
  for (std::size_t i = 0; i < n; ++i) labels[static_cast<std::size_t>(perm[i])] = static_cast<int>(i % k);
  return labels;
}

RLearnerModel fit_rlearner(const MatrixXd& x, const VectorXd& w, const VectorXd& y, const RLearnerSpec& spec) {
  spec.validate();
  const auto n = static_cast<std::size_t>(x.rows());
  if (static_cast<std::size_t>(w.size()) != n || static_cast<std::size_t>(y.size()) != n)
    throw ShapeError("X, W and Y must have the same number of rows");
  const double share = w.mean();
  if (!(share > 0.0 && share < 1.0)) throw DegenerateDesignError("R-learner needs both treatment arms");
  if (n < static_cast<std::size_t>(2 * spec.folds)) throw SampleSizeError("too few units for the requested folds");

  RLearnerModel model;
  model.e_hat = share;

  // Cross-fitted outcome model.
  const auto nuisance_folds = assign_folds(n, spec.folds, spec.seed);
  VectorXd m_hat(static_cast<Eigen::Index>(n));
  for (int f = 0; f < spec.folds; ++f) {
    std::vector<int> in, out;
    for (std::size_t i = 0; i < n; ++i) (nuisance_folds[i] == f ? out : in).push_back(static_cast<int>(i));
    VectorXd coef = ridge_fit(take_rows(x, in), take(y, in), spec.ridge_penalty);
    const VectorXd pred = ridge_predict(coef, take_rows(x, out));
    for (std::size_t i = 0; i < out.size(); ++i) m_hat[out[i]] = pred[static_cast<Eigen::Index>(i)];
    model.m_hat.push_back(std::move(coef));
  }
  const VectorXd resid = y - m_hat;
  const VectorXd z = w.array() - share;

  const WeightedLasso full(x, z, resid);
  model.lambda_max = full.lambda_max();
  std::vector<double> grid = spec.lambda_grid.empty()
                                 ? default_lambda_grid(model.lambda_max, spec.grid_size, spec.grid_ratio)
                                 : spec.lambda_grid;
  std::sort(grid.begin(), grid.end(), std::greater<>());

  std::size_t chosen = 0;
  if (spec.fixed_lambda) {
    grid = {*spec.fixed_lambda};
  } else if (grid.size() > 1) {
    const auto cv_folds = assign_folds(n, spec.folds, stream_seed(spec.seed, 1));
    std::vector<double> loss(grid.size(), 0.0);
    for (int f = 0; f < spec.folds; ++f) {
      std::vector<int> in, out;
      for (std::size_t i = 0; i < n; ++i) (cv_folds[i] == f ? out : in).push_back(static_cast<int>(i));
      const WeightedLasso train(take_rows(x, in), take(z, in), take(resid, in));
      const MatrixXd x_out = take_rows(x, out);
      const VectorXd z_out = take(z, out);
      const VectorXd r_out = take(resid, out);
      WeightedLassoFit prev;
      for (std::size_t g = 0; g < grid.size(); ++g) {
        WeightedLassoFit fit = train.solve(grid[g], spec.tolerance, spec.max_sweeps, g ? &prev : nullptr);
        model.max_cv_kkt_residual = std::max(model.max_cv_kkt_residual, fit.kkt_residual);
        const VectorXd tau = (x_out * fit.beta).array() + fit.intercept;
        loss[g] += (r_out - z_out.cwiseProduct(tau)).squaredNorm();
        prev = std::move(fit);
      }
    }
    chosen = static_cast<std::size_t>(std::min_element(loss.begin(), loss.end()) - loss.begin());
  }

  WeightedLassoFit fit;
  for (std::size_t g = 0; g <= chosen; ++g) {
    WeightedLassoFit next = full.solve(grid[g], spec.tolerance, spec.max_sweeps, g ? &fit : nullptr);
    fit = std::move(next);
  }
  model.lambda = grid[chosen];
  model.beta = fit.beta;
  model.intercept = fit.intercept;
  model.kkt_residual = fit.kkt_residual;
  model.sweeps = fit.sweeps;
  model.max_cv_kkt_residual = std::max(model.max_cv_kkt_residual, fit.kkt_residual);
  return model;
}

VectorXd predict_rlearner(const RLearnerModel& model, const MatrixXd& x) {
  if (x.cols() != model.beta.size())
    throw ShapeError("R-learner was trained on " + std::to_string(model.beta.size()) + " features, got " +
                     std::to_string(x.cols()));
  return (x * model.beta).array() + model.intercept;
}

nlohmann::json to_json(const RLearnerModel& m) {
  nlohmann::json nuisance = nlohmann::json::array();
  for (const auto& c : m.m_hat) nuisance.push_back(std::vector<double>(c.data(), c.data() + c.size()));
  return {{"beta", std::vector<double>(m.beta.data(), m.beta.data() + m.beta.size())},
          {"intercept", m.intercept},
          {"lambda", m.lambda},
          {"lambda_max", m.lambda_max},
          {"e_hat", m.e_hat},
          {"m_hat", nuisance},
          {"kkt_residual", m.kkt_residual}};
}

RLearnerModel rlearner_from_json(const nlohmann::json& j) {
  RLearnerModel m;
  const auto beta = j.at("beta").get<std::vector<double>>();
  m.beta = Eigen::Map<const VectorXd>(beta.data(), static_cast<Eigen::Index>(beta.size()));
  m.intercept = j.at("intercept").get<double>();
  m.lambda = j.at("lambda").get<double>();
  m.lambda_max = j.at("lambda_max").get<double>();
  m.e_hat = j.at("e_hat").get<double>();
  for (const auto& c : j.at("m_hat")) {
    const auto v = c.get<std::vector<double>>();
    m.m_hat.emplace_back(Eigen::Map<const VectorXd>(v.data(), static_cast<Eigen::Index>(v.size())));
  }
  m.kkt_residual = j.value("kkt_residual", 0.0);
  return m;
}

}  // namespace heteo
