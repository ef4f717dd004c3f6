#include <Eigen/Dense>

#include "heteo/cate.hpp"
#include "heteo/rlearner.hpp"
#include "support.hpp"

using namespace heteo;

namespace {

struct LassoProblem {
  MatrixXd x;
  VectorXd z, r;
};

LassoProblem noiseless(int n, const VectorXd& beta, double b0, std::uint64_t seed) {
  LassoProblem p;
  p.x = testing::gaussian(n, static_cast<int>(beta.size()), seed);
  p.z = testing::bernoulli(n, 0.5, seed + 1).array() - 0.5;
  p.r = (p.z.array() * ((p.x * beta).array() + b0)).matrix();
  return p;
}

}  // namespace

TEST_CASE("lambda_max matches its definition and zeroes beta") {
  LassoProblem p = noiseless(200, (VectorXd(4) << 1.0, -0.5, 0.0, 2.0).finished(), 0.3, 1);
  p.r += 0.1 * testing::gaussian(200, 1, 9).col(0);
  const WeightedLasso lasso(p.x, p.z, p.r);
  const double b0 = p.z.dot(p.r) / p.z.squaredNorm();
  const MatrixXd a = p.z.asDiagonal() * p.x;
  const double expected = 2.0 * (a.transpose() * (p.r - p.z * b0)).cwiseAbs().maxCoeff();
  CHECK(lasso.lambda_max() == doctest::Approx(expected).epsilon(1e-12));

  for (double scale : {1.0, 1.5, 10.0}) {
    const auto fit = lasso.solve(scale * lasso.lambda_max(), 1e-9, 10000);
    CHECK(fit.beta.cwiseAbs().maxCoeff() == 0.0);
    CHECK(fit.intercept == doctest::Approx(b0).epsilon(1e-9));
  }
  const auto below = lasso.solve(0.9 * lasso.lambda_max(), 1e-9, 10000);
  CHECK(below.beta.cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("lambda at lambda_max gives a constant CATE through fit_rlearner") {
  const MatrixXd x = testing::gaussian(300, 3, 2);
  const VectorXd w = testing::bernoulli(300, 0.5, 3);
  const VectorXd y = x.col(0) + w.cwiseProduct(x.col(1)) + 0.2 * testing::gaussian(300, 1, 4).col(0);
  RLearnerSpec spec;
  spec.lambda_grid = {1e6};
  const auto model = fit_rlearner(x, w, y, spec);
  CHECK(model.beta.isZero(0.0));
  const VectorXd tau = predict_rlearner(model, testing::gaussian(20, 3, 5));
  CHECK((tau.array() == tau[0]).all());
}

TEST_CASE("noiseless lasso recovers the coefficients") {
  const VectorXd beta = (VectorXd(5) << 1.0, -2.0, 0.0, 0.5, 3.0).finished();
  const LassoProblem p = noiseless(400, beta, -0.7, 6);
  const WeightedLasso lasso(p.x, p.z, p.r);
  const auto fit = lasso.solve(1e-10, 1e-10, 100000);
  CHECK((fit.beta - beta).cwiseAbs().maxCoeff() < 1e-4);
  CHECK(fit.intercept == doctest::Approx(-0.7).epsilon(1e-4));
}

TEST_CASE("lambda = 0 agrees with the normal equations") {
  const LassoProblem p = noiseless(60, (VectorXd(3) << 0.4, 0.0, -1.0).finished(), 0.2, 7);
  VectorXd r = p.r + 0.3 * testing::gaussian(60, 1, 8).col(0);
  MatrixXd design(60, 4);
  design.col(0) = p.z;
  design.rightCols(3) = p.z.asDiagonal() * p.x;
  const VectorXd ols = (design.transpose() * design).ldlt().solve(design.transpose() * r);
  const auto fit = WeightedLasso(p.x, p.z, r).solve(0.0, 1e-10, 100000);
  CHECK(fit.intercept == doctest::Approx(ols[0]).epsilon(1e-6));
  for (int j = 0; j < 3; ++j) CHECK(fit.beta[j] == doctest::Approx(ols[j + 1]).epsilon(1e-6));
}

TEST_CASE("converged solution satisfies KKT and is a global minimum") {
  LassoProblem p = noiseless(150, (VectorXd(6) << 1, 0, 0, -1, 0.2, 0).finished(), 0.1, 11);
  p.r += 0.5 * testing::gaussian(150, 1, 12).col(0);
  const WeightedLasso lasso(p.x, p.z, p.r);
  const double lambda = 0.1 * lasso.lambda_max();
  const auto fit = lasso.solve(lambda, 1e-8, 100000);

  // Subgradient conditions computed from scratch.
  const MatrixXd a = p.z.asDiagonal() * p.x;
  const VectorXd res = p.r - p.z * fit.intercept - a * fit.beta;
  CHECK(std::abs(2.0 * p.z.dot(res)) < 1e-6);
  const VectorXd g = 2.0 * a.transpose() * res;
  for (int j = 0; j < 6; ++j) {
    if (fit.beta[j] == 0.0)
      CHECK(std::abs(g[j]) <= lambda + 1e-6);
    else
      CHECK(std::abs(g[j] - lambda * (fit.beta[j] > 0 ? 1.0 : -1.0)) < 1e-6);
  }
  CHECK(fit.kkt_residual < 1e-6);

  const double best = lasso.objective(fit.intercept, fit.beta, lambda);
  CHECK(best == doctest::Approx(fit.objective));
  Rng rng(3);
  std::normal_distribution<double> nd(0.0, 0.05);
  for (int k = 0; k < 200; ++k) {
    VectorXd b = fit.beta;
    for (int j = 0; j < 6; ++j) b[j] += nd(rng);
    CHECK(lasso.objective(fit.intercept + nd(rng), b, lambda) >= best - 1e-9);
  }
}

TEST_CASE("objective never increases from one sweep to the next") {
  LassoProblem p = noiseless(120, (VectorXd(4) << 2, -1, 0, 0).finished(), 0.0, 21);
  p.r += testing::gaussian(120, 1, 22).col(0);
  const WeightedLasso lasso(p.x, p.z, p.r);
  for (double frac : {0.5, 0.2, 0.05}) {
    const double lambda = frac * lasso.lambda_max();
    WeightedLassoFit fit;
    fit.beta = VectorXd::Zero(4);
    double prev = lasso.objective(0.0, fit.beta, lambda);
    for (int sweep = 0; sweep < 40; ++sweep) {
      fit = lasso.solve(lambda, 1e300, 1, &fit);
      CHECK(fit.objective <= prev + 1e-12);
      prev = fit.objective;
    }
  }
  CHECK_THROWS_AS(lasso.solve(0.01 * lasso.lambda_max(), 1e-300, 2), ConvergenceError);
}

TEST_CASE("predict oracle on a 5x3 design") {
  RLearnerModel m;
  m.beta = (VectorXd(3) << 1.0, -2.0, 0.5).finished();
  m.intercept = 0.25;
  MatrixXd x(5, 3);
  x << 1, 0, 0, 0, 1, 0, 0, 0, 1, 1, 1, 1, -2, 3, 4;
  const VectorXd expected = (VectorXd(5) << 1.25, -1.75, 0.75, -0.25, -5.75).finished();
  CHECK(predict_rlearner(m, x).isApprox(expected, 1e-15));
  CHECK_THROWS_AS(predict_rlearner(m, MatrixXd::Zero(2, 4)), ShapeError);
}

TEST_CASE("full R-learner recovers a linear CATE") {
  const int n = 3000;
  const MatrixXd x = testing::gaussian(n, 4, 31);
  const VectorXd w = testing::bernoulli(n, 0.5, 32);
  const VectorXd tau = 1.0 + 2.0 * x.col(0).array() - x.col(2).array();
  const VectorXd y = 0.5 * x.col(1) + w.cwiseProduct(tau) + 0.1 * testing::gaussian(n, 1, 33).col(0);
  RLearnerSpec spec;
  spec.seed = 4;
  const auto model = fit_rlearner(x, w, y, spec);
  CHECK(model.beta[0] == doctest::Approx(2.0).epsilon(0.03));
  CHECK(model.beta[2] == doctest::Approx(-1.0).epsilon(0.03));
  CHECK(std::abs(model.beta[1]) < 0.05);
  CHECK(model.intercept == doctest::Approx(1.0).epsilon(0.03));
  CHECK(model.max_cv_kkt_residual < 1e-6);
  CHECK(model.m_hat.size() == 5);
}

TEST_CASE("ridge fit matches closed form") {
  const MatrixXd x = testing::gaussian(40, 3, 41);
  const VectorXd y = testing::gaussian(40, 1, 42).col(0);
  const double pen = 0.7;
  const VectorXd coef = ridge_fit(x, y, pen);
  const MatrixXd xc = x.rowwise() - x.colwise().mean();
  const VectorXd yc = y.array() - y.mean();
  const VectorXd b = (xc.transpose() * xc + pen * MatrixXd::Identity(3, 3)).ldlt().solve(xc.transpose() * yc);
  CHECK(coef.tail(3).isApprox(b, 1e-10));
  CHECK(coef[0] == doctest::Approx(y.mean() - x.colwise().mean().dot(b)));
}

TEST_CASE("folds are balanced and seed-determined") {
  const auto f = assign_folds(103, 5, 9);
  std::vector<int> count(5, 0);
  for (int v : f) ++count[static_cast<std::size_t>(v)];
  for (int c : count) CHECK((c == 20 || c == 21));
  CHECK(f == assign_folds(103, 5, 9));
  CHECK(f != assign_folds(103, 5, 10));
}

TEST_CASE("errors and serialisation") {
  const MatrixXd x = testing::gaussian(50, 2, 51);
  const VectorXd y = testing::gaussian(50, 1, 52).col(0);
  RLearnerSpec spec;
  CHECK_THROWS_AS(fit_rlearner(x, VectorXd::Zero(50), y, spec), DegenerateDesignError);
  CHECK_THROWS_AS(fit_rlearner(x.topRows(6), testing::bernoulli(6, 0.5, 1), y.head(6), spec), SampleSizeError);
  spec.folds = 1;
  CHECK_THROWS_AS(spec.validate(), SpecError);

  const auto model = fit_rlearner(x, testing::bernoulli(50, 0.5, 53), y, RLearnerSpec{});
  const auto back = rlearner_from_json(nlohmann::json::parse(to_json(model).dump()));
  CHECK(predict_rlearner(back, x) == predict_rlearner(model, x));

  EstimatorSpec es;
  es.kind = EstimatorKind::RLearner;
  const CateModel cm = fit_cate(x, testing::bernoulli(50, 0.5, 53), y, es, "fp");
  const CateModel cb = cate_from_json(nlohmann::json::parse(to_json(cm).dump()));
  CHECK(cb.fingerprint == "fp");
  CHECK(predict_cate(cb, x) == predict_cate(cm, x));
}
