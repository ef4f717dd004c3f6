#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>
#include <sstream>

#include <Eigen/QR>
#include <Eigen/SVD>

#include "heteo/csv.hpp"
#include "heteo/rate.hpp"

namespace heteo {

OlsFit ols(const MatrixXd& x, const VectorXd& y, const std::vector<std::string>& names) {
  const Eigen::Index n = x.rows(), p = x.cols();
  if (y.size() != n) throw ShapeError("design and response differ in length");
  if (static_cast<Eigen::Index>(names.size()) != p) throw ShapeError("column names do not match design width");
  if (n <= p) throw SampleSizeError("OLS needs more rows than columns (" + std::to_string(n) + " <= " + std::to_string(p) + ")");
  if (!x.allFinite() || !y.allFinite()) throw DomainError("design or response has non-finite values");

  Eigen::ColPivHouseholderQR<MatrixXd> qr(x);
  if (qr.rank() < p) {
    // Columns with weight in a null-space direction take part in a dependency.
    const Eigen::JacobiSVD<MatrixXd> svd(x, Eigen::ComputeThinV);
    const MatrixXd null = svd.matrixV().rightCols(p - qr.rank());
    std::vector<std::string> collinear;
    for (Eigen::Index j = 0; j < p; ++j)
      if (null.row(j).cwiseAbs().maxCoeff() > 1e-8) collinear.push_back(names[static_cast<std::size_t>(j)]);
    std::string list;
    for (const auto& c : collinear) list += (list.empty() ? "" : ", ") + c;
    throw SingularDesignError("design matrix is rank deficient; collinear columns: " + list, collinear);
  }

  OlsFit fit;
  fit.names = names;
  fit.n = static_cast<std::size_t>(n);
  fit.coef = qr.solve(y);
  const VectorXd resid = y - x * fit.coef;
  const double rss = resid.squaredNorm();
  fit.residual_variance = rss / static_cast<double>(n - p);

  // (XᵀX)⁻¹ = P (RᵀR)⁻¹ Pᵀ
  const MatrixXd r = qr.matrixR().topLeftCorner(p, p).triangularView<Eigen::Upper>();
  const MatrixXd r_inv = r.triangularView<Eigen::Upper>().solve(MatrixXd::Identity(p, p));
  const MatrixXd cov_perm = r_inv * r_inv.transpose();
  const auto& perm = qr.colsPermutation().indices();
  fit.se.resize(p);
  for (Eigen::Index k = 0; k < p; ++k) fit.se[perm[k]] = std::sqrt(fit.residual_variance * cov_perm(k, k));

  const double tss = (y.array() - y.mean()).square().sum();
  fit.r2 = tss > 0.0 ? 1.0 - rss / tss : 0.0;
  fit.adj_r2 = 1.0 - (1.0 - fit.r2) * static_cast<double>(n - 1) / static_cast<double>(n - p);
  return fit;
}

OlsFit meta_regression(const std::vector<MetaRun>& runs) {
  std::set<std::string> levels;
  for (const auto& r : runs) levels.insert(r.application);
  const std::vector<std::string> apps(levels.begin(), levels.end());

  std::vector<std::string> names = {"(Intercept)", "Video (Baseline: Image)", "With tabular", "QINI weighting", "With PCs"};
  for (std::size_t a = 1; a < apps.size(); ++a) names.push_back("Application: " + apps[a]);
  names.push_back("log(1 + n params)");

  const auto n = static_cast<Eigen::Index>(runs.size());
  const auto p = static_cast<Eigen::Index>(names.size());
  MatrixXd x = MatrixXd::Zero(n, p);
  VectorXd y(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& r = runs[static_cast<std::size_t>(i)];
    y[i] = r.rate_ratio;
    x(i, 0) = 1.0;
    x(i, 1) = r.is_video;
    x(i, 2) = r.with_tabular;
    x(i, 3) = r.weighting_is_qini;
    x(i, 4) = r.with_pc;
    for (std::size_t a = 1; a < apps.size(); ++a)
      if (r.application == apps[a]) x(i, 4 + static_cast<Eigen::Index>(a)) = 1.0;
    x(i, p - 1) = r.log1p_params;
  }
  return ols(x, y, names);
}

namespace {

bool parse_flag(const std::string& v, std::size_t row, const std::string& col) {
  if (v == "1" || v == "true" || v == "TRUE" || v == "True") return true;
  if (v == "0" || v == "false" || v == "FALSE" || v == "False") return false;
  throw DomainError("row " + std::to_string(row) + ": column '" + col + "' must be 0/1 or true/false, got '" + v + "'");
}

}  // namespace

std::vector<MetaRun> read_meta_runs(const std::string& csv_path) {
  const csv::Table t = csv::read(csv_path);
  auto col = [&](const std::string& name) {
    const auto it = std::find(t.header.begin(), t.header.end(), name);
    if (it == t.header.end()) throw SchemaError("runs table is missing required column '" + name + "'");
    return static_cast<std::size_t>(it - t.header.begin());
  };
  const std::size_t c_ratio = col("rate_ratio"), c_video = col("is_video"), c_tab = col("with_tabular"),
                    c_qini = col("weighting_is_qini"), c_pc = col("with_pc"), c_app = col("application"),
                    c_params = col("log1p_params");
  std::vector<MetaRun> runs;
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    const auto& row = t.rows[i];
    MetaRun r;
    r.rate_ratio = csv::to_double(row[c_ratio], "rate_ratio");
    r.is_video = parse_flag(row[c_video], i + 1, "is_video");
    r.with_tabular = parse_flag(row[c_tab], i + 1, "with_tabular");
    r.weighting_is_qini = parse_flag(row[c_qini], i + 1, "weighting_is_qini");
    r.with_pc = parse_flag(row[c_pc], i + 1, "with_pc");
    r.application = row[c_app];
    r.log1p_params = csv::to_double(row[c_params], "log1p_params");
    runs.push_back(std::move(r));
  }
  return runs;
}

std::string render_regression_table(const OlsFit& fit) {
  std::size_t width = 18;
  for (const auto& n : fit.names) width = std::max(width, n.size());
  std::ostringstream out;
  char buf[128];
  auto row = [&](const std::string& label, const std::string& a, const std::string& b) {
    out << label << std::string(width - label.size() + 2, ' ');
    std::snprintf(buf, sizeof buf, "%12s  %12s\n", a.c_str(), b.c_str());
    out << buf;
  };
  auto num = [&](double v) {
    std::snprintf(buf, sizeof buf, "%.4f", v);
    return std::string(buf);
  };
  out << "Outcome: RATE ratio\n";
  row("", "Estimate", "Std. Error");
  for (std::size_t k = 0; k < fit.names.size(); ++k)
    row(fit.names[k], num(fit.coef[static_cast<Eigen::Index>(k)]), num(fit.se[static_cast<Eigen::Index>(k)]));
  row("Observations", std::to_string(fit.n), "");
  row("R2", num(fit.r2), "");
  row("Adjusted R2", num(fit.adj_r2), "");
  row("Residual variance", num(fit.residual_variance), "");
  return out.str();
}

}  // namespace heteo
