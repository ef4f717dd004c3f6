#include "heteo/landcover.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>

namespace heteo {

std::vector<int> LandCoverRaster::class_order() const {
  std::vector<int> order;
  for (const auto& [code, name] : classes) order.push_back(code);
  return order;
}

void LandCoverRaster::validate() const {
  if (height < 1 || width < 1) throw ShapeError("land-cover raster is empty");
  if (codes.size() != static_cast<std::size_t>(height) * width) throw ShapeError("land-cover grid size mismatch");
  if (classes.empty()) throw SchemaError("land-cover legend has no classes");
  if (!(cell_size_m > 0.0)) throw DomainError("cell_size_m must be positive");
  for (int c : codes)
    if (!classes.contains(c)) throw SchemaError("raster code " + std::to_string(c) + " is missing from the legend");
}

std::pair<int, int> LandCoverRaster::cell_of(double lon, double lat) const {
  constexpr double metres_per_degree = 111320.0;
  const double dx = (lon - origin_lon) * metres_per_degree * std::cos(origin_lat * std::numbers::pi / 180.0);
  const double dy = (origin_lat - lat) * metres_per_degree;
  const double row = std::floor(dy / cell_size_m), col = std::floor(dx / cell_size_m);
  if (row < 0 || col < 0 || row >= height || col >= width)
    throw BoundsError("point (" + std::to_string(lon) + ", " + std::to_string(lat) + ") lies outside the raster");
  return {static_cast<int>(row), static_cast<int>(col)};
}

LandCoverRaster raster_from_tensor(const Tensor& t, const nlohmann::json& legend) {
  if (!(t.rank() == 2 || (t.rank() == 3 && t.shape[2] == 1)))
    throw ShapeError("land-cover raster must be (H,W) or (H,W,1)");
  LandCoverRaster r;
  r.height = static_cast<int>(t.shape[0]);
  r.width = static_cast<int>(t.shape[1]);
  r.codes.reserve(t.data.size());
  for (float v : t.data) {
    if (!std::isfinite(v) || v != std::round(v)) throw DomainError("land-cover codes must be integers");
    r.codes.push_back(static_cast<int>(v));
  }
  if (!legend.contains("classes") || !legend["classes"].is_object())
    throw SchemaError("legend is missing the 'classes' object");
  for (const auto& [code, name] : legend["classes"].items()) {
    std::size_t used = 0;
    int c = 0;
    try {
      c = std::stoi(code, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != code.size()) throw SchemaError("legend class code '" + code + "' is not an integer");
    r.classes[c] = name.get<std::string>();
  }
  if (legend.contains("origin")) {
    r.origin_lon = legend["origin"].at(0).get<double>();
    r.origin_lat = legend["origin"].at(1).get<double>();
  }
  r.cell_size_m = legend.value("cell_size_m", 30.0);
  r.validate();
  return r;
}

LandCoverRaster read_raster(const std::filesystem::path& raster_path, const std::filesystem::path& legend_path) {
  std::ifstream in(legend_path);
  if (!in) throw IoError("cannot open legend " + legend_path.string());
  nlohmann::json legend;
  try {
    in >> legend;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("legend " + legend_path.string() + " is not valid JSON: " + e.what());
  }
  return raster_from_tensor(read_tensor(raster_path), legend);
}

VectorXd summarize(const LandCoverRaster& raster, int row, int col, int window) {
  if (window < 0) throw SpecError("window must be >= 0");
  if (row < 0 || col < 0 || row >= raster.height || col >= raster.width)
    throw BoundsError("cell (" + std::to_string(row) + ", " + std::to_string(col) + ") lies outside the raster");
  const auto order = raster.class_order();
  std::map<int, std::size_t> slot;
  for (std::size_t k = 0; k < order.size(); ++k) slot[order[k]] = k;

  VectorXd counts = VectorXd::Zero(static_cast<Eigen::Index>(order.size()));
  const int r0 = std::max(0, row - window), r1 = std::min(raster.height - 1, row + window);
  const int c0 = std::max(0, col - window), c1 = std::min(raster.width - 1, col + window);
  for (int r = r0; r <= r1; ++r)
    for (int c = c0; c <= c1; ++c) counts[static_cast<Eigen::Index>(slot.at(raster.at(r, c)))] += 1.0;
  return counts / counts.sum();
}

VectorXd summarize(const LandCoverRaster& raster, double lon, double lat, int window) {
  const auto [row, col] = raster.cell_of(lon, lat);
  return summarize(raster, row, col, window);
}

VectorXd logit_features(const VectorXd& p, double epsilon) {
  if (!(epsilon > 0.0 && epsilon < 0.5)) throw SpecError("epsilon must lie in (0, 0.5)");
  VectorXd out(p.size());
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    if (!(p[i] >= 0.0 && p[i] <= 1.0)) throw DomainError("proportion outside [0,1]");
    const double q = std::clamp(p[i], epsilon, 1.0 - epsilon);
    out[i] = std::log(q / (1.0 - q));
  }
  return out;
}

MatrixXd landcover_features(const LandCoverRaster& raster, const std::vector<UnitRecord>& units, int window,
                            double epsilon) {
  MatrixXd out(static_cast<Eigen::Index>(units.size()), static_cast<Eigen::Index>(raster.classes.size()));
  parallel_for(units.size(), [&](std::size_t i) {
    out.row(static_cast<Eigen::Index>(i)) = logit_features(summarize(raster, units[i].lon, units[i].lat, window), epsilon);
  });
  return out;
}

MatrixXd quantized_landcover(const std::vector<ImageSequence>& sequences, int classes, double epsilon) {
  if (classes < 2) throw SpecError("quantized land cover needs at least 2 classes");
  MatrixXd out(static_cast<Eigen::Index>(sequences.size()), classes);
  parallel_for(sequences.size(), [&](std::size_t i) {
    const ImageView img = sequences[i].slice(sequences[i].steps() - 1);
    VectorXd counts = VectorXd::Zero(classes);
    for (int h = 0; h < img.height; ++h)
      for (int w = 0; w < img.width; ++w) {
        double mean = 0.0;
        for (int b = 0; b < img.bands; ++b) mean += img.at(h, w, b);
        mean /= img.bands;
        counts[std::clamp(static_cast<int>(std::floor(mean * classes)), 0, classes - 1)] += 1.0;
      }
    out.row(static_cast<Eigen::Index>(i)) = logit_features(counts / counts.sum(), epsilon);
  });
  return out;
}

double eo_vs_landcover(const RateReport& eo, const RateReport& landcover) {
  if (eo.weighting != landcover.weighting)
    throw ComparisonError("reports use different weightings (" + to_string(eo.weighting) + " vs " +
                          to_string(landcover.weighting) + ")");
  if (eo.held_out_scores.size() != landcover.held_out_scores.size())
    throw ComparisonError("reports were computed on datasets of different size");
  return eo.ratio - landcover.ratio;
}

Correlation cate_correlation(const VectorXd& tau_eo, const VectorXd& tau_landcover) {
  return truth_correlation(tau_eo, tau_landcover);
}

}  // namespace heteo
