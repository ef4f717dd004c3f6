#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "heteo/data_model.hpp"
#include "heteo/rate.hpp"

namespace heteo {

/// Categorical H×W grid. Row 0 is the northern edge; `origin` is the
/// north-west corner of cell (0, 0).
struct LandCoverRaster {
  int height = 0;
  int width = 0;
  std::vector<int> codes;
  std::map<int, std::string> classes;
  double origin_lon = 0.0;
  double origin_lat = 0.0;
  double cell_size_m = 30.0;

  int at(int row, int col) const { return codes[static_cast<std::size_t>(row) * width + col]; }
  /// Class codes in sorted order; this is the feature order.
  std::vector<int> class_order() const;
  void validate() const;
  /// Grid cell containing a point (equirectangular approximation).
  std::pair<int, int> cell_of(double lon, double lat) const;
};

/// Raster from an (H,W) or (H,W,1) EOT1 tensor of integral codes and a JSON
/// legend {"classes": {"code": "name", ...}, "origin": [lon, lat], "cell_size_m": 30}.
LandCoverRaster read_raster(const std::filesystem::path& raster_path, const std::filesystem::path& legend_path);
LandCoverRaster raster_from_tensor(const Tensor& t, const nlohmann::json& legend);

/// Class proportions in the (2·window+1)² neighbourhood of a cell, clipped at
/// the raster edge.
VectorXd summarize(const LandCoverRaster& raster, int row, int col, int window = 3);
VectorXd summarize(const LandCoverRaster& raster, double lon, double lat, int window = 3);

/// log(p'/(1−p')) with p' = clamp(p, ε, 1−ε).
VectorXd logit_features(const VectorXd& proportions, double epsilon = 1e-3);

/// Logit proportion features for every unit (rows follow `units`).
MatrixXd landcover_features(const LandCoverRaster& raster, const std::vector<UnitRecord>& units, int window = 3,
                            double epsilon = 1e-3);

/// Land cover for simulated chips: the last slice's band mean is quantised
/// into `classes` equal bins over [0, 1] and summarised over the whole chip.
/// Per-class counts cannot see a rotation.
MatrixXd quantized_landcover(const std::vector<ImageSequence>& sequences, int classes = 4, double epsilon = 1e-3);

/// RATE ratio of the EO run minus that of the land-cover run.
double eo_vs_landcover(const RateReport& eo, const RateReport& landcover);
Correlation cate_correlation(const VectorXd& tau_eo, const VectorXd& tau_landcover);

}  // namespace heteo
