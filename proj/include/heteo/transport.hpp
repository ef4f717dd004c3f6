#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "heteo/cate.hpp"
#include "heteo/data_model.hpp"
#include "heteo/rate.hpp"

namespace heteo {

struct BoundingBox {
  double min_lon = 0.0;
  double min_lat = 0.0;
  double max_lon = 0.0;
  double max_lat = 0.0;

  void validate() const;
  bool contains(double lon, double lat) const;
};

BoundingBox parse_bbox(const std::string& text);  // "min_lon,min_lat,max_lon,max_lat"

/// Non-negative densities on an H×W grid stretched over the sampling box;
/// row 0 is the northern edge.
struct PopulationWeights {
  int height = 0;
  int width = 0;
  std::vector<double> density;

  void validate() const;
};

PopulationWeights read_population(const std::filesystem::path& path);

struct GeoPoint {
  double lon = 0.0;
  double lat = 0.0;
};

/// Uniform over the box, or a density-weighted cell then uniform within it.
std::vector<GeoPoint> sample_sites(const BoundingBox& box, int n, const PopulationWeights* weights, std::uint64_t seed);

/// Site manifest rows (selected = false) for sampled points.
UnitTable sites_table(const std::vector<GeoPoint>& points, const std::string& id_prefix = "site");

/// Full-forest predictions for non-experimental sites. The embeddings must
/// carry the fingerprint stored in the model.
VectorXd transport_cate(const CateModel& model, const EmbeddingMatrix& sites);

std::string map_csv(const std::vector<GeoPoint>& sites, const VectorXd& tau_hat);
std::string map_geojson(const std::vector<GeoPoint>& sites, const VectorXd& tau_hat);
/// Scatter coloured blue (low) to yellow (high) with a legend.
std::string map_svg(const std::vector<GeoPoint>& sites, const VectorXd& tau_hat);

/// Writes `<prefix>.csv`, `<prefix>.geojson` and `<prefix>.svg`.
std::vector<std::filesystem::path> emit_map(const std::vector<GeoPoint>& sites, const VectorXd& tau_hat,
                                            const std::filesystem::path& out_prefix);

/// Correlations between image and sequence CATEs; rows raw/PC space,
/// columns experimental/transport units.
struct AgreementTable {
  Correlation cells[2][2];
};

AgreementTable representation_agreement(const VectorXd& image_raw, const VectorXd& video_raw, const VectorXd& image_pc,
                                         const VectorXd& video_pc, const std::vector<bool>& is_transport);
nlohmann::json to_json(const AgreementTable& t);

}  // namespace heteo
