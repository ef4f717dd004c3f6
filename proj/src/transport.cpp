#include "heteo/transport.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "heteo/svg.hpp"

namespace heteo {

void BoundingBox::validate() const {
  if (!std::isfinite(min_lon) || !std::isfinite(min_lat) || !std::isfinite(max_lon) || !std::isfinite(max_lat))
    throw DomainError("bounding box has non-finite corners");
  if (!(min_lon < max_lon) || !(min_lat < max_lat)) throw DomainError("bounding box must have min < max on both axes");
  if (min_lon < -180 || max_lon > 180 || min_lat < -90 || max_lat > 90)
    throw DomainError("bounding box exceeds lon/lat range");
}

bool BoundingBox::contains(double lon, double lat) const {
  return lon >= min_lon && lon <= max_lon && lat >= min_lat && lat <= max_lat;
}

BoundingBox parse_bbox(const std::string& text) {
  std::vector<double> v;
  std::stringstream ss(text);
  std::string part;
  while (std::getline(ss, part, ',')) {
    try {
      std::size_t used = 0;
      v.push_back(std::stod(part, &used));
      if (used != part.size()) throw std::invalid_argument(part);
    } catch (const std::exception&) {
      throw DomainError("bounding box entry '" + part + "' is not a number");
    }
  }
  if (v.size() != 4) throw DomainError("bounding box needs min_lon,min_lat,max_lon,max_lat");
  BoundingBox b{v[0], v[1], v[2], v[3]};
  b.validate();
  return b;
}

void PopulationWeights::validate() const {
  if (height < 1 || width < 1 || density.size() != static_cast<std::size_t>(height) * width)
    throw ShapeError("population grid shape mismatch");
  double total = 0.0;
  for (double d : density) {
    if (!std::isfinite(d) || d < 0.0) throw WeightError("population densities must be finite and non-negative");
    total += d;
  }
  if (!(total > 0.0)) throw WeightError("population raster has zero total mass");
}

PopulationWeights read_population(const std::filesystem::path& path) {
  const Tensor t = read_tensor(path);
  if (!(t.rank() == 2 || (t.rank() == 3 && t.shape[2] == 1)))
    throw ShapeError("population raster must be (H,W) or (H,W,1)");
  PopulationWeights p;
  p.height = static_cast<int>(t.shape[0]);
  p.width = static_cast<int>(t.shape[1]);
  p.density.assign(t.data.begin(), t.data.end());
  p.validate();
  return p;
}

std::vector<GeoPoint> sample_sites(const BoundingBox& box, int n, const PopulationWeights* weights,
                                   std::uint64_t seed) {
  box.validate();
  if (n < 1) throw SpecError("site count must be >= 1");
  std::vector<double> cumulative;
  if (weights) {
    weights->validate();
    cumulative.resize(weights->density.size());
    std::partial_sum(weights->density.begin(), weights->density.end(), cumulative.begin());
  }
  const double lon_span = box.max_lon - box.min_lon, lat_span = box.max_lat - box.min_lat;
  std::vector<GeoPoint> out(static_cast<std::size_t>(n));
  for (std::size_t i = 0; i < out.size(); ++i) {
    Rng rng(stream_seed(seed, i));
    std::uniform_real_distribution<double> u(0.0, 1.0);
    double fx = u(rng), fy = u(rng);
    if (weights) {
      const double target = u(rng) * cumulative.back();
      // The first cumulative value above the target always belongs to a cell with positive mass.
      auto it = std::upper_bound(cumulative.begin(), cumulative.end(), target);
      if (it == cumulative.end()) it = std::lower_bound(cumulative.begin(), cumulative.end(), cumulative.back());
      const auto cell = static_cast<int>(it - cumulative.begin());
      const int row = cell / weights->width, col = cell % weights->width;
      fx = (col + fx) / weights->width;
      fy = (row + fy) / weights->height;
    }
    out[i].lon = std::min(box.min_lon + fx * lon_span, box.max_lon);
    out[i].lat = std::max(box.max_lat - fy * lat_span, box.min_lat);
  }
  return out;
}

UnitTable sites_table(const std::vector<GeoPoint>& points, const std::string& id_prefix) {
  UnitTable t;
  t.experimental = false;
  for (std::size_t i = 0; i < points.size(); ++i) {
    UnitRecord u;
    u.id = id_prefix + std::to_string(i);
    u.lon = points[i].lon;
    u.lat = points[i].lat;
    u.selected = false;
    t.units.push_back(std::move(u));
  }
  return t;
}

VectorXd transport_cate(const CateModel& model, const EmbeddingMatrix& sites) {
  if (sites.fingerprint != model.fingerprint)
    throw PipelineDriftError("site embeddings were produced by a different pipeline (fingerprint " +
                             (sites.fingerprint.empty() ? std::string("<none>") : sites.fingerprint) +
                             ", model expects " +
                             (model.fingerprint.empty() ? std::string("<none>") : model.fingerprint) + ")");
  if (sites.dim() != model.n_features)
    throw ShapeError("site embeddings have " + std::to_string(sites.dim()) + " columns, model expects " +
                     std::to_string(model.n_features));
  VectorXd tau = predict_cate(model, sites.values);
  if (!tau.allFinite()) throw DomainError("transport predictions are not finite");
  return tau;
}

namespace {

void check_lengths(const std::vector<GeoPoint>& sites, const VectorXd& tau) {
  if (static_cast<Eigen::Index>(sites.size()) != tau.size()) throw ShapeError("sites and tau_hat differ in length");
}

std::string g17(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

std::string map_csv(const std::vector<GeoPoint>& sites, const VectorXd& tau_hat) {
  check_lengths(sites, tau_hat);
  std::string out = "lon,lat,tau_hat\n";
  for (std::size_t i = 0; i < sites.size(); ++i)
    out += g17(sites[i].lon) + "," + g17(sites[i].lat) + "," + g17(tau_hat[static_cast<Eigen::Index>(i)]) + "\n";
  return out;
}

std::string map_geojson(const std::vector<GeoPoint>& sites, const VectorXd& tau_hat) {
  check_lengths(sites, tau_hat);
  std::string out = "{\"type\":\"FeatureCollection\",\"features\":[";
  for (std::size_t i = 0; i < sites.size(); ++i) {
    if (i) out += ",";
    out += "{\"type\":\"Feature\",\"geometry\":{\"type\":\"Point\",\"coordinates\":[" + g17(sites[i].lon) + "," +
           g17(sites[i].lat) + "]},\"properties\":{\"tau_hat\":" + g17(tau_hat[static_cast<Eigen::Index>(i)]) + "}}";
  }
  out += "]}\n";
  return out;
}

std::string map_svg(const std::vector<GeoPoint>& sites, const VectorXd& tau_hat) {
  check_lengths(sites, tau_hat);
  const double plot = 480, margin = 30, legend_w = 110;
  svg::Document doc(plot + 2 * margin + legend_w, plot + 2 * margin);
  double lon_lo = 0, lon_hi = 0, lat_lo = 0, lat_hi = 0, lo = 0, hi = 0;
  if (!sites.empty()) {
    lon_lo = lon_hi = sites[0].lon;
    lat_lo = lat_hi = sites[0].lat;
    lo = tau_hat.minCoeff();
    hi = tau_hat.maxCoeff();
  }
  for (const auto& s : sites) {
    lon_lo = std::min(lon_lo, s.lon);
    lon_hi = std::max(lon_hi, s.lon);
    lat_lo = std::min(lat_lo, s.lat);
    lat_hi = std::max(lat_hi, s.lat);
  }
  const svg::Scale sx{lon_lo, lon_hi, margin, margin + plot};
  const svg::Scale sy{lat_lo, lat_hi, margin + plot, margin};
  const svg::Scale colour{lo, hi, 0.0, 1.0};
  doc.rect(margin, margin, plot, plot, "none", "#888888");
  for (std::size_t i = 0; i < sites.size(); ++i)
    doc.circle(sx(sites[i].lon), sy(sites[i].lat), 3.0, svg::ramp(colour(tau_hat[static_cast<Eigen::Index>(i)])));

  const double lx = 2 * margin + plot, ly = margin;
  char buf[64];
  doc.text(lx, ly, "tau_hat", 12);
  if (hi > lo) {
    for (int k = 0; k < 20; ++k)
      doc.rect(lx, ly + 10 + (19 - k) * 10, 16, 10, svg::ramp(k / 19.0));
    std::snprintf(buf, sizeof buf, "%.3g", hi);
    doc.text(lx + 22, ly + 20, buf, 11);
    std::snprintf(buf, sizeof buf, "%.3g", lo);
    doc.text(lx + 22, ly + 208, buf, 11);
  } else {
    doc.rect(lx, ly + 10, 16, 16, svg::ramp(0.5));
    std::snprintf(buf, sizeof buf, "%.3g (constant)", lo);
    doc.text(lx + 22, ly + 22, buf, 11);
  }
  return doc.str();
}

std::vector<std::filesystem::path> emit_map(const std::vector<GeoPoint>& sites, const VectorXd& tau_hat,
                                            const std::filesystem::path& out_prefix) {
  const std::vector<std::pair<std::string, std::string>> files = {
      {".csv", map_csv(sites, tau_hat)}, {".geojson", map_geojson(sites, tau_hat)}, {".svg", map_svg(sites, tau_hat)}};
  if (out_prefix.has_parent_path()) std::filesystem::create_directories(out_prefix.parent_path());
  std::vector<std::filesystem::path> written;
  for (const auto& [ext, body] : files) {
    std::filesystem::path p = out_prefix;
    p += ext;
    std::ofstream out(p, std::ios::binary);
    if (!out) throw IoError("cannot write " + p.string());
    out << body;
    if (!out) throw IoError("failed writing " + p.string());
    written.push_back(p);
  }
  return written;
}

AgreementTable representation_agreement(const VectorXd& image_raw, const VectorXd& video_raw, const VectorXd& image_pc,
                                         const VectorXd& video_pc, const std::vector<bool>& is_transport) {
  const auto n = static_cast<Eigen::Index>(is_transport.size());
  if (image_raw.size() != n || video_raw.size() != n || image_pc.size() != n || video_pc.size() != n)
    throw AlignmentError("agreement inputs differ in length");
  AgreementTable t;
  const VectorXd* pairs[2][2] = {{&image_raw, &video_raw}, {&image_pc, &video_pc}};
  for (int space = 0; space < 2; ++space)
    for (int split = 0; split < 2; ++split) {
      std::vector<Eigen::Index> idx;
      for (Eigen::Index i = 0; i < n; ++i)
        if (is_transport[static_cast<std::size_t>(i)] == (split == 1)) idx.push_back(i);
      if (idx.size() < 3) {
        t.cells[space][split] = {0.0, true};
        continue;
      }
      VectorXd a(static_cast<Eigen::Index>(idx.size())), b(a.size());
      for (std::size_t k = 0; k < idx.size(); ++k) {
        a[static_cast<Eigen::Index>(k)] = (*pairs[space][0])[idx[k]];
        b[static_cast<Eigen::Index>(k)] = (*pairs[space][1])[idx[k]];
      }
      t.cells[space][split] = truth_correlation(a, b);
    }
  return t;
}

nlohmann::json to_json(const AgreementTable& t) {
  nlohmann::json j;
  const char* spaces[2] = {"raw", "pc"};
  const char* splits[2] = {"experimental", "transport"};
  for (int s = 0; s < 2; ++s)
    for (int k = 0; k < 2; ++k)
      j[spaces[s]][splits[k]] = {{"correlation", t.cells[s][k].value}, {"degenerate", t.cells[s][k].degenerate}};
  return j;
}

}  // namespace heteo
