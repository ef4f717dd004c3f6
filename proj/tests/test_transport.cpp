#include <fstream>

#include "heteo/simulation.hpp"
#include "heteo/transport.hpp"
#include "support.hpp"

using namespace heteo;

namespace {

const BoundingBox georgia{-85.6, 30.4, -80.8, 35.0};

bool is_number(const nlohmann::json& j) { return j.is_number_float() || j.is_number_integer(); }

// Structural check of a GeoJSON FeatureCollection of Point features.
std::string geojson_problem(const nlohmann::json& doc) {
  if (!doc.is_object() || doc.value("type", "") != "FeatureCollection") return "not a FeatureCollection";
  if (!doc.contains("features") || !doc["features"].is_array()) return "features is not an array";
  for (const auto& f : doc["features"]) {
    if (!f.is_object() || f.value("type", "") != "Feature") return "member is not a Feature";
    if (!f.contains("geometry") || !f["geometry"].is_object()) return "missing geometry";
    const auto& g = f["geometry"];
    if (g.value("type", "") != "Point") return "geometry is not a Point";
    if (!g.contains("coordinates") || !g["coordinates"].is_array() || g["coordinates"].size() != 2)
      return "Point needs two coordinates";
    if (!is_number(g["coordinates"][0]) || !is_number(g["coordinates"][1])) return "coordinates must be numbers";
    const double lon = g["coordinates"][0], lat = g["coordinates"][1];
    if (lon < -180 || lon > 180 || lat < -90 || lat > 90) return "coordinates out of range";
    if (!f.contains("properties") || !f["properties"].is_object()) return "missing properties";
    if (!f["properties"].contains("tau_hat") || !is_number(f["properties"]["tau_hat"])) return "tau_hat missing";
  }
  return {};
}

}  // namespace

TEST_CASE("bounding box parsing") {
  const BoundingBox b = parse_bbox("-85.6,30.4,-80.8,35");
  CHECK(b.max_lat == 35.0);
  CHECK_THROWS_AS(parse_bbox("1,2,3"), DomainError);
  CHECK_THROWS_AS(parse_bbox("1,2,0,3"), DomainError);
  CHECK_THROWS_AS(parse_bbox("a,2,3,4"), DomainError);
}

TEST_CASE("uniform sampling stays in the box and is seeded") {
  const auto sites = sample_sites(georgia, 1000, nullptr, 5);
  CHECK(sites.size() == 1000);
  for (const auto& s : sites) CHECK(georgia.contains(s.lon, s.lat));
  const auto again = sample_sites(georgia, 1000, nullptr, 5);
  for (std::size_t i = 0; i < sites.size(); ++i) {
    CHECK(sites[i].lon == again[i].lon);
    CHECK(sites[i].lat == again[i].lat);
  }
  CHECK(sample_sites(georgia, 1, nullptr, 6)[0].lon != sites[0].lon);
  CHECK(sites_table(sites).units[999].id == "site999");
}

TEST_CASE("point-mass population puts every site in its cell") {
  PopulationWeights w{4, 5, std::vector<double>(20, 0.0)};
  w.density[2 * 5 + 3] = 7.0;  // row 2, column 3
  const BoundingBox box{0, 0, 5, 4};
  for (const auto& s : sample_sites(box, 500, &w, 1)) {
    CHECK(s.lon >= 3.0);
    CHECK(s.lon <= 4.0);
    CHECK(s.lat >= 4.0 - 3.0);
    CHECK(s.lat <= 4.0 - 2.0);
  }
}

TEST_CASE("uniform population: cell occupancy passes chi-square") {
  const int h = 4, wd = 5, n = 100000;
  PopulationWeights w{h, wd, std::vector<double>(static_cast<std::size_t>(h * wd), 1.0)};
  const BoundingBox box{0, 0, 5, 4};
  std::vector<double> count(static_cast<std::size_t>(h * wd), 0.0);
  for (const auto& s : sample_sites(box, n, &w, 2)) {
    const int col = std::min(static_cast<int>(s.lon), wd - 1);
    const int row = std::min(static_cast<int>(4.0 - s.lat), h - 1);
    count[static_cast<std::size_t>(row * wd + col)] += 1.0;
  }
  const double expected = static_cast<double>(n) / (h * wd);
  double chi2 = 0.0;
  for (double c : count) chi2 += (c - expected) * (c - expected) / expected;
  CHECK(chi2 < 43.82);  // 99.9% quantile, 19 degrees of freedom
}

TEST_CASE("weights are validated") {
  PopulationWeights zero{2, 2, {0, 0, 0, 0}};
  CHECK_THROWS_AS(sample_sites(georgia, 10, &zero, 1), WeightError);
  PopulationWeights negative{2, 2, {1, -1, 0, 0}};
  CHECK_THROWS_AS(negative.validate(), WeightError);
}

TEST_CASE("scoring refuses a different pipeline") {
  const MatrixXd x = testing::gaussian(200, 3, 1);
  const VectorXd w = testing::bernoulli(200, 0.5, 2);
  const VectorXd y = w.cwiseProduct(x.col(0)) + 0.1 * testing::gaussian(200, 1, 3).col(0);
  EstimatorSpec spec;
  spec.forest.n_trees = 30;
  const CateModel model = fit_cate(x, w, y, spec, "abc");

  EmbeddingMatrix same{x, "train", "abc", {}};
  const VectorXd tau = transport_cate(model, same);
  CHECK(tau == predict_forest(std::get<CausalForestModel>(model.model), x));
  CHECK_FALSE(tau == predict_forest_oob(std::get<CausalForestModel>(model.model), x));

  EmbeddingMatrix other{x, "train", "abd", {}};
  CHECK_THROWS_AS(transport_cate(model, other), PipelineDriftError);
  EmbeddingMatrix narrow{x.leftCols(2), "train", "abc", {}};
  CHECK_THROWS_AS(transport_cate(model, narrow), ShapeError);

  EstimatorSpec stump = spec;
  stump.forest.max_depth = 0;
  const VectorXd flat = transport_cate(fit_cate(x, w, y, stump, "abc"), EmbeddingMatrix{testing::gaussian(50, 3, 9), "s", "abc", {}});
  CHECK((flat.array() == flat[0]).all());
}

TEST_CASE("held-out rotated sites score higher") {
  SimConfig c;
  c.n = 3200;
  c.seed = 4;
  c.pool = make_image_pool(64, 16, 3, 5);
  const SimDataset d = generate(c);
  const MatrixXd x = simulation_embeddings(d, "rand-cnn", 6);
  EstimatorSpec spec;
  spec.forest.n_trees = 300;
  const CateModel model = fit_cate(x.topRows(3000), d.w.head(3000), d.y.head(3000), spec, "sim");
  const VectorXd tau = transport_cate(model, EmbeddingMatrix{x.bottomRows(200), "sites", "sim", {}});
  double rot = 0, flat = 0;
  int nr = 0, nf = 0;
  for (int i = 0; i < 200; ++i) {
    if (d.rotated[3000 + i]) {
      rot += tau[i];
      ++nr;
    } else {
      flat += tau[i];
      ++nf;
    }
  }
  CHECK(rot / nr - flat / nf > 1.0);
}

TEST_CASE("map artifacts") {
  const std::vector<GeoPoint> two = {{-84.1, 33.7}, {-83.2, 34.05}};
  const std::string csv = map_csv(two, (VectorXd(2) << 0.5, -1.25).finished());
  CHECK(csv == "lon,lat,tau_hat\n-84.099999999999994,33.700000000000003,0.5\n-83.200000000000003,34.049999999999997,-1.25\n");
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 3);
  CHECK_THROWS_AS(map_csv(two, VectorXd::Zero(3)), ShapeError);

  const auto sites = sample_sites(georgia, 100, nullptr, 8);
  const VectorXd tau = testing::gaussian(100, 1, 9).col(0);
  const auto doc = nlohmann::json::parse(map_geojson(sites, tau));
  CHECK(geojson_problem(doc).empty());
  CHECK(geojson_problem(nlohmann::json::parse(R"({"type":"FeatureCollection","features":[{"type":"Feature"}]})")) ==
        "missing geometry");
  REQUIRE(doc["features"].size() == 100);

  // CSV and GeoJSON carry the same coordinates exactly.
  std::stringstream rows(map_csv(sites, tau));
  std::string line;
  std::getline(rows, line);
  for (std::size_t i = 0; i < 100; ++i) {
    std::getline(rows, line);
    const auto c1 = line.find(','), c2 = line.find(',', c1 + 1);
    const auto& f = doc["features"][i];
    CHECK(std::stod(line.substr(0, c1)) == f["geometry"]["coordinates"][0].get<double>());
    CHECK(std::stod(line.substr(c1 + 1, c2 - c1 - 1)) == f["geometry"]["coordinates"][1].get<double>());
    CHECK(std::stod(line.substr(c2 + 1)) == f["properties"]["tau_hat"].get<double>());
    CHECK(f["geometry"]["coordinates"][0].get<double>() == sites[i].lon);
  }

  const std::string svg = map_svg(sites, tau);
  CHECK(svg.find("#2c3e9e") != std::string::npos);
  CHECK(svg.find("#f5d90a") != std::string::npos);
  const std::string flat = map_svg(sites, VectorXd::Constant(100, 0.3));
  CHECK(flat.find("(constant)") != std::string::npos);

  testing::TempDir dir("map");
  const auto files = emit_map(sites, tau, dir / "maps" / "transport");
  REQUIRE(files.size() == 3);
  CHECK(testing::read_text(files[0]) == map_csv(sites, tau));
  CHECK(files[1].extension() == ".geojson");
  CHECK(std::filesystem::exists(files[2]));
}

TEST_CASE("representation agreement table") {
  std::vector<bool> split(1000);
  for (std::size_t i = 0; i < split.size(); ++i) split[i] = i % 3 == 0;
  const VectorXd a = testing::gaussian(1000, 1, 1).col(0);
  const VectorXd b = testing::gaussian(1000, 1, 2).col(0);
  const AgreementTable same = representation_agreement(a, a, b, b, split);
  for (int s = 0; s < 2; ++s)
    for (int k = 0; k < 2; ++k) CHECK(same.cells[s][k].value == doctest::Approx(1.0));
  const AgreementTable indep = representation_agreement(a, b, b, a, split);
  for (int s = 0; s < 2; ++s)
    for (int k = 0; k < 2; ++k) CHECK(std::abs(indep.cells[s][k].value) < 0.1);

  const auto j = to_json(same);
  CHECK(j["pc"]["transport"]["correlation"].get<double>() == doctest::Approx(1.0));
  const AgreementTable none = representation_agreement(a, a, a, a, std::vector<bool>(1000, false));
  CHECK(none.cells[0][1].degenerate);
  CHECK_THROWS_AS(representation_agreement(a, a.head(5), a, a, split), AlignmentError);
}
