#include "heteo/landcover.hpp"
#include "heteo/simulation.hpp"
#include "heteo/tensor.hpp"
#include "support.hpp"

using namespace heteo;

namespace {

LandCoverRaster random_raster(int h, int w, int classes, std::uint64_t seed) {
  LandCoverRaster r;
  r.height = h;
  r.width = w;
  Rng rng(seed);
  std::uniform_int_distribution<int> code(0, classes - 1);
  for (int i = 0; i < h * w; ++i) r.codes.push_back(10 * code(rng));
  for (int c = 0; c < classes; ++c) r.classes[10 * c] = "class" + std::to_string(c);
  r.origin_lon = 30.0;
  r.origin_lat = 10.0;
  return r;
}

VectorXd brute_force_summary(const LandCoverRaster& r, int row, int col, int window) {
  const auto order = r.class_order();
  VectorXd counts = VectorXd::Zero(static_cast<Eigen::Index>(order.size()));
  double total = 0;
  for (int i = 0; i < r.height; ++i)
    for (int j = 0; j < r.width; ++j) {
      if (std::abs(i - row) > window || std::abs(j - col) > window) continue;
      for (std::size_t k = 0; k < order.size(); ++k)
        if (r.codes[static_cast<std::size_t>(i * r.width + j)] == order[k]) counts[static_cast<Eigen::Index>(k)] += 1;
      total += 1;
    }
  return counts / total;
}

}  // namespace

TEST_CASE("uniform window gives a one-hot vector") {
  LandCoverRaster r = random_raster(9, 9, 3, 1);
  std::fill(r.codes.begin(), r.codes.end(), 20);
  const VectorXd p = summarize(r, 4, 4, 3);
  CHECK(p == (VectorXd(3) << 0, 0, 1).finished());
}

TEST_CASE("counting example: five A and four B") {
  LandCoverRaster r;
  r.height = r.width = 3;
  r.codes = {1, 2, 1, 2, 1, 2, 1, 2, 1};
  r.classes = {{1, "A"}, {2, "B"}};
  const VectorXd p = summarize(r, 1, 1, 1);
  CHECK(p[0] == doctest::Approx(5.0 / 9.0));
  CHECK(p[1] == doctest::Approx(4.0 / 9.0));
}

TEST_CASE("summaries match brute-force enumeration and sum to one") {
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    const LandCoverRaster r = random_raster(12, 17, 5, seed);
    Rng rng(seed + 100);
    std::uniform_int_distribution<int> row(0, 11), col(0, 16), win(0, 4);
    for (int t = 0; t < 20; ++t) {
      const int i = row(rng), j = col(rng), w = win(rng);
      const VectorXd p = summarize(r, i, j, w);
      CHECK(p.isApprox(brute_force_summary(r, i, j, w), 1e-14));
      CHECK(std::abs(p.sum() - 1.0) < 1e-12);
    }
  }
}

TEST_CASE("point lookup and bounds") {
  const LandCoverRaster r = random_raster(10, 10, 2, 3);
  const double deg = 30.0 / 111320.0;
  const auto [row, col] = r.cell_of(30.0 + 4.5 * deg / std::cos(10.0 * std::numbers::pi / 180.0), 10.0 - 2.5 * deg);
  CHECK(row == 2);
  CHECK(col == 4);
  CHECK(summarize(r, 30.0 + 0.1 * deg, 10.0 - 0.1 * deg, 1) == summarize(r, 0, 0, 1));
  CHECK_THROWS_AS(r.cell_of(29.9, 10.0), BoundsError);
  CHECK_THROWS_AS(r.cell_of(30.0, 10.5), BoundsError);
  CHECK_THROWS_AS(summarize(r, 10, 0, 1), BoundsError);
}

TEST_CASE("logit features") {
  const VectorXd f = logit_features((VectorXd(4) << 0.5, 0.0, 1.0, 0.25).finished());
  CHECK(f[0] == 0.0);
  CHECK(f[1] == doctest::Approx(-6.9068).epsilon(1e-4));
  CHECK(f[1] == doctest::Approx(std::log(1e-3 / (1 - 1e-3))));
  CHECK(f[2] == doctest::Approx(-f[1]));
  CHECK(f[3] == doctest::Approx(std::log(1.0 / 3.0)));
  double prev = -1e300;
  for (int k = 0; k <= 1000; ++k) {
    const double p = 1e-3 + (1 - 2e-3) * k / 1000.0;
    const double v = logit_features(VectorXd::Constant(1, p))[0];
    CHECK(v > prev);
    prev = v;
  }
  CHECK_THROWS_AS(logit_features(VectorXd::Constant(1, 1.5)), DomainError);
}

TEST_CASE("raster from tensor and legend") {
  Tensor t({2, 3}, {1, 1, 2, 2, 5, 1});
  const nlohmann::json legend = {{"classes", {{"1", "forest"}, {"2", "urban"}, {"5", "water"}}},
                                 {"origin", {12.0, 40.0}},
                                 {"cell_size_m", 30}};
  const LandCoverRaster r = raster_from_tensor(t, legend);
  CHECK(r.at(1, 1) == 5);
  CHECK(r.class_order() == std::vector<int>{1, 2, 5});
  CHECK(r.origin_lat == 40.0);

  testing::TempDir dir("lc");
  write_tensor(t, dir / "lc.eot");
  testing::write_text(dir / "lc.json", legend.dump());
  CHECK(read_raster(dir / "lc.eot", dir / "lc.json").codes == r.codes);

  nlohmann::json missing = legend;
  missing["classes"].erase("5");
  CHECK_THROWS_AS(raster_from_tensor(t, missing), SchemaError);
  CHECK_THROWS_AS(raster_from_tensor(Tensor({2, 3}, {1, 1.5f, 2, 2, 5, 1}), legend), DomainError);
}

TEST_CASE("features per unit have a fixed width") {
  const LandCoverRaster r = random_raster(40, 40, 4, 7);
  std::vector<UnitRecord> units(3);
  const double deg = 30.0 / 111320.0;
  for (int i = 0; i < 3; ++i) {
    units[static_cast<std::size_t>(i)].lon = 30.0 + (5 + 10 * i) * deg;
    units[static_cast<std::size_t>(i)].lat = 10.0 - (5 + 10 * i) * deg;
  }
  const MatrixXd f = landcover_features(r, units, 3);
  CHECK(f.rows() == 3);
  CHECK(f.cols() == 4);
  CHECK(f.allFinite());
  const auto [row, col] = r.cell_of(units[1].lon, units[1].lat);
  CHECK(f.row(1).transpose().isApprox(logit_features(summarize(r, row, col, 3))));
}

TEST_CASE("quantised land cover is blind to rotation") {
  const auto pool = make_image_pool(6, 16, 3, 2);
  for (const auto& img : pool) {
    const auto plain = ImageSequence::from_slices({img, img});
    const auto turned = ImageSequence::from_slices({img, rotate90(img)});
    const MatrixXd f = quantized_landcover({plain, turned});
    CHECK(f.row(0) == f.row(1));
  }
}

TEST_CASE("comparison of EO and land-cover reports") {
  RateReport a;
  a.ratio = 6.5;
  a.held_out_scores = VectorXd::Zero(10);
  RateReport b = a;
  CHECK(eo_vs_landcover(a, b) == 0.0);
  b.ratio = 0.5;
  CHECK(eo_vs_landcover(a, b) == 6.0);
  b.weighting = Weighting::Qini;
  CHECK_THROWS_AS(eo_vs_landcover(a, b), ComparisonError);
  const VectorXd tau = testing::gaussian(20, 1, 1).col(0);
  CHECK(cate_correlation(tau, tau).value == doctest::Approx(1.0));
}
