#include <algorithm>

#include "heteo/simulation.hpp"
#include "support.hpp"

using namespace heteo;

namespace {

Image from_values(int size, int bands, const std::vector<float>& v) {
  Image img(size, size, bands);
  img.data = v;
  return img;
}

std::vector<float> slice_values(const ImageSequence& s, int t) {
  const ImageView v = s.slice(t);
  return {v.data.begin(), v.data.end()};
}

SimConfig small_config(int n, std::uint64_t seed, double sigma2 = 0.01) {
  SimConfig c;
  c.n = n;
  c.seed = seed;
  c.sigma2 = sigma2;
  c.pool = make_image_pool(4, 2, 1, 3);
  return c;
}

}  // namespace

TEST_CASE("rotate90 on a 2x2 image") {
  const Image in = from_values(2, 1, {1, 2, 3, 4});
  CHECK(rotate90(in).data == std::vector<float>{2, 4, 1, 3});
}

TEST_CASE("rotate90 index formula and group property") {
  const auto pool = make_image_pool(3, 7, 3, 11);
  for (const auto& img : pool) {
    const Image r = rotate90(img);
    for (int h = 0; h < 7; ++h)
      for (int w = 0; w < 7; ++w)
        for (int b = 0; b < 3; ++b) CHECK(r.at(h, w, b) == img.at(w, 6 - h, b));
    CHECK(rotate90(rotate90(rotate90(r))) == img);
    CHECK_FALSE(rotate90(rotate90(img)) == img);
  }
  const Image flat(5, 5, 2, 0.25f);
  CHECK(rotate90(flat) == flat);
  CHECK_THROWS_AS(rotate90(Image(2, 3, 1)), ShapeError);
}

TEST_CASE("procedural pool is seeded and normalised") {
  const auto a = make_image_pool(5, 16, 3, 1);
  const auto b = make_image_pool(5, 16, 3, 1);
  const auto c = make_image_pool(5, 16, 3, 2);
  CHECK(a == b);
  CHECK_FALSE(a == c);
  for (const auto& img : a) {
    CHECK(img.height == 16);
    CHECK(img.bands == 3);
    const auto [lo, hi] = std::minmax_element(img.data.begin(), img.data.end());
    CHECK(*lo >= 0.0f);
    CHECK(*hi <= 1.0f);
    CHECK(*hi > *lo);
  }
}

TEST_CASE("outcome cases of the data-generating process") {
  const SimDataset d = generate(small_config(2000, 5, 0.01));
  bool seen[2][2] = {};
  for (Eigen::Index i = 0; i < d.w.size(); ++i) {
    const double noiseless = d.y[i] - d.epsilon[i];
    if (d.w[i] == 0.0) CHECK(noiseless == 0.0);
    else CHECK(noiseless == doctest::Approx(d.rotated[i] ? 1.0 : -1.0).epsilon(1e-12));
    CHECK(d.tau_true[i] == (d.rotated[i] ? 1.0 : -1.0));
    seen[d.rotated[i]][static_cast<int>(d.w[i])] = true;
  }
  CHECK((seen[0][0] && seen[0][1] && seen[1][0] && seen[1][1]));
}

TEST_CASE("outcomes are reconstructed bit-exactly") {
  const SimDataset d = generate(small_config(500, 6, 0.1));
  for (Eigen::Index i = 0; i < d.y.size(); ++i)
    CHECK(d.y[i] == (2.0 * d.rotated[i] - 1.0) * d.w[i] + d.epsilon[i]);
  const double var = d.epsilon.squaredNorm() / 500.0;
  CHECK(var == doctest::Approx(0.1).epsilon(0.2));
}

TEST_CASE("slices are the base image and its rotation") {
  SimConfig c = small_config(200, 7);
  c.pool = make_image_pool(6, 4, 2, 8);
  const SimDataset d = generate(c);
  for (std::size_t i = 0; i < d.size(); ++i) {
    const Image& base = c.pool[static_cast<std::size_t>(d.base_index[i])];
    CHECK(d.sequences[i].steps() == 2);
    CHECK(slice_values(d.sequences[i], 0) == base.data);
    const Image second = d.rotated[static_cast<Eigen::Index>(i)] ? rotate90(base) : base;
    CHECK(slice_values(d.sequences[i], 1) == second.data);
  }
}

TEST_CASE("rotation rate and independence from treatment") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const SimDataset d = generate(small_config(100000, 1000 + seed));
    double table[2][2] = {};
    for (Eigen::Index i = 0; i < d.w.size(); ++i) table[d.rotated[i]][static_cast<int>(d.w[i])] += 1.0;
    const double n = 100000.0;
    const double rot = table[1][0] + table[1][1];
    if (seed == 0) CHECK(std::abs(rot / n - 0.5) < 0.01);
    double chi2 = 0.0;
    for (int r = 0; r < 2; ++r)
      for (int w = 0; w < 2; ++w) {
        const double expected = (table[r][0] + table[r][1]) * (table[0][w] + table[1][w]) / n;
        chi2 += (table[r][w] - expected) * (table[r][w] - expected) / expected;
      }
    CHECK(chi2 < 10.828);
  }
}

TEST_CASE("same seed gives the same dataset; noise scale only touches epsilon") {
  const SimDataset a = generate(small_config(300, 9, 0.01));
  const SimDataset b = generate(small_config(300, 9, 0.01));
  CHECK(a.sequences == b.sequences);
  CHECK(a.y == b.y);
  CHECK(a.w == b.w);
  const SimDataset c = generate(small_config(300, 9, 1.0));
  CHECK(c.w == a.w);
  CHECK(c.rotated == a.rotated);
  CHECK(c.epsilon.isApprox(a.epsilon * 10.0, 1e-12));
  CHECK_FALSE(generate(small_config(300, 10)).w == a.w);
}

TEST_CASE("config validation") {
  SimConfig c = small_config(10, 1);
  c.sigma2 = 0.0;
  CHECK_THROWS_AS(c.validate(), SpecError);
  c = small_config(10, 1);
  c.pool.clear();
  CHECK_THROWS_AS(c.validate(), SpecError);
}

TEST_CASE("to_dataset carries treatments and outcomes") {
  const SimDataset d = generate(small_config(30, 12));
  const ExperimentDataset ds = d.to_dataset();
  REQUIRE(ds.size() == 30);
  CHECK(ds.table.units[3].id == "sim00003");
  CHECK(ds.table.treatments() == d.w);
  CHECK(ds.table.outcomes() == d.y);
}

TEST_CASE("oracle grid cell recovers the effect") {
  GridOptions opts;
  opts.n = 1000;
  opts.pool_size = 8;
  opts.chip_size = 4;
  opts.estimator.forest.n_trees = 100;
  opts.cross_fit.bootstrap = 100;
  const auto res = run_grid({{"oracle", 0.01, 1}}, opts);
  REQUIRE(res.size() == 1);
  CHECK(res[0].corr > 0.99);
  CHECK(res[0].rate_ratio > 5.0);
}

TEST_CASE("grid rows are sorted, CSV and SVG are well formed") {
  GridOptions opts;
  opts.n = 100;
  opts.pool_size = 8;
  opts.chip_size = 8;
  opts.estimator.forest.n_trees = 20;
  opts.cross_fit.bootstrap = 20;
  const std::vector<GridCell> cells = {{"rand-vit", 1.0, 2}, {"rand-cnn", 0.01, 1}, {"rand-cnn", 1.0, 1}};
  const auto res = run_grid(cells, opts);
  REQUIRE(res.size() == 3);
  CHECK(res[0].cell.model == "rand-cnn");
  CHECK(res[0].cell.sigma2 == 0.01);
  CHECK(res[2].cell.model == "rand-vit");

  const std::string csv = grid_csv(res);
  CHECK(csv.rfind("model,sigma2,corr,rate_ratio,seed\n", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 4);
  const std::string svg = grid_svg(res);
  CHECK(svg.find("<svg") != std::string::npos);
  CHECK(svg.find("</svg>") != std::string::npos);
  CHECK(std::count(svg.begin(), svg.end(), '<') == std::count(svg.begin(), svg.end(), '>'));

  set_thread_override(1);
  const auto again = run_grid(cells, opts);
  set_thread_override(0);
  CHECK(grid_csv(again) == csv);
}
