#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "heteo/cate.hpp"
#include "heteo/data_model.hpp"
#include "heteo/rate.hpp"

namespace heteo {

/// 90° counter-clockwise rotation, out(h, w) = in(w, H−1−h). Square images only.
Image rotate90(const Image& image);

/// Seeded smooth random fields in [0, 1]: blurred white noise, one field per band.
std::vector<Image> make_image_pool(int count, int size = 16, int bands = 3, std::uint64_t seed = 0);

/// Reads an (N,H,W,B) tensor of chips, centre-cropping each to a square.
std::vector<Image> load_image_pool(const std::filesystem::path& path);

struct SimConfig {
  int n = 1000;
  double sigma2 = 0.01;
  double treat_prob = 0.5;
  double rotate_prob = 0.5;
  std::uint64_t seed = 0;
  std::vector<Image> pool;

  void validate() const;
};

struct SimDataset {
  std::vector<ImageSequence> sequences;  // T = 2
  std::vector<int> base_index;
  VectorXi rotated;
  VectorXd w;
  VectorXd y;
  VectorXd tau_true;
  VectorXd epsilon;
  double treat_prob = 0.5;

  std::size_t size() const { return sequences.size(); }
  /// Experimental dataset with synthetic ids and coordinates.
  ExperimentDataset to_dataset() const;
};

/// Y_i = (2·rotated_i − 1)·W_i + ε_i, ε_i ~ N(0, σ²). The images, rotation and
/// treatment draws do not depend on σ², so datasets that differ only in σ²
/// share everything except the noise scale.
SimDataset generate(const SimConfig& config);

struct GridCell {
  std::string model;  // rand-cnn, rand-vit or oracle
  double sigma2 = 0.01;
  std::uint64_t seed = 0;

  bool operator<(const GridCell& o) const;
};

struct GridOptions {
  int n = 1000;
  int pool_size = 64;
  int chip_size = 16;
  std::vector<Image> pool;  // overrides the procedural pool when non-empty
  EstimatorSpec estimator;
  Weighting weighting = Weighting::Autoc;
  CrossFitOptions cross_fit;
};

struct GridResult {
  GridCell cell;
  double corr = 0.0;
  bool corr_degenerate = false;
  double rate_ratio = 0.0;
  bool rate_degenerate = false;
};

/// Embedding matrix for one simulated dataset under a named model.
/// "oracle" is the single true-τ column.
MatrixXd simulation_embeddings(const SimDataset& data, const std::string& model, std::uint64_t seed);

/// Runs every cell; rows come back sorted by (model, sigma2, seed).
std::vector<GridResult> run_grid(const std::vector<GridCell>& cells, const GridOptions& opts);

std::string grid_csv(const std::vector<GridResult>& results);
/// Two-panel scatter: correlation and RATE ratio against σ², one colour per model.
std::string grid_svg(const std::vector<GridResult>& results);

}  // namespace heteo
