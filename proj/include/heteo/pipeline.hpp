#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "heteo/cate.hpp"
#include "heteo/embedders.hpp"
#include "heteo/rate.hpp"

namespace heteo {

struct SimulationSource {
  int n = 200;
  double sigma2 = 0.01;
  std::uint64_t seed = 0;
  int pool_size = 64;
  int chip_size = 16;
  std::filesystem::path pool;  // optional (N,H,W,B) chip tensor
};

struct LandcoverStage {
  std::filesystem::path raster;
  std::filesystem::path legend;
  int window = 3;
  double epsilon = 1e-3;
  std::optional<int> simulated_classes;  // quantised chips instead of a raster
};

struct TransportStage {
  std::filesystem::path sites;   // site manifest
  std::filesystem::path tensor;  // defaults to the manifest sidecar
};

/// Run configuration, schema "v1". Relative paths resolve against `base_dir`.
struct RunConfig {
  std::filesystem::path base_dir;

  std::filesystem::path manifest;
  std::filesystem::path tensor;
  std::filesystem::path external_embeddings;
  std::optional<double> propensity;
  std::filesystem::path propensity_table;
  std::optional<SimulationSource> simulation;

  std::string model = "rand-cnn";
  std::uint64_t embed_seed = 0;
  std::optional<int> pca;
  bool with_tabular = false;

  EstimatorSpec estimator;
  Weighting weighting = Weighting::Autoc;
  CrossFitOptions rate;

  std::optional<LandcoverStage> landcover;
  std::optional<TransportStage> transport;

  std::filesystem::path out_dir = "heteo-out";
  std::optional<std::size_t> threads;

  std::filesystem::path resolve(const std::filesystem::path& p) const;
};

/// Strict parse: unknown keys, wrong types and a missing or wrong version are
/// ValidationErrors naming the offending key.
RunConfig parse_run_config(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
RunConfig load_run_config(const std::filesystem::path& path);

struct RunResult {
  bool ok = false;
  std::string failed_stage;
  std::string message;
  nlohmann::json report;
  std::vector<std::filesystem::path> artifacts;
};

/// Executes data → embed → fit → rate → (landcover) → (transport) → report.
/// Stage failures are captured: outputs written so far stay on disk next to a
/// FAILED marker naming the stage.
RunResult run_pipeline(const RunConfig& config);

std::string render_summary(const nlohmann::json& report);

}  // namespace heteo
