#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "heteo/common.hpp"
#include "heteo/tensor.hpp"

namespace heteo {

/// Non-owning H×W×B view, row-major with bands innermost.
struct ImageView {
  int height = 0;
  int width = 0;
  int bands = 0;
  std::span<const float> data;

  float at(int h, int w, int b) const {
    return data[(static_cast<std::size_t>(h) * width + w) * bands + b];
  }
};

/// Owning H×W×B image.
struct Image {
  int height = 0;
  int width = 0;
  int bands = 0;
  std::vector<float> data;

  Image() = default;
  Image(int h, int w, int b, float fill = 0.0f);

  float& at(int h, int w, int b) { return data[(static_cast<std::size_t>(h) * width + w) * bands + b]; }
  float at(int h, int w, int b) const {
    return data[(static_cast<std::size_t>(h) * width + w) * bands + b];
  }
  ImageView view() const { return {height, width, bands, data}; }
  bool operator==(const Image&) const = default;
};

/// T×H×W×B float sequence of images for one unit. All entries finite.
class ImageSequence {
public:
  ImageSequence() = default;
  ImageSequence(int t, int h, int w, int b, std::vector<float> data);
  static ImageSequence from_slices(const std::vector<Image>& slices);

  int steps() const { return t_; }
  int height() const { return h_; }
  int width() const { return w_; }
  int bands() const { return b_; }
  std::array<int, 4> dims() const { return {t_, h_, w_, b_}; }
  std::size_t slice_size() const { return static_cast<std::size_t>(h_) * w_ * b_; }

  ImageView slice(int t) const;
  const std::vector<float>& data() const { return data_; }
  bool operator==(const ImageSequence&) const = default;

private:
  int t_ = 0, h_ = 0, w_ = 0, b_ = 0;
  std::vector<float> data_;
};

struct UnitRecord {
  std::string id;
  double lon = 0.0;
  double lat = 0.0;
  std::optional<int> treatment;   // absent for transport sites
  std::optional<double> outcome;  // absent for transport sites
  VectorXd tabular;
  bool selected = true;
  std::optional<std::string> cluster_id;
};

/// Known assignment probability: a dataset-level share, optionally overridden per cluster.
struct Propensity {
  double base = 0.5;
  std::map<std::string, double> per_cluster;

  double for_unit(const UnitRecord& u) const;
  void validate() const;
};

/// Parsed manifest rows. Experimental manifests carry treatment/outcome;
/// site manifests (selected=false) do not.
struct UnitTable {
  std::vector<UnitRecord> units;
  std::vector<std::string> tabular_names;  // "x_" columns, without the prefix
  bool experimental = true;
  bool has_clusters = false;

  std::size_t size() const { return units.size(); }
  std::vector<std::string> ids() const;
  VectorXd treatments() const;
  VectorXd outcomes() const;
  MatrixXd tabular() const;
};

struct ExperimentDataset {
  UnitTable table;
  std::vector<ImageSequence> sequences;
  Propensity propensity;

  std::size_t size() const { return table.units.size(); }
  const std::vector<UnitRecord>& units() const { return table.units; }
  std::array<int, 4> sequence_dims() const;

  /// Re-checks all dataset invariants; throws on violation.
  void validate() const;
};

/// N×D covariate matrix with its provenance.
struct EmbeddingMatrix {
  MatrixXd values;
  std::string label;
  std::string fingerprint;
  std::vector<std::string> ids;

  Eigen::Index rows() const { return values.rows(); }
  Eigen::Index dim() const { return values.cols(); }
};

UnitTable read_units(const std::filesystem::path& csv_path);
UnitTable parse_units(const std::string& csv_text);

/// Splits an (N,T,H,W,B) tensor into per-unit sequences.
std::vector<ImageSequence> sequences_from_tensor(const Tensor& t);
Tensor sequences_to_tensor(const std::vector<ImageSequence>& seqs);

ExperimentDataset make_dataset(UnitTable table, std::vector<ImageSequence> sequences,
                               std::optional<double> propensity = std::nullopt);

/// Loads the CSV manifest plus its tensor sidecar. When `tensor_path` is
/// empty the sidecar is `<manifest stem>.eot` next to the manifest.
ExperimentDataset load_manifest(const std::filesystem::path& csv_path,
                                const std::filesystem::path& tensor_path = {},
                                std::optional<double> propensity = std::nullopt);

/// Reads `cluster_id,propensity` rows into the per-cluster override table.
void load_propensity_table(const std::filesystem::path& csv_path, Propensity& p);

EmbeddingMatrix read_external_embeddings(const std::filesystem::path& path, const UnitTable& manifest,
                                         const std::string& label = {});
EmbeddingMatrix embeddings_from_tensor(const Tensor& t, const UnitTable& manifest,
                                       const std::string& label = {});
Tensor embeddings_to_tensor(const EmbeddingMatrix& e);
void write_embeddings(const EmbeddingMatrix& e, const std::filesystem::path& path);

}  // namespace heteo
