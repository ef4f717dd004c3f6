#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "heteo/common.hpp"
#include "heteo/data_model.hpp"
#include "heteo/pca.hpp"

namespace heteo {

enum class SpatialKind { RandCnn, RandVit };

std::string to_string(SpatialKind k);
SpatialKind spatial_kind_from_string(const std::string& s);

struct CnnParams {
  int kernel = 5;
};

struct VitParams {
  int patch = 8;
  int depth = 2;
  int heads = 4;
  int mlp_ratio = 2;
};

struct SpatialEmbedderSpec {
  SpatialKind kind = SpatialKind::RandCnn;
  std::uint64_t seed = 0;
  int out_dim = 384;  // CNN channels, or ViT token width
  int in_bands = 3;
  CnnParams cnn;
  VitParams vit;

  void validate() const;
};

struct TemporalAggregatorSpec {
  std::uint64_t seed = 0;
  int in_dim = 384;  // spatial out_dim
  int dim = 384;     // output D
  int depth = 1;
  int heads = 4;
  int mlp_ratio = 2;
  bool time_encoding = true;  // test hook: disable the sinusoidal time code

  void validate() const;
};

/// Spatial embedder followed by temporal aggregator.
struct PipelineSpec {
  SpatialEmbedderSpec spatial;
  TemporalAggregatorSpec temporal;

  std::string label() const;
};

/// Pipeline defaults by spatial model: rand-cnn → 384 channels / D=384,
/// rand-vit → 128-wide tokens / D=128. The temporal seed is derived from `seed`.
PipelineSpec default_pipeline(SpatialKind kind, std::uint64_t seed, int bands = 3);

struct Weight {
  std::vector<int> shape;  // logical shape; `value` stores it as (prod(shape[:-1]) × shape[-1])
  MatrixXd value;
};

/// Named layer tensors, regenerated bit-identically from the seed.
struct WeightBundle {
  std::map<std::string, Weight> tensors;

  const Weight& at(const std::string& name) const;
  std::size_t parameter_count() const;
  bool operator==(const WeightBundle& o) const;
};

// Weight matrices are N(0, 2/fan_in); biases and layer-norm shifts are 0,
// layer-norm scales are 1.
WeightBundle init_weights(const SpatialEmbedderSpec& spec, std::uint64_t seed);
WeightBundle init_weights(const TemporalAggregatorSpec& spec, std::uint64_t seed);

/// Image → out_dim vector.
VectorXd spatial_forward(const ImageView& image, const SpatialEmbedderSpec& spec, const WeightBundle& weights);

/// Token sequence (rows) → mean-pooled D vector after the temporal transformer.
VectorXd temporal_forward(const MatrixXd& spatial_tokens, const TemporalAggregatorSpec& spec,
                          const WeightBundle& weights);

/// Holds a pipeline spec and its initialised weights.
class SequenceEmbedder {
public:
  explicit SequenceEmbedder(PipelineSpec spec);

  const PipelineSpec& spec() const { return spec_; }
  const WeightBundle& spatial_weights() const { return spatial_; }
  const WeightBundle& temporal_weights() const { return temporal_; }
  std::size_t parameter_count() const { return spatial_.parameter_count() + temporal_.parameter_count(); }
  int output_dim() const { return spec_.temporal.dim; }

  VectorXd spatial(const ImageView& image) const;
  VectorXd embed(const ImageSequence& seq) const;

private:
  PipelineSpec spec_;
  WeightBundle spatial_;
  WeightBundle temporal_;
};

VectorXd embed_sequence(const ImageSequence& seq, const PipelineSpec& spec);

struct EmbedOptions {
  bool with_tabular = false;
  std::optional<int> pca_k;  // fit PCA with this many components
};

struct EmbedResult {
  EmbeddingMatrix embeddings;
  std::optional<PcaModel<double>> pca;
  std::vector<std::string> warnings;
};

/// Embeds every unit (parallel, written to pre-assigned rows).
MatrixXd embed_sequences(const std::vector<ImageSequence>& seqs, const SequenceEmbedder& embedder);

/// Full embedding stage: raw embeddings, optional PCA (fitted here unless
/// `fixed_pca` is given), optional tabular append, provenance fingerprint.
EmbedResult embed_dataset(const std::vector<ImageSequence>& seqs, const UnitTable& table, const PipelineSpec& spec,
                          const EmbedOptions& opts, const PcaModel<double>* fixed_pca = nullptr);

/// Hash over the embedding pipeline state: specs, seeds, PCA bytes, tabular schema.
std::string pipeline_fingerprint(const nlohmann::json& pipeline_description, const PcaModel<double>* pca,
                                 const std::vector<std::string>& tabular_schema);
std::string pipeline_fingerprint(const PipelineSpec& spec, const PcaModel<double>* pca,
                                 const std::vector<std::string>& tabular_schema);

nlohmann::json to_json(const PipelineSpec& spec);
PipelineSpec pipeline_from_json(const nlohmann::json& j);
nlohmann::json to_json(const PcaModel<double>& pca);
PcaModel<double> pca_from_json(const nlohmann::json& j);

}  // namespace heteo
