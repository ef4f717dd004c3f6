#include "heteo/embedders.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>

namespace heteo {

namespace {

constexpr double kLayerNormEps = 1e-5;

void add_gaussian(WeightBundle& b, std::uint64_t seed, const std::string& name, std::vector<int> shape,
                  int fan_in) {
  int cols = shape.back();
  int rows = 1;
  for (std::size_t i = 0; i + 1 < shape.size(); ++i) rows *= shape[i];
  Rng rng(stream_seed(seed, fnv1a(name.data(), name.size())));
  std::normal_distribution<double> normal(0.0, std::sqrt(2.0 / fan_in));
  Weight w{std::move(shape), MatrixXd(rows, cols)};
  // Fill in row-major order so the draw sequence follows the logical layout.
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) w.value(r, c) = normal(rng);
  b.tensors.emplace(name, std::move(w));
}

void add_constant(WeightBundle& b, const std::string& name, int width, double value) {
  b.tensors.emplace(name, Weight{{width}, MatrixXd::Constant(1, width, value)});
}

void add_block(WeightBundle& b, std::uint64_t seed, const std::string& prefix, int dim, int hidden) {
  add_constant(b, prefix + "ln1.gamma", dim, 1.0);
  add_constant(b, prefix + "ln1.beta", dim, 0.0);
  for (const char* m : {"wq", "wk", "wv", "wo"}) add_gaussian(b, seed, prefix + m, {dim, dim}, dim);
  add_constant(b, prefix + "ln2.gamma", dim, 1.0);
  add_constant(b, prefix + "ln2.beta", dim, 0.0);
  add_gaussian(b, seed, prefix + "mlp.w1", {dim, hidden}, dim);
  add_constant(b, prefix + "mlp.b1", hidden, 0.0);
  add_gaussian(b, seed, prefix + "mlp.w2", {hidden, dim}, hidden);
  add_constant(b, prefix + "mlp.b2", dim, 0.0);
}

MatrixXd sinusoidal_encoding(Eigen::Index positions, Eigen::Index dim) {
  MatrixXd pe(positions, dim);
  for (Eigen::Index p = 0; p < positions; ++p)
    for (Eigen::Index i = 0; i < dim; ++i) {
      const double freq = std::pow(10000.0, -static_cast<double>(2 * (i / 2)) / static_cast<double>(dim));
      pe(p, i) = (i % 2 == 0) ? std::sin(static_cast<double>(p) * freq) : std::cos(static_cast<double>(p) * freq);
    }
  return pe;
}

MatrixXd layer_norm(const MatrixXd& x, const Weight& gamma, const Weight& beta) {
  MatrixXd out(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const double mu = x.row(r).mean();
    const double var = (x.row(r).array() - mu).square().mean();
    out.row(r) = ((x.row(r).array() - mu) / std::sqrt(var + kLayerNormEps)).matrix();
  }
  out.array().rowwise() *= gamma.value.row(0).array();
  out.rowwise() += beta.value.row(0);
  return out;
}

void softmax_rows(MatrixXd& s) {
  for (Eigen::Index r = 0; r < s.rows(); ++r) {
    const double m = s.row(r).maxCoeff();
    s.row(r) = (s.row(r).array() - m).exp().matrix();
    s.row(r) /= s.row(r).sum();
  }
}

// Pre-norm transformer block: x + MHA(LN(x)), then x + MLP(LN(x)).
void block_forward(MatrixXd& x, const WeightBundle& w, const std::string& prefix, int heads) {
  const Eigen::Index dim = x.cols();
  const Eigen::Index hd = dim / heads;
  const MatrixXd h = layer_norm(x, w.at(prefix + "ln1.gamma"), w.at(prefix + "ln1.beta"));
  const MatrixXd q = h * w.at(prefix + "wq").value;
  const MatrixXd k = h * w.at(prefix + "wk").value;
  const MatrixXd v = h * w.at(prefix + "wv").value;
  MatrixXd attn(x.rows(), dim);
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
  for (int hh = 0; hh < heads; ++hh) {
    MatrixXd s = (q.middleCols(hh * hd, hd) * k.middleCols(hh * hd, hd).transpose()) * scale;
    softmax_rows(s);
    attn.middleCols(hh * hd, hd) = s * v.middleCols(hh * hd, hd);
  }
  x += attn * w.at(prefix + "wo").value;

  const MatrixXd h2 = layer_norm(x, w.at(prefix + "ln2.gamma"), w.at(prefix + "ln2.beta"));
  MatrixXd hidden = h2 * w.at(prefix + "mlp.w1").value;
  hidden.rowwise() += w.at(prefix + "mlp.b1").value.row(0);
  hidden = hidden.cwiseMax(0.0);
  MatrixXd out = hidden * w.at(prefix + "mlp.w2").value;
  out.rowwise() += w.at(prefix + "mlp.b2").value.row(0);
  x += out;
}

int padded(int n, int p) { return (n + p - 1) / p * p; }

VectorXd cnn_forward(const ImageView& img, const SpatialEmbedderSpec& spec, const WeightBundle& w) {
  const int k = spec.cnn.kernel;
  if (k > img.height || k > img.width)
    throw SpecError("CNN kernel " + std::to_string(k) + " exceeds image size " + std::to_string(img.height) + "x" +
                    std::to_string(img.width));
  const int oh = img.height - k + 1;
  const int ow = img.width - k + 1;
  const int patch = k * k * img.bands;
  MatrixXd cols(static_cast<Eigen::Index>(oh) * ow, patch);
  for (int y = 0; y < oh; ++y)
    for (int x = 0; x < ow; ++x) {
      const Eigen::Index r = static_cast<Eigen::Index>(y) * ow + x;
      Eigen::Index c = 0;
      for (int ky = 0; ky < k; ++ky)
        for (int kx = 0; kx < k; ++kx)
          for (int b = 0; b < img.bands; ++b) cols(r, c++) = img.at(y + ky, x + kx, b);
    }
  MatrixXd act = cols * w.at("conv.kernel").value;
  act.rowwise() += w.at("conv.bias").value.row(0);
  // ReLU then global max pool over positions.
  return act.cwiseMax(0.0).colwise().maxCoeff().transpose();
}

VectorXd vit_forward(const ImageView& img, const SpatialEmbedderSpec& spec, const WeightBundle& w) {
  const int p = spec.vit.patch;
  const int ph = padded(img.height, p);
  const int pw = padded(img.width, p);
  if (ph % p != 0 || pw % p != 0) throw SpecError("patch size does not divide the padded image");
  const int top = (ph - img.height) / 2;
  const int left = (pw - img.width) / 2;
  const int gh = ph / p;
  const int gw = pw / p;
  const int patch_len = p * p * img.bands;

  MatrixXd tokens(static_cast<Eigen::Index>(gh) * gw, patch_len);
  for (int gy = 0; gy < gh; ++gy)
    for (int gx = 0; gx < gw; ++gx) {
      const Eigen::Index r = static_cast<Eigen::Index>(gy) * gw + gx;
      Eigen::Index c = 0;
      for (int y = 0; y < p; ++y)
        for (int x = 0; x < p; ++x) {
          const int sy = gy * p + y - top;
          const int sx = gx * p + x - left;
          const bool inside = sy >= 0 && sy < img.height && sx >= 0 && sx < img.width;
          for (int b = 0; b < img.bands; ++b) tokens(r, c++) = inside ? img.at(sy, sx, b) : 0.0;
        }
    }
  MatrixXd x = tokens * w.at("patch.weight").value;
  x.rowwise() += w.at("patch.bias").value.row(0);
  x += sinusoidal_encoding(x.rows(), x.cols());
  for (int d = 0; d < spec.vit.depth; ++d) block_forward(x, w, "block" + std::to_string(d) + ".", spec.vit.heads);
  return x.colwise().mean().transpose();
}

}  // namespace

std::string to_string(SpatialKind k) { return k == SpatialKind::RandCnn ? "rand-cnn" : "rand-vit"; }

SpatialKind spatial_kind_from_string(const std::string& s) {
  if (s == "rand-cnn") return SpatialKind::RandCnn;
  if (s == "rand-vit") return SpatialKind::RandVit;
  throw SpecError("unknown embedder model '" + s + "' (expected rand-cnn or rand-vit)");
}

void SpatialEmbedderSpec::validate() const {
  if (out_dim < 1) throw SpecError("spatial out_dim must be >= 1");
  if (in_bands < 1) throw SpecError("in_bands must be >= 1");
  if (kind == SpatialKind::RandCnn) {
    if (cnn.kernel < 1) throw SpecError("CNN kernel must be >= 1");
  } else {
    if (vit.patch < 1) throw SpecError("ViT patch must be >= 1");
    if (vit.depth < 0) throw SpecError("ViT depth must be >= 0");
    if (vit.heads < 1 || out_dim % vit.heads != 0) throw SpecError("ViT heads must divide the token width");
    if (vit.mlp_ratio < 1) throw SpecError("ViT mlp_ratio must be >= 1");
  }
}

void TemporalAggregatorSpec::validate() const {
  if (dim < 1) throw SpecError("temporal D must be >= 1");
  if (in_dim < 1) throw SpecError("temporal in_dim must be >= 1");
  if (depth < 0) throw SpecError("temporal depth must be >= 0");
  if (heads < 1 || dim % heads != 0) throw SpecError("temporal heads must divide D");
  if (mlp_ratio < 1) throw SpecError("temporal mlp_ratio must be >= 1");
}

std::string PipelineSpec::label() const { return to_string(spatial.kind) + "+rand-t"; }

PipelineSpec default_pipeline(SpatialKind kind, std::uint64_t seed, int bands) {
  PipelineSpec p;
  p.spatial.kind = kind;
  p.spatial.seed = seed;
  p.spatial.in_bands = bands;
  p.spatial.out_dim = kind == SpatialKind::RandCnn ? 384 : 128;
  p.temporal.seed = stream_seed(seed, 0x7e3d);
  p.temporal.in_dim = p.spatial.out_dim;
  p.temporal.dim = p.spatial.out_dim;
  return p;
}

const Weight& WeightBundle::at(const std::string& name) const {
  auto it = tensors.find(name);
  if (it == tensors.end()) throw SpecError("weight bundle has no tensor '" + name + "'");
  return it->second;
}

std::size_t WeightBundle::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [k, w] : tensors) n += static_cast<std::size_t>(w.value.size());
  return n;
}

bool WeightBundle::operator==(const WeightBundle& o) const {
  if (tensors.size() != o.tensors.size()) return false;
  for (const auto& [k, w] : tensors) {
    auto it = o.tensors.find(k);
    if (it == o.tensors.end() || it->second.shape != w.shape) return false;
    const auto& a = w.value;
    const auto& b = it->second.value;
    if (a.rows() != b.rows() || a.cols() != b.cols()) return false;
    if (std::memcmp(a.data(), b.data(), sizeof(double) * static_cast<std::size_t>(a.size())) != 0) return false;
  }
  return true;
}

WeightBundle init_weights(const SpatialEmbedderSpec& spec, std::uint64_t seed) {
  spec.validate();
  WeightBundle b;
  if (spec.kind == SpatialKind::RandCnn) {
    const int k = spec.cnn.kernel;
    add_gaussian(b, seed, "conv.kernel", {k, k, spec.in_bands, spec.out_dim}, k * k * spec.in_bands);
    add_constant(b, "conv.bias", spec.out_dim, 0.0);
  } else {
    const int p = spec.vit.patch;
    const int patch_len = p * p * spec.in_bands;
    add_gaussian(b, seed, "patch.weight", {patch_len, spec.out_dim}, patch_len);
    add_constant(b, "patch.bias", spec.out_dim, 0.0);
    for (int d = 0; d < spec.vit.depth; ++d)
      add_block(b, seed, "block" + std::to_string(d) + ".", spec.out_dim, spec.out_dim * spec.vit.mlp_ratio);
  }
  return b;
}

WeightBundle init_weights(const TemporalAggregatorSpec& spec, std::uint64_t seed) {
  spec.validate();
  WeightBundle b;
  add_gaussian(b, seed, "proj.weight", {spec.in_dim, spec.dim}, spec.in_dim);
  add_constant(b, "proj.bias", spec.dim, 0.0);
  for (int d = 0; d < spec.depth; ++d)
    add_block(b, seed, "block" + std::to_string(d) + ".", spec.dim, spec.dim * spec.mlp_ratio);
  return b;
}

VectorXd spatial_forward(const ImageView& image, const SpatialEmbedderSpec& spec, const WeightBundle& weights) {
  if (image.bands != spec.in_bands)
    throw SpecError("image has " + std::to_string(image.bands) + " bands, embedder expects " +
                    std::to_string(spec.in_bands));
  return spec.kind == SpatialKind::RandCnn ? cnn_forward(image, spec, weights) : vit_forward(image, spec, weights);
}

VectorXd temporal_forward(const MatrixXd& spatial_tokens, const TemporalAggregatorSpec& spec,
                          const WeightBundle& weights) {
  if (spatial_tokens.cols() != spec.in_dim)
    throw SpecError("temporal aggregator expects tokens of width " + std::to_string(spec.in_dim));
  MatrixXd x = spatial_tokens * weights.at("proj.weight").value;
  x.rowwise() += weights.at("proj.bias").value.row(0);
  if (spec.time_encoding) x += sinusoidal_encoding(x.rows(), x.cols());
  for (int d = 0; d < spec.depth; ++d) block_forward(x, weights, "block" + std::to_string(d) + ".", spec.heads);
  return x.colwise().mean().transpose();
}

SequenceEmbedder::SequenceEmbedder(PipelineSpec spec)
    : spec_(std::move(spec)),
      spatial_(init_weights(spec_.spatial, spec_.spatial.seed)),
      temporal_(init_weights(spec_.temporal, spec_.temporal.seed)) {
  if (spec_.temporal.in_dim != spec_.spatial.out_dim)
    throw SpecError("temporal in_dim must equal spatial out_dim");
}

VectorXd SequenceEmbedder::spatial(const ImageView& image) const {
  return spatial_forward(image, spec_.spatial, spatial_);
}

VectorXd SequenceEmbedder::embed(const ImageSequence& seq) const {
  MatrixXd tokens(seq.steps(), spec_.spatial.out_dim);
  for (int t = 0; t < seq.steps(); ++t) tokens.row(t) = spatial(seq.slice(t)).transpose();
  return temporal_forward(tokens, spec_.temporal, temporal_);
}

VectorXd embed_sequence(const ImageSequence& seq, const PipelineSpec& spec) {
  return SequenceEmbedder(spec).embed(seq);
}

MatrixXd embed_sequences(const std::vector<ImageSequence>& seqs, const SequenceEmbedder& embedder) {
  MatrixXd out(static_cast<Eigen::Index>(seqs.size()), embedder.output_dim());
  if (!seqs.empty()) {
    const auto d = seqs.front().dims();
    for (const auto& s : seqs)
      if (s.dims() != d) throw ShapeError("sequences differ in (T,H,W,B)");
  }
  parallel_for(seqs.size(), [&](std::size_t i) {
    out.row(static_cast<Eigen::Index>(i)) = embedder.embed(seqs[i]).transpose();
  });
  return out;
}

EmbedResult embed_dataset(const std::vector<ImageSequence>& seqs, const UnitTable& table, const PipelineSpec& spec,
                          const EmbedOptions& opts, const PcaModel<double>* fixed_pca) {
  if (seqs.size() != table.size())
    throw AlignmentError("manifest has " + std::to_string(table.size()) + " rows but " +
                         std::to_string(seqs.size()) + " sequences were given");
  EmbedResult res;
  const SequenceEmbedder embedder(spec);
  MatrixXd values = embed_sequences(seqs, embedder);
  std::string label = spec.label();

  if (fixed_pca) {
    values = apply_pca(*fixed_pca, values);
    res.pca = *fixed_pca;
  } else if (opts.pca_k) {
    res.pca = fit_pca<double>(values, *opts.pca_k);
    values = apply_pca(*res.pca, values);
  }
  if (res.pca) label += "-pc" + std::to_string(res.pca->k());

  std::vector<std::string> schema;
  if (opts.with_tabular) {
    if (table.tabular_names.empty()) {
      res.warnings.push_back("with_tabular requested but the manifest has no x_ columns; width unchanged");
    } else {
      MatrixXd joined(values.rows(), values.cols() + static_cast<Eigen::Index>(table.tabular_names.size()));
      joined << values, table.tabular();
      values = std::move(joined);
      schema = table.tabular_names;
      label += "+tab";
    }
  }

  res.embeddings.values = std::move(values);
  res.embeddings.label = label;
  res.embeddings.ids = table.ids();
  res.embeddings.fingerprint = pipeline_fingerprint(spec, res.pca ? &*res.pca : nullptr, schema);
  return res;
}

std::string pipeline_fingerprint(const nlohmann::json& description, const PcaModel<double>* pca,
                                 const std::vector<std::string>& tabular_schema) {
  const std::string text = description.dump();
  std::uint64_t h = fnv1a(text.data(), text.size());
  if (pca) {
    const auto k = static_cast<std::uint64_t>(pca->k());
    h = fnv1a(&k, sizeof k, h);
    h = fnv1a(pca->mean.data(), sizeof(double) * static_cast<std::size_t>(pca->mean.size()), h);
    h = fnv1a(pca->components.data(), sizeof(double) * static_cast<std::size_t>(pca->components.size()), h);
  } else {
    h = fnv1a("nopca", 5, h);
  }
  for (const auto& s : tabular_schema) {
    h = fnv1a(s.data(), s.size(), h);
    h = fnv1a("\x1f", 1, h);
  }
  return hex64(h);
}

std::string pipeline_fingerprint(const PipelineSpec& spec, const PcaModel<double>* pca,
                                 const std::vector<std::string>& tabular_schema) {
  return pipeline_fingerprint(to_json(spec), pca, tabular_schema);
}

nlohmann::json to_json(const PipelineSpec& s) {
  return {
      {"spatial",
       {{"kind", to_string(s.spatial.kind)},
        {"seed", s.spatial.seed},
        {"out_dim", s.spatial.out_dim},
        {"in_bands", s.spatial.in_bands},
        {"cnn", {{"kernel", s.spatial.cnn.kernel}}},
        {"vit",
         {{"patch", s.spatial.vit.patch},
          {"depth", s.spatial.vit.depth},
          {"heads", s.spatial.vit.heads},
          {"mlp_ratio", s.spatial.vit.mlp_ratio}}}}},
      {"temporal",
       {{"seed", s.temporal.seed},
        {"in_dim", s.temporal.in_dim},
        {"dim", s.temporal.dim},
        {"depth", s.temporal.depth},
        {"heads", s.temporal.heads},
        {"mlp_ratio", s.temporal.mlp_ratio},
        {"time_encoding", s.temporal.time_encoding}}}};
}

PipelineSpec pipeline_from_json(const nlohmann::json& j) {
  PipelineSpec s;
  const auto& sp = j.at("spatial");
  s.spatial.kind = spatial_kind_from_string(sp.at("kind").get<std::string>());
  s.spatial.seed = sp.at("seed").get<std::uint64_t>();
  s.spatial.out_dim = sp.at("out_dim").get<int>();
  s.spatial.in_bands = sp.at("in_bands").get<int>();
  s.spatial.cnn.kernel = sp.at("cnn").at("kernel").get<int>();
  const auto& v = sp.at("vit");
  s.spatial.vit = {v.at("patch").get<int>(), v.at("depth").get<int>(), v.at("heads").get<int>(),
                   v.at("mlp_ratio").get<int>()};
  const auto& t = j.at("temporal");
  s.temporal.seed = t.at("seed").get<std::uint64_t>();
  s.temporal.in_dim = t.at("in_dim").get<int>();
  s.temporal.dim = t.at("dim").get<int>();
  s.temporal.depth = t.at("depth").get<int>();
  s.temporal.heads = t.at("heads").get<int>();
  s.temporal.mlp_ratio = t.at("mlp_ratio").get<int>();
  s.temporal.time_encoding = t.at("time_encoding").get<bool>();
  return s;
}

nlohmann::json to_json(const PcaModel<double>& pca) {
  nlohmann::json comps = nlohmann::json::array();
  for (Eigen::Index r = 0; r < pca.components.rows(); ++r) {
    std::vector<double> row(static_cast<std::size_t>(pca.components.cols()));
    for (Eigen::Index c = 0; c < pca.components.cols(); ++c) row[static_cast<std::size_t>(c)] = pca.components(r, c);
    comps.push_back(row);
  }
  return {{"mean", std::vector<double>(pca.mean.data(), pca.mean.data() + pca.mean.size())},
          {"components", comps},
          {"explained_variance", std::vector<double>(pca.explained_variance.data(),
                                                     pca.explained_variance.data() + pca.explained_variance.size())}};
}

PcaModel<double> pca_from_json(const nlohmann::json& j) {
  PcaModel<double> m;
  const auto mean = j.at("mean").get<std::vector<double>>();
  const auto comps = j.at("components").get<std::vector<std::vector<double>>>();
  const auto ev = j.at("explained_variance").get<std::vector<double>>();
  m.mean = Eigen::Map<const VectorXd>(mean.data(), static_cast<Eigen::Index>(mean.size()));
  m.explained_variance = Eigen::Map<const VectorXd>(ev.data(), static_cast<Eigen::Index>(ev.size()));
  m.components.resize(static_cast<Eigen::Index>(comps.size()), static_cast<Eigen::Index>(mean.size()));
  for (std::size_t r = 0; r < comps.size(); ++r) {
    if (comps[r].size() != mean.size()) throw SchemaError("PCA component width does not match mean");
    for (std::size_t c = 0; c < comps[r].size(); ++c)
      m.components(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = comps[r][c];
  }
  return m;
}

}  // namespace heteo
