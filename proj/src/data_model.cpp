#include "heteo/data_model.hpp"

#include <cmath>
#include <fstream>
#include <sstream>
#include <set>

#include "heteo/csv.hpp"

namespace heteo {

namespace {

void check_dims(int t, int h, int w, int b) {
  if (t < 1 || h < 1 || w < 1 || b < 1)
    throw ShapeError("image sequence dimensions must be positive, got (" + std::to_string(t) + "," +
                     std::to_string(h) + "," + std::to_string(w) + "," + std::to_string(b) + ")");
}

void check_finite(std::span<const float> v, const std::string& what) {
  for (std::size_t i = 0; i < v.size(); ++i)
    if (!std::isfinite(v[i])) throw DomainError(what + " has a non-finite entry at flat index " + std::to_string(i));
}

}  // namespace

Image::Image(int h, int w, int b, float fill)
    : height(h), width(w), bands(b), data(static_cast<std::size_t>(h) * w * b, fill) {
  check_dims(1, h, w, b);
}

ImageSequence::ImageSequence(int t, int h, int w, int b, std::vector<float> data)
    : t_(t), h_(h), w_(w), b_(b), data_(std::move(data)) {
  check_dims(t, h, w, b);
  if (data_.size() != static_cast<std::size_t>(t) * slice_size())
    throw ShapeError("image sequence payload does not match its dimensions");
  check_finite(data_, "image sequence");
}

ImageSequence ImageSequence::from_slices(const std::vector<Image>& slices) {
  if (slices.empty()) throw ShapeError("image sequence needs at least one slice");
  const auto& f = slices.front();
  std::vector<float> data;
  data.reserve(slices.size() * f.data.size());
  for (const auto& s : slices) {
    if (s.height != f.height || s.width != f.width || s.bands != f.bands)
      throw ShapeError("image sequence slices differ in shape");
    data.insert(data.end(), s.data.begin(), s.data.end());
  }
  return ImageSequence(static_cast<int>(slices.size()), f.height, f.width, f.bands, std::move(data));
}

ImageView ImageSequence::slice(int t) const {
  if (t < 0 || t >= t_) throw BoundsError("time slice " + std::to_string(t) + " out of range");
  return {h_, w_, b_, std::span<const float>(data_).subspan(static_cast<std::size_t>(t) * slice_size(), slice_size())};
}

double Propensity::for_unit(const UnitRecord& u) const {
  if (u.cluster_id) {
    if (auto it = per_cluster.find(*u.cluster_id); it != per_cluster.end()) return it->second;
  }
  return base;
}

void Propensity::validate() const {
  auto check = [](double p) {
    if (!(p > 0.0 && p < 1.0)) throw DomainError("propensity " + std::to_string(p) + " outside (0,1)");
  };
  check(base);
  for (const auto& [k, p] : per_cluster) check(p);
}

std::vector<std::string> UnitTable::ids() const {
  std::vector<std::string> out;
  out.reserve(units.size());
  for (const auto& u : units) out.push_back(u.id);
  return out;
}

VectorXd UnitTable::treatments() const {
  VectorXd w(static_cast<Eigen::Index>(units.size()));
  for (std::size_t i = 0; i < units.size(); ++i) {
    if (!units[i].treatment) throw ContractError("unit " + units[i].id + " has no treatment");
    w[static_cast<Eigen::Index>(i)] = *units[i].treatment;
  }
  return w;
}

VectorXd UnitTable::outcomes() const {
  VectorXd y(static_cast<Eigen::Index>(units.size()));
  for (std::size_t i = 0; i < units.size(); ++i) {
    if (!units[i].outcome) throw ContractError("unit " + units[i].id + " has no outcome");
    y[static_cast<Eigen::Index>(i)] = *units[i].outcome;
  }
  return y;
}

MatrixXd UnitTable::tabular() const {
  MatrixXd x(static_cast<Eigen::Index>(units.size()), static_cast<Eigen::Index>(tabular_names.size()));
  for (std::size_t i = 0; i < units.size(); ++i) x.row(static_cast<Eigen::Index>(i)) = units[i].tabular.transpose();
  return x;
}

UnitTable parse_units(const std::string& csv_text) {
  const csv::Table t = csv::parse(csv_text);
  auto require = [&](const char* name) {
    auto c = t.column(name);
    if (!c) throw SchemaError(std::string("manifest is missing required column '") + name + "'");
    return *c;
  };
  const std::size_t c_id = require("id");
  const std::size_t c_lon = require("lon");
  const std::size_t c_lat = require("lat");
  const auto c_w = t.column("treatment");
  const auto c_y = t.column("outcome");
  const auto c_cluster = t.column("cluster_id");

  UnitTable out;
  // Either both experimental columns or neither (site manifest).
  if (c_w.has_value() != c_y.has_value())
    throw SchemaError(std::string("manifest is missing required column '") + (c_w ? "outcome" : "treatment") + "'");
  out.experimental = c_w.has_value();
  out.has_clusters = c_cluster.has_value();

  std::vector<std::size_t> tab_cols;
  for (std::size_t c = 0; c < t.header.size(); ++c) {
    if (t.header[c].rfind("x_", 0) == 0) {
      tab_cols.push_back(c);
      out.tabular_names.push_back(t.header[c].substr(2));
    }
  }

  std::set<std::string> seen;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const auto& row = t.rows[r];
    const std::string where = "row " + std::to_string(r + 1);
    UnitRecord u;
    u.id = row[c_id];
    if (u.id.empty()) throw SchemaError(where + ": empty id");
    if (!seen.insert(u.id).second) throw SchemaError(where + ": duplicate id '" + u.id + "'");
    u.lon = csv::to_double(row[c_lon], where + " lon");
    u.lat = csv::to_double(row[c_lat], where + " lat");
    if (!(u.lon >= -180.0 && u.lon <= 180.0)) throw DomainError(where + ": lon outside [-180,180]");
    if (!(u.lat >= -90.0 && u.lat <= 90.0)) throw DomainError(where + ": lat outside [-90,90]");
    if (out.experimental) {
      const double w = csv::to_double(row[*c_w], where + " treatment");
      if (w != 0.0 && w != 1.0)
        throw DomainError(where + ": treatment value '" + row[*c_w] + "' is not 0 or 1");
      u.treatment = static_cast<int>(w);
      u.outcome = csv::to_double(row[*c_y], where + " outcome");
      if (!std::isfinite(*u.outcome)) throw DomainError(where + ": non-finite outcome");
      u.selected = true;
    } else {
      u.selected = false;
    }
    u.tabular.resize(static_cast<Eigen::Index>(tab_cols.size()));
    for (std::size_t k = 0; k < tab_cols.size(); ++k) {
      const double v = csv::to_double(row[tab_cols[k]], where + " " + t.header[tab_cols[k]]);
      if (!std::isfinite(v)) throw DomainError(where + ": non-finite " + t.header[tab_cols[k]]);
      u.tabular[static_cast<Eigen::Index>(k)] = v;
    }
    if (c_cluster && !row[*c_cluster].empty()) u.cluster_id = row[*c_cluster];
    out.units.push_back(std::move(u));
  }
  return out;
}

UnitTable read_units(const std::filesystem::path& csv_path) {
  std::ifstream in(csv_path, std::ios::binary);
  if (!in) throw IoError("cannot open " + csv_path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_units(ss.str());
}

std::vector<ImageSequence> sequences_from_tensor(const Tensor& t) {
  if (t.rank() != 5) throw ShapeError("sequence tensor must have shape (N,T,H,W,B), got rank " + std::to_string(t.rank()));
  const auto n = static_cast<std::size_t>(t.shape[0]);
  const int T = static_cast<int>(t.shape[1]), H = static_cast<int>(t.shape[2]), W = static_cast<int>(t.shape[3]),
            B = static_cast<int>(t.shape[4]);
  const std::size_t per = static_cast<std::size_t>(T) * H * W * B;
  std::vector<ImageSequence> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto first = t.data.begin() + static_cast<std::ptrdiff_t>(i * per);
    out.emplace_back(T, H, W, B, std::vector<float>(first, first + static_cast<std::ptrdiff_t>(per)));
  }
  return out;
}

Tensor sequences_to_tensor(const std::vector<ImageSequence>& seqs) {
  if (seqs.empty()) throw ShapeError("no sequences to pack");
  const auto d = seqs.front().dims();
  std::vector<float> data;
  data.reserve(seqs.size() * seqs.front().data().size());
  for (const auto& s : seqs) {
    if (s.dims() != d) throw ShapeError("sequences differ in (T,H,W,B)");
    data.insert(data.end(), s.data().begin(), s.data().end());
  }
  return Tensor({static_cast<std::int64_t>(seqs.size()), d[0], d[1], d[2], d[3]}, std::move(data));
}

std::array<int, 4> ExperimentDataset::sequence_dims() const {
  if (sequences.empty()) return {0, 0, 0, 0};
  return sequences.front().dims();
}

void ExperimentDataset::validate() const {
  if (!table.experimental) throw SchemaError("experiment dataset requires treatment and outcome columns");
  if (sequences.size() != table.units.size())
    throw AlignmentError("manifest has " + std::to_string(table.units.size()) + " rows but tensor has " +
                         std::to_string(sequences.size()) + " sequences");
  const auto d = sequence_dims();
  for (std::size_t i = 0; i < sequences.size(); ++i)
    if (sequences[i].dims() != d) throw ShapeError("sequence " + std::to_string(i) + " differs in (T,H,W,B)");
  bool treated = false, control = false;
  for (const auto& u : table.units) {
    if (!u.selected) throw SchemaError("unit " + u.id + " is not an experimental unit");
    (*u.treatment == 1 ? treated : control) = true;
  }
  if (!treated || !control) throw DegenerateDesignError("dataset needs at least one treated and one control unit");
  propensity.validate();
}

ExperimentDataset make_dataset(UnitTable table, std::vector<ImageSequence> sequences,
                               std::optional<double> propensity) {
  ExperimentDataset ds;
  ds.table = std::move(table);
  ds.sequences = std::move(sequences);
  if (propensity) {
    ds.propensity.base = *propensity;
  } else if (ds.table.experimental && !ds.table.units.empty()) {
    ds.propensity.base = ds.table.treatments().mean();
  }
  ds.validate();
  return ds;
}

ExperimentDataset load_manifest(const std::filesystem::path& csv_path, const std::filesystem::path& tensor_path,
                                std::optional<double> propensity) {
  UnitTable table = read_units(csv_path);
  if (!table.experimental) throw SchemaError("manifest is missing required column 'treatment'");
  std::filesystem::path tp = tensor_path;
  if (tp.empty()) tp = csv_path.parent_path() / (csv_path.stem().string() + ".eot");
  Tensor t = read_tensor(tp);
  if (t.rank() != 5) throw ShapeError("sequence tensor must have shape (N,T,H,W,B)");
  if (static_cast<std::size_t>(t.shape[0]) != table.size())
    throw AlignmentError("manifest has " + std::to_string(table.size()) + " rows but tensor has " +
                         std::to_string(t.shape[0]) + " sequences");
  return make_dataset(std::move(table), sequences_from_tensor(t), propensity);
}

void load_propensity_table(const std::filesystem::path& csv_path, Propensity& p) {
  const csv::Table t = csv::read(csv_path);
  const auto c = t.column("cluster_id");
  const auto v = t.column("propensity");
  if (!c) throw SchemaError("propensity table is missing required column 'cluster_id'");
  if (!v) throw SchemaError("propensity table is missing required column 'propensity'");
  for (const auto& row : t.rows) p.per_cluster[row[*c]] = csv::to_double(row[*v], "propensity");
  p.validate();
}

EmbeddingMatrix embeddings_from_tensor(const Tensor& t, const UnitTable& manifest, const std::string& label) {
  if (t.rank() != 2) throw ShapeError("embedding container must have shape (N,D)");
  const auto n = static_cast<std::size_t>(t.shape[0]);
  if (n != manifest.size())
    throw AlignmentError("embeddings have " + std::to_string(n) + " rows but manifest has " +
                         std::to_string(manifest.size()) + " units");
  EmbeddingMatrix e;
  e.ids = manifest.ids();
  if (t.meta.contains("ids")) {
    const auto ids = t.meta["ids"].get<std::vector<std::string>>();
    if (ids != e.ids) throw AlignmentError("embedding id order does not match the manifest");
  }
  e.label = !label.empty() ? label : t.meta.value("label", std::string("external"));
  e.fingerprint = t.meta.value("fingerprint", std::string());
  const auto d = static_cast<Eigen::Index>(t.shape[1]);
  e.values.resize(static_cast<Eigen::Index>(n), d);
  for (std::size_t i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < d; ++j) {
      const float v = t.data[i * static_cast<std::size_t>(d) + static_cast<std::size_t>(j)];
      if (!std::isfinite(v)) throw DomainError("non-finite embedding entry at row " + std::to_string(i));
      e.values(static_cast<Eigen::Index>(i), j) = v;
    }
  return e;
}

EmbeddingMatrix read_external_embeddings(const std::filesystem::path& path, const UnitTable& manifest,
                                         const std::string& label) {
  return embeddings_from_tensor(read_tensor(path), manifest, label);
}

Tensor embeddings_to_tensor(const EmbeddingMatrix& e) {
  std::vector<float> data(static_cast<std::size_t>(e.values.size()));
  for (Eigen::Index i = 0; i < e.values.rows(); ++i)
    for (Eigen::Index j = 0; j < e.values.cols(); ++j)
      data[static_cast<std::size_t>(i * e.values.cols() + j)] = static_cast<float>(e.values(i, j));
  Tensor t({e.values.rows(), e.values.cols()}, std::move(data));
  if (!e.label.empty()) t.meta["label"] = e.label;
  if (!e.fingerprint.empty()) t.meta["fingerprint"] = e.fingerprint;
  if (!e.ids.empty()) t.meta["ids"] = e.ids;
  return t;
}

void write_embeddings(const EmbeddingMatrix& e, const std::filesystem::path& path) {
  write_tensor(embeddings_to_tensor(e), path);
}

}  // namespace heteo
