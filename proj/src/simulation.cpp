#include "heteo/simulation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <tuple>

#include "heteo/embedders.hpp"
#include "heteo/svg.hpp"

namespace heteo {

Image rotate90(const Image& in) {
  if (in.height != in.width)
    throw ShapeError("rotate90 needs a square image, got " + std::to_string(in.height) + "x" + std::to_string(in.width));
  const int n = in.height;
  Image out(n, n, in.bands);
  for (int h = 0; h < n; ++h)
    for (int w = 0; w < n; ++w)
      for (int b = 0; b < in.bands; ++b) out.at(h, w, b) = in.at(w, n - 1 - h, b);
  return out;
}

namespace {

void box_blur(std::vector<double>& f, int n, int radius) {
  std::vector<double> tmp(f.size());
  auto clampi = [n](int v) { return std::clamp(v, 0, n - 1); };
  for (int h = 0; h < n; ++h)
    for (int w = 0; w < n; ++w) {
      double s = 0.0;
      for (int d = -radius; d <= radius; ++d) s += f[static_cast<std::size_t>(h * n + clampi(w + d))];
      tmp[static_cast<std::size_t>(h * n + w)] = s / (2 * radius + 1);
    }
  for (int h = 0; h < n; ++h)
    for (int w = 0; w < n; ++w) {
      double s = 0.0;
      for (int d = -radius; d <= radius; ++d) s += tmp[static_cast<std::size_t>(clampi(h + d) * n + w)];
      f[static_cast<std::size_t>(h * n + w)] = s / (2 * radius + 1);
    }
}

}  // namespace

std::vector<Image> make_image_pool(int count, int size, int bands, std::uint64_t seed) {
  if (count < 1 || size < 1 || bands < 1) throw SpecError("image pool needs positive count, size and bands");
  std::vector<Image> pool;
  pool.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    Rng rng(stream_seed(seed, static_cast<std::uint64_t>(i)));
    std::normal_distribution<double> normal;
    Image img(size, size, bands);
    for (int b = 0; b < bands; ++b) {
      std::vector<double> f(static_cast<std::size_t>(size) * size);
      for (auto& v : f) v = normal(rng);
      for (int pass = 0; pass < 2; ++pass) box_blur(f, size, 1);
      const auto [lo, hi] = std::minmax_element(f.begin(), f.end());
      const double span = *hi - *lo > 0.0 ? *hi - *lo : 1.0;
      for (int h = 0; h < size; ++h)
        for (int w = 0; w < size; ++w)
          img.at(h, w, b) = static_cast<float>((f[static_cast<std::size_t>(h * size + w)] - *lo) / span);
    }
    pool.push_back(std::move(img));
  }
  return pool;
}

std::vector<Image> load_image_pool(const std::filesystem::path& path) {
  const Tensor t = read_tensor(path);
  if (t.rank() != 4) throw ShapeError("image pool tensor must be (N,H,W,B), got rank " + std::to_string(t.rank()));
  const auto n = static_cast<int>(t.shape[0]);
  const auto h = static_cast<int>(t.shape[1]), w = static_cast<int>(t.shape[2]), b = static_cast<int>(t.shape[3]);
  if (n < 1) throw ShapeError("image pool is empty");
  const int side = std::min(h, w);
  const int oh = (h - side) / 2, ow = (w - side) / 2;
  std::vector<Image> pool;
  for (int i = 0; i < n; ++i) {
    Image img(side, side, b);
    for (int y = 0; y < side; ++y)
      for (int x = 0; x < side; ++x)
        for (int c = 0; c < b; ++c)
          img.at(y, x, c) = t.data[((static_cast<std::size_t>(i) * h + y + oh) * w + x + ow) * b + c];
    pool.push_back(std::move(img));
  }
  return pool;
}

void SimConfig::validate() const {
  if (n < 1) throw SpecError("simulation needs n >= 1");
  if (!(sigma2 > 0.0) || !std::isfinite(sigma2)) throw SpecError("sigma2 must be a positive real");
  if (!(treat_prob > 0.0 && treat_prob < 1.0)) throw SpecError("treat_prob must lie in (0,1)");
  if (!(rotate_prob > 0.0 && rotate_prob < 1.0)) throw SpecError("rotate_prob must lie in (0,1)");
  if (pool.empty()) throw SpecError("image pool is empty");
  for (const auto& img : pool)
    if (img.height != img.width) throw ShapeError("pool images must be square");
}

SimDataset generate(const SimConfig& config) {
  config.validate();
  const auto n = static_cast<std::size_t>(config.n);
  SimDataset d;
  d.treat_prob = config.treat_prob;
  d.base_index.resize(n);
  d.rotated.resize(config.n);
  d.w.resize(config.n);
  d.y.resize(config.n);
  d.tau_true.resize(config.n);
  d.epsilon.resize(config.n);

  std::vector<Image> rotated_pool;
  for (const auto& img : config.pool) rotated_pool.push_back(rotate90(img));

  const double sigma = std::sqrt(config.sigma2);
  for (std::size_t i = 0; i < n; ++i) {
    Rng rng(stream_seed(config.seed, i));
    std::uniform_int_distribution<std::size_t> pick(0, config.pool.size() - 1);
    std::bernoulli_distribution rotate(config.rotate_prob), treat(config.treat_prob);
    std::normal_distribution<double> normal;
    const std::size_t base = pick(rng);
    const bool rot = rotate(rng);
    const bool treated = treat(rng);
    const double z = normal(rng);

    const auto k = static_cast<Eigen::Index>(i);
    d.base_index[i] = static_cast<int>(base);
    d.rotated[k] = rot ? 1 : 0;
    d.w[k] = treated ? 1.0 : 0.0;
    d.tau_true[k] = rot ? 1.0 : -1.0;
    d.epsilon[k] = sigma * z;
    d.y[k] = (2.0 * d.rotated[k] - 1.0) * d.w[k] + d.epsilon[k];
    d.sequences.push_back(ImageSequence::from_slices({config.pool[base], rot ? rotated_pool[base] : config.pool[base]}));
  }
  return d;
}

ExperimentDataset SimDataset::to_dataset() const {
  UnitTable table;
  for (std::size_t i = 0; i < size(); ++i) {
    const auto k = static_cast<Eigen::Index>(i);
    char id[16];
    std::snprintf(id, sizeof id, "sim%05zu", i);
    UnitRecord u;
    u.id = id;
    u.lon = -84.5 + 0.001 * static_cast<double>(i % 100);
    u.lat = 33.5 + 0.001 * static_cast<double>(i / 100);
    u.treatment = static_cast<int>(w[k]);
    u.outcome = y[k];
    table.units.push_back(std::move(u));
  }
  return make_dataset(std::move(table), sequences, treat_prob);
}

bool GridCell::operator<(const GridCell& o) const {
  return std::tie(model, sigma2, seed) < std::tie(o.model, o.sigma2, o.seed);
}

MatrixXd simulation_embeddings(const SimDataset& data, const std::string& model, std::uint64_t seed) {
  if (model == "oracle") return data.tau_true;
  if (data.sequences.empty()) throw ShapeError("no sequences to embed");
  const SequenceEmbedder embedder(default_pipeline(spatial_kind_from_string(model), seed, data.sequences[0].bands()));
  return embed_sequences(data.sequences, embedder);
}

std::vector<GridResult> run_grid(const std::vector<GridCell>& cells, const GridOptions& opts) {
  if (cells.empty()) throw SpecError("simulation grid has no cells");
  std::map<std::pair<std::string, std::uint64_t>, std::vector<GridCell>> groups;
  for (const auto& c : cells) groups[{c.model, c.seed}].push_back(c);
  std::vector<std::pair<std::string, std::uint64_t>> keys;
  for (auto& [key, group] : groups) {
    std::sort(group.begin(), group.end());
    keys.push_back(key);
  }

  std::vector<std::vector<GridResult>> slots(keys.size());
  parallel_for(keys.size(), [&](std::size_t g) {
    const auto& [model, seed] = keys[g];
    SimConfig config;
    config.n = opts.n;
    config.seed = seed;
    config.pool = opts.pool.empty() ? make_image_pool(opts.pool_size, opts.chip_size, 3, stream_seed(seed, 0x9001))
                                    : opts.pool;
    config.sigma2 = groups.at(keys[g]).front().sigma2;
    // Images do not depend on σ², so one embedding pass serves the whole group.
    const MatrixXd x = simulation_embeddings(generate(config), model, seed);
    const EstimatorSpec estimator = opts.estimator.reseeded(stream_seed(seed, 0xce11));

    for (const auto& cell : groups.at(keys[g])) {
      config.sigma2 = cell.sigma2;
      const SimDataset data = generate(config);
      RateInputs in;
      in.w = data.w;
      in.y = data.y;
      in.propensity = VectorXd::Constant(data.w.size(), data.treat_prob);
      CrossFitOptions cf = opts.cross_fit;
      cf.seed = stream_seed(opts.cross_fit.seed, seed);
      const RateReport report = cross_fit_rate(in, x, estimator, opts.weighting, cf);
      const Correlation corr = truth_correlation(report.held_out_scores, data.tau_true);
      slots[g].push_back({cell, corr.value, corr.degenerate, report.ratio, report.degenerate});
    }
  });

  std::vector<GridResult> out;
  for (auto& s : slots) out.insert(out.end(), s.begin(), s.end());
  std::sort(out.begin(), out.end(), [](const GridResult& a, const GridResult& b) { return a.cell < b.cell; });
  return out;
}

std::string grid_csv(const std::vector<GridResult>& results) {
  std::ostringstream out;
  out << "model,sigma2,corr,rate_ratio,seed\n";
  char buf[160];
  for (const auto& r : results) {
    std::snprintf(buf, sizeof buf, "%s,%.17g,%.17g,%.17g,%llu\n", r.cell.model.c_str(), r.cell.sigma2, r.corr,
                  r.rate_ratio, static_cast<unsigned long long>(r.cell.seed));
    out << buf;
  }
  return out.str();
}

std::string grid_svg(const std::vector<GridResult>& results) {
  const double panel_w = 360, panel_h = 260, margin = 50;
  svg::Document doc(2 * (panel_w + margin) + margin, panel_h + 2 * margin + 30);
  std::set<double> sigmas;
  std::set<std::string> models;
  double ratio_lo = 0.0, ratio_hi = 1.0;
  for (const auto& r : results) {
    sigmas.insert(r.cell.sigma2);
    models.insert(r.cell.model);
    ratio_lo = std::min(ratio_lo, r.rate_ratio);
    ratio_hi = std::max(ratio_hi, r.rate_ratio);
  }
  const std::vector<double> sigma_list(sigmas.begin(), sigmas.end());
  const std::vector<std::string> model_list(models.begin(), models.end());
  const char* palette[] = {"#1b9e77", "#d95f02", "#7570b3", "#e7298a", "#66a61e", "#e6ab02"};

  auto panel = [&](double x0, const std::string& title, double lo, double hi, bool use_corr) {
    const double y0 = margin;
    doc.rect(x0, y0, panel_w, panel_h, "none", "#444444");
    doc.text(x0 + panel_w / 2, y0 - 12, title, 13, "middle");
    const svg::Scale sy{lo, hi, y0 + panel_h - 10, y0 + 10};
    for (int k = 0; k <= 4; ++k) {
      const double v = lo + (hi - lo) * k / 4.0;
      char buf[32];
      std::snprintf(buf, sizeof buf, "%.2f", v);
      doc.text(x0 - 6, sy(v) + 4, buf, 10, "end");
      doc.line(x0, sy(v), x0 + 4, sy(v), "#444444");
    }
    const double step = panel_w / static_cast<double>(sigma_list.size() + 1);
    for (std::size_t s = 0; s < sigma_list.size(); ++s) {
      char buf[32];
      std::snprintf(buf, sizeof buf, "%g", sigma_list[s]);
      doc.text(x0 + step * static_cast<double>(s + 1), y0 + panel_h + 16, buf, 10, "middle");
    }
    doc.text(x0 + panel_w / 2, y0 + panel_h + 32, "sigma^2", 11, "middle");
    for (const auto& r : results) {
      const auto s = static_cast<std::size_t>(
          std::find(sigma_list.begin(), sigma_list.end(), r.cell.sigma2) - sigma_list.begin());
      const auto m = static_cast<std::size_t>(
          std::find(model_list.begin(), model_list.end(), r.cell.model) - model_list.begin());
      const double jitter = (static_cast<double>(m) - 0.5 * static_cast<double>(model_list.size() - 1)) * 10.0;
      doc.circle(x0 + step * static_cast<double>(s + 1) + jitter, sy(use_corr ? r.corr : r.rate_ratio), 3.5,
                 palette[m % 6]);
    }
  };
  panel(margin, "Correlation between true and estimated CATEs", -0.2, 1.0, true);
  panel(2 * margin + panel_w, "RATE ratio", ratio_lo, ratio_hi, false);
  for (std::size_t m = 0; m < model_list.size(); ++m) {
    const double x = margin + 130.0 * static_cast<double>(m);
    const double y = panel_h + 2 * margin + 18;
    doc.circle(x, y - 4, 4, palette[m % 6]);
    doc.text(x + 8, y, model_list[m], 11);
  }
  return doc.str();
}

}  // namespace heteo
