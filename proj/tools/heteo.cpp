#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "heteo/embedders.hpp"
#include "heteo/landcover.hpp"
#include "heteo/pipeline.hpp"
#include "heteo/simulation.hpp"
#include "heteo/transport.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace heteo;

namespace {

std::vector<std::string> split(const std::string& text, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string part;
  while (std::getline(ss, part, sep))
    if (!part.empty()) out.push_back(part);
  return out;
}

std::vector<std::uint64_t> parse_seeds(const std::string& text) {
  std::vector<std::uint64_t> out;
  for (const auto& part : split(text, ',')) {
    const auto dots = part.find("..");
    if (dots == std::string::npos) {
      out.push_back(std::stoull(part));
      continue;
    }
    const auto lo = std::stoull(part.substr(0, dots)), hi = std::stoull(part.substr(dots + 2));
    if (hi < lo) throw SpecError("seed range '" + part + "' is empty");
    for (auto s = lo; s <= hi; ++s) out.push_back(s);
  }
  if (out.empty()) throw SpecError("no seeds given");
  return out;
}

json params_from(const std::string& text) {
  if (text.empty()) return json::object();
  if (fs::exists(text)) {
    std::ifstream in(text);
    return json::parse(in);
  }
  return json::parse(text);
}

void write_file(const fs::path& path, const std::string& body) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << body;
}

Propensity propensity_for(const UnitTable& table, std::optional<double> p, const std::string& table_path) {
  Propensity prop;
  prop.base = p.value_or(table.treatments().mean());
  if (!table_path.empty()) load_propensity_table(table_path, prop);
  prop.validate();
  return prop;
}

struct EstimatorFlags {
  std::string kind = "forest";
  std::string params;
  std::uint64_t seed = 0;

  EstimatorSpec spec() const {
    EstimatorSpec s;
    s.kind = estimator_kind_from_string(kind);
    s = s.reseeded(seed);
    apply_estimator_params(s, params_from(params));
    return s;
  }
};

void add_estimator_flags(CLI::App* cmd, EstimatorFlags& f) {
  cmd->add_option("--estimator", f.kind, "forest or rlearner")->capture_default_str();
  cmd->add_option("--params", f.params, "estimator parameters as JSON text or a JSON file");
  cmd->add_option("--seed", f.seed, "seed")->capture_default_str();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"heteo: treatment-effect heterogeneity from image sequences"};
  app.require_subcommand(1);
  std::size_t threads = 0;
  app.add_option("--threads", threads, "worker threads (default: HETEO_THREADS or all cores)");

  // run
  std::string run_config;
  auto* run = app.add_subcommand("run", "execute a JSON run configuration end to end");
  run->add_option("config", run_config, "run configuration (JSON, version v1)")->required();

  // embed
  struct {
    std::string manifest, tensor, model = "rand-cnn", pca_model, out;
    std::uint64_t seed = 0;
    std::optional<int> pca;
    bool with_tabular = false;
  } em;
  auto* embed = app.add_subcommand("embed", "embed image sequences with a randomized pipeline");
  embed->add_option("--manifest", em.manifest, "unit manifest CSV")->required();
  embed->add_option("--tensor", em.tensor, "sequence tensor (default: manifest sidecar)");
  embed->add_option("--model", em.model, "rand-cnn or rand-vit")->capture_default_str();
  embed->add_option("--seed", em.seed, "weight seed")->capture_default_str();
  embed->add_option("--pca", em.pca, "fit PCA with this many components");
  embed->add_option("--pca-model", em.pca_model, "apply a saved PCA model instead of fitting one");
  embed->add_flag("--with-tabular", em.with_tabular, "append x_ manifest columns");
  embed->add_option("--out", em.out, "output embeddings (EOT1)")->required();

  // fit
  struct {
    std::string embeddings, manifest, out;
    EstimatorFlags est;
  } fi;
  auto* fit = app.add_subcommand("fit", "fit a CATE model on embeddings");
  fit->add_option("--embeddings", fi.embeddings, "embeddings (EOT1)")->required();
  fit->add_option("--manifest", fi.manifest, "unit manifest CSV")->required();
  add_estimator_flags(fit, fi.est);
  fit->add_option("--out", fi.out, "model JSON")->required();

  // rate
  struct {
    std::string embeddings, manifest, weighting = "autoc", out, propensity_table;
    std::optional<double> propensity;
    int folds = 5, bootstrap = 200;
    EstimatorFlags est;
  } ra;
  auto* rate = app.add_subcommand("rate", "cross-fitted RATE ratio for embeddings");
  rate->add_option("--embeddings", ra.embeddings, "embeddings (EOT1)")->required();
  rate->add_option("--manifest", ra.manifest, "unit manifest CSV")->required();
  add_estimator_flags(rate, ra.est);
  rate->add_option("--weighting", ra.weighting, "autoc or qini")->capture_default_str();
  rate->add_option("--folds", ra.folds, "cross-fitting folds")->capture_default_str();
  rate->add_option("--bootstrap", ra.bootstrap, "half-sample bootstrap replicates")->capture_default_str();
  rate->add_option("--propensity", ra.propensity, "known treatment probability (default: treated share)");
  rate->add_option("--propensity-table", ra.propensity_table, "per-cluster propensities CSV");
  rate->add_option("--out", ra.out, "report JSON")->required();

  // simulate
  struct {
    int n = 1000, pool_size = 64, chip_size = 16, folds = 5, bootstrap = 200;
    std::string sigma2 = "0.01,0.1,1", models = "rand-cnn,rand-vit", seeds = "1..5", out = "sim_results.csv", plots,
                pool, weighting = "autoc";
    EstimatorFlags est;
  } si;
  auto* simulate = app.add_subcommand("simulate", "rotation simulation grid");
  simulate->add_option("--n", si.n, "units per dataset")->capture_default_str();
  simulate->add_option("--sigma2", si.sigma2, "comma-separated noise variances")->capture_default_str();
  simulate->add_option("--models", si.models, "comma-separated models (rand-cnn, rand-vit, oracle)")->capture_default_str();
  simulate->add_option("--seeds", si.seeds, "seeds, e.g. 1..5 or 1,2,7")->capture_default_str();
  simulate->add_option("--pool-size", si.pool_size, "procedural chip count")->capture_default_str();
  simulate->add_option("--chip-size", si.chip_size, "procedural chip side")->capture_default_str();
  simulate->add_option("--pool", si.pool, "chip tensor (N,H,W,B) to use instead of procedural chips");
  simulate->add_option("--estimator", si.est.kind, "forest or rlearner")->capture_default_str();
  simulate->add_option("--params", si.est.params, "estimator parameters as JSON text or a JSON file");
  simulate->add_option("--weighting", si.weighting, "autoc or qini")->capture_default_str();
  simulate->add_option("--folds", si.folds, "cross-fitting folds")->capture_default_str();
  simulate->add_option("--bootstrap", si.bootstrap, "bootstrap replicates")->capture_default_str();
  simulate->add_option("--out", si.out, "results CSV")->capture_default_str();
  simulate->add_option("--plots", si.plots, "directory for the SVG scatter");

  // landcover
  struct {
    std::string raster, legend, manifest, out;
    int window = 3;
    double epsilon = 1e-3;
  } lc;
  auto* landcover = app.add_subcommand("landcover", "logit land-cover proportion features per unit");
  landcover->add_option("--raster", lc.raster, "class-code raster (EOT1)")->required();
  landcover->add_option("--legend", lc.legend, "legend JSON")->required();
  landcover->add_option("--manifest", lc.manifest, "unit manifest CSV")->required();
  landcover->add_option("--window", lc.window, "half-width in cells")->capture_default_str();
  landcover->add_option("--epsilon", lc.epsilon, "logit clamp")->capture_default_str();
  landcover->add_option("--out", lc.out, "feature matrix (EOT1)")->required();

  // transport
  struct {
    std::string model, sites, embeddings, out, bbox, population;
    int count = 1000;
    std::uint64_t seed = 0;
  } tr;
  auto* transport = app.add_subcommand("transport", "score sites outside the experiment, or sample site locations");
  transport->add_option("--model", tr.model, "fitted model JSON");
  transport->add_option("--sites", tr.sites, "site manifest CSV");
  transport->add_option("--embeddings", tr.embeddings, "site embeddings (EOT1)");
  transport->add_option("--bbox", tr.bbox, "sampling box min_lon,min_lat,max_lon,max_lat");
  transport->add_option("--count", tr.count, "number of sampled sites")->capture_default_str();
  transport->add_option("--population", tr.population, "population density raster (EOT1) over the box");
  transport->add_option("--seed", tr.seed, "sampling seed")->capture_default_str();
  transport->add_option("--out", tr.out, "map directory, or site CSV when sampling")->required();

  // report
  struct {
    std::string runs, rate, out;
  } rp;
  auto* report = app.add_subcommand("report", "meta-regression over runs, or a summary of a RATE report");
  report->add_option("--runs", rp.runs, "runs CSV for the meta-regression");
  report->add_option("--rate", rp.rate, "RATE report JSON to summarise");
  report->add_option("--out", rp.out, "write the table here instead of stdout");

  CLI11_PARSE(app, argc, argv);
  if (threads > 0) set_thread_override(threads);

  std::string stage = app.get_subcommands().front()->get_name();
  try {
    if (*run) {
      const RunConfig cfg = load_run_config(run_config);
      if (cfg.threads && threads == 0) set_thread_override(*cfg.threads);
      const RunResult res = run_pipeline(cfg);
      if (!res.ok) {
        std::cerr << "run failed in stage '" << res.failed_stage << "': " << res.message << "\n";
        return 1;
      }
      std::cout << render_summary(res.report);
      return 0;
    }

    if (*embed) {
      const ExperimentDataset ds = [&] {
        const UnitTable table = read_units(em.manifest);
        const fs::path tensor = em.tensor.empty() ? fs::path(em.manifest).replace_extension(".eot") : fs::path(em.tensor);
        ExperimentDataset d;
        d.sequences = sequences_from_tensor(read_tensor(tensor));
        if (d.sequences.size() != table.size())
          throw AlignmentError("manifest has " + std::to_string(table.size()) + " rows but tensor has " +
                               std::to_string(d.sequences.size()) + " sequences");
        d.table = table;
        return d;
      }();
      const PipelineSpec spec = default_pipeline(spatial_kind_from_string(em.model), em.seed, ds.sequences.at(0).bands());
      EmbedOptions opts;
      opts.with_tabular = em.with_tabular;
      opts.pca_k = em.pca;
      std::optional<PcaModel<double>> fixed;
      if (!em.pca_model.empty()) {
        std::ifstream in(em.pca_model);
        if (!in) throw IoError("cannot open " + em.pca_model);
        fixed = pca_from_json(json::parse(in));
      }
      const EmbedResult res = embed_dataset(ds.sequences, ds.table, spec, opts, fixed ? &*fixed : nullptr);
      for (const auto& w : res.warnings) std::cerr << "warning: " << w << "\n";
      write_embeddings(res.embeddings, em.out);
      write_file(em.out + ".pipeline.json", to_json(spec).dump(2) + "\n");
      if (res.pca && !fixed) write_file(em.out + ".pca.json", to_json(*res.pca).dump(2) + "\n");
      std::cout << "wrote " << res.embeddings.rows() << "x" << res.embeddings.dim() << " embeddings ("
                << res.embeddings.label << ") to " << em.out << "\n";
      return 0;
    }

    if (*fit) {
      const UnitTable table = read_units(fi.manifest);
      const EmbeddingMatrix emb = read_external_embeddings(fi.embeddings, table);
      const CateModel model = fit_cate(emb.values, table.treatments(), table.outcomes(), fi.est.spec(), emb.fingerprint);
      save_model(model, fi.out);
      std::cout << "wrote " << to_string(model.kind()) << " model to " << fi.out << "\n";
      return 0;
    }

    if (*rate) {
      const UnitTable table = read_units(ra.manifest);
      const EmbeddingMatrix emb = read_external_embeddings(ra.embeddings, table);
      const RateInputs in = RateInputs::from_table(table, propensity_for(table, ra.propensity, ra.propensity_table));
      CrossFitOptions cf;
      cf.folds = ra.folds;
      cf.bootstrap = ra.bootstrap;
      cf.seed = ra.est.seed;
      const RateReport rep = cross_fit_rate(in, emb.values, ra.est.spec(), weighting_from_string(ra.weighting), cf);
      write_file(ra.out, to_json(rep).dump(2) + "\n");
      std::printf("RATE %s: point %.4f, se %.4f, ratio %.3f%s\n", to_string(rep.weighting).c_str(), rep.point, rep.se,
                  rep.ratio, rep.significant ? " (significant)" : "");
      return 0;
    }

    if (*simulate) {
      std::vector<GridCell> cells;
      for (const auto& m : split(si.models, ','))
        for (const auto& s : split(si.sigma2, ','))
          for (auto seed : parse_seeds(si.seeds)) cells.push_back({m, std::stod(s), seed});
      GridOptions opts;
      opts.n = si.n;
      opts.pool_size = si.pool_size;
      opts.chip_size = si.chip_size;
      if (!si.pool.empty()) opts.pool = load_image_pool(si.pool);
      opts.estimator = si.est.spec();
      opts.weighting = weighting_from_string(si.weighting);
      opts.cross_fit.folds = si.folds;
      opts.cross_fit.bootstrap = si.bootstrap;
      const auto results = run_grid(cells, opts);
      write_file(si.out, grid_csv(results));
      if (!si.plots.empty()) write_file(fs::path(si.plots) / "sim_results.svg", grid_svg(results));
      std::cout << grid_csv(results);
      return 0;
    }

    if (*landcover) {
      const LandCoverRaster raster = read_raster(lc.raster, lc.legend);
      const UnitTable table = read_units(lc.manifest);
      EmbeddingMatrix e;
      e.values = landcover_features(raster, table.units, lc.window, lc.epsilon);
      e.label = "landcover";
      e.fingerprint = "landcover";
      e.ids = table.ids();
      write_embeddings(e, lc.out);
      std::cout << "wrote " << e.rows() << "x" << e.dim() << " land-cover features to " << lc.out << "\n";
      return 0;
    }

    if (*transport) {
      if (!tr.bbox.empty() && tr.model.empty()) {
        std::optional<PopulationWeights> pop;
        if (!tr.population.empty()) pop = read_population(tr.population);
        const auto points = sample_sites(parse_bbox(tr.bbox), tr.count, pop ? &*pop : nullptr, tr.seed);
        std::string body = "id,lon,lat\n";
        char buf[96];
        for (std::size_t i = 0; i < points.size(); ++i) {
          std::snprintf(buf, sizeof buf, "site%zu,%.17g,%.17g\n", i, points[i].lon, points[i].lat);
          body += buf;
        }
        write_file(tr.out, body);
        std::cout << "wrote " << points.size() << " sites to " << tr.out << "\n";
        return 0;
      }
      if (tr.model.empty() || tr.sites.empty() || tr.embeddings.empty())
        throw SpecError("transport scoring needs --model, --sites and --embeddings (or --bbox to sample sites)");
      const CateModel model = load_model(tr.model);
      const UnitTable sites = read_units(tr.sites);
      const EmbeddingMatrix emb = read_external_embeddings(tr.embeddings, sites);
      const VectorXd tau = transport_cate(model, emb);
      std::vector<GeoPoint> points;
      for (const auto& u : sites.units) points.push_back({u.lon, u.lat});
      for (const auto& p : emit_map(points, tau, fs::path(tr.out) / "transport_map")) std::cout << "wrote " << p.string() << "\n";
      return 0;
    }

    if (*report) {
      std::string body;
      if (!rp.runs.empty()) {
        body = render_regression_table(meta_regression(read_meta_runs(rp.runs)));
      } else if (!rp.rate.empty()) {
        std::ifstream in(rp.rate);
        if (!in) throw IoError("cannot open " + rp.rate);
        const RateReport r = rate_report_from_json(json::parse(in));
        char buf[200];
        std::snprintf(buf, sizeof buf, "RATE %s: point %.4f, se %.4f, ratio %.3f, significant %s, degenerate %s\n",
                      to_string(r.weighting).c_str(), r.point, r.se, r.ratio, r.significant ? "yes" : "no",
                      r.degenerate ? "yes" : "no");
        body = buf;
        for (std::size_t f = 0; f < r.per_fold.size(); ++f) {
          std::snprintf(buf, sizeof buf, "  fold %zu: point %.4f, se %.4f, ratio %.3f\n", f, r.per_fold[f].point,
                        r.per_fold[f].se, r.per_fold[f].ratio);
          body += buf;
        }
      } else {
        throw SpecError("report needs --runs or --rate");
      }
      if (rp.out.empty())
        std::cout << body;
      else
        write_file(rp.out, body);
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "heteo " << stage << ": error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
