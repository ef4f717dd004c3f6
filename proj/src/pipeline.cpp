#include "heteo/pipeline.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "heteo/landcover.hpp"
#include "heteo/simulation.hpp"
#include "heteo/transport.hpp"

namespace heteo {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void check_keys(const json& obj, const std::string& where, std::initializer_list<const char*> allowed) {
  if (!obj.is_object()) throw ValidationError("'" + where + "' must be an object");
  for (const auto& [key, value] : obj.items()) {
    if (std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; }))
      throw ValidationError("unknown key '" + key + "' in " + (where.empty() ? "config" : "'" + where + "'"));
  }
}

template <typename T>
T get(const json& obj, const std::string& where, const char* key) {
  try {
    return obj.at(key).get<T>();
  } catch (const json::exception&) {
    throw ValidationError("'" + where + "." + key + "' is missing or has the wrong type");
  }
}

template <typename T>
void get_if(const json& obj, const std::string& where, const char* key, T& out) {
  if (obj.contains(key) && !obj.at(key).is_null()) out = get<T>(obj, where, key);
}

fs::path path_of(const json& obj, const std::string& where, const char* key) {
  std::string p;
  get_if(obj, where, key, p);
  return p;
}

void write_text(const fs::path& path, const std::string& body) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << body;
  if (!out) throw IoError("failed writing " + path.string());
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ValidationError(path.string() + " is not valid JSON: " + e.what());
  }
}

}  // namespace

fs::path RunConfig::resolve(const fs::path& p) const {
  if (p.empty() || p.is_absolute()) return p;
  return base_dir / p;
}

RunConfig parse_run_config(const json& j, const fs::path& base_dir) {
  check_keys(j, "", {"version", "data", "embed", "estimator", "rate", "landcover", "transport", "outputs", "threads"});
  if (!j.contains("version")) throw ValidationError("config is missing 'version' (expected \"v1\")");
  const auto version = get<std::string>(j, "config", "version");
  if (version != "v1") throw ValidationError("unsupported config version '" + version + "' (expected \"v1\")");

  RunConfig c;
  c.base_dir = base_dir;
  if (j.contains("threads")) c.threads = get<std::size_t>(j, "config", "threads");

  if (!j.contains("data")) throw ValidationError("config is missing the 'data' section");
  const json& data = j.at("data");
  check_keys(data, "data", {"manifest", "tensor", "external_embeddings", "propensity", "propensity_table", "simulation"});
  c.manifest = path_of(data, "data", "manifest");
  c.tensor = path_of(data, "data", "tensor");
  c.external_embeddings = path_of(data, "data", "external_embeddings");
  c.propensity_table = path_of(data, "data", "propensity_table");
  if (data.contains("propensity")) c.propensity = get<double>(data, "data", "propensity");
  if (data.contains("simulation")) {
    const json& sim = data.at("simulation");
    check_keys(sim, "data.simulation", {"n", "sigma2", "seed", "pool_size", "chip_size", "pool"});
    SimulationSource src;
    get_if(sim, "data.simulation", "n", src.n);
    get_if(sim, "data.simulation", "sigma2", src.sigma2);
    get_if(sim, "data.simulation", "seed", src.seed);
    get_if(sim, "data.simulation", "pool_size", src.pool_size);
    get_if(sim, "data.simulation", "chip_size", src.chip_size);
    src.pool = path_of(sim, "data.simulation", "pool");
    c.simulation = src;
  }
  if (c.simulation && !c.manifest.empty())
    throw ValidationError("'data' sets both 'simulation' and 'manifest'; choose one");
  if (!c.simulation && c.manifest.empty()) throw ValidationError("'data' needs either 'manifest' or 'simulation'");
  if (c.simulation && !c.external_embeddings.empty())
    throw ValidationError("'data.external_embeddings' cannot be combined with 'simulation'");

  if (j.contains("embed")) {
    const json& e = j.at("embed");
    check_keys(e, "embed", {"model", "seed", "pca", "with_tabular"});
    get_if(e, "embed", "model", c.model);
    get_if(e, "embed", "seed", c.embed_seed);
    if (e.contains("pca") && !e.at("pca").is_null()) c.pca = get<int>(e, "embed", "pca");
    get_if(e, "embed", "with_tabular", c.with_tabular);
    if (c.model != "oracle") spatial_kind_from_string(c.model);
    if (c.model == "oracle" && !c.simulation) throw ValidationError("'embed.model' oracle needs a simulation source");
  }

  if (j.contains("estimator")) {
    const json& e = j.at("estimator");
    check_keys(e, "estimator", {"kind", "params"});
    if (e.contains("kind")) c.estimator.kind = estimator_kind_from_string(get<std::string>(e, "estimator", "kind"));
    if (e.contains("params")) apply_estimator_params(c.estimator, e.at("params"));
  }

  if (j.contains("rate")) {
    const json& r = j.at("rate");
    check_keys(r, "rate", {"weighting", "folds", "bootstrap", "seed"});
    if (r.contains("weighting")) c.weighting = weighting_from_string(get<std::string>(r, "rate", "weighting"));
    get_if(r, "rate", "folds", c.rate.folds);
    get_if(r, "rate", "bootstrap", c.rate.bootstrap);
    get_if(r, "rate", "seed", c.rate.seed);
  }

  if (j.contains("landcover")) {
    const json& l = j.at("landcover");
    check_keys(l, "landcover", {"raster", "legend", "window", "epsilon", "simulated_classes"});
    LandcoverStage st;
    st.raster = path_of(l, "landcover", "raster");
    st.legend = path_of(l, "landcover", "legend");
    get_if(l, "landcover", "window", st.window);
    get_if(l, "landcover", "epsilon", st.epsilon);
    if (l.contains("simulated_classes")) st.simulated_classes = get<int>(l, "landcover", "simulated_classes");
    if (!st.simulated_classes && (st.raster.empty() || st.legend.empty()))
      throw ValidationError("'landcover' needs 'raster' and 'legend', or 'simulated_classes'");
    c.landcover = st;
  }

  if (j.contains("transport")) {
    const json& t = j.at("transport");
    check_keys(t, "transport", {"sites", "tensor"});
    TransportStage st;
    st.sites = get<std::string>(t, "transport", "sites");
    st.tensor = path_of(t, "transport", "tensor");
    c.transport = st;
  }

  if (j.contains("outputs")) {
    const json& o = j.at("outputs");
    check_keys(o, "outputs", {"dir"});
    c.out_dir = get<std::string>(o, "outputs", "dir");
  }
  return c;
}

RunConfig load_run_config(const fs::path& path) {
  return parse_run_config(read_json(path), path.parent_path());
}

RunResult run_pipeline(const RunConfig& config) {
  RunResult res;
  const fs::path out = config.resolve(config.out_dir);
  std::string stage = "setup";
  json report = {{"format", "heteo-run-v1"}};
  std::vector<std::string> warnings;

  auto artifact = [&](const std::string& name, const std::string& body) {
    write_text(out / name, body);
    res.artifacts.push_back(out / name);
  };

  try {
    fs::create_directories(out);
    fs::remove(out / "FAILED");

    stage = "data";
    ExperimentDataset dataset;
    std::optional<SimDataset> sim;
    if (config.simulation) {
      const auto& s = *config.simulation;
      SimConfig sc;
      sc.n = s.n;
      sc.sigma2 = s.sigma2;
      sc.seed = s.seed;
      sc.pool = s.pool.empty() ? make_image_pool(s.pool_size, s.chip_size, 3, stream_seed(s.seed, 0x9001))
                               : load_image_pool(config.resolve(s.pool));
      sim = generate(sc);
      dataset = sim->to_dataset();
    } else if (!config.external_embeddings.empty()) {
      dataset.table = read_units(config.resolve(config.manifest));
      if (!dataset.table.experimental) throw SchemaError("manifest has no treatment/outcome columns");
      dataset.propensity.base = config.propensity.value_or(dataset.table.treatments().mean());
    } else {
      dataset = load_manifest(config.resolve(config.manifest), config.resolve(config.tensor), config.propensity);
    }
    if (!config.propensity_table.empty()) load_propensity_table(config.resolve(config.propensity_table), dataset.propensity);
    dataset.propensity.validate();
    report["n_units"] = dataset.size();

    stage = "embed";
    EmbeddingMatrix emb;
    std::optional<PipelineSpec> spec;
    std::optional<PcaModel<double>> pca;
    if (!config.external_embeddings.empty()) {
      emb = read_external_embeddings(config.resolve(config.external_embeddings), dataset.table);
      if (emb.fingerprint.empty()) emb.fingerprint = "external:" + emb.label;
    } else if (config.model == "oracle") {
      emb.values = sim->tau_true;
      emb.label = "oracle";
      emb.ids = dataset.table.ids();
      emb.fingerprint = "oracle";
    } else {
      spec = default_pipeline(spatial_kind_from_string(config.model), config.embed_seed, dataset.sequences.at(0).bands());
      EmbedOptions opts;
      opts.pca_k = config.pca;
      opts.with_tabular = config.with_tabular;
      EmbedResult er = embed_dataset(dataset.sequences, dataset.table, *spec, opts);
      emb = std::move(er.embeddings);
      pca = std::move(er.pca);
      warnings.insert(warnings.end(), er.warnings.begin(), er.warnings.end());
      report["parameter_count"] = SequenceEmbedder(*spec).parameter_count();
      artifact("pipeline.json", to_json(*spec).dump(2) + "\n");
      if (pca) artifact("pca.json", to_json(*pca).dump(2) + "\n");
    }
    write_embeddings(emb, out / "embeddings.eot");
    res.artifacts.push_back(out / "embeddings.eot");
    report["label"] = emb.label;
    report["fingerprint"] = emb.fingerprint;
    report["embedding_dim"] = emb.dim();

    stage = "fit";
    const RateInputs inputs = RateInputs::from_table(dataset.table, dataset.propensity);
    const CateModel model = fit_cate(emb.values, inputs.w, inputs.y, config.estimator, emb.fingerprint);
    artifact("model.json", to_json(model).dump() + "\n");
    report["estimator"] = to_string(config.estimator.kind);

    stage = "rate";
    const RateReport rate = cross_fit_rate(inputs, emb.values, config.estimator, config.weighting, config.rate);
    artifact("rate_report.json", to_json(rate).dump(2) + "\n");
    report["rate"] = to_json(rate);
    if (sim) {
      const Correlation corr = truth_correlation(rate.held_out_scores, sim->tau_true);
      report["corr"] = corr.value;
      report["corr_degenerate"] = corr.degenerate;
      report["rate_ratio"] = rate.ratio;
    }

    if (config.landcover) {
      stage = "landcover";
      const auto& lc = *config.landcover;
      MatrixXd features;
      if (lc.simulated_classes) {
        if (dataset.sequences.empty()) throw SpecError("simulated land cover needs image sequences");
        features = quantized_landcover(dataset.sequences, *lc.simulated_classes, lc.epsilon);
      } else {
        const LandCoverRaster raster = read_raster(config.resolve(lc.raster), config.resolve(lc.legend));
        features = landcover_features(raster, dataset.units(), lc.window, lc.epsilon);
      }
      EmbeddingMatrix lc_emb{features, "landcover", "landcover", dataset.table.ids()};
      write_embeddings(lc_emb, out / "landcover_features.eot");
      res.artifacts.push_back(out / "landcover_features.eot");
      const RateReport lc_rate = cross_fit_rate(inputs, features, config.estimator, config.weighting, config.rate);
      const Correlation agree = cate_correlation(rate.held_out_scores, lc_rate.held_out_scores);
      json lc_json = {{"rate", to_json(lc_rate)},
                      {"lift", eo_vs_landcover(rate, lc_rate)},
                      {"cate_correlation", agree.value},
                      {"cate_correlation_degenerate", agree.degenerate}};
      artifact("landcover_report.json", lc_json.dump(2) + "\n");
      report["landcover"] = lc_json;
    }

    if (config.transport) {
      stage = "transport";
      if (!spec) throw SpecError("transport needs an embedding pipeline; external and oracle embeddings cannot be re-run on sites");
      const fs::path sites_csv = config.resolve(config.transport->sites);
      UnitTable sites = read_units(sites_csv);
      fs::path tensor = config.resolve(config.transport->tensor);
      if (tensor.empty()) tensor = fs::path(sites_csv).replace_extension(".eot");
      const auto seqs = sequences_from_tensor(read_tensor(tensor));
      if (seqs.size() != sites.size())
        throw AlignmentError("site manifest has " + std::to_string(sites.size()) + " rows but tensor has " +
                             std::to_string(seqs.size()) + " sequences");
      EmbedOptions opts;
      opts.with_tabular = config.with_tabular;
      const EmbedResult site_emb = embed_dataset(seqs, sites, *spec, opts, pca ? &*pca : nullptr);
      const VectorXd tau = transport_cate(model, site_emb.embeddings);
      std::vector<GeoPoint> points;
      for (const auto& u : sites.units) points.push_back({u.lon, u.lat});
      for (const auto& p : emit_map(points, tau, out / "transport_map")) res.artifacts.push_back(p);
      report["transport"] = {{"n_sites", sites.size()},
                             {"tau_mean", tau.mean()},
                             {"tau_min", tau.minCoeff()},
                             {"tau_max", tau.maxCoeff()}};
    }

    stage = "report";
    report["warnings"] = warnings;
    artifact("report.json", report.dump(2) + "\n");
    artifact("summary.txt", render_summary(report));
    res.ok = true;
    res.report = std::move(report);
  } catch (const std::exception& e) {
    res.ok = false;
    res.failed_stage = stage;
    res.message = e.what();
    try {
      fs::create_directories(out);
      write_text(out / "FAILED", "stage: " + stage + "\nerror: " + res.message + "\n");
    } catch (const std::exception&) {
    }
  }
  return res;
}

std::string render_summary(const json& report) {
  std::ostringstream out;
  char buf[160];
  out << "heteo run summary\n";
  out << "  units:          " << report.value("n_units", 0) << "\n";
  out << "  representation: " << report.value("label", std::string()) << " (" << report.value("embedding_dim", 0)
      << " dims)\n";
  out << "  estimator:      " << report.value("estimator", std::string()) << "\n";
  if (report.contains("rate")) {
    const json& r = report["rate"];
    std::snprintf(buf, sizeof buf, "  RATE (%s):     point %.4f, se %.4f, ratio %.3f%s%s\n",
                  r.value("weighting", std::string()).c_str(), r.value("point", 0.0), r.value("se", 0.0),
                  r.value("ratio", 0.0), r.value("significant", false) ? " (significant)" : "",
                  r.value("degenerate", false) ? " [degenerate]" : "");
    out << buf;
  }
  if (report.contains("corr")) {
    std::snprintf(buf, sizeof buf, "  corr(tau_hat, tau): %.4f\n", report["corr"].get<double>());
    out << buf;
  }
  if (report.contains("landcover")) {
    std::snprintf(buf, sizeof buf, "  land-cover ratio %.3f, lift %.3f\n",
                  report["landcover"]["rate"]["ratio"].get<double>(), report["landcover"]["lift"].get<double>());
    out << buf;
  }
  if (report.contains("transport")) {
    std::snprintf(buf, sizeof buf, "  transport: %zu sites, mean tau_hat %.4f\n",
                  report["transport"]["n_sites"].get<std::size_t>(), report["transport"]["tau_mean"].get<double>());
    out << buf;
  }
  for (const auto& w : report.value("warnings", json::array())) out << "  warning: " << w.get<std::string>() << "\n";
  return out.str();
}

}  // namespace heteo
