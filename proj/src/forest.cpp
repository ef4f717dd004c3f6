#include "heteo/forest.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace heteo {

namespace {

struct ArmSums {
  int n_treated = 0;
  int n_control = 0;
  double sum_treated = 0.0;
  double sum_control = 0.0;

  void add(bool treated, double y) {
    if (treated) {
      ++n_treated;
      sum_treated += y;
    } else {
      ++n_control;
      sum_control += y;
    }
  }
  int n() const { return n_treated + n_control; }
  double tau() const { return sum_treated / n_treated - sum_control / n_control; }
};

struct Split {
  int feature = -1;
  double threshold = 0.0;
  double score = 0.0;
};

class TreeGrower {
public:
  TreeGrower(const MatrixXd& x, const VectorXd& w, const VectorXd& y, const CausalForestSpec& spec, Rng& rng)
      : x_(x), w_(w), y_(y), spec_(spec), rng_(rng), mtry_(spec.effective_mtry(static_cast<int>(x.cols()))) {}

  void grow(CausalTree& tree, std::vector<int> structure, std::vector<int> estimation) {
    tree.nodes.clear();
    build(tree, std::move(structure), std::move(estimation), 0);
  }

private:
  bool treated(int i) const { return w_[i] > 0.5; }

  ArmSums sums(const std::vector<int>& idx) const {
    ArmSums s;
    for (int i : idx) s.add(treated(i), y_[i]);
    return s;
  }

  bool arms_ok(const ArmSums& s) const {
    return s.n_treated >= spec_.min_leaf_treated && s.n_control >= spec_.min_leaf_control;
  }

  std::vector<int> candidate_features() {
    const int d = static_cast<int>(x_.cols());
    std::vector<int> f(static_cast<std::size_t>(d));
    std::iota(f.begin(), f.end(), 0);
    for (int i = 0; i < mtry_; ++i) {
      std::uniform_int_distribution<int> pick(i, d - 1);
      std::swap(f[static_cast<std::size_t>(i)], f[static_cast<std::size_t>(pick(rng_))]);
    }
    f.resize(static_cast<std::size_t>(mtry_));
    std::sort(f.begin(), f.end());  // ascending index: ties go to the lowest feature
    return f;
  }

  std::vector<int> sorted_by(const std::vector<int>& idx, int feature) const {
    std::vector<int> s = idx;
    std::sort(s.begin(), s.end(), [&](int a, int b) {
      const double xa = x_(a, feature), xb = x_(b, feature);
      return xa < xb || (xa == xb && a < b);
    });
    return s;
  }

  Split best_split(const std::vector<int>& structure, const std::vector<int>& estimation, const ArmSums& parent,
                   const ArmSums& parent_est) {
    Split best;
    const double tau_parent = parent.tau();
    for (int f : candidate_features()) {
      const auto s = sorted_by(structure, f);
      const auto e = sorted_by(estimation, f);
      ArmSums left;
      ArmSums left_est;
      std::size_t ep = 0;
      for (std::size_t k = 0; k + 1 < s.size(); ++k) {
        left.add(treated(s[k]), y_[s[k]]);
        const double lo = x_(s[k], f);
        const double hi = x_(s[k + 1], f);
        if (!(lo < hi)) continue;
        double thr = lo + (hi - lo) / 2.0;
        if (!(thr < hi)) thr = lo;
        while (ep < e.size() && x_(e[ep], f) <= thr) {
          left_est.add(treated(e[ep]), y_[e[ep]]);
          ++ep;
        }
        ArmSums right{parent.n_treated - left.n_treated, parent.n_control - left.n_control,
                      parent.sum_treated - left.sum_treated, parent.sum_control - left.sum_control};
        if (!arms_ok(left) || !arms_ok(right)) continue;
        const ArmSums right_est{parent_est.n_treated - left_est.n_treated, parent_est.n_control - left_est.n_control,
                                0.0, 0.0};
        if (!arms_ok(left_est) || !arms_ok(right_est)) continue;
        const double dl = left.tau() - tau_parent;
        const double dr = right.tau() - tau_parent;
        const double score = left.n() * dl * dl + right.n() * dr * dr;
        if (score > best.score) best = {f, thr, score};
      }
    }
    return best;
  }

  int build(CausalTree& tree, std::vector<int> structure, std::vector<int> estimation, int depth) {
    const int id = static_cast<int>(tree.nodes.size());
    tree.nodes.emplace_back();
    const ArmSums s = sums(structure);
    const ArmSums e = sums(estimation);

    Split split;
    const bool depth_ok = !spec_.max_depth || depth < *spec_.max_depth;
    if (depth_ok && s.n_treated > 0 && s.n_control > 0) split = best_split(structure, estimation, s, e);

    if (split.feature < 0) {
      if (e.n_treated == 0 || e.n_control == 0)
        throw DegenerateDesignError("estimation half lacks a treatment arm; the sample is too small for this forest");
      TreeNode& leaf = tree.nodes[static_cast<std::size_t>(id)];
      leaf.tau = e.tau();
      leaf.n_treated = e.n_treated;
      leaf.n_control = e.n_control;
      return id;
    }

    std::vector<int> sl, sr, el, er;
    for (int i : structure) (x_(i, split.feature) <= split.threshold ? sl : sr).push_back(i);
    for (int i : estimation) (x_(i, split.feature) <= split.threshold ? el : er).push_back(i);
    structure.clear();
    structure.shrink_to_fit();
    estimation.clear();
    estimation.shrink_to_fit();

    const int l = build(tree, std::move(sl), std::move(el), depth + 1);
    const int r = build(tree, std::move(sr), std::move(er), depth + 1);
    TreeNode& node = tree.nodes[static_cast<std::size_t>(id)];
    node.feature = split.feature;
    node.threshold = split.threshold;
    node.left = l;
    node.right = r;
    return id;
  }

  const MatrixXd& x_;
  const VectorXd& w_;
  const VectorXd& y_;
  const CausalForestSpec& spec_;
  Rng& rng_;
  int mtry_;
};

// Draws round(fraction * |pool|) units from each arm without replacement.
std::vector<int> stratified_draw(const std::vector<int>& treated, const std::vector<int>& control, double fraction,
                                 Rng& rng) {
  std::vector<int> out;
  for (const auto* arm : {&treated, &control}) {
    std::vector<int> pool = *arm;
    const auto take = std::min(pool.size(), static_cast<std::size_t>(std::lround(fraction * pool.size())));
    for (std::size_t i = 0; i < take; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, pool.size() - 1);
      std::swap(pool[i], pool[pick(rng)]);
    }
    out.insert(out.end(), pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(take));
  }
  return out;
}

struct Halves {
  std::vector<int> in_bag, structure, estimation;
};

Halves draw_halves(const std::vector<int>& treated, const std::vector<int>& control, const CausalForestSpec& spec,
                   const VectorXd& w, Rng& rng) {
  Halves h;
  h.in_bag = stratified_draw(treated, control, spec.subsample_fraction, rng);
  std::vector<int> sub_t, sub_c;
  for (int i : h.in_bag) (w[i] > 0.5 ? sub_t : sub_c).push_back(i);
  h.structure = stratified_draw(sub_t, sub_c, spec.honesty_fraction, rng);
  std::vector<int> sorted_struct = h.structure;
  std::sort(sorted_struct.begin(), sorted_struct.end());
  for (int i : h.in_bag)
    if (!std::binary_search(sorted_struct.begin(), sorted_struct.end(), i)) h.estimation.push_back(i);
  std::sort(h.in_bag.begin(), h.in_bag.end());
  return h;
}

double mean_of(const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0) / v.size(); }

}  // namespace

void CausalForestSpec::validate() const {
  if (n_trees < 1) throw SpecError("n_trees must be >= 1");
  if (!(honesty_fraction > 0.0 && honesty_fraction < 1.0)) throw SpecError("honesty_fraction must be in (0,1)");
  if (!(subsample_fraction > 0.0 && subsample_fraction <= 1.0)) throw SpecError("subsample_fraction must be in (0,1]");
  if (min_leaf_treated < 1 || min_leaf_control < 1) throw SpecError("minimum leaf arm counts must be >= 1");
  if (mtry && *mtry < 1) throw SpecError("mtry must be >= 1");
  if (max_depth && *max_depth < 0) throw SpecError("max_depth must be >= 0");
}

int CausalForestSpec::effective_mtry(int d) const {
  const int m = mtry ? *mtry : static_cast<int>(std::ceil(std::sqrt(static_cast<double>(d))));
  return std::clamp(m, 1, std::max(d, 1));
}

const TreeNode& CausalTree::leaf_for(const double* x) const {
  const TreeNode* n = &nodes.front();
  while (!n->is_leaf())
    n = &nodes[static_cast<std::size_t>(x[n->feature] <= n->threshold ? n->left : n->right)];
  return *n;
}

int CausalTree::depth() const {
  std::vector<int> d(nodes.size(), 0);
  int best = 0;
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    if (nodes[i].is_leaf()) continue;
    d[static_cast<std::size_t>(nodes[i].left)] = d[i] + 1;
    d[static_cast<std::size_t>(nodes[i].right)] = d[i] + 1;
    best = std::max(best, d[i] + 1);
  }
  return best;
}

double leaf_effect(const std::vector<double>& treated_outcomes, const std::vector<double>& control_outcomes) {
  if (treated_outcomes.empty() || control_outcomes.empty())
    throw DegenerateDesignError("leaf effect needs both treated and control outcomes");
  return mean_of(treated_outcomes) - mean_of(control_outcomes);
}

CausalForestModel fit_causal_forest(const MatrixXd& x, const VectorXd& w, const VectorXd& y,
                                    const CausalForestSpec& spec) {
  spec.validate();
  const auto n = static_cast<int>(x.rows());
  if (w.size() != n || y.size() != n) throw ShapeError("X, W and Y must have the same number of rows");
  if (!x.allFinite() || !y.allFinite()) throw DomainError("forest inputs must be finite");
  std::vector<int> treated, control;
  for (int i = 0; i < n; ++i) {
    if (w[i] != 0.0 && w[i] != 1.0) throw DomainError("treatment must be 0 or 1");
    (w[i] > 0.5 ? treated : control).push_back(i);
  }
  if (treated.empty() || control.empty()) throw DegenerateDesignError("causal forest needs both treatment arms");
  if (n < 2 * (spec.min_leaf_treated + spec.min_leaf_control))
    throw SampleSizeError("causal forest needs N >= 2*(min_leaf_treated+min_leaf_control)");

  CausalForestModel model;
  model.spec = spec;
  model.n_features = static_cast<int>(x.cols());
  model.n_train = n;
  model.trees.resize(static_cast<std::size_t>(spec.n_trees));

  std::vector<Halves> halves(model.trees.size());
  for (std::size_t t = 0; t < halves.size(); ++t) {
    Rng rng(stream_seed(spec.seed, t, 0));
    halves[t] = draw_halves(treated, control, spec, w, rng);
  }

  // Every unit must be out-of-bag somewhere; redraw trees while some are not.
  if (spec.n_trees >= 2) {
    for (int attempt = 1; attempt <= 4 * spec.n_trees; ++attempt) {
      std::vector<int> oob_count(static_cast<std::size_t>(n), spec.n_trees);
      for (const auto& h : halves)
        for (int i : h.in_bag) --oob_count[static_cast<std::size_t>(i)];
      std::vector<char> uncovered(static_cast<std::size_t>(n), 0);
      bool any = false;
      for (int i = 0; i < n; ++i)
        if (oob_count[static_cast<std::size_t>(i)] == 0) uncovered[static_cast<std::size_t>(i)] = any = true;
      if (!any) break;
      const auto t = static_cast<std::size_t>((attempt - 1) % spec.n_trees);
      std::vector<int> pt, pc;
      for (int i : treated)
        if (!uncovered[static_cast<std::size_t>(i)]) pt.push_back(i);
      for (int i : control)
        if (!uncovered[static_cast<std::size_t>(i)]) pc.push_back(i);
      if (pt.empty() || pc.empty()) break;
      Rng rng(stream_seed(spec.seed, t, static_cast<std::uint64_t>(attempt)));
      halves[t] = draw_halves(pt, pc, spec, w, rng);
    }
  }

  parallel_for(model.trees.size(), [&](std::size_t t) {
    Rng rng(stream_seed(spec.seed, t, 0xfeed));
    auto& tree = model.trees[t];
    auto& h = halves[t];
    TreeGrower grower(x, w, y, spec, rng);
    tree.in_bag = h.in_bag;
    tree.structure_half = h.structure;
    tree.estimation_half = h.estimation;
    std::sort(tree.structure_half.begin(), tree.structure_half.end());
    std::sort(tree.estimation_half.begin(), tree.estimation_half.end());
    // Honesty: the two halves never share a unit.
    std::vector<int> both;
    std::set_intersection(tree.structure_half.begin(), tree.structure_half.end(), tree.estimation_half.begin(),
                          tree.estimation_half.end(), std::back_inserter(both));
    if (!both.empty()) throw ContractError("honesty violated: structure and estimation halves overlap");
    grower.grow(tree, std::move(h.structure), std::move(h.estimation));
  });
  return model;
}

VectorXd predict_forest(const CausalForestModel& model, const MatrixXd& x) {
  if (x.cols() != model.n_features)
    throw ShapeError("forest was trained on " + std::to_string(model.n_features) + " features, got " +
                     std::to_string(x.cols()));
  const RowMatrixX<double> xr = x;
  VectorXd out(x.rows());
  parallel_for(static_cast<std::size_t>(x.rows()), [&](std::size_t i) {
    const double* row = xr.data() + i * static_cast<std::size_t>(xr.cols());
    double s = 0.0;
    for (const auto& t : model.trees) s += t.leaf_for(row).tau;
    out[static_cast<Eigen::Index>(i)] = s / static_cast<double>(model.trees.size());
  });
  return out;
}

VectorXd predict_forest_oob(const CausalForestModel& model, const MatrixXd& x_train) {
  if (x_train.rows() != model.n_train)
    throw ContractError("out-of-bag prediction is only defined for the " + std::to_string(model.n_train) +
                        " training units");
  if (x_train.cols() != model.n_features) throw ShapeError("feature count differs from training");
  const RowMatrixX<double> xr = x_train;
  VectorXd out(x_train.rows());
  std::vector<std::vector<char>> in_bag(model.trees.size(), std::vector<char>(static_cast<std::size_t>(model.n_train), 0));
  for (std::size_t t = 0; t < model.trees.size(); ++t)
    for (int i : model.trees[t].in_bag) in_bag[t][static_cast<std::size_t>(i)] = 1;
  parallel_for(static_cast<std::size_t>(x_train.rows()), [&](std::size_t i) {
    const double* row = xr.data() + i * static_cast<std::size_t>(xr.cols());
    double s = 0.0;
    int k = 0;
    for (std::size_t t = 0; t < model.trees.size(); ++t) {
      if (in_bag[t][i]) continue;
      s += model.trees[t].leaf_for(row).tau;
      ++k;
    }
    if (k == 0) throw ContractError("unit " + std::to_string(i) + " is in-bag for every tree");
    out[static_cast<Eigen::Index>(i)] = s / k;
  });
  return out;
}

VectorXd predict_forest(const CausalForestModel& model, const MatrixXd& x, bool oob) {
  return oob ? predict_forest_oob(model, x) : predict_forest(model, x);
}

namespace {

nlohmann::json node_json(const CausalTree& t, int id) {
  const TreeNode& n = t.nodes[static_cast<std::size_t>(id)];
  if (n.is_leaf()) return {{"tau", n.tau}, {"n_treated", n.n_treated}, {"n_control", n.n_control}};
  return {{"feature", n.feature},
          {"threshold", n.threshold},
          {"left", node_json(t, n.left)},
          {"right", node_json(t, n.right)}};
}

int node_from_json(CausalTree& t, const nlohmann::json& j) {
  const int id = static_cast<int>(t.nodes.size());
  t.nodes.emplace_back();
  if (j.contains("tau")) {
    auto& n = t.nodes.back();
    n.tau = j.at("tau").get<double>();
    n.n_treated = j.at("n_treated").get<int>();
    n.n_control = j.at("n_control").get<int>();
    return id;
  }
  const int l = node_from_json(t, j.at("left"));
  const int r = node_from_json(t, j.at("right"));
  auto& n = t.nodes[static_cast<std::size_t>(id)];
  n.feature = j.at("feature").get<int>();
  n.threshold = j.at("threshold").get<double>();
  n.left = l;
  n.right = r;
  return id;
}

}  // namespace

nlohmann::json to_json(const CausalForestModel& m) {
  nlohmann::json spec = {{"n_trees", m.spec.n_trees},
                         {"honesty_fraction", m.spec.honesty_fraction},
                         {"min_leaf_treated", m.spec.min_leaf_treated},
                         {"min_leaf_control", m.spec.min_leaf_control},
                         {"subsample_fraction", m.spec.subsample_fraction},
                         {"seed", m.spec.seed}};
  spec["mtry"] = m.spec.mtry ? nlohmann::json(*m.spec.mtry) : nlohmann::json(nullptr);
  spec["max_depth"] = m.spec.max_depth ? nlohmann::json(*m.spec.max_depth) : nlohmann::json(nullptr);
  nlohmann::json trees = nlohmann::json::array();
  for (const auto& t : m.trees) trees.push_back({{"root", node_json(t, 0)}, {"in_bag", t.in_bag}});
  return {{"spec", spec}, {"n_features", m.n_features}, {"n_train", m.n_train}, {"trees", trees}};
}

CausalForestModel forest_from_json(const nlohmann::json& j) {
  CausalForestModel m;
  const auto& s = j.at("spec");
  m.spec.n_trees = s.at("n_trees").get<int>();
  m.spec.honesty_fraction = s.at("honesty_fraction").get<double>();
  m.spec.min_leaf_treated = s.at("min_leaf_treated").get<int>();
  m.spec.min_leaf_control = s.at("min_leaf_control").get<int>();
  m.spec.subsample_fraction = s.at("subsample_fraction").get<double>();
  m.spec.seed = s.at("seed").get<std::uint64_t>();
  if (!s.at("mtry").is_null()) m.spec.mtry = s.at("mtry").get<int>();
  if (!s.at("max_depth").is_null()) m.spec.max_depth = s.at("max_depth").get<int>();
  m.n_features = j.at("n_features").get<int>();
  m.n_train = j.at("n_train").get<int>();
  for (const auto& tj : j.at("trees")) {
    CausalTree t;
    node_from_json(t, tj.at("root"));
    t.in_bag = tj.at("in_bag").get<std::vector<int>>();
    m.trees.push_back(std::move(t));
  }
  return m;
}

}  // namespace heteo
