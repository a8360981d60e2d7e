// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any fails.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "hypersed/pipeline.hpp"
#include "json.hpp"
#include "oracles.hpp"

using namespace hypersed;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
  bool ok = true;
  std::string detail;

  void expect(bool cond, const std::string& what) {
    if (!cond && ok) detail = what;
    ok = ok && cond;
  }
};

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, x);
  return buf;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

fs::path scratch(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("hypersed_acceptance_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

geometry::Vector random_in_ball(Eigen::Index dim, double radius, std::mt19937_64& rng) {
  std::normal_distribution<double> g;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  geometry::Vector v(dim);
  for (Eigen::Index i = 0; i < dim; ++i) v(i) = g(rng);
  return v * (radius * u(rng) / v.norm());
}

Outcome geometry_suite() {
  using namespace geometry;
  Outcome o;
  std::mt19937_64 rng(1);
  double worst_inv = 0.0;
  for (double kappa : {-1.0, -0.5, -2.0}) {
    const Curvature k(kappa);
    const double r = 0.95 * k.radius();
    // Left identity and left inverse.
    for (int t = 0; t < 200; ++t) {
      const PoincarePoint x(random_in_ball(5, r, rng), k);
      const auto left = mobius_add(PoincarePoint::origin(5, k), x);
      o.expect((left.coords() - x.coords()).norm() <= 1e-12, "left identity");
      o.expect(mobius_add(-x, x).coords().norm() <= 1e-12, "left inverse");
    }
    // exp/log inversion at random base points.
    for (int t = 0; t < 200; ++t) {
      const PoincarePoint x(random_in_ball(4, 0.8 * k.radius(), rng), k);
      const PoincarePoint y(random_in_ball(4, 0.8 * k.radius(), rng), k);
      const auto back = exp_map(log_map(x, y));
      worst_inv = std::max(worst_inv, (back.coords() - y.coords()).norm());
      geometry::Vector v = random_in_ball(4, 1.5, rng);
      const double length = k.sqrt_c() * conformal_factor(x) * v.norm();
      if (length > 4.0) v *= 4.0 / length;
      const auto there = log_map(x, exp_map(x, v));
      worst_inv = std::max(worst_inv, (there.coords() - v).norm());
    }
    // Metric axioms on 1000 random triples.
    for (int t = 0; t < 1000; ++t) {
      const PoincarePoint x(random_in_ball(3, r, rng), k), y(random_in_ball(3, r, rng), k),
          z(random_in_ball(3, r, rng), k);
      const double dxy = distance(x, y), dyx = distance(y, x), dxz = distance(x, z), dzy = distance(z, y);
      o.expect(dxy >= 0.0 && distance(x, x) <= 1e-7, "nonnegativity / identity");
      o.expect(std::abs(dxy - dyx) <= 1e-9 * std::max(1.0, dxy), "symmetry");
      o.expect(dxy <= dxz + dzy + 1e-9, "triangle inequality");
    }
    // First-order condition of the weighted Frechet mean.
    for (int t = 0; t < 50; ++t) {
      std::vector<PoincarePoint> pts;
      std::vector<double> w;
      std::uniform_real_distribution<double> u(0.1, 2.0);
      for (int i = 0; i < 7; ++i) {
        pts.emplace_back(random_in_ball(3, 0.9 * k.radius(), rng), k);
        w.push_back(u(rng));
      }
      FrechetOptions fo;
      fo.tol = 1e-10;
      fo.max_iter = 1000;
      const auto m = frechet_mean(pts, w, fo);
      o.expect(mean_log(m, pts, w).norm() <= 10.0 * fo.tol, "Frechet first-order condition");
    }
  }
  o.expect(worst_inv <= 1e-6, "exp/log inversion " + fmt("%.3g", worst_inv));
  o.detail = o.ok ? "max exp/log inversion error " + fmt("%.2e", worst_inv) : o.detail;
  return o;
}

WeightedGraph from_pairs(int n, const std::vector<std::pair<int, int>>& pairs) {
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(n, n);
  for (auto [i, j] : pairs) a(i, j) = a(j, i) = 1.0;
  return WeightedGraph::from_dense(a);
}

Outcome one_dim_values() {
  Outcome o;
  const double cycle = one_dim_se(from_pairs(4, {{0, 1}, {1, 2}, {2, 3}, {3, 0}}));
  const double edge = one_dim_se(from_pairs(2, {{0, 1}}));
  const double star = one_dim_se(from_pairs(4, {{0, 1}, {0, 2}, {0, 3}}));
  o.expect(std::abs(cycle - 2.0) <= 1e-12, "4-cycle " + fmt("%.9f", cycle));
  o.expect(std::abs(edge - 1.0) <= 1e-12, "single edge " + fmt("%.9f", edge));
  o.expect(std::abs(star - 1.792481) <= 1e-6, "star " + fmt("%.9f", star));
  if (o.ok) o.detail = "C4 " + fmt("%.6f", cycle) + ", K2 " + fmt("%.6f", edge) + ", K1,3 " + fmt("%.6f", star);
  return o;
}

Outcome hard_soft_equivalence() {
  using model::LeafGraph;
  Outcome o;
  std::mt19937_64 rng(3);
  double worst = 0.0;
  for (int t = 0; t < 50; ++t) {
    const int n = 2 + t % 5;
    const Eigen::MatrixXd a = oracle::random_graph(n, 0.6, rng);
    auto labels = oracle::random_labels(n, 3, rng);
    std::map<int, int> dense;
    for (int& l : labels) l = dense.emplace(l, static_cast<int>(dense.size())).first->second;
    const int k = static_cast<int>(dense.size());

    const auto g = LeafGraph::from_adjacency(a);
    Eigen::MatrixXd c2 = Eigen::MatrixXd::Zero(n, k);
    for (int i = 0; i < n; ++i) c2(i, labels[static_cast<std::size_t>(i)]) = 1.0;
    const Eigen::VectorXd v1 = c2.transpose() * g.degrees;
    const double soft = model::dsi_layer_entropy(g, Eigen::MatrixXd::Identity(n, n), c2, v1) +
                        model::dsi_layer_entropy(g, c2, Eigen::MatrixXd::Ones(k, 1),
                                                 Eigen::VectorXd::Constant(1, g.volume));
    const auto wg = WeightedGraph::from_dense(a);
    const double hard = structural_info_hard(wg, HardPartitioningTree::two_level(labels));
    const double best = brute_force_optimal_tree(wg, 2).bits;
    worst = std::max(worst, std::abs(soft - hard));
    o.expect(std::abs(soft - hard) <= 1e-9, "soft/hard mismatch on graph " + std::to_string(t));
    o.expect(hard >= best - 1e-12 && soft >= best - 1e-12, "below the brute-force minimum on graph " +
                                                               std::to_string(t));
  }
  if (o.ok) o.detail = "max |soft - hard| " + fmt("%.2e", worst);
  return o;
}

Outcome gradient_check_suite() {
  Outcome o;
  std::mt19937_64 rng(3);
  std::normal_distribution<double> nd(0.0, 1.0);
  const int m = 5, d = 4;
  Eigen::MatrixXd x(m, d);
  for (Eigen::Index i = 0; i < x.size(); ++i) x(i) = 0.5 * nd(rng);
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(m, m);
  for (auto [i, j] : std::vector<std::pair<int, int>>{{0, 1}, {1, 2}, {0, 2}, {2, 3}, {3, 4}, {1, 4}}) {
    a(i, j) = a(j, i) = 0.5 + std::abs(nd(rng));
  }
  TrainConfig tc;
  tc.hidden = 6;
  tc.latent = 5;
  tc.assign_hidden = 4;
  tc.max_clusters = 3;
  tc.dropout = 0.0;
  const auto inputs = model::GraphInputs::make(x, a);
  std::string detail;
  for (int height : {2, 3}) {
    tc.height = height;
    const auto dims = make_dims(tc, d);
    auto p = init_params(tc, dims);
    for (auto* t : p.tensors()) {
      for (Eigen::Index i = 0; i < t->size(); ++i) (*t)(i) += 0.1 * nd(rng);
    }
    Eigen::VectorXd g;
    model_gradient(p, dims, inputs, {}, &g);
    auto loss = [&](const Eigen::VectorXd& flat) {
      auto q = p;
      q.unflatten(flat);
      return model_gradient(q, dims, inputs, {}, nullptr).total;
    };
    const double err = gradient_check(loss, g, p.flatten(), 1e-4);
    o.expect(err <= 1e-4, "height " + std::to_string(height) + " error " + fmt("%.3g", err));
    detail += (detail.empty() ? "" : ", ") + std::string("H=") + std::to_string(height) + " " + fmt("%.2e", err);
  }
  if (o.ok) o.detail = "max relative error " + detail;
  return o;
}

struct Prepared {
  std::vector<MessageRecord> messages;
  AnchorGraph anchors;
};

Prepared prepare(const SynthOptions& so, int epsilon, std::uint64_t seed) {
  Prepared p;
  p.messages = synth(so).messages;
  const auto x = embedding_matrix(p.messages);
  const auto s = cosine_similarity(x);
  const auto search = select_threshold(s);
  const auto g = assemble_message_graph(p.messages, s, search.tau);
  p.anchors = build_anchor_graph(g.embeddings, g.graph, epsilon, seed);
  return p;
}

Outcome volume_conservation() {
  Outcome o;
  SynthOptions so;
  so.n = 1000;
  const auto prep = prepare(so, 20, 0);
  const int anchors = prep.anchors.anchor_count();
  o.expect(anchors == 50, "anchor count " + std::to_string(anchors));
  const double vol = prep.anchors.graph.volume();
  double worst = 0.0;
  int steps = 0;
  TrainCallbacks cb;
  cb.on_step = [&](const EpochRecord&, const model::SoftTree& tree) {
    ++steps;
    for (int l = 0; l <= tree.height; ++l) {
      worst = std::max(worst, std::abs(tree.volumes[static_cast<std::size_t>(l)].sum() - vol) / vol);
    }
  };
  TrainConfig tc;
  train_detect(prep.anchors, tc, cb);
  o.expect(steps > 0, "no training steps observed");
  o.expect(worst <= 1e-6, "relative volume drift " + fmt("%.3g", worst));
  if (o.ok) o.detail = std::to_string(steps) + " steps, max relative drift " + fmt("%.2e", worst);
  return o;
}

Outcome anchor_coarsening() {
  Outcome o;
  std::mt19937_64 rng(6);
  std::uniform_int_distribution<int> pick(0, 5);
  double worst = 0.0;
  for (int t = 0; t < 30; ++t) {
    const Eigen::MatrixXd a = oracle::random_graph(30, 0.3, rng);
    std::vector<int> of(30);
    for (int i = 0; i < 30; ++i) of[static_cast<std::size_t>(i)] = i < 6 ? i : pick(rng);
    const AnchorMembership c(of, 6);
    const auto r = anchor_adjacency(a, c);
    const Eigen::MatrixXd dense = c.dense();
    const double full = (dense.transpose() * a * dense).sum();
    worst = std::max({worst, std::abs(r.off_diagonal.sum() + r.intra_mass.sum() - a.sum()),
                      std::abs(full - a.sum())});
    o.expect(anchor_adjacency(a, AnchorMembership::identity(30)).off_diagonal == a, "identity coarsening changed A");
  }
  o.expect(worst <= 1e-9, "mass drift " + fmt("%.3g", worst));

  SynthOptions so;
  so.n = 300;
  const auto p = prepare(so, 20, 11);
  const auto q = prepare(so, 20, 11);
  o.expect(p.anchors.membership.assignments() == q.anchors.membership.assignments() &&
               p.anchors.adjacency.off_diagonal == q.anchors.adjacency.off_diagonal &&
               p.anchors.features == q.anchors.features,
           "seeded anchor construction is not deterministic");
  if (o.ok) o.detail = "max mass drift " + fmt("%.2e", worst) + ", identity and determinism hold";
  return o;
}

Outcome planted_recovery() {
  Outcome o;
  double nmi = 0.0, ari = 0.0, slowest = 0.0;
  std::string ks;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    SynthOptions so;
    so.seed = seed;
    const auto c = synth(so);
    RunConfig config;
    config.train.seed = seed;
    const auto t0 = Clock::now();
    const auto d = detect(c.messages, config);
    slowest = std::max(slowest, seconds_since(t0));
    std::vector<int> truth;
    for (const auto& m : c.messages) truth.push_back(*m.label);
    const auto s = metrics::score(truth, d.labels);
    nmi += s.nmi / 5.0;
    ari += s.ari / 5.0;
    ks += (ks.empty() ? "" : ",") + std::to_string(d.k);
  }
  o.expect(nmi >= 0.90, "mean NMI " + fmt("%.4f", nmi));
  o.expect(ari >= 0.80, "mean ARI " + fmt("%.4f", ari));
  o.expect(slowest <= 120.0, "slowest seed " + fmt("%.1f s", slowest));
  o.detail = "mean NMI " + fmt("%.4f", nmi) + ", mean ARI " + fmt("%.4f", ari) + ", K per seed " + ks +
             ", slowest " + fmt("%.1f s", slowest);
  return o;
}

Outcome metrics_oracles() {
  Outcome o;
  std::mt19937_64 rng(8);
  std::uniform_int_distribution<int> size(2, 100), clusters(1, 12);
  double worst = 0.0;
  for (int t = 0; t < 100; ++t) {
    const int n = size(rng);
    const auto a = oracle::random_labels(n, clusters(rng), rng);
    const auto b = oracle::random_labels(n, clusters(rng), rng);
    const auto tab = metrics::contingency(a, b);
    worst = std::max({worst, std::abs(metrics::nmi(tab) - oracle::nmi(a, b)),
                      std::abs(metrics::ari(tab) - oracle::ari_pairs(a, b)),
                      std::abs(metrics::ami(tab) - oracle::ami(a, b))});
    const auto same = metrics::score(a, a);
    o.expect(same.nmi == 1.0 && same.ami == 1.0 && same.ari == 1.0, "identical labelings are not exactly 1");
  }
  o.expect(worst <= 1e-12, "oracle gap " + fmt("%.3g", worst));
  if (o.ok) o.detail = "max gap to brute force " + fmt("%.2e", worst);
  return o;
}

Outcome threshold_search() {
  Outcome o;
  std::mt19937_64 rng(9);
  std::normal_distribution<double> g;
  const auto grid = ThresholdGrid{}.points();
  for (int t = 0; t < 30; ++t) {
    Eigen::MatrixXd centres(3, 4);
    for (Eigen::Index i = 0; i < centres.size(); ++i) centres(i) = g(rng);
    Eigen::MatrixXd x(40, 4);
    for (int i = 0; i < 40; ++i) {
      for (int c = 0; c < 4; ++c) x(i, c) = centres(i % 3, c) + 0.7 * g(rng);
    }
    const auto s = cosine_similarity(x);
    const auto r = select_threshold(s);
    o.expect(std::find(grid.begin(), grid.end(), r.tau) != grid.end(), "tau off the grid");
    o.expect(select_threshold(s).tau == r.tau, "search is not deterministic");
    o.expect(r.tau == oracle::independent_tau(s, grid), "disagrees with recomputation on corpus " + std::to_string(t));
  }
  // Equal entropies at every grid point resolve to the lowest value.
  Eigen::MatrixXd flat = Eigen::MatrixXd::Constant(5, 5, 0.8);
  flat.diagonal().setOnes();
  o.expect(select_threshold(flat).tau == grid.front(), "ties do not break downward");
  if (o.ok) o.detail = "30 corpora agree with recomputation, ties break downward";
  return o;
}

Outcome efficiency() {
  Outcome o;
  SynthOptions so;
  so.n = 2000;
  const auto c = synth(so);
  const auto out = scratch("efficiency");
  const auto t0 = Clock::now();
  run_detect(c.messages, RunConfig{}, RunOptions{}, out);
  const double wall = seconds_since(t0);
  o.expect(wall < 60.0, "pipeline took " + fmt("%.1f s", wall));
  const auto report = nlohmann::json::parse(slurp(out / "report.json"));
  bool timed = report.contains("timings_sec");
  if (timed) {
    for (const char* key : {"graph_construction", "anchor_construction", "training", "readout", "total"}) {
      timed = timed && report["timings_sec"].contains(key) && report["timings_sec"][key].is_number();
    }
  }
  o.expect(timed, "stage timings missing from report.json");
  if (o.ok) {
    const auto& ts = report["timings_sec"];
    o.detail = "2000 messages in " + fmt("%.1f s", wall) + " (graph " +
               fmt("%.1f", ts["graph_construction"].get<double>()) + ", anchors " +
               fmt("%.1f", ts["anchor_construction"].get<double>()) + ", training " +
               fmt("%.1f", ts["training"].get<double>()) + ", readout " + fmt("%.2f", ts["readout"].get<double>()) +
               ")";
  }
  fs::remove_all(out);
  return o;
}

nlohmann::json without_timings(nlohmann::json j) {
  if (j.is_object()) {
    j.erase("timings_sec");
    for (auto& [k, v] : j.items()) v = without_timings(v);
  } else if (j.is_array()) {
    for (auto& v : j) v = without_timings(v);
  }
  return j;
}

Outcome determinism() {
  Outcome o;
  SynthOptions so;
  so.seed = 4;
  so.days = 9.0;
  const auto c = synth(so);
  RunConfig config;
  config.train.seed = 4;
  for (RunMode mode : {RunMode::kOffline, RunMode::kOnline}) {
    RunOptions opts;
    opts.mode = mode;
    opts.report_timings = false;
    const auto a = scratch("det_a"), b = scratch("det_b");
    run_detect(c.messages, config, opts, a);
    run_detect(c.messages, config, opts, b);
    const std::string m = to_string(mode);
    o.expect(slurp(a / "labels.tsv") == slurp(b / "labels.tsv"), m + " labels.tsv differs");
    o.expect(slurp(a / "report.json") == slurp(b / "report.json"), m + " report.json differs");
    o.expect(slurp(a / "latents.tsv") == slurp(b / "latents.tsv"), m + " latents.tsv differs");
    fs::remove_all(a);
    fs::remove_all(b);
  }
  // With wall-clock timings on, everything apart from the timings agrees.
  const auto a = scratch("det_ta"), b = scratch("det_tb");
  run_detect(c.messages, config, {}, a);
  run_detect(c.messages, config, {}, b);
  o.expect(slurp(a / "labels.tsv") == slurp(b / "labels.tsv"), "labels.tsv differs with timings on");
  o.expect(without_timings(nlohmann::json::parse(slurp(a / "report.json"))) ==
               without_timings(nlohmann::json::parse(slurp(b / "report.json"))),
           "report differs outside timings_sec");
  fs::remove_all(a);
  fs::remove_all(b);
  if (o.ok) o.detail = "offline and online outputs byte-identical across runs";
  return o;
}

}  // namespace

int main() {
  struct Criterion {
    const char* name;
    std::function<Outcome()> run;
  };
  const std::vector<Criterion> criteria{
      {"geometry suite", geometry_suite},
      {"one-dimensional structural entropy values", one_dim_values},
      {"hard/soft structural information equivalence", hard_soft_equivalence},
      {"gradient check on a 5-anchor instance", gradient_check_suite},
      {"volume conservation on every step of a 50-anchor run", volume_conservation},
      {"anchor coarsening", anchor_coarsening},
      {"planted-partition recovery over 5 seeds", planted_recovery},
      {"metrics oracle equivalence", metrics_oracles},
      {"threshold search", threshold_search},
      {"2000-message pipeline efficiency", efficiency},
      {"determinism", determinism},
  };
  const double limits[] = {5.0, 0, 0, 30.0, 0, 0, 0, 0, 0, 0, 0};
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const auto t0 = Clock::now();
    Outcome o;
    try {
      o = criteria[i].run();
    } catch (const std::exception& e) {
      o.ok = false;
      o.detail = std::string("exception: ") + e.what();
    }
    const double wall = seconds_since(t0);
    if (limits[i] > 0.0 && wall >= limits[i]) {
      o.ok = false;
      o.detail = "took " + fmt("%.1f s", wall) + ", limit " + fmt("%.0f s", limits[i]);
    }
    failed += !o.ok;
    std::printf("%s [%zu] %s: %s (%.1f s)\n", o.ok ? "PASS" : "FAIL", i + 1, criteria[i].name, o.detail.c_str(),
                wall);
    std::fflush(stdout);
  }
  std::printf("%d of %zu criteria passed\n", static_cast<int>(criteria.size()) - failed, criteria.size());
  return failed == 0 ? 0 : 1;
}
