#include "hypersed/pipeline.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>
#include <unordered_map>

#include "hypersed/geometry.hpp"
#include "hypersed/model.hpp"
#include "json.hpp"

namespace hypersed {

using nlohmann::json;
using nlohmann::ordered_json;

const char* to_string(Stage stage) {
  switch (stage) {
    case Stage::kIngest: return "ingest";
    case Stage::kConfig: return "config";
    case Stage::kGraph: return "graph construction";
    case Stage::kAnchor: return "anchor construction";
    case Stage::kTraining: return "training";
    case Stage::kReadout: return "readout";
    case Stage::kOutput: return "output";
    case Stage::kEvaluate: return "evaluate";
  }
  return "unknown";
}

int exit_code(Stage stage) { return 2 + static_cast<int>(stage); }

StageError::StageError(Stage stage, const std::string& what)
    : std::runtime_error(std::string(to_string(stage)) + ": " + what), stage_(stage) {}

// ---------------------------------------------------------------- config

void RunConfig::validate() const {
  try {
    train.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  if (!(grid.step > 0.0) || !(grid.lo <= grid.hi) || !std::isfinite(grid.lo) || !std::isfinite(grid.hi)) {
    throw ConfigError("invalid threshold grid: need lo <= hi and step > 0");
  }
  if (tau && !std::isfinite(*tau)) throw ConfigError("tau must be finite");
}

namespace {

template <typename T>
T take(const json& j, const std::string& key) {
  try {
    return j.get<T>();
  } catch (const json::exception&) {
    throw ConfigError("config key \"" + key + "\" has the wrong type");
  }
}

int take_int(const json& j, const std::string& key) {
  if (!j.is_number_integer()) throw ConfigError("config key \"" + key + "\" must be an integer");
  return j.get<int>();
}

double take_double(const json& j, const std::string& key) {
  if (!j.is_number()) throw ConfigError("config key \"" + key + "\" must be a number");
  return j.get<double>();
}

bool take_bool(const json& j, const std::string& key) {
  if (!j.is_boolean()) throw ConfigError("config key \"" + key + "\" must be a boolean");
  return j.get<bool>();
}

model::AssignmentAdjacency take_mixing(const json& j) {
  if (j == "mean_edge") return model::AssignmentAdjacency::kMeanEdge;
  if (j == "raw") return model::AssignmentAdjacency::kRaw;
  throw ConfigError("config key \"assignment_adjacency\" must be \"mean_edge\" or \"raw\"");
}

const char* mixing_name(model::AssignmentAdjacency m) {
  return m == model::AssignmentAdjacency::kRaw ? "raw" : "mean_edge";
}

}  // namespace

RunConfig parse_run_config(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  RunConfig c;
  TrainConfig& t = c.train;
  for (const auto& [key, v] : j.items()) {
    if (key == "epochs") t.epochs = take_int(v, key);
    else if (key == "patience") t.patience = take_int(v, key);
    else if (key == "learning_rate") t.learning_rate = take_double(v, key);
    else if (key == "dropout") t.dropout = take_double(v, key);
    else if (key == "seed") {
      if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<long long>() >= 0)) {
        throw ConfigError("config key \"seed\" must be a nonnegative integer");
      }
      t.seed = v.get<std::uint64_t>();
    } else if (key == "kappa") t.kappa = take_double(v, key);
    else if (key == "hidden") t.hidden = take_int(v, key);
    else if (key == "latent") t.latent = take_int(v, key);
    else if (key == "assign_hidden") t.assign_hidden = take_int(v, key);
    else if (key == "height") t.height = take_int(v, key);
    else if (key == "max_clusters") t.max_clusters = take_int(v, key);
    else if (key == "layer_widths") {
      if (!v.is_array()) throw ConfigError("config key \"layer_widths\" must be an array");
      t.layer_widths.clear();
      for (const auto& w : v) t.layer_widths.push_back(take_int(w, key));
    } else if (key == "decoder_q") t.decoder_q = take_double(v, key);
    else if (key == "decoder_t") t.decoder_t = take_double(v, key);
    else if (key == "frechet_iterations") t.frechet_iterations = take_int(v, key);
    else if (key == "frechet_tolerance") t.frechet_tolerance = take_double(v, key);
    else if (key == "frechet_one_shot") t.frechet_one_shot = take_bool(v, key);
    else if (key == "masked_attention") t.masked_attention = take_bool(v, key);
    else if (key == "attention_edge_weights") t.attention_edge_weights = take_bool(v, key);
    else if (key == "assignment_adjacency") t.assignment_adjacency = take_mixing(v);
    else if (key == "epsilon") t.epsilon = take_int(v, key);
    else if (key == "tau") {
      if (!v.is_null()) c.tau = take_double(v, key);
    } else if (key == "threshold_grid") {
      if (!v.is_object()) throw ConfigError("config key \"threshold_grid\" must be an object");
      for (const auto& [gk, gv] : v.items()) {
        if (gk == "lo") c.grid.lo = take_double(gv, "threshold_grid.lo");
        else if (gk == "hi") c.grid.hi = take_double(gv, "threshold_grid.hi");
        else if (gk == "step") c.grid.step = take_double(gv, "threshold_grid.step");
        else throw ConfigError("unknown config key \"threshold_grid." + gk + "\"");
      }
    } else {
      throw ConfigError("unknown config key \"" + key + "\"");
    }
  }
  c.validate();
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str());
}

namespace {

ordered_json config_object(const RunConfig& c) {
  const TrainConfig& t = c.train;
  ordered_json j;
  j["epochs"] = t.epochs;
  j["patience"] = t.patience;
  j["learning_rate"] = t.learning_rate;
  j["dropout"] = t.dropout;
  j["seed"] = t.seed;
  j["kappa"] = t.kappa;
  j["hidden"] = t.hidden;
  j["latent"] = t.latent;
  j["assign_hidden"] = t.assign_hidden;
  j["height"] = t.height;
  j["max_clusters"] = t.max_clusters;
  j["layer_widths"] = t.layer_widths;
  j["decoder_q"] = t.decoder_q;
  j["decoder_t"] = t.decoder_t;
  j["frechet_iterations"] = t.frechet_iterations;
  j["frechet_tolerance"] = t.frechet_tolerance;
  j["frechet_one_shot"] = t.frechet_one_shot;
  j["masked_attention"] = t.masked_attention;
  j["attention_edge_weights"] = t.attention_edge_weights;
  j["assignment_adjacency"] = mixing_name(t.assignment_adjacency);
  j["epsilon"] = t.epsilon;
  j["threshold_grid"] = {{"lo", c.grid.lo}, {"hi", c.grid.hi}, {"step", c.grid.step}};
  j["tau"] = c.tau ? ordered_json(*c.tau) : ordered_json(nullptr);
  return j;
}

}  // namespace

std::string run_config_json(const RunConfig& config, int indent) { return config_object(config).dump(indent); }

RunMode parse_mode(const std::string& text) {
  if (text == "offline") return RunMode::kOffline;
  if (text == "online") return RunMode::kOnline;
  throw ConfigError("mode must be \"offline\" or \"online\", got \"" + text + "\"");
}

const char* to_string(RunMode mode) { return mode == RunMode::kOffline ? "offline" : "online"; }

// ---------------------------------------------------------------- detection

namespace {

class StopWatch {
 public:
  double lap() {
    const auto now = std::chrono::steady_clock::now();
    const double s = std::chrono::duration<double>(now - last_).count();
    last_ = now;
    return s;
  }

 private:
  std::chrono::steady_clock::time_point last_ = std::chrono::steady_clock::now();
};

template <typename F>
auto in_stage(Stage stage, F&& f) {
  try {
    return f();
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(stage, e.what());
  }
}

}  // namespace

Detection detect(std::span<const MessageRecord> messages, const RunConfig& config) {
  in_stage(Stage::kConfig, [&] {
    config.validate();
    return 0;
  });
  if (messages.empty()) throw StageError(Stage::kGraph, "no messages");
  Detection d;
  d.kappa = config.train.kappa;
  d.ids.reserve(messages.size());
  for (const auto& m : messages) d.ids.push_back(m.id);
  const int n = static_cast<int>(messages.size());
  StopWatch watch;

  d.message_graph = in_stage(Stage::kGraph, [&] {
    const Eigen::MatrixXd x = embedding_matrix(messages);
    const Eigen::MatrixXd s = cosine_similarity(x, d.ids);
    if (config.tau) {
      d.tau = *config.tau;
    } else {
      d.search = select_threshold(s, config.grid);
      d.tau = d.search.tau;
    }
    return assemble_message_graph(messages, s, d.tau);
  });
  d.message_edges = static_cast<int>(d.message_graph.graph.edge_count());
  for (const auto& p : d.message_graph.provenance) d.dropped_edges += p.dropped;
  d.timings.graph_construction = watch.lap();

  AnchorGraph anchors = in_stage(Stage::kAnchor, [&] {
    return build_anchor_graph(d.message_graph.embeddings, d.message_graph.graph, config.train.epsilon,
                              config.train.seed);
  });
  d.membership = anchors.membership;
  d.anchors = anchors.anchor_count();
  d.anchor_edges = static_cast<int>(anchors.graph.edge_count());
  d.pruned_anchors = anchors.pruned;
  d.timings.anchor_construction = watch.lap();

  // Without anchor edges there is no structure to learn: one cluster.
  d.degenerate = d.anchors < 2 || !(anchors.graph.volume() > 0.0);
  std::optional<TrainOutcome> outcome;
  if (!d.degenerate) {
    outcome = in_stage(Stage::kTraining, [&] { return train_detect(anchors, config.train); });
    d.history = outcome->history;
    d.best_epoch = outcome->best_epoch;
    d.stopped_early = outcome->stopped_early;
    d.final_loss = outcome->result.final_loss;
    d.params = outcome->params;
  }
  d.timings.training = watch.lap();

  in_stage(Stage::kReadout, [&] {
    if (d.degenerate) {
      d.labels.assign(n, 0);
      d.k = 1;
      d.latents = Eigen::MatrixXd::Zero(n, config.train.latent);
      return 0;
    }
    const DetectionResult r = readout(outcome->tree, anchors.membership);
    d.labels = r.message_labels;
    d.k = r.k;
    const auto& leaves = outcome->tree.embeddings.at(outcome->tree.height);
    d.latents.resize(n, leaves.cols());
    for (int i = 0; i < n; ++i) d.latents.row(i) = leaves.row(anchors.membership.anchor_of(i));
    return 0;
  });
  d.timings.readout = watch.lap();
  return d;
}

// ---------------------------------------------------------------- files

void write_labels(std::ostream& out, std::span<const std::string> ids, std::span<const int> labels) {
  if (ids.size() != labels.size()) throw std::invalid_argument("write_labels: ids and labels differ in length");
  for (std::size_t i = 0; i < ids.size(); ++i) out << ids[i] << '\t' << labels[i] << '\n';
}

std::vector<std::pair<std::string, int>> read_labels(std::istream& in) {
  std::vector<std::pair<std::string, int>> out;
  std::set<std::string> seen;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos || tab == 0) {
      throw std::runtime_error("labels line " + std::to_string(line_no) + ": expected \"id<TAB>label\"");
    }
    std::string id = line.substr(0, tab);
    const std::string rest = line.substr(tab + 1);
    std::size_t used = 0;
    int label = 0;
    try {
      label = std::stoi(rest, &used);
    } catch (const std::exception&) {
      used = std::string::npos;
    }
    if (used != rest.size()) {
      throw std::runtime_error("labels line " + std::to_string(line_no) + ": label is not an integer");
    }
    if (!seen.insert(id).second) {
      throw std::runtime_error("labels line " + std::to_string(line_no) + ": duplicate id \"" + id + "\"");
    }
    out.emplace_back(std::move(id), label);
  }
  return out;
}

std::vector<std::pair<std::string, int>> read_labels(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open labels file " + path.string());
  return read_labels(in);
}

metrics::Scores evaluate(const std::vector<std::pair<std::string, int>>& labels,
                         const std::vector<MessageRecord>& corpus) {
  std::unordered_map<std::string, const MessageRecord*> by_id;
  bool any_truth = false;
  for (const auto& m : corpus) {
    by_id.emplace(m.id, &m);
    any_truth = any_truth || m.label.has_value();
  }
  if (!any_truth) throw std::runtime_error("no ground truth");
  if (labels.empty()) throw std::runtime_error("labels file is empty");
  std::vector<int> pred;
  std::vector<int> truth;
  for (const auto& [id, label] : labels) {
    const auto it = by_id.find(id);
    if (it == by_id.end()) throw std::runtime_error("id \"" + id + "\" is not in the corpus");
    if (!it->second->label) throw std::runtime_error("id \"" + id + "\" has no ground-truth label");
    pred.push_back(label);
    truth.push_back(*it->second->label);
  }
  return metrics::score(pred, truth);
}

std::string format_scores(const metrics::Scores& s) {
  char buf[96];
  std::snprintf(buf, sizeof buf, "NMI\t%.4f\nAMI\t%.4f\nARI\t%.4f\n", s.nmi, s.ami, s.ari);
  return buf;
}

namespace {

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

void write_latents(std::ostream& out, const LatentSet& set) {
  const auto n = static_cast<std::size_t>(set.points.rows());
  if (set.ids.size() != n || set.labels.size() != n) {
    throw std::invalid_argument("write_latents: ids, labels and points differ in length");
  }
  out << "# kappa " << fmt(set.kappa) << " dim " << set.points.cols() << '\n';
  for (std::size_t i = 0; i < n; ++i) {
    out << set.ids[i] << '\t' << set.labels[i];
    for (Eigen::Index k = 0; k < set.points.cols(); ++k) out << '\t' << fmt(set.points(static_cast<Eigen::Index>(i), k));
    out << '\n';
  }
}

LatentSet read_latents(std::istream& in) {
  LatentSet set;
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("latents file is empty");
  long dim = 0;
  {
    std::istringstream hs(line);
    std::string hash, kw1, kw2;
    if (!(hs >> hash >> kw1 >> set.kappa >> kw2 >> dim) || hash != "#" || kw1 != "kappa" || kw2 != "dim" || dim < 0) {
      throw std::runtime_error("latents header must read \"# kappa <k> dim <d>\"");
    }
  }
  std::vector<std::vector<double>> rows;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string id;
    int label = 0;
    if (!std::getline(ls, id, '\t') || !(ls >> label)) {
      throw std::runtime_error("latents line " + std::to_string(line_no) + ": expected id, label and coordinates");
    }
    std::vector<double> z(static_cast<std::size_t>(dim));
    for (auto& v : z) {
      if (!(ls >> v)) throw std::runtime_error("latents line " + std::to_string(line_no) + ": too few coordinates");
    }
    set.ids.push_back(std::move(id));
    set.labels.push_back(label);
    rows.push_back(std::move(z));
  }
  set.points.resize(static_cast<Eigen::Index>(rows.size()), dim);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (long k = 0; k < dim; ++k) set.points(static_cast<Eigen::Index>(i), k) = rows[i][static_cast<std::size_t>(k)];
  }
  return set;
}

LatentSet read_latents(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open latents file " + path.string());
  return read_latents(in);
}

Eigen::MatrixXd disc_coordinates(const Eigen::MatrixXd& points, double kappa) {
  const geometry::Curvature k(kappa);
  const Eigen::Index n = points.rows();
  const Eigen::Index d = points.cols();
  const auto origin = geometry::PoincarePoint::origin(d, k);
  Eigen::MatrixXd v(n, d);
  for (Eigen::Index i = 0; i < n; ++i) {
    const geometry::PoincarePoint p(points.row(i).transpose(), k);
    v.row(i) = geometry::log_map(origin, p).coords().transpose();
  }
  // Uncentred second moment so the origin stays fixed.
  Eigen::MatrixXd basis = Eigen::MatrixXd::Zero(d, 2);
  if (d > 0) {
    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(v.transpose() * v);
    const Eigen::Index take = std::min<Eigen::Index>(2, d);
    for (Eigen::Index c = 0; c < take; ++c) {
      Eigen::VectorXd u = eig.eigenvectors().col(d - 1 - c);
      Eigen::Index big = 0;
      u.cwiseAbs().maxCoeff(&big);
      if (u[big] < 0.0) u = -u;
      basis.col(c) = u;
    }
  }
  const Eigen::MatrixXd t = v * basis;
  const auto origin2 = geometry::PoincarePoint::origin(2, k);
  Eigen::MatrixXd out(n, 2);
  for (Eigen::Index i = 0; i < n; ++i) {
    out.row(i) = geometry::exp_map(origin2, t.row(i).transpose()).coords().transpose();
  }
  return out;
}

void export_disc(const LatentSet& set, std::ostream& csv) {
  const Eigen::MatrixXd xy = disc_coordinates(set.points, set.kappa);
  csv << "id,x,y,label\n";
  for (Eigen::Index i = 0; i < xy.rows(); ++i) {
    csv << set.ids[static_cast<std::size_t>(i)] << ',' << fmt(xy(i, 0)) << ',' << fmt(xy(i, 1)) << ','
        << set.labels[static_cast<std::size_t>(i)] << '\n';
  }
}

// ---------------------------------------------------------------- checkpoint

namespace {

constexpr int kCheckpointVersion = 1;

ordered_json tensor_json(const std::string& name, const model::Matrix& m) {
  ordered_json t;
  t["name"] = name;
  t["rows"] = m.rows();
  t["cols"] = m.cols();
  t["data"] = std::vector<double>(m.data(), m.data() + m.size());  // column-major
  return t;
}

model::Matrix tensor_from(const json& t) {
  const auto rows = t.at("rows").get<Eigen::Index>();
  const auto cols = t.at("cols").get<Eigen::Index>();
  const auto data = t.at("data").get<std::vector<double>>();
  if (rows < 0 || cols < 0 || static_cast<Eigen::Index>(data.size()) != rows * cols) {
    throw std::runtime_error("checkpoint tensor \"" + t.at("name").get<std::string>() + "\" has inconsistent shape");
  }
  return Eigen::Map<const model::Matrix>(data.data(), rows, cols);
}

}  // namespace

void save_checkpoint(std::ostream& out, const model::ModelParams& p, std::uint64_t seed) {
  ordered_json j;
  j["format"] = "hypersed-checkpoint";
  j["version"] = kCheckpointVersion;
  j["seed"] = seed;
  j["kappa"] = p.curvature.kappa();
  j["decoder"] = {{"q", p.decoder.q}, {"t", p.decoder.t}};
  j["dropout"] = p.encoder1.dropout;
  auto layer = [](ordered_json& arr, const std::string& prefix, const model::PConvParams& l) {
    arr.push_back(tensor_json(prefix + ".weight", l.weight));
    arr.push_back(tensor_json(prefix + ".bias", l.bias));
  };
  ordered_json tensors = ordered_json::array();
  layer(tensors, "encoder1", p.encoder1);
  layer(tensors, "encoder2", p.encoder2);
  for (std::size_t i = 0; i < p.assign.size(); ++i) {
    layer(tensors, "assign" + std::to_string(i) + ".l1", p.assign[i].first);
    layer(tensors, "assign" + std::to_string(i) + ".l2", p.assign[i].second);
  }
  j["tensors"] = std::move(tensors);
  out << j.dump(1) << '\n';
}

Checkpoint load_checkpoint(std::istream& in) {
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw std::runtime_error(std::string("checkpoint is not valid JSON: ") + e.what());
  }
  try {
    if (j.at("format").get<std::string>() != "hypersed-checkpoint") throw std::runtime_error("not a checkpoint file");
    if (j.at("version").get<int>() != kCheckpointVersion) throw std::runtime_error("unsupported checkpoint version");
    const auto& tensors = j.at("tensors");
    if (tensors.size() < 4 || tensors.size() % 4 != 0) throw std::runtime_error("checkpoint has a partial layer");
    const double dropout = j.at("dropout").get<double>();
    auto layer = [&](std::size_t at) {
      model::PConvParams l;
      l.weight = tensor_from(tensors[at]);
      l.bias = tensor_from(tensors[at + 1]);
      l.dropout = dropout;
      return l;
    };
    Checkpoint c{j.at("seed").get<std::uint64_t>(),
                 {geometry::Curvature(j.at("kappa").get<double>()),
                  {j.at("decoder").at("q").get<double>(), j.at("decoder").at("t").get<double>()},
                  layer(0),
                  layer(2),
                  {}}};
    for (std::size_t at = 4; at < tensors.size(); at += 4) c.params.assign.emplace_back(layer(at), layer(at + 2));
    return c;
  } catch (const json::exception& e) {
    throw std::runtime_error(std::string("malformed checkpoint: ") + e.what());
  }
}

// ---------------------------------------------------------------- run

namespace {

ordered_json losses_json(const LossComponents& l) { return {{"total", l.total}, {"hgae", l.hgae}, {"se", l.se}}; }

ordered_json timings_json(const StageTimings& t) {
  return {{"graph_construction", t.graph_construction},
          {"anchor_construction", t.anchor_construction},
          {"training", t.training},
          {"readout", t.readout},
          {"total", t.total()}};
}

ordered_json detection_json(const Detection& d, const MessageBlock& block, std::size_t index, bool timings) {
  ordered_json j;
  j["index"] = index;
  j["start"] = format_rfc3339(block.start);
  j["end"] = format_rfc3339(block.end);
  j["messages"] = d.ids.size();
  j["k"] = d.k;
  j["degenerate"] = d.degenerate;
  ordered_json g;
  g["tau"] = d.tau;
  g["grid"] = d.search.grid;
  g["entropies"] = d.search.entropies;
  g["mean_entropy"] = d.search.mean_entropy;
  g["warnings"] = d.search.warnings;
  g["edges"] = d.message_edges;
  g["dropped_attribute_edges"] = d.dropped_edges;
  j["graph"] = std::move(g);
  j["anchors"] = {{"count", d.anchors}, {"edges", d.anchor_edges}, {"pruned", d.pruned_anchors}};
  ordered_json tr;
  tr["epochs_run"] = d.history.size();
  tr["best_epoch"] = d.best_epoch;
  tr["stopped_early"] = d.stopped_early;
  tr["final_loss"] = losses_json(d.final_loss);
  ordered_json hist = ordered_json::array();
  for (const auto& r : d.history) {
    hist.push_back({{"epoch", r.epoch}, {"train", losses_json(r.train)}, {"eval", losses_json(r.eval)}});
  }
  tr["history"] = std::move(hist);
  j["training"] = std::move(tr);
  if (timings) j["timings_sec"] = timings_json(d.timings);
  return j;
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw StageError(Stage::kOutput, "cannot write " + path.string());
  return out;
}

}  // namespace

RunSummary run_detect(const std::vector<MessageRecord>& corpus, const RunConfig& config, const RunOptions& options,
                      const std::filesystem::path& out_dir) {
  if (corpus.empty()) throw StageError(Stage::kIngest, "empty corpus");
  in_stage(Stage::kConfig, [&] {
    config.validate();
    return 0;
  });
  RunSummary summary;
  if (options.mode == RunMode::kOnline) {
    summary.blocks = split_blocks(corpus);
  } else {
    MessageBlock all;
    all.start = corpus.front().timestamp;
    all.end = corpus.front().timestamp;
    for (std::size_t i = 0; i < corpus.size(); ++i) {
      all.start = std::min(all.start, corpus[i].timestamp);
      all.end = std::max(all.end, corpus[i].timestamp);
      all.indices.push_back(static_cast<int>(i));
    }
    all.end += std::chrono::milliseconds{1};
    summary.blocks.push_back(std::move(all));
  }

  for (const auto& block : summary.blocks) {
    std::vector<MessageRecord> subset;
    subset.reserve(block.indices.size());
    for (int i : block.indices) subset.push_back(corpus[static_cast<std::size_t>(i)]);
    summary.detections.push_back(detect(subset, config));
  }

  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw StageError(Stage::kOutput, "cannot create " + out_dir.string() + ": " + ec.message());

  const bool online = options.mode == RunMode::kOnline;
  // Online labels are offset per block so the combined file stays a partition.
  std::vector<int> global(corpus.size(), 0);
  LatentSet latents;
  latents.kappa = config.train.kappa;
  latents.points.resize(static_cast<Eigen::Index>(corpus.size()), config.train.latent);
  std::vector<std::string> ids(corpus.size());
  int offset = 0;
  for (std::size_t b = 0; b < summary.blocks.size(); ++b) {
    const auto& block = summary.blocks[b];
    const auto& d = summary.detections[b];
    for (std::size_t r = 0; r < block.indices.size(); ++r) {
      const auto i = static_cast<std::size_t>(block.indices[r]);
      global[i] = offset + d.labels[r];
      ids[i] = d.ids[r];
      latents.points.row(static_cast<Eigen::Index>(i)) = d.latents.row(static_cast<Eigen::Index>(r));
    }
    offset += d.k;
    const std::string suffix = online ? "_block" + std::to_string(b) : "";
    if (online) {
      auto out = open_out(out_dir / ("labels" + suffix + ".tsv"));
      write_labels(out, d.ids, d.labels);
    }
    if (options.write_checkpoint && d.params) {
      auto out = open_out(out_dir / ("checkpoint" + suffix + ".json"));
      save_checkpoint(out, *d.params, config.train.seed);
    }
    if (options.dump_graph) {
      auto out = open_out(out_dir / ("message_graph" + suffix + ".txt"));
      write_graph(out, d.message_graph.graph);
      auto side = open_out(out_dir / ("message_graph" + suffix + ".ids"));
      for (const auto& id : d.ids) side << id << '\n';
    }
    if (options.dump_anchors) {
      auto out = open_out(out_dir / ("anchors" + suffix + ".tsv"));
      write_labels(out, d.ids, d.membership.assignments());
    }
  }
  {
    auto out = open_out(out_dir / "labels.tsv");
    write_labels(out, ids, global);
  }
  latents.ids = ids;
  latents.labels = global;
  {
    auto out = open_out(out_dir / "latents.tsv");
    write_latents(out, latents);
  }

  ordered_json report;
  report["format"] = "hypersed-run-report";
  report["version"] = 1;
  report["mode"] = to_string(options.mode);
  report["config"] = config_object(config);
  report["corpus"] = {{"messages", corpus.size()}, {"embedding_dim", corpus.front().embedding.size()}};
  report["k"] = offset;
  StageTimings total;
  ordered_json runs = ordered_json::array();
  for (std::size_t b = 0; b < summary.blocks.size(); ++b) {
    const auto& t = summary.detections[b].timings;
    total.graph_construction += t.graph_construction;
    total.anchor_construction += t.anchor_construction;
    total.training += t.training;
    total.readout += t.readout;
    runs.push_back(detection_json(summary.detections[b], summary.blocks[b], b, options.report_timings));
  }
  if (options.report_timings) report["timings_sec"] = timings_json(total);
  report["runs"] = std::move(runs);
  summary.report = report.dump(2) + "\n";
  {
    auto out = open_out(out_dir / "report.json");
    out << summary.report;
  }
  return summary;
}

}  // namespace hypersed
