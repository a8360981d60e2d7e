#include <filesystem>
#include <fstream>
#include <algorithm>
#include <random>
#include <set>
#include <sstream>

#include <gtest/gtest.h>

#include "hypersed/pipeline.hpp"

using namespace hypersed;
namespace fs = std::filesystem;

namespace {

RunConfig small_config() {
  RunConfig c;
  c.train.hidden = 16;
  c.train.latent = 8;
  c.train.assign_hidden = 8;
  c.train.max_clusters = 20;
  c.train.epochs = 15;
  c.train.patience = 5;
  return c;
}

fs::path scratch(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("hypersed_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

}  // namespace

TEST(RunConfig, ParseEchoRoundTrip) {
  const auto c = parse_run_config(R"({"epochs": 12, "seed": 7, "kappa": -0.5, "threshold_grid": {"lo": 0.3},
                                      "tau": 0.45, "assignment_adjacency": "raw", "layer_widths": [30, 5],
                                      "height": 3})");
  EXPECT_EQ(c.train.epochs, 12);
  EXPECT_EQ(c.train.seed, 7u);
  EXPECT_EQ(c.train.kappa, -0.5);
  EXPECT_EQ(c.grid.lo, 0.3);
  EXPECT_EQ(c.grid.hi, 0.6);
  EXPECT_EQ(*c.tau, 0.45);
  EXPECT_EQ(c.train.layer_widths, (std::vector<int>{30, 5}));
  EXPECT_EQ(c.train.assignment_adjacency, model::AssignmentAdjacency::kRaw);
  const auto again = parse_run_config(run_config_json(c));
  EXPECT_EQ(run_config_json(again), run_config_json(c));
  EXPECT_EQ(run_config_json(parse_run_config("{}")), run_config_json(RunConfig{}));
}

TEST(RunConfig, Rejections) {
  EXPECT_THROW(parse_run_config(R"({"epoch": 3})"), ConfigError);
  EXPECT_THROW(parse_run_config(R"({"threshold_grid": {"mid": 0.5}})"), ConfigError);
  EXPECT_THROW(parse_run_config(R"({"epochs": "many"})"), ConfigError);
  EXPECT_THROW(parse_run_config(R"({"epochs": 2.5})"), ConfigError);
  EXPECT_THROW(parse_run_config(R"({"masked_attention": 1})"), ConfigError);
  EXPECT_THROW(parse_run_config(R"({"assignment_adjacency": "other"})"), ConfigError);
  EXPECT_THROW(parse_run_config("[1, 2]"), ConfigError);
  EXPECT_THROW(parse_run_config("{not json"), ConfigError);
  RunConfig bad;
  bad.train.dropout = 2.0;
  EXPECT_THROW(bad.validate(), ConfigError);
  EXPECT_THROW(parse_mode("sideways"), ConfigError);
}

TEST(Labels, RoundTripAndErrors) {
  const std::vector<std::string> ids{"x", "y z", "w"};
  const std::vector<int> labels{2, 0, 11};
  std::stringstream s;
  write_labels(s, ids, labels);
  EXPECT_EQ(s.str(), "x\t2\ny z\t0\nw\t11\n");
  const auto back = read_labels(s);
  ASSERT_EQ(back.size(), 3u);
  EXPECT_EQ(back[1], (std::pair<std::string, int>{"y z", 0}));
  std::istringstream dup("a\t1\na\t2\n");
  EXPECT_THROW(read_labels(dup), std::runtime_error);
  std::istringstream junk("a 1\n");
  EXPECT_THROW(read_labels(junk), std::runtime_error);
}

TEST(Evaluate, ScoresAndErrors) {
  auto c = synth({60, 3, 4, 0.1, 1});
  std::vector<std::pair<std::string, int>> labels;
  for (const auto& m : c.messages) labels.emplace_back(m.id, *m.label + 10);
  const auto s = evaluate(labels, c.messages);
  EXPECT_EQ(format_scores(s), "NMI\t1.0000\nAMI\t1.0000\nARI\t1.0000\n");
  labels.emplace_back("ghost", 0);
  try {
    evaluate(labels, c.messages);
    FAIL();
  } catch (const std::runtime_error& e) {
    EXPECT_NE(std::string(e.what()).find("ghost"), std::string::npos);
  }
  labels.pop_back();
  c.messages[3].label.reset();
  EXPECT_THROW(evaluate(labels, c.messages), std::runtime_error);
}

TEST(Latents, RoundTrip) {
  LatentSet set;
  set.ids = {"a", "b"};
  set.labels = {1, 0};
  set.kappa = -0.75;
  set.points.resize(2, 3);
  set.points << 0.1, -0.2, 1.0 / 3.0, 0.0, 0.25, -1e-9;
  std::stringstream s;
  write_latents(s, set);
  const auto back = read_latents(s);
  EXPECT_EQ(back.ids, set.ids);
  EXPECT_EQ(back.labels, set.labels);
  EXPECT_EQ(back.kappa, set.kappa);
  EXPECT_EQ(back.points, set.points);
}

TEST(Disc, OriginAndTwoDimensionalInputs) {
  EXPECT_EQ(disc_coordinates(Eigen::MatrixXd::Zero(5, 4), -1.0), Eigen::MatrixXd::Zero(5, 2));
  std::mt19937_64 rng(91);
  std::normal_distribution<double> g;
  Eigen::MatrixXd z(20, 2);
  for (int i = 0; i < 20; ++i) {
    z.row(i) = Eigen::RowVector2d(g(rng), g(rng));
    z.row(i) *= 0.9 * std::abs(std::tanh(g(rng))) / z.row(i).norm();
  }
  const auto d = disc_coordinates(z, -1.0);
  for (int i = 0; i < 20; ++i) EXPECT_NEAR(d.row(i).norm(), z.row(i).norm(), 1e-9);
  // An orthogonal map also keeps pairwise Euclidean distances.
  EXPECT_NEAR((d.row(0) - d.row(1)).norm(), (z.row(0) - z.row(1)).norm(), 1e-9);
}

TEST(Disc, RadiiInsideBall) {
  std::mt19937_64 rng(92);
  std::normal_distribution<double> g;
  Eigen::MatrixXd z(30, 6);
  for (Eigen::Index i = 0; i < z.size(); ++i) z(i) = g(rng);
  for (int i = 0; i < 30; ++i) z.row(i) *= 0.999 / (2.0 * z.row(i).norm());
  const auto d = disc_coordinates(z, -4.0);
  EXPECT_LT(d.rowwise().norm().maxCoeff(), 0.5);
  LatentSet set{{}, {}, z, -4.0};
  for (int i = 0; i < 30; ++i) {
    set.ids.push_back("m" + std::to_string(i));
    set.labels.push_back(i % 3);
  }
  std::ostringstream csv;
  export_disc(set, csv);
  const std::string text = csv.str();
  EXPECT_EQ(text.substr(0, text.find('\n')), "id,x,y,label");
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 31);
}

TEST(Checkpoint, RoundTrip) {
  TrainConfig c;
  c.hidden = 5;
  c.latent = 4;
  c.assign_hidden = 3;
  c.max_clusters = 6;
  c.height = 3;
  c.seed = 12;
  const auto p = init_params(c, make_dims(c, 7));
  std::stringstream s;
  save_checkpoint(s, p, 12);
  const auto back = load_checkpoint(s);
  EXPECT_EQ(back.seed, 12u);
  EXPECT_EQ(back.params.flatten(), p.flatten());
  EXPECT_EQ(back.params.assign.size(), p.assign.size());
  EXPECT_EQ(back.params.curvature, p.curvature);
  std::istringstream bad(R"({"format": "something-else"})");
  EXPECT_THROW(load_checkpoint(bad), std::runtime_error);
}

TEST(Detect, SingleMessageIsOneCluster) {
  auto c = synth({1, 1, 4, 0.1, 0});
  const auto d = detect(c.messages, small_config());
  EXPECT_EQ(d.k, 1);
  EXPECT_TRUE(d.degenerate);
  EXPECT_EQ(d.labels, std::vector<int>{0});
}

TEST(Detect, FewMessagesWithoutEdgesFallBack) {
  SynthOptions o{30, 3, 8, 0.05, 2};
  auto c = synth(o);
  for (auto& m : c.messages) m.attributes.clear();
  RunConfig cfg = small_config();
  cfg.tau = 2.0;  // no semantic edges either
  const auto d = detect(c.messages, cfg);
  EXPECT_TRUE(d.degenerate);
  EXPECT_GE(d.k, 1);
  EXPECT_EQ(d.labels.size(), 30u);
}

TEST(RunDetect, OnlineEqualsPerBlockOffline) {
  SynthOptions o{120, 4, 8, 0.1, 3};
  o.days = 9.0;
  const auto c = synth(o);
  const auto cfg = small_config();
  const auto out = scratch("online");
  RunOptions opts;
  opts.mode = RunMode::kOnline;
  opts.report_timings = false;
  const auto s = run_detect(c.messages, cfg, opts, out);
  ASSERT_EQ(s.blocks.size(), 3u);
  for (std::size_t b = 0; b < s.blocks.size(); ++b) {
    std::vector<MessageRecord> sub;
    for (int i : s.blocks[b].indices) sub.push_back(c.messages[static_cast<std::size_t>(i)]);
    const auto alone = detect(sub, cfg);
    EXPECT_EQ(alone.labels, s.detections[b].labels);
    EXPECT_TRUE(fs::exists(out / ("labels_block" + std::to_string(b) + ".tsv")));
  }
  // The combined file is a partition with per-block label ranges.
  const auto all = read_labels(out / "labels.tsv");
  ASSERT_EQ(all.size(), c.messages.size());
  int k = 0;
  for (const auto& d : s.detections) k += d.k;
  for (const auto& [id, l] : all) EXPECT_LT(l, k);
  EXPECT_TRUE(fs::exists(out / "report.json"));
  EXPECT_TRUE(fs::exists(out / "latents.tsv"));
  fs::remove_all(out);
}

TEST(RunDetect, OfflineFilesAndDeterminism) {
  const auto c = synth({100, 4, 8, 0.1, 5});
  const auto cfg = small_config();
  RunOptions opts;
  opts.report_timings = false;
  opts.dump_graph = true;
  opts.dump_anchors = true;
  const auto a = scratch("det_a");
  const auto b = scratch("det_b");
  run_detect(c.messages, cfg, opts, a);
  run_detect(c.messages, cfg, opts, b);
  for (const char* f : {"labels.tsv", "report.json", "latents.tsv", "checkpoint.json", "message_graph.txt",
                        "message_graph.ids", "anchors.tsv"}) {
    ASSERT_TRUE(fs::exists(a / f)) << f;
    EXPECT_EQ(slurp(a / f), slurp(b / f)) << f;
  }
  std::ifstream g(a / "message_graph.txt");
  EXPECT_NO_THROW(read_graph(g));
  const auto latents = read_latents(a / "latents.tsv");
  EXPECT_EQ(latents.points.rows(), 100);
  EXPECT_LT(latents.points.rowwise().norm().maxCoeff(), 1.0);
  EXPECT_EQ(slurp(a / "report.json").find("timings_sec"), std::string::npos);
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST(RunDetect, EmptyCorpusIsIngestError) {
  try {
    run_detect({}, small_config(), {}, scratch("empty"));
    FAIL();
  } catch (const StageError& e) {
    EXPECT_EQ(e.stage(), Stage::kIngest);
    EXPECT_EQ(exit_code(e.stage()), 2);
  }
}

TEST(Stage, ExitCodesAreDistinct) {
  std::set<int> codes;
  for (Stage s : {Stage::kIngest, Stage::kConfig, Stage::kGraph, Stage::kAnchor, Stage::kTraining, Stage::kReadout,
                  Stage::kOutput, Stage::kEvaluate}) {
    codes.insert(exit_code(s));
  }
  EXPECT_EQ(codes.size(), 8u);
  EXPECT_EQ(*codes.begin(), 2);
  EXPECT_EQ(*codes.rbegin(), 9);
}
