#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "hypersed/anchor_build.hpp"
#include "hypersed/corpus.hpp"
#include "hypersed/graph_build.hpp"
#include "hypersed/metrics.hpp"
#include "hypersed/trainer.hpp"

namespace hypersed {

enum class Stage { kIngest, kConfig, kGraph, kAnchor, kTraining, kReadout, kOutput, kEvaluate };

const char* to_string(Stage stage);
/// Process exit status for a failure in `stage` (2 through 9).
int exit_code(Stage stage);

class StageError : public std::runtime_error {
 public:
  StageError(Stage stage, const std::string& what);
  Stage stage() const { return stage_; }

 private:
  Stage stage_;
};

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct RunConfig {
  TrainConfig train;
  ThresholdGrid grid;
  // Fixed similarity threshold; skips the search when set.
  std::optional<double> tau;

  void validate() const;
};

/// Parses a JSON object; unknown keys and wrong types raise ConfigError.
RunConfig parse_run_config(const std::string& json_text);
RunConfig load_run_config(const std::filesystem::path& path);
/// Every field, including defaults, as a JSON object.
std::string run_config_json(const RunConfig& config, int indent = 2);

enum class RunMode { kOffline, kOnline };

RunMode parse_mode(const std::string& text);
const char* to_string(RunMode mode);

struct StageTimings {
  double graph_construction = 0.0;
  double anchor_construction = 0.0;
  double training = 0.0;
  double readout = 0.0;

  double total() const { return graph_construction + anchor_construction + training + readout; }
};

struct Detection {
  std::vector<std::string> ids;
  std::vector<int> labels;  // per message, 0..k-1
  int k = 0;
  bool degenerate = false;

  ThresholdSearch search;
  double tau = 0.0;
  int message_edges = 0;
  int dropped_edges = 0;
  int anchors = 0;
  int anchor_edges = 0;
  int pruned_anchors = 0;

  std::vector<EpochRecord> history;
  int best_epoch = -1;
  bool stopped_early = false;
  LossComponents final_loss;
  std::optional<model::ModelParams> params;
  // Leaf-layer latent of each message's anchor, one row per message.
  Eigen::MatrixXd latents;
  double kappa = -1.0;

  MessageGraph message_graph;
  AnchorMembership membership;
  StageTimings timings;
};

/// Full detection over one set of messages. Failures surface as StageError.
Detection detect(std::span<const MessageRecord> messages, const RunConfig& config);

struct RunOptions {
  RunMode mode = RunMode::kOffline;
  // Wall-clock stage timings make the report differ between runs.
  bool report_timings = true;
  bool dump_graph = false;
  bool dump_anchors = false;
  bool write_checkpoint = true;
};

struct RunSummary {
  std::vector<MessageBlock> blocks;  // a single block in offline mode
  std::vector<Detection> detections;
  std::string report;  // JSON text as written
};

/// Runs detection and writes labels.tsv, report.json, latents.tsv and
/// optional sidecars into `out_dir`.
RunSummary run_detect(const std::vector<MessageRecord>& corpus, const RunConfig& config, const RunOptions& options,
                      const std::filesystem::path& out_dir);

void write_labels(std::ostream& out, std::span<const std::string> ids, std::span<const int> labels);
std::vector<std::pair<std::string, int>> read_labels(std::istream& in);
std::vector<std::pair<std::string, int>> read_labels(const std::filesystem::path& path);

/// Scores the labels against the corpus ground truth.
metrics::Scores evaluate(const std::vector<std::pair<std::string, int>>& labels,
                         const std::vector<MessageRecord>& corpus);
/// "NMI\t0.xxxx" style lines, four decimals.
std::string format_scores(const metrics::Scores& s);

struct LatentSet {
  std::vector<std::string> ids;
  std::vector<int> labels;
  Eigen::MatrixXd points;
  double kappa = -1.0;
};

void write_latents(std::ostream& out, const LatentSet& set);
LatentSet read_latents(std::istream& in);
LatentSet read_latents(const std::filesystem::path& path);

/// Origin log map, projection onto the two leading right singular directions,
/// origin exp map back into the ball of the same curvature. Returns n x 2.
Eigen::MatrixXd disc_coordinates(const Eigen::MatrixXd& points, double kappa);
void export_disc(const LatentSet& set, std::ostream& csv);

struct Checkpoint {
  std::uint64_t seed = 0;
  model::ModelParams params;
};

void save_checkpoint(std::ostream& out, const model::ModelParams& params, std::uint64_t seed);
Checkpoint load_checkpoint(std::istream& in);

}  // namespace hypersed
