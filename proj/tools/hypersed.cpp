// Command-line front end: synth, ingest-check, blocks, detect, evaluate,
// export-disc. Exit status 0 on success, 1 for usage errors, otherwise the
// stage code from hypersed::exit_code().

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "hypersed/corpus.hpp"
#include "hypersed/pipeline.hpp"

namespace fs = std::filesystem;
using namespace hypersed;

namespace {

int fail(Stage stage, const std::string& what) {
  std::cerr << "hypersed: " << to_string(stage) << ": " << what << '\n';
  return exit_code(stage);
}

std::vector<MessageRecord> load_corpus(const fs::path& path) {
  try {
    return ingest(path);
  } catch (const std::exception& e) {
    throw StageError(Stage::kIngest, e.what());
  }
}

int cmd_synth(const SynthOptions& o, const fs::path& out) {
  SynthCorpus c;
  try {
    c = synth(o);
  } catch (const std::exception& e) {
    return fail(Stage::kConfig, e.what());
  }
  try {
    write_corpus(out, c.messages);
  } catch (const std::exception& e) {
    return fail(Stage::kOutput, e.what());
  }
  std::cout << "wrote " << c.messages.size() << " messages (" << o.k_events << " events) to " << out.string() << '\n';
  return 0;
}

int cmd_ingest_check(const fs::path& corpus) {
  const auto msgs = load_corpus(corpus);
  std::size_t labelled = 0;
  for (const auto& m : msgs) labelled += m.label.has_value();
  std::cout << "messages\t" << msgs.size() << "\nembedding_dim\t" << msgs.front().embedding.size() << "\nlabelled\t"
            << labelled << '\n';
  return 0;
}

int cmd_blocks(const fs::path& corpus) {
  const auto msgs = load_corpus(corpus);
  std::cout << "block\tstart\tend\tmessages\n";
  const auto blocks = split_blocks(msgs);
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    std::cout << b << '\t' << format_rfc3339(blocks[b].start) << '\t' << format_rfc3339(blocks[b].end) << '\t'
              << blocks[b].indices.size() << '\n';
  }
  return 0;
}

int cmd_detect(const fs::path& corpus, const std::optional<fs::path>& config_path, const std::string& mode,
               const fs::path& out, std::optional<std::uint64_t> seed, const RunOptions& base) {
  RunConfig config;
  RunOptions options = base;
  try {
    if (config_path) config = load_run_config(*config_path);
    if (seed) config.train.seed = *seed;
    options.mode = parse_mode(mode);
    config.validate();
  } catch (const std::exception& e) {
    return fail(Stage::kConfig, e.what());
  }
  const auto msgs = load_corpus(corpus);
  const RunSummary s = run_detect(msgs, config, options, out);
  int k = 0;
  for (const auto& d : s.detections) k += d.k;
  std::cout << "mode\t" << to_string(options.mode) << "\nblocks\t" << s.blocks.size() << "\nK\t" << k << "\nout\t"
            << out.string() << '\n';
  return 0;
}

int cmd_evaluate(const fs::path& labels_path, const fs::path& corpus, const std::optional<fs::path>& out) {
  const auto msgs = load_corpus(corpus);
  std::string text;
  try {
    text = format_scores(evaluate(read_labels(labels_path), msgs));
  } catch (const std::exception& e) {
    return fail(Stage::kEvaluate, e.what());
  }
  std::cout << text;
  if (out) {
    std::ofstream f(*out);
    if (!(f << text)) return fail(Stage::kOutput, "cannot write " + out->string());
  }
  return 0;
}

int cmd_export_disc(const fs::path& latents, const fs::path& out) {
  LatentSet set;
  try {
    set = read_latents(latents);
  } catch (const std::exception& e) {
    return fail(Stage::kIngest, e.what());
  }
  std::ofstream f(out);
  if (!f) return fail(Stage::kOutput, "cannot write " + out.string());
  try {
    export_disc(set, f);
  } catch (const std::exception& e) {
    return fail(Stage::kReadout, e.what());
  }
  std::cout << "wrote " << set.ids.size() << " points to " << out.string() << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Unsupervised social event detection on the Poincare ball"};
  app.require_subcommand(1);

  SynthOptions so;
  fs::path synth_out;
  auto* synth_cmd = app.add_subcommand("synth", "Generate a planted-partition corpus");
  synth_cmd->add_option("--n", so.n, "Messages")->capture_default_str();
  synth_cmd->add_option("--k", so.k_events, "Events")->capture_default_str();
  synth_cmd->add_option("--dim", so.dim, "Embedding dimension")->capture_default_str();
  synth_cmd->add_option("--noise", so.noise, "Gaussian noise scale")->capture_default_str();
  synth_cmd->add_option("--seed", so.seed, "Random seed")->capture_default_str();
  synth_cmd->add_option("--days", so.days, "Timestamp span in days")->capture_default_str();
  synth_cmd->add_option("--users", so.user_pool, "User pool size (0: max(10, n/10))")->capture_default_str();
  synth_cmd->add_option("--out", synth_out, "Output corpus (JSON lines)")->required();

  fs::path check_corpus;
  auto* check_cmd = app.add_subcommand("ingest-check", "Validate a corpus file");
  check_cmd->add_option("corpus", check_corpus)->required();

  fs::path blocks_corpus;
  auto* blocks_cmd = app.add_subcommand("blocks", "List online message blocks");
  blocks_cmd->add_option("corpus", blocks_corpus)->required();

  fs::path det_corpus, det_out;
  std::optional<fs::path> det_config;
  std::optional<std::uint64_t> det_seed;
  std::string det_mode = "offline";
  RunOptions det_opts;
  bool no_timings = false, no_checkpoint = false;
  auto* det_cmd = app.add_subcommand("detect", "Run event detection");
  det_cmd->add_option("--corpus", det_corpus, "Input corpus")->required();
  det_cmd->add_option("--config", det_config, "Run configuration (JSON)");
  det_cmd->add_option("--mode", det_mode, "offline or online")->capture_default_str();
  det_cmd->add_option("--out", det_out, "Output directory")->required();
  det_cmd->add_option("--seed", det_seed, "Override the configured seed");
  det_cmd->add_flag("--no-timings", no_timings, "Leave wall-clock timings out of the report");
  det_cmd->add_flag("--no-checkpoint", no_checkpoint, "Skip writing parameter checkpoints");
  det_cmd->add_flag("--dump-graph", det_opts.dump_graph, "Write the message graph and its id mapping");
  det_cmd->add_flag("--dump-anchors", det_opts.dump_anchors, "Write the message to anchor assignment");

  fs::path ev_labels, ev_corpus;
  std::optional<fs::path> ev_out;
  auto* ev_cmd = app.add_subcommand("evaluate", "Score a labels file against corpus ground truth");
  ev_cmd->add_option("--labels", ev_labels)->required();
  ev_cmd->add_option("--corpus", ev_corpus)->required();
  ev_cmd->add_option("--out", ev_out, "Also write the scores here");

  fs::path disc_latents, disc_out;
  auto* disc_cmd = app.add_subcommand("export-disc", "Project latents onto the 2D disc");
  disc_cmd->add_option("--latents", disc_latents, "latents.tsv from detect")->required();
  disc_cmd->add_option("--out", disc_out, "CSV output")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*synth_cmd) return cmd_synth(so, synth_out);
    if (*check_cmd) return cmd_ingest_check(check_corpus);
    if (*blocks_cmd) return cmd_blocks(blocks_corpus);
    if (*det_cmd) {
      det_opts.report_timings = !no_timings;
      det_opts.write_checkpoint = !no_checkpoint;
      return cmd_detect(det_corpus, det_config, det_mode, det_out, det_seed, det_opts);
    }
    if (*ev_cmd) return cmd_evaluate(ev_labels, ev_corpus, ev_out);
    if (*disc_cmd) return cmd_export_disc(disc_latents, disc_out);
  } catch (const StageError& e) {
    std::cerr << "hypersed: " << e.what() << '\n';
    return exit_code(e.stage());
  }
  return 1;
}
