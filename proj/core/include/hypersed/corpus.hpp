#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

#include "hypersed/graph_build.hpp"

namespace hypersed {

class CorpusError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Parses "YYYY-MM-DDTHH:MM:SS[.fff](Z|+hh:mm|-hh:mm)".
Timestamp parse_rfc3339(const std::string& text);
/// UTC, "Z" suffix, milliseconds only when nonzero.
std::string format_rfc3339(Timestamp t);

/// JSON-lines corpus, one message object per line. Blank lines are skipped.
std::vector<MessageRecord> ingest(std::istream& in);
std::vector<MessageRecord> ingest(const std::filesystem::path& path);

void write_message(std::ostream& out, const MessageRecord& m);
void write_corpus(std::ostream& out, const std::vector<MessageRecord>& messages);
void write_corpus(const std::filesystem::path& path, const std::vector<MessageRecord>& messages);

struct SynthOptions {
  int n = 500;
  int k_events = 10;
  int dim = 16;
  double noise = 0.1;
  std::uint64_t seed = 0;
  double days = 1.0;
  int user_pool = 0;  // 0: max(10, n / 10)
  int hashtags_per_event = 5;
  int global_hashtags = 20;
  double event_hashtag_prob = 0.9;
  Timestamp start = parse_rfc3339("2024-01-01T00:00:00Z");
};

struct SynthCorpus {
  std::vector<MessageRecord> messages;
  Eigen::MatrixXd centers;  // k x dim, unit rows
};

/// Planted-partition corpus: unit-norm event centres with pairwise angle of
/// at least 60 degrees, messages = normalize(centre + noise * gaussian).
SynthCorpus synth(const SynthOptions& options);

struct MessageBlock {
  Timestamp start;
  Timestamp end;  // exclusive
  std::vector<int> indices;
};

/// First block covers [t_min, t_min + 7d), then consecutive one-day windows.
/// Empty windows are skipped; indices keep corpus order.
std::vector<MessageBlock> split_blocks(const std::vector<MessageRecord>& messages);

}  // namespace hypersed
