#include "hypersed/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <random>
#include <sstream>
#include <unordered_set>

#include "json.hpp"

namespace hypersed {

using nlohmann::json;
using namespace std::chrono;

Timestamp parse_rfc3339(const std::string& text) {
  int y = 0, mo = 0, d = 0, h = 0, mi = 0, s = 0;
  int consumed = 0;
  if (std::sscanf(text.c_str(), "%4d-%2d-%2d%*1[Tt ]%2d:%2d:%2d%n", &y, &mo, &d, &h, &mi, &s, &consumed) != 6) {
    throw CorpusError("invalid RFC3339 timestamp \"" + text + "\"");
  }
  const year_month_day ymd{year{y}, month{static_cast<unsigned>(mo)}, day{static_cast<unsigned>(d)}};
  if (!ymd.ok() || h > 23 || mi > 59 || s > 60) {
    throw CorpusError("invalid RFC3339 timestamp \"" + text + "\"");
  }
  std::size_t pos = static_cast<std::size_t>(consumed);
  long long millis = 0;
  if (pos < text.size() && text[pos] == '.') {
    ++pos;
    int digits = 0;
    long long frac = 0;
    while (pos < text.size() && std::isdigit(static_cast<unsigned char>(text[pos]))) {
      if (digits < 3) {
        frac = frac * 10 + (text[pos] - '0');
        ++digits;
      }
      ++pos;
    }
    if (digits == 0) throw CorpusError("invalid RFC3339 fraction in \"" + text + "\"");
    while (digits < 3) {
      frac *= 10;
      ++digits;
    }
    millis = frac;
  }
  long long offset_min = 0;
  if (pos < text.size() && (text[pos] == 'Z' || text[pos] == 'z')) {
    ++pos;
  } else if (pos < text.size() && (text[pos] == '+' || text[pos] == '-')) {
    int oh = 0, om = 0;
    if (std::sscanf(text.c_str() + pos + 1, "%2d:%2d", &oh, &om) != 2 || oh > 23 || om > 59) {
      throw CorpusError("invalid RFC3339 offset in \"" + text + "\"");
    }
    offset_min = (text[pos] == '+' ? 1 : -1) * (oh * 60LL + om);
    pos += 6;
  } else {
    throw CorpusError("RFC3339 timestamp \"" + text + "\" lacks a zone designator");
  }
  if (pos != text.size()) throw CorpusError("trailing characters in timestamp \"" + text + "\"");
  const sys_days days{ymd};
  return time_point_cast<milliseconds>(days) + hours{h} + minutes{mi} + seconds{s} + milliseconds{millis} -
         minutes{offset_min};
}

std::string format_rfc3339(Timestamp t) {
  const auto days = floor<std::chrono::days>(t);
  const year_month_day ymd{days};
  const hh_mm_ss<milliseconds> tod{t - days};
  char buf[40];
  const auto ms = tod.subseconds().count();
  if (ms != 0) {
    std::snprintf(buf, sizeof buf, "%04d-%02u-%02uT%02ld:%02ld:%02lld.%03lldZ", static_cast<int>(ymd.year()),
                  static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()),
                  static_cast<long>(tod.hours().count()), static_cast<long>(tod.minutes().count()),
                  static_cast<long long>(tod.seconds().count()), static_cast<long long>(ms));
  } else {
    std::snprintf(buf, sizeof buf, "%04d-%02u-%02uT%02ld:%02ld:%02lldZ", static_cast<int>(ymd.year()),
                  static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()),
                  static_cast<long>(tod.hours().count()), static_cast<long>(tod.minutes().count()),
                  static_cast<long long>(tod.seconds().count()));
  }
  return buf;
}

namespace {

MessageRecord parse_line(const std::string& line, int line_no) {
  auto fail = [line_no](const std::string& what) -> CorpusError {
    return CorpusError("line " + std::to_string(line_no) + ": " + what);
  };
  json j;
  try {
    j = json::parse(line);
  } catch (const json::parse_error& e) {
    throw fail(std::string("malformed JSON (") + e.what() + ")");
  }
  if (!j.is_object()) throw fail("expected a JSON object");
  MessageRecord m;
  if (!j.contains("id") || !j["id"].is_string()) throw fail("missing string field \"id\"");
  m.id = j["id"].get<std::string>();
  if (!j.contains("timestamp") || !j["timestamp"].is_string()) throw fail("missing string field \"timestamp\"");
  try {
    m.timestamp = parse_rfc3339(j["timestamp"].get<std::string>());
  } catch (const CorpusError& e) {
    throw fail(e.what());
  }
  if (!j.contains("embedding") || !j["embedding"].is_array()) throw fail("missing array field \"embedding\"");
  const auto& emb = j["embedding"];
  if (emb.empty()) throw fail("empty embedding");
  m.embedding.resize(static_cast<Eigen::Index>(emb.size()));
  for (std::size_t k = 0; k < emb.size(); ++k) {
    if (!emb[k].is_number()) throw fail("embedding entry " + std::to_string(k) + " is not a number");
    m.embedding[static_cast<Eigen::Index>(k)] = emb[k].get<double>();
  }
  if (!m.embedding.allFinite()) throw fail("embedding has non-finite entries");
  if (j.contains("attributes")) {
    if (!j["attributes"].is_array()) throw fail("\"attributes\" must be an array of strings");
    for (const auto& a : j["attributes"]) {
      if (!a.is_string()) throw fail("\"attributes\" must be an array of strings");
      m.attributes.push_back(a.get<std::string>());
    }
  }
  if (j.contains("label") && !j["label"].is_null()) {
    if (!j["label"].is_number_integer()) throw fail("\"label\" must be an integer");
    m.label = j["label"].get<int>();
  }
  return m;
}

}  // namespace

std::vector<MessageRecord> ingest(std::istream& in) {
  std::vector<MessageRecord> out;
  std::unordered_set<std::string> ids;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    MessageRecord m = parse_line(line, line_no);
    if (!out.empty() && m.embedding.size() != out.front().embedding.size()) {
      throw CorpusError("line " + std::to_string(line_no) + ": embedding dimension " +
                        std::to_string(m.embedding.size()) + " differs from corpus dimension " +
                        std::to_string(out.front().embedding.size()));
    }
    if (!ids.insert(m.id).second) {
      throw CorpusError("line " + std::to_string(line_no) + ": duplicate id \"" + m.id + "\"");
    }
    out.push_back(std::move(m));
  }
  if (out.empty()) throw CorpusError("empty corpus");
  return out;
}

std::vector<MessageRecord> ingest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw CorpusError("cannot open corpus file " + path.string());
  return ingest(in);
}

void write_message(std::ostream& out, const MessageRecord& m) {
  json j;
  j["id"] = m.id;
  j["timestamp"] = format_rfc3339(m.timestamp);
  j["embedding"] = std::vector<double>(m.embedding.data(), m.embedding.data() + m.embedding.size());
  j["attributes"] = m.attributes;
  if (m.label) j["label"] = *m.label;
  out << j.dump() << '\n';
}

void write_corpus(std::ostream& out, const std::vector<MessageRecord>& messages) {
  for (const auto& m : messages) write_message(out, m);
}

void write_corpus(const std::filesystem::path& path, const std::vector<MessageRecord>& messages) {
  std::ofstream out(path);
  if (!out) throw CorpusError("cannot write corpus file " + path.string());
  write_corpus(out, messages);
}

SynthCorpus synth(const SynthOptions& o) {
  if (o.n < 1 || o.k_events < 1 || o.dim < 1) throw std::invalid_argument("synth: n, k and dim must be positive");
  if (o.k_events > o.n) throw std::invalid_argument("synth: more events than messages");
  if (!(o.noise >= 0.0)) throw std::invalid_argument("synth: noise must be nonnegative");
  if (!(o.days > 0.0)) throw std::invalid_argument("synth: day span must be positive");

  std::mt19937_64 rng(o.seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  SynthCorpus out;
  out.centers.resize(o.k_events, o.dim);
  constexpr int kMaxAttempts = 10000;
  for (int e = 0; e < o.k_events; ++e) {
    bool placed = false;
    for (int attempt = 0; attempt < kMaxAttempts && !placed; ++attempt) {
      Eigen::VectorXd c(o.dim);
      for (int d = 0; d < o.dim; ++d) c[d] = gauss(rng);
      if (c.norm() == 0.0) continue;
      c.normalize();
      placed = true;
      for (int f = 0; f < e && placed; ++f) placed = out.centers.row(f).dot(c) <= 0.5;
      if (placed) out.centers.row(e) = c.transpose();
    }
    if (!placed) {
      throw std::invalid_argument("synth: cannot place " + std::to_string(o.k_events) +
                                  " centres 60 degrees apart in dimension " + std::to_string(o.dim));
    }
  }

  const int users = o.user_pool > 0 ? o.user_pool : std::max(10, o.n / 10);
  std::uniform_int_distribution<int> pick_user(0, users - 1);
  std::uniform_int_distribution<int> pick_event_tag(0, std::max(1, o.hashtags_per_event) - 1);
  std::uniform_int_distribution<int> pick_global_tag(0, std::max(1, o.global_hashtags) - 1);
  std::uniform_int_distribution<int> tag_count(1, 2);
  std::bernoulli_distribution from_event(o.event_hashtag_prob);
  const auto span_ms = static_cast<long long>(o.days * 86400000.0);
  std::uniform_int_distribution<long long> pick_time(0, std::max<long long>(0, span_ms - 1));

  std::vector<MessageRecord> msgs(o.n);
  for (int i = 0; i < o.n; ++i) {
    const int e = i % o.k_events;
    MessageRecord& m = msgs[i];
    m.id = "m" + std::to_string(i);
    m.label = e;
    Eigen::VectorXd v = out.centers.row(e).transpose();
    for (int d = 0; d < o.dim; ++d) v[d] += o.noise * gauss(rng);
    m.embedding = v.normalized();
    m.attributes.push_back("user:u" + std::to_string(pick_user(rng)));
    const int tags = tag_count(rng);
    for (int t = 0; t < tags; ++t) {
      std::string tag = from_event(rng) ? "hashtag:e" + std::to_string(e) + "_" + std::to_string(pick_event_tag(rng))
                                        : "hashtag:g" + std::to_string(pick_global_tag(rng));
      if (std::find(m.attributes.begin(), m.attributes.end(), tag) == m.attributes.end()) {
        m.attributes.push_back(std::move(tag));
      }
    }
    m.timestamp = o.start + milliseconds{pick_time(rng)};
  }
  std::stable_sort(msgs.begin(), msgs.end(),
                   [](const MessageRecord& a, const MessageRecord& b) { return a.timestamp < b.timestamp; });
  out.messages = std::move(msgs);
  return out;
}

std::vector<MessageBlock> split_blocks(const std::vector<MessageRecord>& messages) {
  std::vector<MessageBlock> blocks;
  if (messages.empty()) return blocks;
  Timestamp t_min = messages.front().timestamp;
  for (const auto& m : messages) t_min = std::min(t_min, m.timestamp);
  const Timestamp first_end = t_min + days{7};
  // window 0 is the first week, window j >= 1 is day j after it
  std::vector<std::vector<int>> buckets;
  for (std::size_t i = 0; i < messages.size(); ++i) {
    const Timestamp t = messages[i].timestamp;
    std::size_t w = 0;
    if (t >= first_end) w = 1 + static_cast<std::size_t>(floor<days>(t - first_end).count());
    if (buckets.size() <= w) buckets.resize(w + 1);
    buckets[w].push_back(static_cast<int>(i));
  }
  for (std::size_t w = 0; w < buckets.size(); ++w) {
    if (buckets[w].empty()) continue;
    MessageBlock b;
    b.start = w == 0 ? t_min : first_end + days{static_cast<int>(w - 1)};
    b.end = w == 0 ? first_end : b.start + days{1};
    b.indices = std::move(buckets[w]);
    blocks.push_back(std::move(b));
  }
  return blocks;
}

}  // namespace hypersed
