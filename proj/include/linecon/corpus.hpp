#pragma once

// Conversation corpora: the JSON-lines manifest, the LCFEAT01 feature
// matrix, structural validation and a seeded synthetic generator.
//
// Manifest layout (UTF-8, one JSON object per line):
//   line 1   {"version":1,"emotions":["anger",...],"feature_dim":768}
//            (feature_dim optional)
//   line 2+  {"conv_id":"c1","utterances":[{"utt_id":"u1","text":"...",
//            "speaker":"A","emotion":"joy","sentiment":2,"split":"train"},...]}
// Blank lines are ignored. "text" and "speaker" are optional.
//
// Feature file layout: "LCFEAT01", rows:u32, cols:u32, rows*cols float32,
// all little-endian, row-major. Row i belongs to the i-th utterance in
// corpus traversal order.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "linecon/binary_io.hpp"
#include "linecon/matrix.hpp"
#include "linecon/random.hpp"

namespace linecon {

enum class Split : std::uint8_t { train = 0, dev = 1, test = 2 };

inline const char* to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::dev: return "dev";
    case Split::test: return "test";
  }
  return "?";
}

inline std::optional<Split> parse_split(std::string_view s) {
  if (s == "train") return Split::train;
  if (s == "dev") return Split::dev;
  if (s == "test") return Split::test;
  return std::nullopt;
}

// 3-way sentiment codes.
enum Sentiment : std::uint32_t { kNegative = 0, kNeutral = 1, kPositive = 2 };
inline constexpr std::uint32_t kSentimentCount = 3;

struct Utterance {
  std::string utt_id;
  std::optional<std::string> text;
  // Kept for round-trip fidelity only; no model path reads it.
  std::optional<std::string> speaker;
  std::uint32_t emotion = 0;
  std::uint32_t sentiment = kNeutral;
  Split split = Split::train;

  friend bool operator==(const Utterance&, const Utterance&) = default;
};

struct Conversation {
  std::string conv_id;
  std::vector<Utterance> utterances;

  friend bool operator==(const Conversation&, const Conversation&) = default;
};

struct Corpus {
  std::vector<Conversation> conversations;
  std::vector<std::string> emotion_vocab;
  Matrix features;

  std::size_t utterance_count() const {
    std::size_t n = 0;
    for (const auto& c : conversations) n += c.utterances.size();
    return n;
  }
  std::size_t feature_dim() const { return features.cols(); }

  friend bool operator==(const Corpus&, const Corpus&) = default;
};

struct ValidationIssue {
  std::string location;
  std::string message;
};

struct ValidationReport {
  std::vector<ValidationIssue> errors;
  std::vector<ValidationIssue> warnings;

  bool ok() const { return errors.empty(); }
};

// ---------------------------------------------------------------------------
// Feature files

inline constexpr std::string_view kFeatureMagic = "LCFEAT01";

inline void write_features(const Matrix& features, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  bin::Writer w(out);
  w.magic(kFeatureMagic);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(features.rows()));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(features.cols()));
  for (double v : features.values()) w.put<float>(static_cast<float>(v));
  w.check();
}

inline Matrix read_features(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open feature file " + path.string());
  bin::Reader r(in, path.string());
  r.expect_magic(kFeatureMagic);
  const auto rows = r.get<std::uint32_t>();
  const auto cols = r.get<std::uint32_t>();
  Matrix m(rows, cols);
  for (double& v : m.values()) v = static_cast<double>(r.get<float>());
  r.expect_eof();
  return m;
}

// ---------------------------------------------------------------------------
// Manifest

namespace detail {

inline std::string line_prefix(const std::string& path, std::size_t line) {
  return path + ":" + std::to_string(line) + ": ";
}

inline Utterance parse_utterance(const nlohmann::json& j, const std::unordered_map<std::string, std::uint32_t>& vocab,
                                 const std::string& where) {
  if (!j.is_object()) throw FormatError(where + "utterance is not an object");
  Utterance u;
  if (!j.contains("utt_id") || !j["utt_id"].is_string()) throw FormatError(where + "utterance without string utt_id");
  u.utt_id = j["utt_id"].get<std::string>();
  if (auto it = j.find("text"); it != j.end() && !it->is_null()) {
    if (!it->is_string()) throw FormatError(where + "text of " + u.utt_id + " is not a string");
    u.text = it->get<std::string>();
  }
  if (auto it = j.find("speaker"); it != j.end() && !it->is_null()) {
    if (!it->is_string()) throw FormatError(where + "speaker of " + u.utt_id + " is not a string");
    u.speaker = it->get<std::string>();
  }
  if (!j.contains("emotion") || !j["emotion"].is_string()) throw FormatError(where + "utterance " + u.utt_id + " without emotion name");
  const auto name = j["emotion"].get<std::string>();
  auto found = vocab.find(name);
  if (found == vocab.end()) throw FormatError(where + "unknown emotion name '" + name + "'");
  u.emotion = found->second;
  if (!j.contains("sentiment")) throw FormatError(where + "utterance " + u.utt_id + " is missing its sentiment label");
  if (!j["sentiment"].is_number_unsigned()) throw FormatError(where + "sentiment of " + u.utt_id + " is not a non-negative integer");
  u.sentiment = j["sentiment"].get<std::uint32_t>();
  if (!j.contains("split") || !j["split"].is_string()) throw FormatError(where + "utterance " + u.utt_id + " without split");
  auto split = parse_split(j["split"].get<std::string>());
  if (!split) throw FormatError(where + "split must be train, dev or test");
  u.split = *split;
  return u;
}

}  // namespace detail

struct Manifest {
  std::vector<Conversation> conversations;
  std::vector<std::string> emotion_vocab;
  std::optional<std::size_t> feature_dim;
};

inline Manifest read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open manifest " + path.string());
  const std::string name = path.string();
  Manifest manifest;
  std::unordered_map<std::string, std::uint32_t> vocab;
  bool have_header = false;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = detail::line_prefix(name, line_no);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw FormatError(where + "malformed manifest line: " + e.what());
    }
    if (!j.is_object()) throw FormatError(where + "malformed manifest line: not an object");
    if (!have_header) {
      if (!j.contains("version") || j["version"] != 1) throw FormatError(where + "header must declare \"version\": 1");
      if (!j.contains("emotions") || !j["emotions"].is_array()) throw FormatError(where + "header must declare the emotion vocabulary");
      for (const auto& e : j["emotions"]) {
        if (!e.is_string()) throw FormatError(where + "emotion names must be strings");
        manifest.emotion_vocab.push_back(e.get<std::string>());
        vocab.emplace(manifest.emotion_vocab.back(), static_cast<std::uint32_t>(manifest.emotion_vocab.size() - 1));
      }
      if (auto it = j.find("feature_dim"); it != j.end()) {
        if (!it->is_number_unsigned()) throw FormatError(where + "feature_dim must be a non-negative integer");
        manifest.feature_dim = it->get<std::size_t>();
      }
      have_header = true;
      continue;
    }
    Conversation conv;
    if (!j.contains("conv_id") || !j["conv_id"].is_string()) throw FormatError(where + "malformed manifest line: missing conv_id");
    conv.conv_id = j["conv_id"].get<std::string>();
    if (!j.contains("utterances") || !j["utterances"].is_array())
      throw FormatError(where + "malformed manifest line: missing utterances array");
    for (const auto& uj : j["utterances"]) conv.utterances.push_back(detail::parse_utterance(uj, vocab, where));
    manifest.conversations.push_back(std::move(conv));
  }
  if (!have_header) throw FormatError(name + ": empty manifest (no header line)");
  return manifest;
}

inline void write_manifest(const Corpus& corpus, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  nlohmann::json header = {{"version", 1}, {"emotions", corpus.emotion_vocab}, {"feature_dim", corpus.feature_dim()}};
  out << header.dump() << '\n';
  for (const auto& conv : corpus.conversations) {
    nlohmann::json utts = nlohmann::json::array();
    for (const auto& u : conv.utterances) {
      nlohmann::json uj;
      uj["utt_id"] = u.utt_id;
      if (u.text) uj["text"] = *u.text;
      if (u.speaker) uj["speaker"] = *u.speaker;
      uj["emotion"] = corpus.emotion_vocab.at(u.emotion);
      uj["sentiment"] = u.sentiment;
      uj["split"] = to_string(u.split);
      utts.push_back(std::move(uj));
    }
    nlohmann::json cj = {{"conv_id", conv.conv_id}, {"utterances", std::move(utts)}};
    out << cj.dump() << '\n';
  }
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

inline Corpus load_corpus(const std::filesystem::path& manifest_path, const std::filesystem::path& features_path) {
  Manifest manifest = read_manifest(manifest_path);
  Corpus corpus{std::move(manifest.conversations), std::move(manifest.emotion_vocab), read_features(features_path)};
  const std::size_t m = corpus.utterance_count();
  if (corpus.features.rows() != m)
    throw FormatError("feature-row count mismatch: manifest has " + std::to_string(m) + " utterances, feature file has " +
                      std::to_string(corpus.features.rows()) + " rows");
  if (manifest.feature_dim && *manifest.feature_dim != corpus.features.cols())
    throw FormatError("feature dim mismatch: manifest header declares " + std::to_string(*manifest.feature_dim) +
                      ", feature file has " + std::to_string(corpus.features.cols()) + " columns");
  return corpus;
}

inline void save_corpus(const Corpus& corpus, const std::filesystem::path& manifest_path,
                        const std::filesystem::path& features_path) {
  write_manifest(corpus, manifest_path);
  write_features(corpus.features, features_path);
}

// ---------------------------------------------------------------------------
// Validation

inline ValidationReport validate_corpus(const Corpus& corpus) {
  ValidationReport report;
  auto error = [&](std::string loc, std::string msg) { report.errors.push_back({std::move(loc), std::move(msg)}); };
  auto warn = [&](std::string loc, std::string msg) { report.warnings.push_back({std::move(loc), std::move(msg)}); };

  std::map<std::string, std::size_t> emotion_seen;
  for (std::size_t e = 0; e < corpus.emotion_vocab.size(); ++e) {
    auto [it, fresh] = emotion_seen.emplace(corpus.emotion_vocab[e], e);
    if (!fresh)
      error("emotion_vocab[" + std::to_string(e) + "]",
            "duplicate emotion name '" + it->first + "' (also at index " + std::to_string(it->second) + ")");
  }
  if (corpus.emotion_vocab.size() < 2) warn("emotion_vocab", "fewer than two emotion classes");

  std::unordered_map<std::string, std::string> utt_seen;
  std::unordered_map<std::string, std::size_t> conv_seen;
  std::size_t split_counts[3] = {0, 0, 0};
  for (std::size_t c = 0; c < corpus.conversations.size(); ++c) {
    const auto& conv = corpus.conversations[c];
    const std::string cloc = "conversation " + std::to_string(c) + " (" + conv.conv_id + ")";
    if (conv.utterances.empty()) error(cloc, "empty conversation");
    if (auto [it, fresh] = conv_seen.emplace(conv.conv_id, c); !fresh)
      warn(cloc, "conv_id also used by conversation " + std::to_string(it->second));
    for (std::size_t u = 0; u < conv.utterances.size(); ++u) {
      const auto& utt = conv.utterances[u];
      const std::string uloc = cloc + " utterance " + std::to_string(u) + " (" + utt.utt_id + ")";
      if (auto [it, fresh] = utt_seen.emplace(utt.utt_id, uloc); !fresh)
        error(uloc, "duplicate utt_id '" + utt.utt_id + "' (first seen at " + it->second + ")");
      if (utt.emotion >= corpus.emotion_vocab.size())
        error(uloc, "emotion index " + std::to_string(utt.emotion) + " out of range");
      if (utt.sentiment >= kSentimentCount) error(uloc, "sentiment out of range (" + std::to_string(utt.sentiment) + ")");
      ++split_counts[static_cast<int>(utt.split)];
    }
  }

  const std::size_t m = corpus.utterance_count();
  if (corpus.features.rows() != m)
    error("features", "feature-row count mismatch: " + std::to_string(corpus.features.rows()) + " rows for " +
                          std::to_string(m) + " utterances");
  if (!all_finite(corpus.features)) error("features", "non-finite feature values");
  if (split_counts[0] == 0) warn("splits", "no train utterances");
  if (split_counts[1] == 0) warn("splits", "no dev utterances");
  if (split_counts[2] == 0) warn("splits", "no test utterances");
  return report;
}

inline nlohmann::json to_json(const ValidationReport& report) {
  auto issues = [](const std::vector<ValidationIssue>& v) {
    nlohmann::json a = nlohmann::json::array();
    for (const auto& i : v) a.push_back({{"location", i.location}, {"message", i.message}});
    return a;
  };
  return {{"ok", report.ok()}, {"errors", issues(report.errors)}, {"warnings", issues(report.warnings)}};
}

// ---------------------------------------------------------------------------
// Synthetic corpora

struct SynthOptions {
  std::uint64_t seed = 7;
  std::size_t n_convs = 200;
  std::size_t min_len = 3;
  std::size_t max_len = 8;
  std::size_t n_classes = 4;
  std::size_t dim = 16;
  double noise = 0.3;
  // Probability that an utterance keeps the previous utterance's emotion.
  // Below 1, label switches inside a conversation make neighbours disagree
  // and a 2-layer GCN can no longer separate every node even at noise 0.
  double persistence = 1.0;
};

inline std::uint32_t synth_sentiment_of(std::uint32_t emotion) { return emotion % kSentimentCount; }

// Class k has mean e_k (the k-th standard basis vector of R^dim); each
// utterance is its class mean plus N(0, noise^2) per coordinate, rounded to
// float32 so the in-memory corpus equals what the feature file stores.
// Emotions follow a sticky chain within a conversation (see
// SynthOptions::persistence). Conversations are split 70/10/20 in order.
inline Corpus synth_corpus(const SynthOptions& opt) {
  if (opt.n_classes < 2) throw std::invalid_argument("synth_corpus: n_classes must be >= 2");
  if (opt.dim < opt.n_classes) throw std::invalid_argument("synth_corpus: dim must be >= n_classes");
  if (!(opt.noise >= 0.0)) throw std::invalid_argument("synth_corpus: noise must be >= 0");
  if (opt.n_convs < 1) throw std::invalid_argument("synth_corpus: n_convs must be >= 1");
  if (!(opt.persistence >= 0.0 && opt.persistence <= 1.0)) throw std::invalid_argument("synth_corpus: persistence must be in [0, 1]");
  if (opt.min_len < 1 || opt.max_len < opt.min_len) throw std::invalid_argument("synth_corpus: invalid length range");

  Rng rng(opt.seed);
  Corpus corpus;
  for (std::size_t k = 0; k < opt.n_classes; ++k) corpus.emotion_vocab.push_back("class" + std::to_string(k));

  const auto n_train = static_cast<std::size_t>(0.7 * static_cast<double>(opt.n_convs) + 0.5);
  const auto n_dev = static_cast<std::size_t>(0.1 * static_cast<double>(opt.n_convs) + 0.5);
  std::vector<double> rows;
  for (std::size_t c = 0; c < opt.n_convs; ++c) {
    Conversation conv;
    conv.conv_id = "c" + std::to_string(c);
    const Split split = c < n_train ? Split::train : (c < n_train + n_dev ? Split::dev : Split::test);
    const std::size_t len = opt.min_len + rng.below(opt.max_len - opt.min_len + 1);
    auto emotion = static_cast<std::uint32_t>(rng.below(opt.n_classes));
    for (std::size_t u = 0; u < len; ++u) {
      if (u > 0 && rng.uniform01() >= opt.persistence) {
        emotion = static_cast<std::uint32_t>(rng.below(opt.n_classes));
      }
      Utterance utt;
      utt.utt_id = conv.conv_id + "_u" + std::to_string(u);
      utt.text = "synthetic utterance " + std::to_string(u);
      utt.speaker = (u % 2 == 0) ? "A" : "B";
      utt.emotion = emotion;
      utt.sentiment = synth_sentiment_of(emotion);
      utt.split = split;
      for (std::size_t d = 0; d < opt.dim; ++d) {
        const double mean = d == emotion ? 1.0 : 0.0;
        const double x = opt.noise > 0.0 ? mean + rng.normal(0.0, opt.noise) : mean;
        rows.push_back(static_cast<double>(static_cast<float>(x)));
      }
      conv.utterances.push_back(std::move(utt));
    }
    corpus.conversations.push_back(std::move(conv));
  }
  const std::size_t m = rows.size() / opt.dim;
  corpus.features = Matrix(m, opt.dim, std::move(rows));
  return corpus;
}

}  // namespace linecon
