#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "linecon/linecon.hpp"

namespace fixtures {

// Three conversations of 3, 4 and 2 utterances (u1..u9); u8 neutral, u9 negative.
inline linecon::Corpus figure2_corpus(std::size_t dim = 2) {
  using namespace linecon;
  Corpus c;
  c.emotion_vocab = {"neutral", "joy", "sadness"};
  const std::vector<std::size_t> sizes{3, 4, 2};
  const std::uint32_t sentiments[9] = {kNeutral, kPositive, kPositive, kNegative, kNeutral,
                                       kNeutral, kPositive, kNeutral, kNegative};
  const std::uint32_t emotions[9] = {0, 1, 1, 2, 0, 0, 1, 0, 2};
  std::size_t node = 0;
  for (std::size_t ci = 0; ci < sizes.size(); ++ci) {
    Conversation conv{"C" + std::to_string(ci + 1), {}};
    for (std::size_t u = 0; u < sizes[ci]; ++u, ++node) {
      Utterance utt;
      utt.utt_id = "u" + std::to_string(node + 1);
      utt.text = "utterance " + std::to_string(node + 1);
      utt.speaker = u % 2 ? "B" : "A";
      utt.emotion = emotions[node];
      utt.sentiment = sentiments[node];
      utt.split = ci == 0 ? Split::train : (ci == 1 ? Split::dev : Split::test);
      conv.utterances.push_back(std::move(utt));
    }
    c.conversations.push_back(std::move(conv));
  }
  c.features = Matrix(9, dim);
  for (std::size_t i = 0; i < 9; ++i)
    for (std::size_t d = 0; d < dim; ++d) c.features(i, d) = 0.25 * static_cast<double>(i + 1) - 0.5 * static_cast<double>(d);
  return c;
}

// MELD-shaped corpus: the published per-split emotion supports spread over the
// predefined split's conversation counts (1039 train, 114 dev, 280 test).
// Features are a 4-dim placeholder.
inline const std::vector<std::string> kMeldEmotions{"anger", "disgust", "fear", "joy", "neutral", "sadness", "surprise"};
inline const std::size_t kMeldTrain[7] = {1109, 271, 268, 1743, 4710, 683, 1205};
inline const std::size_t kMeldTest[7] = {345, 68, 50, 402, 1256, 208, 281};
inline const std::size_t kMeldDev[7] = {153, 22, 40, 163, 470, 111, 150};

inline linecon::Corpus meld_shaped_corpus() {
  using namespace linecon;
  Corpus c;
  c.emotion_vocab = kMeldEmotions;
  auto add_split = [&](const std::size_t (&support)[7], std::size_t n_convs, Split split, const char* tag) {
    std::vector<std::uint32_t> labels;
    for (std::uint32_t e = 0; e < 7; ++e) labels.insert(labels.end(), support[e], e);
    // interleave labels so conversations mix emotions
    std::vector<std::uint32_t> mixed;
    for (std::size_t stride = 0; stride < 7; ++stride)
      for (std::size_t i = stride; i < labels.size(); i += 7) mixed.push_back(labels[i]);
    std::size_t next = 0;
    for (std::size_t ci = 0; ci < n_convs; ++ci) {
      const std::size_t len = mixed.size() / n_convs + (ci < mixed.size() % n_convs ? 1 : 0);
      Conversation conv{std::string(tag) + "_dia" + std::to_string(ci), {}};
      for (std::size_t u = 0; u < len; ++u, ++next) {
        Utterance utt;
        utt.utt_id = conv.conv_id + "_utt" + std::to_string(u);
        utt.emotion = mixed[next];
        utt.sentiment = mixed[next] == 3 ? kPositive : (mixed[next] == 4 || mixed[next] == 6 ? kNeutral : kNegative);
        utt.split = split;
        conv.utterances.push_back(std::move(utt));
      }
      c.conversations.push_back(std::move(conv));
    }
  };
  add_split(kMeldTrain, 1039, Split::train, "train");
  add_split(kMeldDev, 114, Split::dev, "dev");
  add_split(kMeldTest, 280, Split::test, "test");
  c.features = Matrix(c.utterance_count(), 4, 0.5);
  return c;
}

// Conversations of the given sizes with N(0,1) features and cycling labels/sentiments.
inline linecon::Corpus chain_corpus(const std::vector<std::size_t>& sizes, std::size_t dim, std::size_t n_classes,
                                    linecon::Rng& rng) {
  using namespace linecon;
  Corpus c;
  for (std::size_t k = 0; k < n_classes; ++k) c.emotion_vocab.push_back("e" + std::to_string(k));
  std::size_t node = 0;
  for (std::size_t ci = 0; ci < sizes.size(); ++ci) {
    Conversation conv{"c" + std::to_string(ci), {}};
    for (std::size_t u = 0; u < sizes[ci]; ++u, ++node) {
      Utterance utt;
      utt.utt_id = "n" + std::to_string(node);
      utt.speaker = u % 2 ? "B" : "A";
      utt.emotion = static_cast<std::uint32_t>(node % n_classes);
      utt.sentiment = static_cast<std::uint32_t>(node % kSentimentCount);
      utt.split = static_cast<Split>(node % 3);
      conv.utterances.push_back(std::move(utt));
    }
    c.conversations.push_back(std::move(conv));
  }
  c.features = Matrix(node, dim);
  for (double& v : c.features.values()) v = rng.normal();
  return c;
}

// Fresh per-test scratch directory.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("linecon_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace fixtures
