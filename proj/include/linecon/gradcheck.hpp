#pragma once

// Central finite-difference verification of the analytic gradients, plus the
// small random conversation graphs it runs on.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "linecon/congraph.hpp"
#include "linecon/corpus.hpp"
#include "linecon/nn.hpp"
#include "linecon/random.hpp"
#include "linecon/train.hpp"

namespace linecon {

struct RandomGraphOptions {
  std::size_t n_nodes = 5;
  std::size_t feature_dim = 4;
  std::size_t n_classes = 2;
  Topology topology = Topology::line;
  EdgeAttr edge_attr = EdgeAttr::none;
  SentimentWeights weights{};
};

// Random corpus of `n_nodes` utterances cut into 1..3 conversations with
// N(0,1) features, random labels/sentiments and a random split per node.
inline Corpus random_corpus(Rng& rng, const RandomGraphOptions& opt) {
  Corpus c;
  for (std::size_t k = 0; k < opt.n_classes; ++k) c.emotion_vocab.push_back("e" + std::to_string(k));
  const std::size_t max_convs = std::min<std::size_t>(3, opt.n_nodes);
  const std::size_t n_convs = 1 + rng.below(max_convs);
  // distinct cut points give non-empty conversations
  std::vector<std::size_t> cuts;
  while (cuts.size() + 1 < n_convs) {
    const std::size_t p = 1 + rng.below(opt.n_nodes - 1);
    if (std::find(cuts.begin(), cuts.end(), p) == cuts.end()) cuts.push_back(p);
  }
  std::sort(cuts.begin(), cuts.end());
  cuts.push_back(opt.n_nodes);
  std::size_t node = 0;
  for (std::size_t ci = 0; ci < cuts.size(); ++ci) {
    Conversation conv{"c" + std::to_string(ci), {}};
    for (; node < cuts[ci]; ++node) {
      Utterance u;
      u.utt_id = "u" + std::to_string(node);
      u.emotion = static_cast<std::uint32_t>(rng.below(opt.n_classes));
      u.sentiment = static_cast<std::uint32_t>(rng.below(kSentimentCount));
      u.split = static_cast<Split>(rng.below(3));
      conv.utterances.push_back(std::move(u));
    }
    c.conversations.push_back(std::move(conv));
  }
  c.features = Matrix(opt.n_nodes, opt.feature_dim);
  for (double& v : c.features.values()) v = rng.normal();
  return c;
}

inline ConvGraph random_graph(Rng& rng, const RandomGraphOptions& opt) {
  return apply_edge_attr(build_graph(random_corpus(rng, opt), opt.topology), opt.edge_attr, opt.weights);
}

struct TensorCheck {
  std::string name;
  double max_rel_error = 0.0;
  std::size_t kinks_crossed = 0;  // coordinates whose +-h probe flips a ReLU/LeakyReLU input sign
};

struct GradcheckResult {
  std::vector<TensorCheck> tensors;

  double max_rel_error() const {
    double m = 0.0;
    for (const auto& t : tensors) m = std::max(m, t.max_rel_error);
    return m;
  }

  std::size_t kinks_crossed() const {
    std::size_t n = 0;
    for (const auto& t : tensors) n += t.kinks_crossed;
    return n;
  }
};

// Sign of every ReLU / LeakyReLU input. Central differences are only a valid
// reference when a probe leaves this pattern unchanged.
inline std::vector<bool> activation_pattern(const ModelRunner::Pass& pass) {
  std::vector<bool> out;
  auto add = [&](const Matrix& m) {
    for (double v : m.values()) out.push_back(v > 0.0);
  };
  if (const auto* t = std::get_if<GcnTape>(&pass.tape)) {
    add(t->pre);
  } else {
    const auto& gat = std::get<GatTape>(pass.tape);
    add(gat.layers[0].s);
    add(gat.layers[0].out);
    add(gat.layers[1].s);
  }
  return out;
}

// Compares analytic gradients of the full-mask cross-entropy loss against
// central differences: max |g - g_fd| / max(1, |g_fd|) per tensor. Probes that
// cross an activation kink are counted; the error still covers them.
inline GradcheckResult gradcheck(const ConvGraph& graph, const Checkpoint& ck, double h = 1e-4) {
  std::vector<std::uint8_t> all(graph.n_nodes, 1);
  const ModelRunner runner(graph, ck.config, ck.in_dim, ck.edge_dim);
  const auto pass = runner.forward(ck.params);
  const std::vector<bool> pattern = activation_pattern(pass);
  bool crossed = false;
  auto loss_at = [&](const ModelParams& p) {
    const auto probe_pass = runner.forward(p);
    crossed = crossed || activation_pattern(probe_pass) != pattern;
    return masked_softmax_cross_entropy(probe_pass.logits, graph.labels, all).loss;
  };
  const auto loss = masked_softmax_cross_entropy(pass.logits, graph.labels, all);
  const ModelParams analytic = runner.backward(pass, ck.params, loss.dlogits);

  std::vector<const Matrix*> grads;
  for_each_tensor(analytic, [&](const std::string&, const Matrix& m) { grads.push_back(&m); });

  GradcheckResult result;
  ModelParams probe = ck.params;
  std::vector<std::pair<std::string, Matrix*>> slots;
  for_each_tensor(probe, [&](const std::string& n, Matrix& m) { slots.emplace_back(n, &m); });
  for (std::size_t t = 0; t < slots.size(); ++t) {
    TensorCheck check{slots[t].first, 0.0};
    auto values = slots[t].second->values();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      crossed = false;
      values[i] = saved + h;
      const double up = loss_at(probe);
      values[i] = saved - h;
      const double down = loss_at(probe);
      values[i] = saved;
      const double fd = (up - down) / (2.0 * h);
      const double err = std::abs(grads[t]->values()[i] - fd) / std::max(1.0, std::abs(fd));
      check.max_rel_error = std::max(check.max_rel_error, err);
      check.kinks_crossed += crossed;
    }
    result.tensors.push_back(std::move(check));
  }
  return result;
}

}  // namespace linecon
