#pragma once

// Conversation graphs over utterance nodes.
//
// Node i is the i-th utterance in corpus traversal order. Edges are directed
// (src -> dst), both directions of every undirected link are materialized,
// and every node carries exactly one self-loop. Edges are sorted by
// (dst, src), so the in-edges of a node form one contiguous run.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "linecon/binary_io.hpp"
#include "linecon/corpus.hpp"
#include "linecon/matrix.hpp"

namespace linecon {

enum class Topology { line, full };

struct Edge {
  std::uint32_t src = 0;
  std::uint32_t dst = 0;

  friend bool operator==(const Edge&, const Edge&) = default;
  friend auto operator<=>(const Edge& a, const Edge& b) {
    if (a.dst != b.dst) return a.dst <=> b.dst;
    return a.src <=> b.src;
  }
};

// Per-edge feature vectors, row e belongs to edges[e].
using EdgeFeatures = Matrix;

struct SplitMasks {
  std::vector<std::uint8_t> train;
  std::vector<std::uint8_t> dev;
  std::vector<std::uint8_t> test;

  const std::vector<std::uint8_t>& of(Split s) const {
    switch (s) {
      case Split::train: return train;
      case Split::dev: return dev;
      case Split::test: return test;
    }
    throw std::invalid_argument("bad split");
  }

  friend bool operator==(const SplitMasks&, const SplitMasks&) = default;
};

inline std::size_t mask_count(const std::vector<std::uint8_t>& mask) {
  return static_cast<std::size_t>(std::count(mask.begin(), mask.end(), std::uint8_t{1}));
}

struct ConvGraph {
  std::size_t n_nodes = 0;
  std::vector<Edge> edges;
  std::optional<std::vector<double>> edge_weights;
  std::optional<EdgeFeatures> edge_features;
  std::vector<std::uint32_t> conv_of;
  std::vector<std::uint32_t> labels;
  std::vector<std::uint32_t> sentiments;
  SplitMasks masks;
  std::shared_ptr<const Matrix> features;
  std::vector<std::string> class_names;
  std::vector<std::string> node_ids;

  std::size_t n_classes() const { return class_names.size(); }
  std::size_t feature_dim() const { return features ? features->cols() : 0; }
  std::size_t edge_feature_dim() const { return edge_features ? edge_features->cols() : 0; }

  // in_offsets[i]..in_offsets[i+1] index the edges whose dst is i.
  std::vector<std::size_t> in_offsets() const {
    std::vector<std::size_t> off(n_nodes + 1, 0);
    for (const Edge& e : edges) ++off[e.dst + 1];
    for (std::size_t i = 0; i < n_nodes; ++i) off[i + 1] += off[i];
    return off;
  }
};

// Structural equality including feature values.
inline bool operator==(const ConvGraph& a, const ConvGraph& b) {
  const bool same_features = (a.features == nullptr) == (b.features == nullptr) &&
                             (a.features == nullptr || *a.features == *b.features);
  return a.n_nodes == b.n_nodes && a.edges == b.edges && a.edge_weights == b.edge_weights &&
         a.edge_features == b.edge_features && a.conv_of == b.conv_of && a.labels == b.labels &&
         a.sentiments == b.sentiments && a.masks == b.masks && same_features && a.class_names == b.class_names &&
         a.node_ids == b.node_ids;
}

inline ConvGraph build_graph(const Corpus& corpus, Topology topology) {
  if (auto report = validate_corpus(corpus); !report.ok())
    throw std::invalid_argument("build_graph: invalid corpus: " + report.errors.front().location + ": " +
                                report.errors.front().message);
  ConvGraph g;
  g.n_nodes = corpus.utterance_count();
  g.features = std::make_shared<const Matrix>(corpus.features);
  g.class_names = corpus.emotion_vocab;
  g.masks.train.assign(g.n_nodes, 0);
  g.masks.dev.assign(g.n_nodes, 0);
  g.masks.test.assign(g.n_nodes, 0);

  std::uint32_t node = 0;
  for (std::size_t c = 0; c < corpus.conversations.size(); ++c) {
    const auto& utts = corpus.conversations[c].utterances;
    const std::uint32_t first = node;
    const auto t = static_cast<std::uint32_t>(utts.size());
    for (std::uint32_t u = 0; u < t; ++u, ++node) {
      const auto& utt = utts[u];
      g.conv_of.push_back(static_cast<std::uint32_t>(c));
      g.labels.push_back(utt.emotion);
      g.sentiments.push_back(utt.sentiment);
      g.node_ids.push_back(utt.utt_id);
      switch (utt.split) {
        case Split::train: g.masks.train[node] = 1; break;
        case Split::dev: g.masks.dev[node] = 1; break;
        case Split::test: g.masks.test[node] = 1; break;
      }
      // in-edges of `node`, ascending src
      if (topology == Topology::line) {
        if (u > 0) g.edges.push_back({node - 1, node});
        g.edges.push_back({node, node});
        if (u + 1 < t) g.edges.push_back({node + 1, node});
      } else {
        for (std::uint32_t v = 0; v < t; ++v) g.edges.push_back({first + v, node});
      }
    }
  }
  return g;
}

inline ConvGraph attach_sentiment_weights(ConvGraph graph, double shift_value, double noshift_value,
                                          double selfloop_value = 1.0) {
  if (graph.edge_features) throw std::invalid_argument("attach_sentiment_weights: graph already carries edge features");
  if (graph.sentiments.size() != graph.n_nodes) throw std::invalid_argument("attach_sentiment_weights: missing sentiments");
  std::vector<double> w;
  w.reserve(graph.edges.size());
  for (const Edge& e : graph.edges) {
    if (e.src == e.dst)
      w.push_back(selfloop_value);
    else
      w.push_back(graph.sentiments[e.src] != graph.sentiments[e.dst] ? shift_value : noshift_value);
  }
  graph.edge_weights = std::move(w);
  return graph;
}

// Edge (src -> dst) carries [sentiment(src), sentiment(dst)].
inline ConvGraph attach_sentiment_edge_features(ConvGraph graph) {
  if (graph.edge_weights) throw std::invalid_argument("attach_sentiment_edge_features: graph already carries edge weights");
  if (graph.sentiments.size() != graph.n_nodes)
    throw std::invalid_argument("attach_sentiment_edge_features: missing sentiments");
  Matrix f(graph.edges.size(), 2);
  for (std::size_t k = 0; k < graph.edges.size(); ++k) {
    f(k, 0) = static_cast<double>(graph.sentiments[graph.edges[k].src]);
    f(k, 1) = static_cast<double>(graph.sentiments[graph.edges[k].dst]);
  }
  graph.edge_features = std::move(f);
  return graph;
}

enum class EdgeAttr { none, ss_weight, ss_feature };

struct SentimentWeights {
  double shift = -1.0;
  double noshift = 1.0;
  double selfloop = 1.0;
};

inline ConvGraph apply_edge_attr(ConvGraph graph, EdgeAttr attr, const SentimentWeights& w = {}) {
  switch (attr) {
    case EdgeAttr::none: return graph;
    case EdgeAttr::ss_weight: return attach_sentiment_weights(std::move(graph), w.shift, w.noshift, w.selfloop);
    case EdgeAttr::ss_feature: return attach_sentiment_edge_features(std::move(graph));
  }
  return graph;
}

// ---------------------------------------------------------------------------
// Sparse normalized adjacency

// Compressed-row m x m matrix; column indices sorted within each row.
struct CsrMatrix {
  std::size_t n = 0;
  std::vector<std::size_t> row_offsets;
  std::vector<std::uint32_t> col_indices;
  std::vector<double> values;

  std::size_t nnz() const { return values.size(); }

  double at(std::size_t r, std::size_t c) const {
    auto begin = col_indices.begin() + static_cast<std::ptrdiff_t>(row_offsets[r]);
    auto end = col_indices.begin() + static_cast<std::ptrdiff_t>(row_offsets[r + 1]);
    auto it = std::lower_bound(begin, end, static_cast<std::uint32_t>(c));
    return (it != end && *it == c) ? values[static_cast<std::size_t>(it - col_indices.begin())] : 0.0;
  }

  Matrix to_dense() const {
    Matrix d(n, n);
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t k = row_offsets[r]; k < row_offsets[r + 1]; ++k) d(r, col_indices[k]) += values[k];
    return d;
  }

  CsrMatrix transpose() const {
    CsrMatrix t;
    t.n = n;
    t.row_offsets.assign(n + 1, 0);
    for (std::uint32_t c : col_indices) ++t.row_offsets[c + 1];
    for (std::size_t i = 0; i < n; ++i) t.row_offsets[i + 1] += t.row_offsets[i];
    t.col_indices.resize(nnz());
    t.values.resize(nnz());
    std::vector<std::size_t> cursor(t.row_offsets.begin(), t.row_offsets.end() - 1);
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t k = row_offsets[r]; k < row_offsets[r + 1]; ++k) {
        const std::size_t slot = cursor[col_indices[k]]++;
        t.col_indices[slot] = static_cast<std::uint32_t>(r);
        t.values[slot] = values[k];
      }
    return t;
  }
};

using NormAdj = CsrMatrix;

// out = A * x, rows accumulated in column order.
inline Matrix spmm(const CsrMatrix& a, const Matrix& x) {
  if (x.rows() != a.n) throw std::invalid_argument("spmm: adjacency is " + std::to_string(a.n) + "x" + std::to_string(a.n) + ", operand " + x.shape_str());
  Matrix out(a.n, x.cols());
  parallel_for(a.n, (a.nnz() / std::max<std::size_t>(1, a.n) + 1) * x.cols(), [&](std::size_t r) {
    auto dst = out.row(r);
    for (std::size_t k = a.row_offsets[r]; k < a.row_offsets[r + 1]; ++k) {
      const double w = a.values[k];
      auto src = x.row(a.col_indices[k]);
      for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += w * src[j];
    }
  });
  return out;
}

// A_hat[i][j] = w(i,j) / sqrt(d_i d_j) with d_i = sum_j |w(i,j)| over the
// in-edges of i (self-loop included). Rows are destinations, columns sources.
inline NormAdj normalize_adjacency(const ConvGraph& graph, bool use_weights = true) {
  const bool weighted = use_weights && graph.edge_weights.has_value();
  auto weight = [&](std::size_t k) { return weighted ? (*graph.edge_weights)[k] : 1.0; };
  std::vector<double> degree(graph.n_nodes, 0.0);
  for (std::size_t k = 0; k < graph.edges.size(); ++k) degree[graph.edges[k].dst] += std::abs(weight(k));
  for (std::size_t i = 0; i < graph.n_nodes; ++i)
    if (!(degree[i] > 0.0))
      throw std::runtime_error("normalize_adjacency: node " + std::to_string(i) + " has zero degree (corrupted graph)");

  std::vector<std::size_t> order(graph.edges.size());
  for (std::size_t k = 0; k < order.size(); ++k) order[k] = k;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return graph.edges[a] < graph.edges[b]; });

  NormAdj adj;
  adj.n = graph.n_nodes;
  adj.row_offsets.assign(graph.n_nodes + 1, 0);
  for (const Edge& e : graph.edges) ++adj.row_offsets[e.dst + 1];
  for (std::size_t i = 0; i < graph.n_nodes; ++i) adj.row_offsets[i + 1] += adj.row_offsets[i];
  adj.col_indices.reserve(order.size());
  adj.values.reserve(order.size());
  for (std::size_t pos = 0; pos < order.size(); ++pos) {
    const std::size_t k = order[pos];
    const Edge& e = graph.edges[k];
    if (pos > 0 && graph.edges[order[pos - 1]] == e) throw std::invalid_argument("normalize_adjacency: duplicate edge");
    adj.col_indices.push_back(e.src);
    adj.values.push_back(weight(k) / std::sqrt(degree[e.dst] * degree[e.src]));
  }
  return adj;
}

// ---------------------------------------------------------------------------
// Graph container
//
//   "LCGRF01"
//   u32 n_nodes, u64 n_edges, u32 n_classes, u32 feature_rows, u32 feature_cols
//   u8 attr_kind (0 none, 1 weights, 2 features), u32 edge_feature_dim
//   n_classes x string (u32 length + bytes)
//   n_nodes   x string node id
//   n_nodes   x u32 conv_of, u32 label, u32 sentiment, u8 split-bits
//             (bit0 train, bit1 dev, bit2 test)
//   n_edges   x (u32 src, u32 dst)
//   weights:  n_edges f64     | features: n_edges x edge_feature_dim f64
//   feature_rows x feature_cols f64
// All little-endian.

inline constexpr std::string_view kGraphMagic = "LCGRF01";

inline void save_graph(const ConvGraph& g, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  bin::Writer w(out);
  w.magic(kGraphMagic);
  const Matrix empty;
  const Matrix& x = g.features ? *g.features : empty;
  w.put<std::uint32_t>(static_cast<std::uint32_t>(g.n_nodes));
  w.put<std::uint64_t>(g.edges.size());
  w.put<std::uint32_t>(static_cast<std::uint32_t>(g.class_names.size()));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(x.rows()));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(x.cols()));
  w.put<std::uint8_t>(g.edge_weights ? 1 : (g.edge_features ? 2 : 0));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(g.edge_feature_dim()));
  for (const auto& s : g.class_names) w.str(s);
  for (std::size_t i = 0; i < g.n_nodes; ++i) w.str(i < g.node_ids.size() ? g.node_ids[i] : std::string{});
  for (std::size_t i = 0; i < g.n_nodes; ++i) {
    w.put<std::uint32_t>(g.conv_of[i]);
    w.put<std::uint32_t>(g.labels[i]);
    w.put<std::uint32_t>(g.sentiments[i]);
    w.put<std::uint8_t>(static_cast<std::uint8_t>((g.masks.train[i] ? 1 : 0) | (g.masks.dev[i] ? 2 : 0) |
                                                  (g.masks.test[i] ? 4 : 0)));
  }
  for (const Edge& e : g.edges) {
    w.put<std::uint32_t>(e.src);
    w.put<std::uint32_t>(e.dst);
  }
  if (g.edge_weights) w.array(*g.edge_weights);
  if (g.edge_features)
    for (double v : g.edge_features->values()) w.put<double>(v);
  for (double v : x.values()) w.put<double>(v);
  w.check();
}

inline ConvGraph load_graph(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open graph file " + path.string());
  bin::Reader r(in, path.string());
  r.expect_magic(kGraphMagic);
  ConvGraph g;
  g.n_nodes = r.get<std::uint32_t>();
  const auto n_edges = r.get<std::uint64_t>();
  const auto n_classes = r.get<std::uint32_t>();
  const auto feat_rows = r.get<std::uint32_t>();
  const auto feat_cols = r.get<std::uint32_t>();
  const auto attr_kind = r.get<std::uint8_t>();
  const auto edge_dim = r.get<std::uint32_t>();
  if (attr_kind > 2) throw FormatError(path.string() + ": unknown edge attribute kind");
  for (std::uint32_t c = 0; c < n_classes; ++c) g.class_names.push_back(r.str());
  for (std::size_t i = 0; i < g.n_nodes; ++i) g.node_ids.push_back(r.str());
  g.masks.train.assign(g.n_nodes, 0);
  g.masks.dev.assign(g.n_nodes, 0);
  g.masks.test.assign(g.n_nodes, 0);
  for (std::size_t i = 0; i < g.n_nodes; ++i) {
    g.conv_of.push_back(r.get<std::uint32_t>());
    g.labels.push_back(r.get<std::uint32_t>());
    g.sentiments.push_back(r.get<std::uint32_t>());
    const auto bits = r.get<std::uint8_t>();
    g.masks.train[i] = bits & 1;
    g.masks.dev[i] = (bits >> 1) & 1;
    g.masks.test[i] = (bits >> 2) & 1;
  }
  g.edges.reserve(n_edges);
  for (std::uint64_t k = 0; k < n_edges; ++k) {
    Edge e{r.get<std::uint32_t>(), r.get<std::uint32_t>()};
    if (e.src >= g.n_nodes || e.dst >= g.n_nodes) throw FormatError(path.string() + ": edge endpoint out of range");
    g.edges.push_back(e);
  }
  if (attr_kind == 1) g.edge_weights = r.array<double>(n_edges);
  if (attr_kind == 2) {
    Matrix f(n_edges, edge_dim);
    for (double& v : f.values()) v = r.get<double>();
    g.edge_features = std::move(f);
  }
  auto x = std::make_shared<Matrix>(feat_rows, feat_cols);
  for (double& v : x->values()) v = r.get<double>();
  g.features = std::move(x);
  r.expect_eof();
  return g;
}

}  // namespace linecon
