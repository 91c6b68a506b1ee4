#pragma once

// Two-layer GCN and GATv2 node classifiers with hand-written reverse mode.
//
//   GCN:    logits = A_hat * ReLU(A_hat * X * W0) * W1
//   GATv2:  per in-edge (j -> i) of node i
//             s_ij   = W x_i + W x_j (+ f_ij * We)
//             e_ij   = a . LeakyReLU(s_ij)
//             alpha  = softmax of e_i. over the in-edges of i
//             x'_i   = sum_j alpha_ij W x_j
//           layer 0 is followed by ReLU, layer 1 yields the logits.
//
// Matrices act on row vectors: node features are rows, so "W x" is x * W
// with W of shape in_dim x out_dim.

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "linecon/congraph.hpp"
#include "linecon/matrix.hpp"
#include "linecon/random.hpp"

namespace linecon {

enum class ModelKind : std::uint32_t { gcn = 0, gat = 1 };

inline const char* to_string(ModelKind k) { return k == ModelKind::gcn ? "gcn" : "gat"; }

struct ModelConfig {
  ModelKind kind = ModelKind::gcn;
  std::size_t hidden_dim = 64;
  std::size_t n_classes = 2;
  std::uint64_t seed = 0;
  double leaky_slope = 0.2;
  // GCN: use the graph's edge weights. GAT: project the graph's edge features.
  bool use_edge_attr = false;

  void check() const {
    if (hidden_dim < 1) throw std::invalid_argument("ModelConfig: hidden_dim must be >= 1");
    if (n_classes < 2) throw std::invalid_argument("ModelConfig: n_classes must be >= 2");
  }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct GcnParams {
  Matrix W0;  // n x k
  Matrix W1;  // k x t

  template <class Self, class F>
  static void each(Self& self, F&& f) {
    f("W0", self.W0);
    f("W1", self.W1);
  }

  friend bool operator==(const GcnParams&, const GcnParams&) = default;
};

struct GatLayer {
  Matrix W;                  // in x out
  Matrix a;                  // 1 x out
  std::optional<Matrix> We;  // d_e x out

  friend bool operator==(const GatLayer&, const GatLayer&) = default;
};

struct GatParams {
  std::array<GatLayer, 2> layers;
  double leaky_slope = 0.2;

  template <class Self, class F>
  static void each(Self& self, F&& f) {
    for (std::size_t l = 0; l < self.layers.size(); ++l) {
      const std::string p = "gat" + std::to_string(l) + ".";
      f(p + "W", self.layers[l].W);
      f(p + "a", self.layers[l].a);
      if (self.layers[l].We) f(p + "We", *self.layers[l].We);
    }
  }

  friend bool operator==(const GatParams&, const GatParams&) = default;
};

using ModelParams = std::variant<GcnParams, GatParams>;

// Visits every parameter tensor as (name, Matrix&) in a fixed order.
template <class F>
void for_each_tensor(GcnParams& p, F&& f) { GcnParams::each(p, f); }
template <class F>
void for_each_tensor(const GcnParams& p, F&& f) { GcnParams::each(p, f); }
template <class F>
void for_each_tensor(GatParams& p, F&& f) { GatParams::each(p, f); }
template <class F>
void for_each_tensor(const GatParams& p, F&& f) { GatParams::each(p, f); }
template <class F>
void for_each_tensor(ModelParams& p, F&& f) { std::visit([&](auto& q) { for_each_tensor(q, f); }, p); }
template <class F>
void for_each_tensor(const ModelParams& p, F&& f) { std::visit([&](const auto& q) { for_each_tensor(q, f); }, p); }

// Zero tensors shaped like `p`.
template <class P>
P zeros_like(const P& p) {
  P z = p;
  for_each_tensor(z, [](const std::string&, Matrix& m) { m.fill(0.0); });
  return z;
}

// ---------------------------------------------------------------------------
// Initialization

namespace detail {

inline Matrix glorot(Rng& rng, std::size_t fan_in, std::size_t fan_out) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Matrix m(fan_in, fan_out);
  for (double& v : m.values()) v = rng.uniform(-bound, bound);
  return m;
}

}  // namespace detail

inline GcnParams init_gcn_params(const ModelConfig& config, std::size_t in_dim) {
  config.check();
  Rng rng(config.seed);
  GcnParams p;
  p.W0 = detail::glorot(rng, in_dim, config.hidden_dim);
  p.W1 = detail::glorot(rng, config.hidden_dim, config.n_classes);
  return p;
}

// edge_dim > 0 adds the edge-feature projections.
inline GatParams init_gat_params(const ModelConfig& config, std::size_t in_dim, std::size_t edge_dim = 0) {
  config.check();
  Rng rng(config.seed);
  GatParams p;
  p.leaky_slope = config.leaky_slope;
  const std::array<std::size_t, 3> dims{in_dim, config.hidden_dim, config.n_classes};
  for (std::size_t l = 0; l < 2; ++l) {
    GatLayer& layer = p.layers[l];
    const std::size_t out = dims[l + 1];
    layer.W = detail::glorot(rng, dims[l], out);
    const double bound = 1.0 / std::sqrt(static_cast<double>(out));
    layer.a = Matrix(1, out);
    for (double& v : layer.a.values()) v = rng.uniform(-bound, bound);
    if (edge_dim > 0) layer.We = detail::glorot(rng, edge_dim, out);
  }
  return p;
}

inline ModelParams init_params(const ModelConfig& config, std::size_t in_dim, std::size_t edge_dim = 0) {
  if (config.kind == ModelKind::gcn) return init_gcn_params(config, in_dim);
  return init_gat_params(config, in_dim, config.use_edge_attr ? edge_dim : 0);
}

// ---------------------------------------------------------------------------
// Loss and readout

struct LossResult {
  double loss = 0.0;
  Matrix dlogits;
};

// Mean cross-entropy over masked rows; gradient is zero on unmasked rows.
inline LossResult masked_softmax_cross_entropy(const Matrix& logits, const std::vector<std::uint32_t>& labels,
                                               const std::vector<std::uint8_t>& mask) {
  if (labels.size() != logits.rows() || mask.size() != logits.rows())
    throw std::invalid_argument("masked_softmax_cross_entropy: labels/mask size does not match logits rows");
  const std::size_t count = mask_count(mask);
  if (count == 0) throw std::invalid_argument("masked_softmax_cross_entropy: empty mask");
  LossResult r{0.0, Matrix(logits.rows(), logits.cols())};
  const double inv = 1.0 / static_cast<double>(count);
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    if (!mask[i]) continue;
    if (labels[i] >= logits.cols()) throw std::invalid_argument("masked_softmax_cross_entropy: label out of range");
    auto row = logits.row(i);
    double mx = -std::numeric_limits<double>::infinity();
    for (double v : row) mx = std::max(mx, v);
    double sum = 0.0;
    for (double v : row) sum += std::exp(v - mx);
    const double log_sum = std::log(sum);
    r.loss += -(row[labels[i]] - mx - log_sum);
    auto g = r.dlogits.row(i);
    for (std::size_t c = 0; c < row.size(); ++c) g[c] = std::exp(row[c] - mx - log_sum) * inv;
    g[labels[i]] -= inv;
  }
  r.loss *= inv;
  return r;
}

// Argmax per row; ties go to the lowest class index.
inline std::vector<std::uint32_t> argmax_rows(const Matrix& logits) {
  std::vector<std::uint32_t> out(logits.rows(), 0);
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    auto row = logits.row(i);
    std::size_t best = 0;
    for (std::size_t c = 1; c < row.size(); ++c)
      if (row[c] > row[best]) best = c;
    out[i] = static_cast<std::uint32_t>(best);
  }
  return out;
}

// ---------------------------------------------------------------------------
// GCN

struct GcnTape {
  const Matrix* input = nullptr;
  Matrix pre;     // A_hat X W0
  Matrix hidden;  // ReLU(pre)
};

struct GcnForward {
  Matrix logits;
  GcnTape tape;
};

inline GcnForward gcn_forward(const NormAdj& adj, const Matrix& x, const GcnParams& params) {
  if (x.rows() != adj.n) throw std::invalid_argument("gcn_forward: X has " + std::to_string(x.rows()) + " rows, graph has " + std::to_string(adj.n) + " nodes");
  if (x.cols() != params.W0.rows()) throw std::invalid_argument("gcn_forward: X is " + x.shape_str() + ", W0 is " + params.W0.shape_str());
  if (params.W0.cols() != params.W1.rows()) throw std::invalid_argument("gcn_forward: W0/W1 inner dims disagree");
  GcnForward f;
  f.tape.input = &x;
  f.tape.pre = spmm(adj, matmul(x, params.W0));
  f.tape.hidden = relu(f.tape.pre);
  f.logits = spmm(adj, matmul(f.tape.hidden, params.W1));
  return f;
}

inline GcnParams gcn_backward(const GcnTape& tape, const NormAdj& adj, const GcnParams& params, const Matrix& dlogits) {
  if (tape.input == nullptr || tape.pre.rows() != adj.n || tape.pre.cols() != params.W0.cols())
    throw std::invalid_argument("gcn_backward: tape does not match graph/params");
  if (dlogits.rows() != adj.n || dlogits.cols() != params.W1.cols())
    throw std::invalid_argument("gcn_backward: dlogits is " + dlogits.shape_str());
  const NormAdj adj_t = adj.transpose();
  GcnParams g;
  const Matrix up = spmm(adj_t, dlogits);  // A_hat^T dL
  g.W1 = matmul_tn(tape.hidden, up);
  Matrix dpre = matmul_nt(up, params.W1);
  for (std::size_t k = 0; k < dpre.size(); ++k)
    if (!(tape.pre.values()[k] > 0.0)) dpre.values()[k] = 0.0;
  g.W0 = matmul_tn(*tape.input, spmm(adj_t, dpre));
  return g;
}

// ---------------------------------------------------------------------------
// GATv2

struct GatLayerTape {
  const Matrix* input = nullptr;
  Matrix z;                    // input * W
  Matrix s;                    // per edge: z_dst + z_src (+ f We)
  std::vector<double> score;   // per edge
  std::vector<double> alpha;   // per edge
  Matrix out;                  // aggregated, before any activation
};

struct GatTape {
  std::array<GatLayerTape, 2> layers;
  Matrix hidden;  // ReLU(layers[0].out)
  std::size_t n_edges = 0;
};

struct GatForward {
  Matrix logits;
  std::array<std::vector<double>, 2> attention;
  GatTape tape;
};

namespace detail {

inline double leaky(double v, double slope) { return v > 0.0 ? v : slope * v; }
inline double leaky_grad(double v, double slope) { return v > 0.0 ? 1.0 : slope; }

inline void gat_layer_forward(const ConvGraph& g, const std::vector<std::size_t>& in_off, const Matrix& input,
                              const GatLayer& layer, double slope, GatLayerTape& t) {
  if (input.cols() != layer.W.rows()) throw std::invalid_argument("gatv2_forward: input is " + input.shape_str() + ", W is " + layer.W.shape_str());
  const std::size_t out_dim = layer.W.cols();
  if (layer.a.rows() != 1 || layer.a.cols() != out_dim) throw std::invalid_argument("gatv2_forward: attention vector has wrong length");
  if (layer.We) {
    if (!g.edge_features) throw std::invalid_argument("gatv2_forward: params expect edge features, graph has none");
    if (layer.We->rows() != g.edge_features->cols() || layer.We->cols() != out_dim)
      throw std::invalid_argument("gatv2_forward: edge projection is " + layer.We->shape_str() + ", edge features have dim " + std::to_string(g.edge_features->cols()));
  }
  t.input = &input;
  t.z = matmul(input, layer.W);
  const std::size_t n_edges = g.edges.size();
  t.s = Matrix(n_edges, out_dim);
  t.score.assign(n_edges, 0.0);
  t.alpha.assign(n_edges, 0.0);
  t.out = Matrix(g.n_nodes, out_dim);
  const auto a = layer.a.row(0);
  parallel_for(g.n_nodes, (in_off.back() / std::max<std::size_t>(1, g.n_nodes) + 1) * out_dim * 3, [&](std::size_t i) {
    const std::size_t lo = in_off[i], hi = in_off[i + 1];
    if (lo == hi) return;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t k = lo; k < hi; ++k) {
      const Edge& e = g.edges[k];
      auto s = t.s.row(k);
      auto zi = t.z.row(e.dst);
      auto zj = t.z.row(e.src);
      for (std::size_t c = 0; c < out_dim; ++c) s[c] = zi[c] + zj[c];
      if (layer.We) {
        auto f = g.edge_features->row(k);
        for (std::size_t p = 0; p < f.size(); ++p) {
          auto wp = layer.We->row(p);
          for (std::size_t c = 0; c < out_dim; ++c) s[c] += f[p] * wp[c];
        }
      }
      double e_score = 0.0;
      for (std::size_t c = 0; c < out_dim; ++c) e_score += a[c] * leaky(s[c], slope);
      t.score[k] = e_score;
      mx = std::max(mx, e_score);
    }
    double sum = 0.0;
    for (std::size_t k = lo; k < hi; ++k) {
      t.alpha[k] = std::exp(t.score[k] - mx);
      sum += t.alpha[k];
    }
    auto out = t.out.row(i);
    for (std::size_t k = lo; k < hi; ++k) {
      t.alpha[k] /= sum;
      auto zj = t.z.row(g.edges[k].src);
      for (std::size_t c = 0; c < out_dim; ++c) out[c] += t.alpha[k] * zj[c];
    }
  });
}

// Returns d(input); accumulates parameter gradients into `grad`.
inline Matrix gat_layer_backward(const ConvGraph& g, const std::vector<std::size_t>& in_off, const GatLayer& layer,
                                 double slope, const GatLayerTape& t, const Matrix& input, const Matrix& dout,
                                 GatLayer& grad) {
  const std::size_t out_dim = layer.W.cols();
  const std::size_t n_edges = g.edges.size();
  const auto a = layer.a.row(0);
  std::vector<double> dscore(n_edges, 0.0);
  Matrix ds(n_edges, out_dim);
  parallel_for(g.n_nodes, (in_off.back() / std::max<std::size_t>(1, g.n_nodes) + 1) * out_dim * 3, [&](std::size_t i) {
    const std::size_t lo = in_off[i], hi = in_off[i + 1];
    auto dyi = dout.row(i);
    double weighted = 0.0;
    for (std::size_t k = lo; k < hi; ++k) {
      auto zj = t.z.row(g.edges[k].src);
      double dalpha = 0.0;
      for (std::size_t c = 0; c < out_dim; ++c) dalpha += dyi[c] * zj[c];
      dscore[k] = dalpha;
      weighted += t.alpha[k] * dalpha;
    }
    for (std::size_t k = lo; k < hi; ++k) {
      dscore[k] = t.alpha[k] * (dscore[k] - weighted);
      auto s = t.s.row(k);
      auto dsk = ds.row(k);
      for (std::size_t c = 0; c < out_dim; ++c) dsk[c] = dscore[k] * a[c] * leaky_grad(s[c], slope);
    }
  });

  // Scatter in edge order so the reduction order is fixed.
  Matrix dz(g.n_nodes, out_dim);
  auto da = grad.a.row(0);
  for (std::size_t k = 0; k < n_edges; ++k) {
    const Edge& e = g.edges[k];
    auto s = t.s.row(k);
    auto dsk = ds.row(k);
    auto dyi = dout.row(e.dst);
    auto dzi = dz.row(e.dst);
    auto dzj = dz.row(e.src);
    for (std::size_t c = 0; c < out_dim; ++c) {
      da[c] += dscore[k] * leaky(s[c], slope);
      dzj[c] += t.alpha[k] * dyi[c] + dsk[c];
      dzi[c] += dsk[c];
    }
    if (layer.We) {
      auto f = g.edge_features->row(k);
      for (std::size_t p = 0; p < f.size(); ++p) {
        auto gw = grad.We->row(p);
        for (std::size_t c = 0; c < out_dim; ++c) gw[c] += f[p] * dsk[c];
      }
    }
  }
  grad.W += matmul_tn(input, dz);
  return matmul_nt(dz, layer.W);
}

}  // namespace detail

inline GatForward gatv2_forward(const ConvGraph& graph, const Matrix& x, const GatParams& params) {
  if (x.rows() != graph.n_nodes) throw std::invalid_argument("gatv2_forward: X has " + std::to_string(x.rows()) + " rows, graph has " + std::to_string(graph.n_nodes) + " nodes");
  if (params.layers[0].W.cols() != params.layers[1].W.rows()) throw std::invalid_argument("gatv2_forward: layer dims disagree");
  const auto in_off = graph.in_offsets();
  GatForward f;
  f.tape.n_edges = graph.edges.size();
  detail::gat_layer_forward(graph, in_off, x, params.layers[0], params.leaky_slope, f.tape.layers[0]);
  f.tape.hidden = relu(f.tape.layers[0].out);
  detail::gat_layer_forward(graph, in_off, f.tape.hidden, params.layers[1], params.leaky_slope, f.tape.layers[1]);
  f.tape.layers[1].input = nullptr;  // tape.hidden; re-bound in backward since the tape may move
  f.logits = f.tape.layers[1].out;
  f.attention = {f.tape.layers[0].alpha, f.tape.layers[1].alpha};
  return f;
}

inline GatParams gatv2_backward(const GatTape& tape, const ConvGraph& graph, const GatParams& params,
                                const Matrix& dlogits) {
  if (tape.n_edges != graph.edges.size() || tape.layers[1].out.rows() != graph.n_nodes ||
      tape.layers[0].z.cols() != params.layers[0].W.cols() || tape.layers[1].z.cols() != params.layers[1].W.cols())
    throw std::invalid_argument("gatv2_backward: tape does not match graph/params");
  if (!dlogits.same_shape(tape.layers[1].out)) throw std::invalid_argument("gatv2_backward: dlogits is " + dlogits.shape_str());
  const auto in_off = graph.in_offsets();
  GatParams grad = zeros_like(params);
  if (tape.layers[0].input == nullptr) throw std::invalid_argument("gatv2_backward: tape has no input");
  Matrix dhidden = detail::gat_layer_backward(graph, in_off, params.layers[1], params.leaky_slope, tape.layers[1],
                                              tape.hidden, dlogits, grad.layers[1]);
  for (std::size_t k = 0; k < dhidden.size(); ++k)
    if (!(tape.layers[0].out.values()[k] > 0.0)) dhidden.values()[k] = 0.0;
  detail::gat_layer_backward(graph, in_off, params.layers[0], params.leaky_slope, tape.layers[0],
                             *tape.layers[0].input, dhidden, grad.layers[0]);
  return grad;
}

}  // namespace linecon
