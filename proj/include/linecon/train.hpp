#pragma once

// Full-batch training with dev-set model selection, evaluation, prediction
// and the LCMDL01 checkpoint container.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "linecon/binary_io.hpp"
#include "linecon/congraph.hpp"
#include "linecon/metrics.hpp"
#include "linecon/nn.hpp"
#include "linecon/optim.hpp"

namespace linecon {

struct TrainConfig {
  std::size_t max_epochs = 300;
  std::size_t patience = 30;  // epochs without a dev weighted-F1 gain
  std::uint64_t seed = 0;
  ModelConfig model;          // model.seed is overwritten by `seed`
  AdamWHyper optimizer;
};

struct Checkpoint {
  ModelConfig config;
  std::size_t in_dim = 0;
  std::size_t edge_dim = 0;
  ModelParams params;
  AdamWState optimizer;

  friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double dev_weighted_f1 = 0.0;  // NaN when the dev split is empty
  double seconds = 0.0;
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;
};

// Compares everything except wall-clock.
inline bool same_trajectory(const TrainHistory& a, const TrainHistory& b) {
  if (a.best_epoch != b.best_epoch || a.epochs.size() != b.epochs.size()) return false;
  for (std::size_t i = 0; i < a.epochs.size(); ++i) {
    const auto &x = a.epochs[i], &y = b.epochs[i];
    if (x.epoch != y.epoch || std::memcmp(&x.train_loss, &y.train_loss, sizeof(double)) != 0 ||
        std::memcmp(&x.dev_weighted_f1, &y.dev_weighted_f1, sizeof(double)) != 0)
      return false;
  }
  return true;
}

inline nlohmann::json to_json(const TrainHistory& h, bool with_timing = false) {
  nlohmann::json epochs = nlohmann::json::array();
  for (const auto& e : h.epochs) {
    nlohmann::json j = {{"epoch", e.epoch}, {"train_loss", e.train_loss}};
    j["dev_weighted_f1"] = std::isnan(e.dev_weighted_f1) ? nlohmann::json() : nlohmann::json(e.dev_weighted_f1);
    if (with_timing) j["seconds"] = e.seconds;
    epochs.push_back(std::move(j));
  }
  return {{"best_epoch", h.best_epoch}, {"epochs", epochs}};
}

// Binds a checkpoint's architecture to one graph: caches the normalized
// adjacency for GCN and checks every dimension once.
class ModelRunner {
 public:
  ModelRunner(const ConvGraph& graph, const ModelConfig& config, std::size_t in_dim, std::size_t edge_dim)
      : graph_(graph), config_(config) {
    if (!graph.features) throw std::invalid_argument("graph carries no node features");
    if (graph.feature_dim() != in_dim)
      throw std::invalid_argument("feature dim mismatch: model expects " + std::to_string(in_dim) + ", graph has " +
                                  std::to_string(graph.feature_dim()));
    if (graph.n_classes() != 0 && graph.n_classes() != config.n_classes)
      throw std::invalid_argument("class count mismatch: model has " + std::to_string(config.n_classes) + ", graph has " +
                                  std::to_string(graph.n_classes()));
    if (config.kind == ModelKind::gcn) {
      if (config.use_edge_attr && !graph.edge_weights) throw std::invalid_argument("GCN configured for edge weights, graph has none");
      adj_ = normalize_adjacency(graph, config.use_edge_attr);
    } else if (config.use_edge_attr) {
      if (!graph.edge_features) throw std::invalid_argument("GAT configured for edge features, graph has none");
      if (graph.edge_feature_dim() != edge_dim)
        throw std::invalid_argument("edge feature dim mismatch: model expects " + std::to_string(edge_dim) + ", graph has " +
                                    std::to_string(graph.edge_feature_dim()));
    }
  }

  struct Pass {
    Matrix logits;
    std::variant<GcnTape, GatTape> tape;
  };

  Pass forward(const ModelParams& params) const {
    if (const auto* p = std::get_if<GcnParams>(&params)) {
      auto f = gcn_forward(adj_, *graph_.features, *p);
      return {std::move(f.logits), std::move(f.tape)};
    }
    auto f = gatv2_forward(graph_, *graph_.features, std::get<GatParams>(params));
    return {std::move(f.logits), std::move(f.tape)};
  }

  ModelParams backward(const Pass& pass, const ModelParams& params, const Matrix& dlogits) const {
    if (const auto* p = std::get_if<GcnParams>(&params)) return gcn_backward(std::get<GcnTape>(pass.tape), adj_, *p, dlogits);
    return gatv2_backward(std::get<GatTape>(pass.tape), graph_, std::get<GatParams>(params), dlogits);
  }

 private:
  const ConvGraph& graph_;
  ModelConfig config_;
  NormAdj adj_;
};

inline Checkpoint init_checkpoint(const ConvGraph& graph, const TrainConfig& config) {
  Checkpoint ck;
  ck.config = config.model;
  ck.config.seed = config.seed;
  if (graph.n_classes() != 0) ck.config.n_classes = graph.n_classes();
  ck.in_dim = graph.feature_dim();
  ck.edge_dim = ck.config.kind == ModelKind::gat && ck.config.use_edge_attr ? graph.edge_feature_dim() : 0;
  ck.params = init_params(ck.config, ck.in_dim, ck.edge_dim);
  ck.optimizer.hyper = config.optimizer;
  return ck;
}

struct TrainResult {
  Checkpoint checkpoint;
  TrainHistory history;
};

class NonFiniteLoss : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Epoch e evaluates the parameters after e optimizer steps, then takes the
// next step. Training stops once dev weighted-F1 has not improved for
// `patience` epochs and returns the earliest best epoch's parameters. With an
// empty dev split the last epoch is kept.
inline TrainResult train(const ConvGraph& graph, const TrainConfig& config) {
  if (mask_count(graph.masks.train) == 0) throw std::invalid_argument("train: empty train mask");
  const bool have_dev = mask_count(graph.masks.dev) > 0;

  Checkpoint current = init_checkpoint(graph, config);
  const ModelRunner runner(graph, current.config, current.in_dim, current.edge_dim);
  TrainResult result{current, {}};
  double best_f1 = -1.0;

  for (std::size_t epoch = 0;; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto pass = runner.forward(current.params);
    const auto loss = masked_softmax_cross_entropy(pass.logits, graph.labels, graph.masks.train);
    if (!std::isfinite(loss.loss))
      throw NonFiniteLoss("train: non-finite loss at epoch " + std::to_string(epoch) + " (" + std::to_string(loss.loss) + ")");
    const double dev_f1 = have_dev ? compute_metrics(graph.labels, argmax_rows(pass.logits), current.config.n_classes,
                                                     graph.masks.dev).weighted_f1
                                   : std::numeric_limits<double>::quiet_NaN();

    if (have_dev && dev_f1 > best_f1) {
      best_f1 = dev_f1;
      result.history.best_epoch = epoch;
      result.checkpoint = current;
    }
    const bool stop = epoch == config.max_epochs || (have_dev && epoch - result.history.best_epoch >= config.patience);
    if (!stop) {
      const ModelParams grads = runner.backward(pass, current.params, loss.dlogits);
      adamw_step(current.params, grads, current.optimizer);
    }
    const std::chrono::duration<double> dt = std::chrono::steady_clock::now() - t0;
    result.history.epochs.push_back({epoch, loss.loss, dev_f1, dt.count()});
    if (stop) break;
  }
  if (!have_dev) {
    result.history.best_epoch = result.history.epochs.back().epoch;
    result.checkpoint = current;
  }
  return result;
}

inline Matrix model_logits(const Checkpoint& ck, const ConvGraph& graph) {
  const ModelRunner runner(graph, ck.config, ck.in_dim, ck.edge_dim);
  return runner.forward(ck.params).logits;
}

inline std::vector<std::uint32_t> predict(const Checkpoint& ck, const ConvGraph& graph) {
  return argmax_rows(model_logits(ck, graph));
}

inline Metrics evaluate(const Checkpoint& ck, const ConvGraph& graph, Split split) {
  const auto& mask = graph.masks.of(split);
  if (mask_count(mask) == 0) throw std::invalid_argument(std::string("evaluate: empty ") + to_string(split) + " mask");
  return compute_metrics(graph.labels, predict(ck, graph), ck.config.n_classes, mask);
}

// ---------------------------------------------------------------------------
// Checkpoint container
//
//   "LCMDL01"
//   config: u32 kind, u64 hidden_dim, u64 n_classes, u64 seed, f64 leaky_slope,
//           u8 use_edge_attr, u64 in_dim, u64 edge_dim
//   u32 tensor count, then per tensor: u32 name length, name bytes,
//           u32 rows, u32 cols, rows*cols f64 row-major
//   optimizer: f64 lr, f64 weight_decay, f64 beta1, f64 beta2, f64 eps,
//           u64 step_count, u32 tensor count, tensors "m.<name>" then "v.<name>"
// All little-endian.

inline constexpr std::string_view kCheckpointMagic = "LCMDL01";

namespace detail {

inline void put_tensor(bin::Writer& w, const std::string& name, const Matrix& m) {
  w.str(name);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(m.rows()));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(m.cols()));
  for (double v : m.values()) w.put<double>(v);
}

inline std::pair<std::string, Matrix> get_tensor(bin::Reader& r) {
  std::string name = r.str(4096);
  const auto rows = r.get<std::uint32_t>();
  const auto cols = r.get<std::uint32_t>();
  Matrix m(rows, cols);
  for (double& v : m.values()) v = r.get<double>();
  return {std::move(name), std::move(m)};
}

}  // namespace detail

inline void write_checkpoint(const Checkpoint& ck, std::ostream& out) {
  bin::Writer w(out);
  w.magic(kCheckpointMagic);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(ck.config.kind));
  w.put<std::uint64_t>(ck.config.hidden_dim);
  w.put<std::uint64_t>(ck.config.n_classes);
  w.put<std::uint64_t>(ck.config.seed);
  w.put<double>(ck.config.leaky_slope);
  w.put<std::uint8_t>(ck.config.use_edge_attr ? 1 : 0);
  w.put<std::uint64_t>(ck.in_dim);
  w.put<std::uint64_t>(ck.edge_dim);

  std::vector<std::string> names;
  std::uint32_t count = 0;
  for_each_tensor(ck.params, [&](const std::string& n, const Matrix&) { names.push_back(n); ++count; });
  w.put<std::uint32_t>(count);
  for_each_tensor(ck.params, [&](const std::string& n, const Matrix& m) { detail::put_tensor(w, n, m); });

  const AdamWState& s = ck.optimizer;
  w.put<double>(s.hyper.lr);
  w.put<double>(s.hyper.weight_decay);
  w.put<double>(s.hyper.beta1);
  w.put<double>(s.hyper.beta2);
  w.put<double>(s.hyper.eps);
  w.put<std::uint64_t>(s.step_count);
  if (!s.m.empty() && (s.m.size() != names.size() || s.v.size() != names.size()))
    throw std::invalid_argument("write_checkpoint: optimizer state does not match parameters");
  w.put<std::uint32_t>(static_cast<std::uint32_t>(s.m.size() + s.v.size()));
  for (std::size_t t = 0; t < s.m.size(); ++t) detail::put_tensor(w, "m." + names[t], s.m[t]);
  for (std::size_t t = 0; t < s.v.size(); ++t) detail::put_tensor(w, "v." + names[t], s.v[t]);
  w.check();
}

inline Checkpoint read_checkpoint(std::istream& in, const std::string& what) {
  bin::Reader r(in, what);
  r.expect_magic(kCheckpointMagic);
  Checkpoint ck;
  const auto kind = r.get<std::uint32_t>();
  if (kind > 1) throw FormatError(what + ": unknown model kind");
  ck.config.kind = static_cast<ModelKind>(kind);
  ck.config.hidden_dim = r.get<std::uint64_t>();
  ck.config.n_classes = r.get<std::uint64_t>();
  ck.config.seed = r.get<std::uint64_t>();
  ck.config.leaky_slope = r.get<double>();
  ck.config.use_edge_attr = r.get<std::uint8_t>() != 0;
  ck.in_dim = r.get<std::uint64_t>();
  ck.edge_dim = r.get<std::uint64_t>();

  // Shapes come from a fresh init; values are then overwritten by name.
  ck.params = init_params(ck.config, ck.in_dim, ck.edge_dim);
  std::vector<std::pair<std::string, Matrix*>> slots;
  for_each_tensor(ck.params, [&](const std::string& n, Matrix& m) { slots.emplace_back(n, &m); });
  const auto count = r.get<std::uint32_t>();
  if (count != slots.size()) throw FormatError(what + ": expected " + std::to_string(slots.size()) + " tensors, found " + std::to_string(count));
  for (auto& [name, slot] : slots) {
    auto [got, m] = detail::get_tensor(r);
    if (got != name || !m.same_shape(*slot)) throw FormatError(what + ": tensor '" + got + "' does not match '" + name + "' " + slot->shape_str());
    *slot = std::move(m);
  }
  if (auto* gat = std::get_if<GatParams>(&ck.params)) gat->leaky_slope = ck.config.leaky_slope;

  AdamWState& s = ck.optimizer;
  s.hyper.lr = r.get<double>();
  s.hyper.weight_decay = r.get<double>();
  s.hyper.beta1 = r.get<double>();
  s.hyper.beta2 = r.get<double>();
  s.hyper.eps = r.get<double>();
  s.step_count = r.get<std::uint64_t>();
  const auto state_count = r.get<std::uint32_t>();
  if (state_count != 0 && state_count != 2 * slots.size()) throw FormatError(what + ": optimizer state tensor count mismatch");
  for (std::uint32_t t = 0; t < state_count; ++t) {
    auto [name, m] = detail::get_tensor(r);
    const std::size_t idx = t % slots.size();
    const std::string want = (t < slots.size() ? "m." : "v.") + slots[idx].first;
    if (name != want || !m.same_shape(*slots[idx].second)) throw FormatError(what + ": optimizer tensor '" + name + "' unexpected");
    (t < slots.size() ? s.m : s.v).push_back(std::move(m));
  }
  r.expect_eof();
  return ck;
}

inline void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  write_checkpoint(ck, out);
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path.string());
  return read_checkpoint(in, path.string());
}

inline std::string checkpoint_bytes(const Checkpoint& ck) {
  std::ostringstream out(std::ios::binary);
  write_checkpoint(ck, out);
  return std::move(out).str();
}

}  // namespace linecon
