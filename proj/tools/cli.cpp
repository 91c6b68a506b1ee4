#include "cli.hpp"

#include <openssl/evp.h>

#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "linecon/linecon.hpp"

namespace linecon::cli {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ValidationFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string sha256_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
  EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr);
  std::vector<char> buf(1 << 16);
  while (in) {
    in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    EVP_DigestUpdate(ctx.get(), buf.data(), static_cast<std::size_t>(in.gcount()));
  }
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx.get(), digest, &len);
  std::ostringstream hex;
  for (unsigned int i = 0; i < len; ++i) hex << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(digest[i]);
  return hex.str();
}

std::string utc_now() {
  const std::time_t t = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void write_json(const json& j, const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << j.dump(2) << '\n';
}

// Written next to the primary output as <output>.run.json.
struct RunRecorder {
  std::string command;
  std::vector<std::string> argv;
  json config = json::object();
  std::vector<fs::path> inputs;
  std::vector<fs::path> outputs;
  std::uint64_t seed = 0;
  std::chrono::steady_clock::time_point started = std::chrono::steady_clock::now();

  void write(const fs::path& primary) const {
    json j;
    j["command"] = command;
    j["argv"] = argv;
    j["config"] = config;
    j["seed"] = seed;
    j["tool_version"] = kToolVersion;
    j["threads"] = worker_threads();
    json in = json::array(), out = json::array();
    for (const auto& p : inputs) in.push_back({{"path", p.string()}, {"sha256", sha256_file(p)}});
    for (const auto& p : outputs) out.push_back({{"path", p.string()}, {"sha256", sha256_file(p)}});
    j["inputs"] = in;
    j["outputs"] = out;
    j["started_utc"] = utc_now();
    j["wall_clock_seconds"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    write_json(j, fs::path(primary.string() + ".run.json"));
  }
};

const std::map<std::string, Topology> kTopologies{{"line", Topology::line}, {"full", Topology::full}};
const std::map<std::string, EdgeAttr> kEdgeAttrs{
    {"none", EdgeAttr::none}, {"ss-weight", EdgeAttr::ss_weight}, {"ss-feature", EdgeAttr::ss_feature}};
const std::map<std::string, ModelKind> kModels{{"gcn", ModelKind::gcn}, {"gat", ModelKind::gat}};
const std::map<std::string, Split> kSplits{{"train", Split::train}, {"dev", Split::dev}, {"test", Split::test}};

template <class T>
std::string name_of(const std::map<std::string, T>& table, T value) {
  for (const auto& [k, v] : table)
    if (v == value) return k;
  return "?";
}

// "--edge-attr-use auto|on|off" resolved against the graph.
bool resolve_use_edge_attr(const std::string& mode, ModelKind kind, const ConvGraph& g) {
  if (mode == "on") return true;
  if (mode == "off") return false;
  return kind == ModelKind::gcn ? g.edge_weights.has_value() : g.edge_features.has_value();
}

// ---------------------------------------------------------------------------

struct ValidateOpts {
  std::string manifest, features, report;
};

int cmd_validate(const ValidateOpts& o, RunRecorder& rec) {
  const Corpus corpus = load_corpus(o.manifest, o.features);
  const ValidationReport report = validate_corpus(corpus);
  const json j = to_json(report);
  if (o.report.empty()) {
    std::cout << j.dump(2) << '\n';
  } else {
    write_json(j, o.report);
    rec.config = {{"manifest", o.manifest}, {"features", o.features}, {"report", o.report}};
    rec.inputs = {o.manifest, o.features};
    rec.outputs = {o.report};
    rec.write(o.report);
  }
  std::cout << corpus.conversations.size() << " conversations, " << corpus.utterance_count() << " utterances, "
            << report.errors.size() << " errors, " << report.warnings.size() << " warnings\n";
  if (!report.ok()) {
    std::cerr << "validation failed" << (o.report.empty() ? "" : "; report: " + o.report) << '\n';
    return 1;
  }
  return 0;
}

struct SynthOpts {
  SynthOptions synth;
  std::string out_manifest, out_features;
};

int cmd_synth(const SynthOpts& o, RunRecorder& rec) {
  const Corpus corpus = synth_corpus(o.synth);
  save_corpus(corpus, o.out_manifest, o.out_features);
  const auto& s = o.synth;
  rec.seed = s.seed;
  rec.config = {{"seed", s.seed},       {"convs", s.n_convs}, {"min_len", s.min_len}, {"max_len", s.max_len},
                {"classes", s.n_classes}, {"dim", s.dim},     {"noise", s.noise},     {"out_manifest", o.out_manifest},
                {"out_features", o.out_features}};
  rec.outputs = {o.out_manifest, o.out_features};
  rec.write(o.out_manifest);
  std::cout << "wrote " << corpus.utterance_count() << " utterances in " << corpus.conversations.size()
            << " conversations\n";
  return 0;
}

struct BuildGraphOpts {
  std::string manifest, features, out;
  std::string topology = "line";
  std::string edge_attr = "none";
  SentimentWeights weights;
};

int cmd_build_graph(const BuildGraphOpts& o, RunRecorder& rec) {
  const Corpus corpus = load_corpus(o.manifest, o.features);
  if (const auto report = validate_corpus(corpus); !report.ok()) {
    const fs::path report_path = o.out + ".validation.json";
    write_json(to_json(report), report_path);
    throw ValidationFailure("corpus failed validation; report: " + report_path.string());
  }
  const ConvGraph g = apply_edge_attr(build_graph(corpus, kTopologies.at(o.topology)), kEdgeAttrs.at(o.edge_attr), o.weights);
  save_graph(g, o.out);
  rec.config = {{"manifest", o.manifest}, {"features", o.features}, {"topology", o.topology},
                {"edge_attr", o.edge_attr}, {"shift", o.weights.shift}, {"noshift", o.weights.noshift},
                {"selfloop", o.weights.selfloop}, {"out", o.out}};
  rec.inputs = {o.manifest, o.features};
  rec.outputs = {o.out};
  rec.write(o.out);
  std::cout << "graph: " << g.n_nodes << " nodes, " << g.edges.size() << " directed edges\n";
  return 0;
}

struct TrainOpts {
  std::string graph, out, history;
  std::string model = "gcn";
  std::string edge_attr_use = "auto";
  std::uint64_t seed = 0;
  std::size_t hidden = 64;
  std::size_t max_epochs = 300;
  std::size_t patience = 30;
  double lr = 1e-3;
  double weight_decay = 1e-4;
  double leaky_slope = 0.2;
};

int cmd_train(const TrainOpts& o, RunRecorder& rec) {
  const ConvGraph g = load_graph(o.graph);
  TrainConfig cfg;
  cfg.max_epochs = o.max_epochs;
  cfg.patience = o.patience;
  cfg.seed = o.seed;
  cfg.model.kind = kModels.at(o.model);
  cfg.model.hidden_dim = o.hidden;
  cfg.model.n_classes = g.n_classes();
  cfg.model.leaky_slope = o.leaky_slope;
  cfg.model.use_edge_attr = resolve_use_edge_attr(o.edge_attr_use, cfg.model.kind, g);
  cfg.optimizer.lr = o.lr;
  cfg.optimizer.weight_decay = o.weight_decay;
  const TrainResult result = train(g, cfg);
  save_checkpoint(result.checkpoint, o.out);
  const std::string history_path = o.history.empty() ? o.out + ".history.json" : o.history;
  write_json(to_json(result.history), history_path);

  const auto& h = cfg.optimizer;
  rec.seed = o.seed;
  rec.config = {{"graph", o.graph},
                {"out", o.out},
                {"history", history_path},
                {"model", o.model},
                {"seed", o.seed},
                {"hidden", o.hidden},
                {"max_epochs", o.max_epochs},
                {"patience", o.patience},
                {"lr", h.lr},
                {"weight_decay", h.weight_decay},
                {"beta1", h.beta1},
                {"beta2", h.beta2},
                {"eps", h.eps},
                {"leaky_slope", o.leaky_slope},
                {"edge_attr_use", o.edge_attr_use},
                {"use_edge_attr", cfg.model.use_edge_attr}};
  rec.inputs = {o.graph};
  rec.outputs = {o.out, history_path};
  rec.write(o.out);
  const auto& best = result.history.epochs[result.history.best_epoch];
  std::cout << "trained " << o.model << ": " << result.history.epochs.size() << " epochs evaluated, best epoch "
            << result.history.best_epoch << " (train loss " << best.train_loss << ", dev weighted-F1 "
            << best.dev_weighted_f1 << ")\n";
  return 0;
}

struct EvalOpts {
  std::string ckpt, graph, report, confusion;
  std::string split = "test";
};

int cmd_eval(const EvalOpts& o, RunRecorder& rec) {
  const Checkpoint ck = load_checkpoint(o.ckpt);
  const ConvGraph g = load_graph(o.graph);
  const Metrics m = evaluate(ck, g, kSplits.at(o.split));
  const std::string stem = o.ckpt + "." + o.split;
  const std::string report = o.report.empty() ? stem + ".metrics.json" : o.report;
  const std::string confusion = o.confusion.empty() ? stem + ".confusion.csv" : o.confusion;
  json j = to_json(m, g.class_names);
  j["split"] = o.split;
  write_json(j, report);
  write_confusion_csv(m, g.class_names, confusion);
  rec.config = {{"ckpt", o.ckpt}, {"graph", o.graph}, {"split", o.split}, {"report", report}, {"confusion", confusion}};
  rec.inputs = {o.ckpt, o.graph};
  rec.outputs = {report, confusion};
  rec.write(report);
  std::cout << o.split << ": weighted-F1 " << m.weighted_f1 << ", accuracy " << m.accuracy << " over " << m.n_evaluated
            << " utterances\n";
  return 0;
}

struct PredictOpts {
  std::string ckpt, graph, out;
};

int cmd_predict(const PredictOpts& o, RunRecorder& rec) {
  const Checkpoint ck = load_checkpoint(o.ckpt);
  const ConvGraph g = load_graph(o.graph);
  const auto labels = predict(ck, g);
  const std::string out_path = o.out.empty() ? o.ckpt + ".predictions.csv" : o.out;
  std::ofstream out(out_path);
  if (!out) throw std::runtime_error("cannot open " + out_path + " for writing");
  out << "node,utt_id,predicted\n";
  for (std::size_t i = 0; i < labels.size(); ++i)
    out << i << ',' << (i < g.node_ids.size() ? g.node_ids[i] : "") << ','
        << (labels[i] < g.class_names.size() ? g.class_names[labels[i]] : std::to_string(labels[i])) << '\n';
  out.close();
  rec.config = {{"ckpt", o.ckpt}, {"graph", o.graph}, {"out", out_path}};
  rec.inputs = {o.ckpt, o.graph};
  rec.outputs = {out_path};
  rec.write(out_path);
  std::cout << "wrote " << labels.size() << " predictions to " << out_path << '\n';
  return 0;
}

struct GradcheckOpts {
  std::string model = "gcn";
  std::string edge_attr = "none";
  std::string dims = "4,3,2";
  std::size_t nodes = 5;
  std::uint64_t seed = 1;
  std::size_t seeds = 1;
  double h = 1e-4;
  double tol = 1e-5;
};

std::vector<std::size_t> parse_dims(const std::string& s) {
  std::vector<std::size_t> out;
  std::stringstream ss(s);
  std::string part;
  while (std::getline(ss, part, ',')) {
    std::size_t used = 0;
    long v = 0;
    try {
      v = std::stol(part, &used);
    } catch (...) {
      throw UsageError("--dims: '" + s + "' is not a list n,k,t of positive integers");
    }
    if (used != part.size() || v < 1) throw UsageError("--dims: '" + s + "' is not a list n,k,t of positive integers");
    out.push_back(static_cast<std::size_t>(v));
  }
  if (out.size() != 3) throw UsageError("--dims expects exactly three values n,k,t");
  if (out[2] < 2) throw UsageError("--dims: t must be >= 2");
  return out;
}

int cmd_gradcheck(const GradcheckOpts& o) {
  const auto dims = parse_dims(o.dims);
  std::map<std::string, double> worst;
  std::vector<std::string> order;
  std::size_t checked = 0;
  // a graph whose +-h stencil crosses an activation kink has no valid
  // finite-difference reference; it is reported and the next seed is drawn
  for (std::uint64_t seed = o.seed; checked < o.seeds; ++seed) {
    if (seed - o.seed >= 50 * o.seeds) throw std::runtime_error("gradcheck: too many kink-crossing seeds");
    Rng rng(seed);
    RandomGraphOptions gopt;
    gopt.n_nodes = o.nodes;
    gopt.feature_dim = dims[0];
    gopt.n_classes = dims[2];
    gopt.edge_attr = kEdgeAttrs.at(o.edge_attr);
    const ConvGraph g = random_graph(rng, gopt);
    TrainConfig cfg;
    cfg.seed = seed;
    cfg.model.kind = kModels.at(o.model);
    cfg.model.hidden_dim = dims[1];
    cfg.model.use_edge_attr = resolve_use_edge_attr("auto", cfg.model.kind, g);
    const GradcheckResult r = gradcheck(g, init_checkpoint(g, cfg), o.h);
    if (r.kinks_crossed() > 0) {
      std::printf("seed %llu: %zu probe(s) cross an activation kink, skipped\n", static_cast<unsigned long long>(seed),
                  r.kinks_crossed());
      continue;
    }
    ++checked;
    for (const auto& t : r.tensors) {
      if (!worst.contains(t.name)) order.push_back(t.name);
      worst[t.name] = std::max(worst[t.name], t.max_rel_error);
    }
  }
  bool ok = true;
  for (const auto& name : order) {
    const bool pass = worst[name] < o.tol;
    ok = ok && pass;
    std::printf("%-10s max_rel_error=%.3e %s\n", name.c_str(), worst[name], pass ? "ok" : "FAIL");
  }
  std::printf("%s: %zu seed(s), tolerance %.1e\n", ok ? "PASS" : "FAIL", o.seeds, o.tol);
  return ok ? 0 : 1;
}

}  // namespace

int run(const std::vector<std::string>& args) {
  CLI::App app{"Line conversation graphs for emotion recognition: corpus tools, GCN/GATv2 training and evaluation",
               "linecon"};
  app.set_version_flag("--version", kToolVersion);
  app.set_config("--config", "", "TOML/INI config file; flags override it, it overrides defaults");
  app.require_subcommand(1);

  RunRecorder rec;
  if (!args.empty()) rec.argv.assign(args.begin(), args.end());

  ValidateOpts vo;
  auto* validate = app.add_subcommand("validate", "Check a manifest + feature file against the corpus invariants");
  validate->add_option("--manifest", vo.manifest, "Manifest (JSON lines)")->required();
  validate->add_option("--features", vo.features, "LCFEAT01 feature file")->required();
  validate->add_option("--report", vo.report, "Write the validation report here (default: stdout)");

  SynthOpts so;
  auto* synth = app.add_subcommand("synth", "Generate a seeded synthetic corpus");
  synth->add_option("--seed", so.synth.seed)->capture_default_str();
  synth->add_option("--convs", so.synth.n_convs)->capture_default_str()->check(CLI::PositiveNumber);
  synth->add_option("--min-len", so.synth.min_len)->capture_default_str()->check(CLI::PositiveNumber);
  synth->add_option("--max-len", so.synth.max_len)->capture_default_str()->check(CLI::PositiveNumber);
  synth->add_option("--classes", so.synth.n_classes)->capture_default_str();
  synth->add_option("--dim", so.synth.dim)->capture_default_str();
  synth->add_option("--noise", so.synth.noise)->capture_default_str()->check(CLI::NonNegativeNumber);
  synth->add_option("--out-manifest", so.out_manifest)->required();
  synth->add_option("--out-features", so.out_features)->required();

  BuildGraphOpts bo;
  auto* build = app.add_subcommand("build-graph", "Build a conversation graph file (LCGRF01)");
  build->add_option("--manifest", bo.manifest)->required();
  build->add_option("--features", bo.features)->required();
  build->add_option("--topology", bo.topology)->capture_default_str()->check(CLI::IsMember({"line", "full"}));
  build->add_option("--edge-attr", bo.edge_attr)->capture_default_str()->check(CLI::IsMember({"none", "ss-weight", "ss-feature"}));
  build->add_option("--shift", bo.weights.shift, "Edge weight between utterances whose sentiment differs")->capture_default_str();
  build->add_option("--noshift", bo.weights.noshift, "Edge weight between utterances with equal sentiment")->capture_default_str();
  build->add_option("--selfloop", bo.weights.selfloop, "Self-loop weight")->capture_default_str();
  build->add_option("--out", bo.out)->required();

  TrainOpts to;
  auto* trainc = app.add_subcommand("train", "Full-batch training with dev weighted-F1 model selection");
  trainc->add_option("--graph", to.graph)->required();
  trainc->add_option("--out", to.out, "Checkpoint path (LCMDL01)")->required();
  trainc->add_option("--history", to.history, "Training history JSON (default: <out>.history.json)");
  trainc->add_option("--model", to.model)->capture_default_str()->check(CLI::IsMember({"gcn", "gat"}));
  trainc->add_option("--seed", to.seed)->capture_default_str();
  trainc->add_option("--hidden", to.hidden)->capture_default_str()->check(CLI::PositiveNumber);
  trainc->add_option("--max-epochs", to.max_epochs)->capture_default_str();
  trainc->add_option("--patience", to.patience)->capture_default_str();
  trainc->add_option("--lr", to.lr)->capture_default_str();
  trainc->add_option("--weight-decay", to.weight_decay)->capture_default_str();
  trainc->add_option("--leaky-slope", to.leaky_slope)->capture_default_str();
  trainc->add_option("--edge-attr-use", to.edge_attr_use, "Use graph edge attributes: auto|on|off")
      ->capture_default_str()
      ->check(CLI::IsMember({"auto", "on", "off"}));

  EvalOpts eo;
  auto* evalc = app.add_subcommand("eval", "Evaluate a checkpoint on one split");
  evalc->add_option("--ckpt", eo.ckpt)->required();
  evalc->add_option("--graph", eo.graph)->required();
  evalc->add_option("--split", eo.split)->capture_default_str()->check(CLI::IsMember({"train", "dev", "test"}));
  evalc->add_option("--report", eo.report, "Metrics JSON (default: <ckpt>.<split>.metrics.json)");
  evalc->add_option("--confusion", eo.confusion, "Confusion CSV (default: <ckpt>.<split>.confusion.csv)");

  PredictOpts po;
  auto* predictc = app.add_subcommand("predict", "Write the predicted emotion of every utterance");
  predictc->add_option("--ckpt", po.ckpt)->required();
  predictc->add_option("--graph", po.graph)->required();
  predictc->add_option("--out", po.out, "Predictions CSV (default: <ckpt>.predictions.csv)");

  GradcheckOpts go;
  auto* grad = app.add_subcommand("gradcheck", "Compare analytic gradients with central finite differences");
  grad->add_option("--model", go.model)->capture_default_str()->check(CLI::IsMember({"gcn", "gat"}));
  grad->add_option("--edge-attr", go.edge_attr)->capture_default_str()->check(CLI::IsMember({"none", "ss-weight", "ss-feature"}));
  grad->add_option("--nodes", go.nodes)->capture_default_str()->check(CLI::PositiveNumber);
  grad->add_option("--dims", go.dims, "n,k,t: feature, hidden and class dims")->capture_default_str();
  grad->add_option("--seed", go.seed)->capture_default_str();
  grad->add_option("--seeds", go.seeds, "Number of consecutive seeds")->capture_default_str()->check(CLI::PositiveNumber);
  grad->add_option("--step", go.h, "Central finite-difference step h")->capture_default_str();
  grad->add_option("--tol", go.tol, "Relative error tolerance")->capture_default_str();

  std::vector<std::string> rev(args.rbegin(), args.rend());
  try {
    app.parse(rev);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    for (const auto* sub : app.get_subcommands()) rec.command = sub->get_name();
    if (*validate) return cmd_validate(vo, rec);
    if (*synth) return cmd_synth(so, rec);
    if (*build) return cmd_build_graph(bo, rec);
    if (*trainc) return cmd_train(to, rec);
    if (*evalc) return cmd_eval(eo, rec);
    if (*predictc) return cmd_predict(po, rec);
    if (*grad) return cmd_gradcheck(go);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 2;
}

}  // namespace linecon::cli
