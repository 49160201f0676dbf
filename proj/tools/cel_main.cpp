// cel: partial-label-learning experiments with class-wise embeddings.
//
// Subcommands: gen-data, validate, train, eval, ablate, contrast, sweep,
// plot. Exit codes: 0 success, 1 input/integrity error, 2 usage error,
// 3 numerical failure. CEL_SERIAL=1 forces the bit-deterministic scalar
// math path.

#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "cel/candidate_gen.hpp"
#include "cel/config_io.hpp"
#include "cel/data.hpp"
#include "cel/eval.hpp"
#include "cel/kernels.hpp"
#include "cel/losses.hpp"
#include "cel/network.hpp"
#include "cel/plot.hpp"
#include "cel/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace cel;

namespace {

constexpr const char* kVersion = "cel 0.1.0";

std::string iso_now() {
  std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  char buf[32];
  std::tm tm_utc{};
  gmtime_r(&t, &tm_utc);
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm_utc);
  return buf;
}

std::string fmt17(double x) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return buf;
}

// 0 on success; 1 when the path is occupied and --force is absent.
int prepare_out_dir(const fs::path& out, bool force) {
  std::error_code ec;
  if (fs::exists(out, ec)) {
    if (!fs::is_directory(out, ec)) {
      std::fprintf(stderr, "error: output path %s exists and is not a directory\n",
                   out.string().c_str());
      return 1;
    }
    if (!fs::is_empty(out, ec) && !force) {
      std::fprintf(stderr, "error: output directory %s is not empty (pass --force to overwrite)\n",
                   out.string().c_str());
      return 1;
    }
  } else {
    fs::create_directories(out);
  }
  return 0;
}

void write_run_manifest(const fs::path& dir, const std::string& command, const json& resolved,
                        std::uint64_t seed) {
  json j;
  j["command"] = command;
  j["config"] = resolved;
  j["version"] = kVersion;
  j["seed"] = seed;
  j["output_dir"] = dir.string();
  j["wall_clock_start"] = iso_now();
  std::ofstream out(dir / "run_manifest.json", std::ios::trunc);
  if (!out) throw data::FormatError("cannot write run manifest in " + dir.string());
  out << j.dump(2) << "\n";
}

std::string dataset_id_of(const std::string& path) {
  fs::path p = fs::path(path).lexically_normal();
  std::string name = p.filename().string();
  if (name.empty() || name == ".") name = p.parent_path().filename().string();
  return name.empty() ? path : name;
}

data::PartialLabelDataset load_validated(const std::string& dir) {
  auto ds = data::load_dataset(dir);
  auto report = data::validate_dataset(ds);
  if (!report.ok()) {
    std::fprintf(stderr, "error: dataset %s failed validation:\n", dir.c_str());
    for (const auto& issue : report.issues)
      std::fprintf(stderr, "  row %ld [%s] %s\n", issue.row, issue.code.c_str(),
                   issue.message.c_str());
    throw data::IntegrityError("invalid dataset: " + dir);
  }
  return ds;
}

// ---- shared train/model flag plumbing ----

struct TrainFlags {
  std::optional<double> alpha, beta, gamma1, gamma2, lr, momentum, weight_decay;
  std::optional<std::uint32_t> tw, tmax, batch_size, eval_every, checkpoint_every;
  std::optional<std::uint32_t> embed_len, attn_width, token_count, token_dim;
  std::optional<double> query_scale;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> selection, activation;
  std::vector<std::uint32_t> hidden;
  CLI::Option* hidden_opt = nullptr;
};

// grid_mode skips scalar options whose names a sweep reuses as grid axes.
void add_train_flags(CLI::App* cmd, TrainFlags& f, bool grid_mode = false) {
  if (!grid_mode) {
    cmd->add_option("--alpha", f.alpha, "weight of the class associative loss");
    cmd->add_option("--beta", f.beta, "weight of the prototype discriminative loss");
    cmd->add_option("--gamma1", f.gamma1, "cross-set term weight inside the associative loss");
    cmd->add_option("--gamma2", f.gamma2,
                    "cross-prototype term weight inside the prototype loss");
  }
  cmd->add_option("--tw", f.tw, "last epoch of stage one");
  cmd->add_option("--tmax", f.tmax, "total training epochs");
  cmd->add_option("--batch-size", f.batch_size, "minibatch size")
      ->check(CLI::PositiveNumber);
  cmd->add_option("--lr", f.lr, "initial learning rate")->check(CLI::PositiveNumber);
  cmd->add_option("--momentum", f.momentum, "momentum coefficient")
      ->check(CLI::Range(0.0, 0.999999));
  cmd->add_option("--weight-decay", f.weight_decay, "L2 weight decay")
      ->check(CLI::NonNegativeNumber);
  cmd->add_option("--seed", f.seed, "training seed");
  cmd->add_option("--selection", f.selection, "high-confidence selection rule")
      ->check(CLI::IsMember({"strict", "restricted"}));
  cmd->add_option("--eval-every", f.eval_every, "epochs between metric evaluations");
  cmd->add_option("--checkpoint-every", f.checkpoint_every, "epochs between checkpoints");
  if (!grid_mode) cmd->add_option("--embed-len", f.embed_len, "class-wise embedding length");
  cmd->add_option("--attn-width", f.attn_width, "attention key/value width");
  cmd->add_option("--query-scale", f.query_scale, "class query init scale")
      ->check(CLI::PositiveNumber);
  cmd->add_option("--token-count", f.token_count, "backbone token count");
  cmd->add_option("--token-dim", f.token_dim, "backbone token dimension");
  f.hidden_opt = cmd->add_option("--hidden", f.hidden, "backbone hidden layer widths")
                     ->delimiter(',');
  cmd->add_option("--activation", f.activation, "backbone activation")
      ->check(CLI::IsMember({"tanh", "relu", "identity"}));
}

void apply_train_flags(const TrainFlags& f, net::ModelConfig& mcfg, train::TrainConfig& tcfg) {
  if (f.alpha) tcfg.weights.alpha = *f.alpha;
  if (f.beta) tcfg.weights.beta = *f.beta;
  if (f.gamma1) tcfg.weights.gamma1 = *f.gamma1;
  if (f.gamma2) tcfg.weights.gamma2 = *f.gamma2;
  if (f.tw) tcfg.weights.t_w = *f.tw;
  if (f.tmax) tcfg.weights.t_max = *f.tmax;
  if (f.batch_size) tcfg.batch_size = *f.batch_size;
  if (f.lr) tcfg.learning_rate = *f.lr;
  if (f.momentum) tcfg.momentum = *f.momentum;
  if (f.weight_decay) tcfg.weight_decay = *f.weight_decay;
  if (f.seed) tcfg.seed = *f.seed;
  if (f.selection)
    tcfg.selection = *f.selection == "strict" ? loss::SelectionMode::strict
                                              : loss::SelectionMode::restricted;
  if (f.eval_every) tcfg.eval_every = *f.eval_every;
  if (f.checkpoint_every) tcfg.checkpoint_every = *f.checkpoint_every;
  if (f.embed_len) mcfg.encoder.embed_len = *f.embed_len;
  if (f.attn_width) mcfg.encoder.attn_width = *f.attn_width;
  if (f.query_scale) mcfg.encoder.query_scale = *f.query_scale;
  if (f.token_count) mcfg.backbone.token_count = *f.token_count;
  if (f.token_dim) mcfg.backbone.token_dim = *f.token_dim;
  if (f.hidden_opt && f.hidden_opt->count() > 0) mcfg.backbone.hidden = f.hidden;
  if (f.activation) {
    if (*f.activation == "tanh")
      mcfg.backbone.act = net::Activation::tanh_fn;
    else if (*f.activation == "relu")
      mcfg.backbone.act = net::Activation::relu;
    else
      mcfg.backbone.act = net::Activation::identity;
  }
}

void load_config_file(const std::string& path, net::ModelConfig& mcfg,
                      train::TrainConfig& tcfg) {
  std::ifstream in(path);
  if (!in) throw data::FormatError("missing config file: " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw data::FormatError("config parse error in " + path + ": " + e.what());
  }
  for (const auto& item : j.items()) {
    if (item.key() != "model" && item.key() != "train")
      throw std::invalid_argument("config file: unknown section '" + item.key() + "'");
  }
  if (j.contains("model")) mcfg = cfgio::model_config_from_json(j.at("model"));
  if (j.contains("train")) tcfg = cfgio::train_config_from_json(j.at("train"));
}

json resolved_config_json(const net::ModelConfig& mcfg, const train::TrainConfig& tcfg) {
  return json{{"model", cfgio::model_config_to_json(mcfg)},
              {"train", cfgio::train_config_to_json(tcfg)}};
}

// ---- gen-data ----

struct GenOpts {
  std::uint32_t q = 8, m = 2000, d = 16;
  std::string generator = "id";
  double rate = 0.3;
  std::uint64_t seed = 7;
  std::string out;
  std::uint32_t test_m = 0;
  std::string test_out;
  double overlap = 0.35, spread = 1.0;
  std::uint32_t superclass_size = 5;
  int aux_epochs = 15;
  std::uint32_t aux_hidden = 48;
  bool force = false;
};

int cmd_gen_data(const GenOpts& o) {
  if (o.test_m > 0 && o.test_out.empty()) {
    std::fprintf(stderr, "error: --test-m requires --test-out\n");
    return 2;
  }

  gen::SyntheticSpec spec;
  spec.q = o.q;
  spec.d = o.d;
  spec.m = o.m + o.test_m;
  spec.cluster_spread = o.spread;
  spec.overlap = o.overlap;
  spec.seed = o.seed;
  auto syn = gen::synthesize_gaussian(spec);

  std::vector<float> train_x(syn.features.begin(), syn.features.begin() + std::size_t(o.m) * o.d);
  std::vector<std::uint16_t> train_y(syn.truth.begin(), syn.truth.begin() + o.m);

  data::LabelSpace labels = syn.labels;
  std::vector<std::uint32_t> superclass_of;
  if (o.generator == "hier") {
    superclass_of.resize(o.q);
    for (std::uint32_t j = 0; j < o.q; ++j) superclass_of[j] = j / o.superclass_size;
    labels.superclass_of = superclass_of;
  }

  gen::GenResult gres;
  if (o.generator == "uniform") {
    gres = gen::generate_uniform(train_y, o.q, o.rate, o.seed);
  } else {
    gen::AuxConfig acfg;
    acfg.epochs = o.aux_epochs;
    acfg.seed = o.seed;
    acfg.hidden = o.aux_hidden;
    Mat scores = gen::train_aux_scorer(train_x, o.m, o.d, train_y, o.q, acfg);
    gres = o.generator == "id"
               ? gen::generate_instance_dependent(scores, train_y, o.rate, o.seed)
               : gen::generate_hierarchical(scores, train_y, superclass_of, o.rate, o.seed);
  }

  data::PartialLabelDataset ds;
  ds.m = o.m;
  ds.d = o.d;
  ds.labels = labels;
  ds.features = std::move(train_x);
  ds.truth = std::move(train_y);
  ds.candidates = std::move(gres.candidates);
  char source[160];
  std::snprintf(source, sizeof(source),
                "synthetic-gaussian q=%u d=%u m=%u spread=%g overlap=%g", o.q, o.d, spec.m,
                o.spread, o.overlap);
  ds.meta.kind = o.generator == "id" ? "instance_dependent"
                                     : (o.generator == "hier" ? "hierarchical" : "uniform");
  ds.meta.rate = o.rate;
  ds.meta.seed = o.seed;
  ds.meta.source = source;
  ds.meta.fallback_uniform_rows = gres.fallback_uniform_rows;
  ds.meta.singleton_superclass_rows = gres.singleton_superclass_rows;

  if (int rc = prepare_out_dir(o.out, o.force)) return rc;
  json resolved{{"q", o.q},       {"m", o.m},           {"d", o.d},
                {"generator", o.generator}, {"rate", o.rate},     {"seed", o.seed},
                {"overlap", o.overlap},     {"spread", o.spread}, {"test_m", o.test_m},
                {"superclass_size", o.superclass_size}, {"aux_epochs", o.aux_epochs},
                {"aux_hidden", o.aux_hidden}};
  write_run_manifest(o.out, "gen-data", resolved, o.seed);
  data::save_dataset(ds, o.out);

  auto stats = data::candidate_stats(ds);
  std::printf("dataset %s: m=%u d=%u q=%u avg_cls=%.4f fallback_rows=%llu singleton_rows=%llu\n",
              o.out.c_str(), o.m, o.d, o.q, stats.avg_cls,
              static_cast<unsigned long long>(ds.meta.fallback_uniform_rows),
              static_cast<unsigned long long>(ds.meta.singleton_superclass_rows));

  if (o.test_m > 0) {
    data::PartialLabelDataset ts;
    ts.m = o.test_m;
    ts.d = o.d;
    ts.labels = labels;
    ts.features.assign(syn.features.begin() + std::size_t(o.m) * o.d, syn.features.end());
    ts.truth.assign(syn.truth.begin() + o.m, syn.truth.end());
    ts.candidates = data::CandidateMatrix(o.test_m, o.q);
    for (std::uint32_t i = 0; i < o.test_m; ++i) ts.candidates.set(i, ts.truth[i], true);
    ts.meta.kind = "supervised";
    ts.meta.rate = 0.0;
    ts.meta.seed = o.seed;
    ts.meta.source = source;
    if (int rc = prepare_out_dir(o.test_out, o.force)) return rc;
    write_run_manifest(o.test_out, "gen-data", resolved, o.seed);
    data::save_dataset(ts, o.test_out);
    std::printf("test split %s: m=%u (singleton candidate sets)\n", o.test_out.c_str(),
                o.test_m);
  }
  return 0;
}

// ---- validate ----

int cmd_validate(const std::string& dir) {
  auto ds = data::load_dataset(dir);
  auto report = data::validate_dataset(ds);
  if (report.ok()) {
    auto stats = data::candidate_stats(ds);
    std::printf("ok: m=%u d=%u q=%u avg_cls=%.4f\n", ds.m, ds.d, ds.q(), stats.avg_cls);
    return 0;
  }
  for (const auto& issue : report.issues)
    std::fprintf(stderr, "row %ld [%s] %s\n", issue.row, issue.code.c_str(),
                 issue.message.c_str());
  std::fprintf(stderr, "invalid dataset: %zu issue(s)\n", report.issues.size());
  return 1;
}

// ---- train ----

struct TrainOpts {
  std::string data, test_data, out, config, resume;
  TrainFlags flags;
  bool force = false;
};

int cmd_train(const TrainOpts& o) {
  auto ds = load_validated(o.data);
  std::optional<data::PartialLabelDataset> test_ds;
  if (!o.test_data.empty()) test_ds = load_validated(o.test_data);

  net::ModelConfig mcfg;
  train::TrainConfig tcfg;
  if (!o.config.empty()) load_config_file(o.config, mcfg, tcfg);
  apply_train_flags(o.flags, mcfg, tcfg);
  mcfg.backbone.input_dim = static_cast<std::uint32_t>(ds.d);
  mcfg.encoder.classes = ds.q();

  if (int rc = prepare_out_dir(o.out, o.force)) return rc;
  json resolved = resolved_config_json(mcfg, tcfg);
  resolved["data"] = o.data;
  if (!o.test_data.empty()) resolved["test_data"] = o.test_data;
  if (!o.resume.empty()) resolved["resume"] = o.resume;
  write_run_manifest(o.out, "train", resolved, tcfg.seed);

  if (tcfg.checkpoint_every > 0) {
    tcfg.checkpoint_dir = (fs::path(o.out) / "checkpoints").string();
    fs::create_directories(tcfg.checkpoint_dir);
  }

  auto view = train::make_train_view(ds);
  auto obs = eval::make_observer(ds, test_ds ? &*test_ds : nullptr);

  train::TrainState st;
  if (!o.resume.empty()) {
    st = train::load_checkpoint(o.resume);
    if (st.model_config.backbone.input_dim != ds.d || st.model_config.encoder.classes != ds.q())
      throw std::invalid_argument("resume checkpoint does not match dataset shape");
  } else {
    st = train::init_state(view, mcfg, tcfg);
  }

  train::train(view, tcfg, st, obs);

  train::write_history_csv((fs::path(o.out) / "history.csv").string(), st.history);
  train::save_checkpoint((fs::path(o.out) / "checkpoint").string(), st, tcfg);

  json metrics;
  metrics["epochs"] = st.epoch;
  if (!st.history.epochs.empty()) {
    const auto& last = st.history.epochs.back();
    metrics["loss_cls"] = last.loss_cls;
    metrics["loss_cal"] = last.loss_cal;
    metrics["loss_pdl"] = last.loss_pdl;
    metrics["train_acc"] = last.train_acc;
    metrics["test_acc"] = last.test_acc;
    metrics["conf_hit_rate"] = last.conf_hit_rate;
  }
  std::ofstream mf(fs::path(o.out) / "final_metrics.json", std::ios::trunc);
  mf << metrics.dump(2) << "\n";

  if (!st.history.epochs.empty()) {
    const auto& last = st.history.epochs.back();
    std::printf("trained %u epochs: loss_cls=%.6f train_acc=%s test_acc=%s\n", st.epoch,
                last.loss_cls, fmt17(last.train_acc).c_str(), fmt17(last.test_acc).c_str());
  } else {
    std::printf("trained 0 epochs\n");
  }
  return 0;
}

// ---- eval ----

struct EvalOpts {
  std::string checkpoint, data, test_data, out;
  bool force = false;
};

int cmd_eval(const EvalOpts& o) {
  auto st = train::load_checkpoint(o.checkpoint);
  auto ds = load_validated(o.data);
  if (st.model_config.backbone.input_dim != ds.d || st.model_config.encoder.classes != ds.q())
    throw std::invalid_argument("checkpoint does not match dataset shape");

  json out;
  out["epoch"] = st.epoch;
  Mat p = train::predict(st.model, ds.features.data(), ds.m, ds.d);
  out["accuracy"] = eval::accuracy(p, {ds.truth.data(), ds.m});
  if (st.confidence.m == ds.m && st.confidence.q == ds.q()) {
    out["disambiguation_rate"] =
        eval::disambiguation_rate(st.confidence, {ds.truth.data(), ds.m}, ds.candidates);
  }
  if (!o.test_data.empty()) {
    auto ts = load_validated(o.test_data);
    if (st.model_config.backbone.input_dim != ts.d || st.model_config.encoder.classes != ts.q())
      throw std::invalid_argument("checkpoint does not match test dataset shape");
    Mat pt = train::predict(st.model, ts.features.data(), ts.m, ts.d);
    out["test_accuracy"] = eval::accuracy(pt, {ts.truth.data(), ts.m});
  }

  std::printf("%s\n", out.dump(2).c_str());
  if (!o.out.empty()) {
    if (int rc = prepare_out_dir(o.out, o.force)) return rc;
    write_run_manifest(o.out, "eval",
                       json{{"checkpoint", o.checkpoint}, {"data", o.data},
                            {"test_data", o.test_data}},
                       0);
    std::ofstream f(fs::path(o.out) / "eval.json", std::ios::trunc);
    f << out.dump(2) << "\n";
  }
  return 0;
}

// ---- ablate ----

struct AblateOpts {
  std::string data, test_data, out, config;
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
  TrainFlags flags;
  bool force = false;
};

int cmd_ablate(const AblateOpts& o) {
  auto ds = load_validated(o.data);
  auto ts = load_validated(o.test_data);

  net::ModelConfig mcfg;
  train::TrainConfig tcfg;
  if (!o.config.empty()) load_config_file(o.config, mcfg, tcfg);
  apply_train_flags(o.flags, mcfg, tcfg);
  mcfg.backbone.input_dim = static_cast<std::uint32_t>(ds.d);
  mcfg.encoder.classes = ds.q();

  if (int rc = prepare_out_dir(o.out, o.force)) return rc;
  json resolved = resolved_config_json(mcfg, tcfg);
  resolved["data"] = o.data;
  resolved["test_data"] = o.test_data;
  resolved["seeds"] = o.seeds;
  write_run_manifest(o.out, "ablate", resolved, tcfg.seed);

  auto tbl = eval::run_ablation(ds, ts, mcfg, tcfg, o.seeds, dataset_id_of(o.data));

  std::vector<eval::ResultRow> rows;
  for (const auto& run : tbl.runs) {
    eval::ResultRow r;
    r.method = run.method;
    r.dataset_id = run.dataset_id;
    r.seed = run.seed;
    r.alpha = run.method == "cls_only" ? 0.0 : tcfg.weights.alpha;
    r.beta = run.method == "full" ? tcfg.weights.beta : 0.0;
    r.gamma1 = tcfg.weights.gamma1;
    r.gamma2 = tcfg.weights.gamma2;
    r.embed_len = mcfg.encoder.embed_len;
    r.final_acc = run.final_test_acc;
    rows.push_back(std::move(r));
  }
  eval::write_results_csv((fs::path(o.out) / "results.csv").string(), rows);
  eval::write_comparison_json((fs::path(o.out) / "comparison.json").string(), tbl);

  for (const auto& m : tbl.methods)
    std::printf("%-10s mean=%.4f std=%.4f\n", m.method.c_str(), m.mean, m.stddev);
  for (const auto& c : tbl.cells)
    std::printf("%-10s vs %s: %s (t=%.4f p=%.6f mean_diff=%.4f)\n", c.method.c_str(),
                tbl.reference.c_str(), eval::verdict_name(c.verdict), c.t, c.p, c.mean_diff);
  return 0;
}

// ---- contrast ----

struct ContrastOpts {
  std::string data, test_data, out;
  double rate = 0.3;
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
  int aux_epochs = 15;
  TrainFlags flags;
  bool force = false;
};

int cmd_contrast(const ContrastOpts& o) {
  auto ds = load_validated(o.data);
  auto ts = load_validated(o.test_data);

  net::ModelConfig mcfg;
  train::TrainConfig tcfg;
  apply_train_flags(o.flags, mcfg, tcfg);
  mcfg.backbone.input_dim = static_cast<std::uint32_t>(ds.d);

  if (int rc = prepare_out_dir(o.out, o.force)) return rc;
  json resolved = resolved_config_json(mcfg, tcfg);
  resolved["data"] = o.data;
  resolved["test_data"] = o.test_data;
  resolved["rate"] = o.rate;
  resolved["seeds"] = o.seeds;
  resolved["aux_epochs"] = o.aux_epochs;
  write_run_manifest(o.out, "contrast", resolved, tcfg.seed);

  eval::ContrastInput in;
  in.pool = &ds;
  in.test = &ts;
  gen::AuxConfig aux;
  aux.epochs = o.aux_epochs;
  auto curves = eval::run_setting_contrast(in, o.rate, mcfg.backbone, tcfg, aux, o.seeds);

  std::ofstream csv(fs::path(o.out) / "contrast.csv", std::ios::trunc);
  csv << "setting,seed,epoch,test_acc\n";
  for (const auto& sc : curves.seeds) {
    for (std::size_t e = 0; e < sc.acc_id.size(); ++e)
      csv << "instance_dependent," << sc.seed << ',' << e + 1 << ',' << fmt17(sc.acc_id[e])
          << '\n';
    for (std::size_t e = 0; e < sc.acc_uniform.size(); ++e)
      csv << "uniform," << sc.seed << ',' << e + 1 << ',' << fmt17(sc.acc_uniform[e]) << '\n';
  }
  csv.close();

  json j;
  j["median_epochs_to_half_instance_dependent"] = curves.median_epochs_id;
  j["median_epochs_to_half_uniform"] = curves.median_epochs_uniform;
  json per_seed = json::array();
  for (const auto& sc : curves.seeds) {
    per_seed.push_back(json{{"seed", sc.seed},
                            {"avg_cls_instance_dependent", sc.avg_cls_id},
                            {"avg_cls_uniform", sc.avg_cls_uniform},
                            {"uniform_rate", sc.uniform_rate},
                            {"epochs_to_half_instance_dependent", sc.epochs_to_half_id},
                            {"epochs_to_half_uniform", sc.epochs_to_half_uniform}});
  }
  j["seeds"] = per_seed;
  std::ofstream jf(fs::path(o.out) / "contrast.json", std::ios::trunc);
  jf << j.dump(2) << "\n";

  std::printf("median epochs to 50%% accuracy: instance-dependent=%u uniform=%u\n",
              curves.median_epochs_id, curves.median_epochs_uniform);
  return 0;
}

// ---- sweep ----

struct SweepOpts {
  std::string data, test_data, out, config;
  std::vector<double> alpha, beta, gamma1, gamma2;
  std::vector<std::uint32_t> embed_len;
  std::vector<std::uint64_t> seeds{1, 2, 3};
  TrainFlags flags;
  bool force = false;
};

int cmd_sweep(const SweepOpts& o) {
  auto ds = load_validated(o.data);
  auto ts = load_validated(o.test_data);

  net::ModelConfig mcfg;
  train::TrainConfig tcfg;
  if (!o.config.empty()) load_config_file(o.config, mcfg, tcfg);
  apply_train_flags(o.flags, mcfg, tcfg);
  mcfg.backbone.input_dim = static_cast<std::uint32_t>(ds.d);
  mcfg.encoder.classes = ds.q();

  if (int rc = prepare_out_dir(o.out, o.force)) return rc;
  json resolved = resolved_config_json(mcfg, tcfg);
  resolved["data"] = o.data;
  resolved["test_data"] = o.test_data;
  resolved["grid"] = json{{"alpha", o.alpha},
                          {"beta", o.beta},
                          {"gamma1", o.gamma1},
                          {"gamma2", o.gamma2},
                          {"embed_len", o.embed_len}};
  resolved["seeds"] = o.seeds;
  write_run_manifest(o.out, "sweep", resolved, tcfg.seed);

  eval::SweepGrid grid;
  grid.alpha = o.alpha;
  grid.beta = o.beta;
  grid.gamma1 = o.gamma1;
  grid.gamma2 = o.gamma2;
  grid.embed_len = o.embed_len;
  auto rows = eval::sweep(ds, ts, mcfg, tcfg, grid, o.seeds);

  std::string dataset_id = dataset_id_of(o.data);
  std::vector<eval::ResultRow> out_rows;
  json errors = json::array();
  for (const auto& r : rows) {
    eval::ResultRow rr;
    rr.method = "cel";
    rr.dataset_id = dataset_id;
    rr.seed = r.seed;
    rr.alpha = r.alpha;
    rr.beta = r.beta;
    rr.gamma1 = r.gamma1;
    rr.gamma2 = r.gamma2;
    rr.embed_len = r.embed_len;
    rr.final_acc = r.failed ? std::nan("") : r.final_acc;
    out_rows.push_back(std::move(rr));
    if (r.failed)
      errors.push_back(json{{"alpha", r.alpha},
                            {"beta", r.beta},
                            {"gamma1", r.gamma1},
                            {"gamma2", r.gamma2},
                            {"embed_len", r.embed_len},
                            {"seed", r.seed},
                            {"error", r.error}});
  }
  eval::write_results_csv((fs::path(o.out) / "sweep.csv").string(), out_rows);
  if (!errors.empty()) {
    std::ofstream ef(fs::path(o.out) / "sweep_errors.json", std::ios::trunc);
    ef << errors.dump(2) << "\n";
  }
  std::printf("sweep: %zu runs, %zu failed\n", rows.size(), errors.size());
  return 0;
}

// ---- plot ----

struct PlotOpts {
  std::string history, results, sweep_csv, contrast_csv, out;
  std::string x_axis = "alpha", y_axis = "beta";
};

double sweep_param(const eval::ResultRow& r, const std::string& name) {
  if (name == "alpha") return r.alpha;
  if (name == "beta") return r.beta;
  if (name == "gamma1") return r.gamma1;
  if (name == "gamma2") return r.gamma2;
  if (name == "embed_len") return static_cast<double>(r.embed_len);
  throw std::invalid_argument("unknown sweep axis: " + name);
}

int cmd_plot(const PlotOpts& o) {
  int modes = int(!o.history.empty()) + int(!o.results.empty()) + int(!o.sweep_csv.empty()) +
              int(!o.contrast_csv.empty());
  if (modes != 1) {
    std::fprintf(stderr,
                 "error: pass exactly one of --history, --results, --sweep, --contrast\n");
    return 2;
  }

  if (!o.history.empty()) {
    auto h = train::read_history_csv(o.history);
    auto series_of = [&](const char* name, auto getter) {
      plot::Series s;
      s.name = name;
      for (const auto& r : h.epochs) {
        s.xs.push_back(r.epoch);
        s.ys.push_back(getter(r));
      }
      return s;
    };
    std::vector<plot::Series> series;
    series.push_back(series_of("loss_cls", [](const auto& r) { return r.loss_cls; }));
    series.push_back(series_of("loss_cal", [](const auto& r) { return r.loss_cal; }));
    series.push_back(series_of("loss_pdl", [](const auto& r) { return r.loss_pdl; }));
    series.push_back(series_of("train_acc", [](const auto& r) { return r.train_acc; }));
    series.push_back(series_of("test_acc", [](const auto& r) { return r.test_acc; }));
    plot::write_line_chart(o.out, "training history", "epoch", "value", series);
  } else if (!o.results.empty()) {
    auto rows = eval::read_results_csv(o.results);
    std::map<std::string, std::vector<double>> by_method;
    for (const auto& r : rows)
      if (!std::isnan(r.final_acc)) by_method[r.method].push_back(r.final_acc);
    std::vector<plot::Bar> bars;
    for (const auto& [method, accs] : by_method) {
      double mean = 0;
      for (double a : accs) mean += a;
      mean /= static_cast<double>(accs.size());
      double ss = 0;
      for (double a : accs) ss += (a - mean) * (a - mean);
      double sd = accs.size() > 1 ? std::sqrt(ss / static_cast<double>(accs.size() - 1)) : 0.0;
      bars.push_back(plot::Bar{method, mean, sd});
    }
    plot::write_bar_chart(o.out, "final test accuracy by method", "accuracy", bars);
  } else if (!o.sweep_csv.empty()) {
    auto rows = eval::read_results_csv(o.sweep_csv);
    std::map<std::pair<double, double>, std::pair<double, std::size_t>> cells;
    for (const auto& r : rows) {
      if (std::isnan(r.final_acc)) continue;
      auto key = std::make_pair(sweep_param(r, o.x_axis), sweep_param(r, o.y_axis));
      cells[key].first += r.final_acc;
      cells[key].second += 1;
    }
    std::vector<double> xs, ys;
    for (const auto& [key, _] : cells) {
      if (xs.empty() || xs.back() != key.first) xs.push_back(key.first);
      ys.push_back(key.second);
    }
    std::sort(xs.begin(), xs.end());
    xs.erase(std::unique(xs.begin(), xs.end()), xs.end());
    std::sort(ys.begin(), ys.end());
    ys.erase(std::unique(ys.begin(), ys.end()), ys.end());
    Mat grid(ys.size(), xs.size());
    grid.fill(std::nan(""));
    for (const auto& [key, acc] : cells) {
      std::size_t xi = std::lower_bound(xs.begin(), xs.end(), key.first) - xs.begin();
      std::size_t yi = std::lower_bound(ys.begin(), ys.end(), key.second) - ys.begin();
      grid.at(yi, xi) = acc.first / static_cast<double>(acc.second);
    }
    auto tick_strings = [](const std::vector<double>& vs) {
      std::vector<std::string> out;
      for (double v : vs) {
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%g", v);
        out.push_back(buf);
      }
      return out;
    };
    plot::write_heatmap(o.out, "mean final accuracy", o.x_axis, o.y_axis, tick_strings(xs),
                        tick_strings(ys), grid);
  } else {
    std::ifstream in(o.contrast_csv);
    if (!in) throw data::FormatError("missing contrast csv: " + o.contrast_csv);
    std::string line;
    std::getline(in, line);
    std::map<std::string, std::map<std::uint32_t, std::pair<double, std::size_t>>> agg;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      std::stringstream ss(line);
      std::string setting, seed, epoch, acc;
      std::getline(ss, setting, ',');
      std::getline(ss, seed, ',');
      std::getline(ss, epoch, ',');
      std::getline(ss, acc, ',');
      auto& cell = agg[setting][static_cast<std::uint32_t>(std::stoul(epoch))];
      double a = std::strtod(acc.c_str(), nullptr);
      if (!std::isnan(a)) {
        cell.first += a;
        cell.second += 1;
      }
    }
    std::vector<plot::Series> series;
    for (const auto& [setting, per_epoch] : agg) {
      plot::Series s;
      s.name = setting;
      for (const auto& [epoch, cell] : per_epoch) {
        s.xs.push_back(epoch);
        s.ys.push_back(cell.second ? cell.first / static_cast<double>(cell.second)
                                   : std::nan(""));
      }
      series.push_back(std::move(s));
    }
    plot::write_line_chart(o.out, "instance-dependent vs uniform candidate sets", "epoch",
                           "mean test accuracy", series);
  }
  std::printf("wrote %s\n", o.out.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  kernels::init_from_env();

  CLI::App app{"partial label learning with class-wise embeddings"};
  app.set_version_flag("--version", std::string(kVersion));
  app.require_subcommand(1);

  GenOpts gen_opts;
  auto* gen_cmd = app.add_subcommand("gen-data", "synthesize a partial-label dataset");
  gen_cmd->add_option("--q", gen_opts.q, "number of classes")->check(CLI::Range(2, 65535));
  gen_cmd->add_option("--m", gen_opts.m, "training sample count")->check(CLI::PositiveNumber);
  gen_cmd->add_option("--d", gen_opts.d, "feature dimensionality")->check(CLI::PositiveNumber);
  gen_cmd->add_option("--generator", gen_opts.generator, "candidate generator")
      ->check(CLI::IsMember({"id", "uniform", "hier"}));
  gen_cmd->add_option("--rate", gen_opts.rate, "flip rate")->check(CLI::Range(0.0, 1.0));
  gen_cmd->add_option("--seed", gen_opts.seed, "generation seed");
  gen_cmd->add_option("--out", gen_opts.out, "output dataset directory")->required();
  gen_cmd->add_option("--test-m", gen_opts.test_m, "held-out test sample count");
  gen_cmd->add_option("--test-out", gen_opts.test_out, "test split output directory");
  gen_cmd->add_option("--overlap", gen_opts.overlap, "class overlap of the Gaussian mixture")
      ->check(CLI::PositiveNumber);
  gen_cmd->add_option("--spread", gen_opts.spread, "within-class standard deviation")
      ->check(CLI::PositiveNumber);
  gen_cmd->add_option("--superclass-size", gen_opts.superclass_size,
                      "classes per superclass (hier)")
      ->check(CLI::PositiveNumber);
  gen_cmd->add_option("--aux-epochs", gen_opts.aux_epochs, "auxiliary scorer training epochs")
      ->check(CLI::PositiveNumber);
  gen_cmd->add_option("--aux-hidden", gen_opts.aux_hidden, "auxiliary scorer hidden width")
      ->check(CLI::PositiveNumber);
  gen_cmd->add_flag("--force", gen_opts.force, "overwrite a non-empty output directory");

  std::string validate_dir;
  auto* val_cmd = app.add_subcommand("validate", "check a dataset directory");
  val_cmd->add_option("--data", validate_dir, "dataset directory")->required();

  TrainOpts train_opts;
  auto* train_cmd = app.add_subcommand("train", "train the full model");
  train_cmd->add_option("--data", train_opts.data, "training dataset directory")->required();
  train_cmd->add_option("--test-data", train_opts.test_data, "test dataset directory");
  train_cmd->add_option("--out", train_opts.out, "run output directory")->required();
  train_cmd->add_option("--config", train_opts.config, "JSON config file");
  train_cmd->add_option("--resume", train_opts.resume, "checkpoint directory to resume from");
  train_cmd->add_flag("--force", train_opts.force, "overwrite a non-empty output directory");
  add_train_flags(train_cmd, train_opts.flags);

  EvalOpts eval_opts;
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint");
  eval_cmd->add_option("--checkpoint", eval_opts.checkpoint, "checkpoint directory")->required();
  eval_cmd->add_option("--data", eval_opts.data, "dataset directory")->required();
  eval_cmd->add_option("--test-data", eval_opts.test_data, "additional dataset to score");
  eval_cmd->add_option("--out", eval_opts.out, "optional output directory");
  eval_cmd->add_flag("--force", eval_opts.force, "overwrite a non-empty output directory");

  AblateOpts ablate_opts;
  auto* ablate_cmd = app.add_subcommand("ablate", "train loss-term ablation variants");
  ablate_cmd->add_option("--data", ablate_opts.data, "training dataset directory")->required();
  ablate_cmd->add_option("--test-data", ablate_opts.test_data, "test dataset directory")
      ->required();
  ablate_cmd->add_option("--out", ablate_opts.out, "output directory")->required();
  ablate_cmd->add_option("--config", ablate_opts.config, "JSON config file");
  ablate_cmd->add_option("--seeds", ablate_opts.seeds, "training seeds")->delimiter(',');
  ablate_cmd->add_flag("--force", ablate_opts.force, "overwrite a non-empty output directory");
  add_train_flags(ablate_cmd, ablate_opts.flags);

  ContrastOpts contrast_opts;
  auto* contrast_cmd =
      app.add_subcommand("contrast", "instance-dependent vs uniform generation contrast");
  contrast_cmd->add_option("--data", contrast_opts.data, "pool dataset directory (features+truth)")
      ->required();
  contrast_cmd->add_option("--test-data", contrast_opts.test_data, "test dataset directory")
      ->required();
  contrast_cmd->add_option("--out", contrast_opts.out, "output directory")->required();
  contrast_cmd->add_option("--rate", contrast_opts.rate, "instance-dependent flip rate")
      ->check(CLI::Range(0.0, 1.0));
  contrast_cmd->add_option("--seeds", contrast_opts.seeds, "seeds")->delimiter(',');
  contrast_cmd->add_option("--aux-epochs", contrast_opts.aux_epochs,
                           "auxiliary scorer training epochs")
      ->check(CLI::PositiveNumber);
  contrast_cmd->add_flag("--force", contrast_opts.force, "overwrite a non-empty output directory");
  add_train_flags(contrast_cmd, contrast_opts.flags);

  SweepOpts sweep_opts;
  auto* sweep_cmd = app.add_subcommand("sweep", "grid sweep over loss weights and embedding length");
  sweep_cmd->add_option("--data", sweep_opts.data, "training dataset directory")->required();
  sweep_cmd->add_option("--test-data", sweep_opts.test_data, "test dataset directory")->required();
  sweep_cmd->add_option("--out", sweep_opts.out, "output directory")->required();
  sweep_cmd->add_option("--config", sweep_opts.config, "JSON config file");
  sweep_cmd->add_option("--alpha", sweep_opts.alpha, "alpha grid")->delimiter(',');
  sweep_cmd->add_option("--beta", sweep_opts.beta, "beta grid")->delimiter(',');
  sweep_cmd->add_option("--gamma1", sweep_opts.gamma1, "gamma1 grid")->delimiter(',');
  sweep_cmd->add_option("--gamma2", sweep_opts.gamma2, "gamma2 grid")->delimiter(',');
  sweep_cmd->add_option("--embed-len", sweep_opts.embed_len, "embedding length grid")
      ->delimiter(',');
  sweep_cmd->add_option("--seeds", sweep_opts.seeds, "seeds")->delimiter(',');
  sweep_cmd->add_flag("--force", sweep_opts.force, "overwrite a non-empty output directory");
  add_train_flags(sweep_cmd, sweep_opts.flags, /*grid_mode=*/true);

  PlotOpts plot_opts;
  auto* plot_cmd = app.add_subcommand("plot", "render figures from emitted CSVs");
  plot_cmd->add_option("--history", plot_opts.history, "history.csv to plot");
  plot_cmd->add_option("--results", plot_opts.results, "results.csv to plot as bars");
  plot_cmd->add_option("--sweep", plot_opts.sweep_csv, "sweep.csv to plot as a heatmap");
  plot_cmd->add_option("--contrast", plot_opts.contrast_csv, "contrast.csv to plot as curves");
  plot_cmd->add_option("--x", plot_opts.x_axis, "heatmap x axis parameter");
  plot_cmd->add_option("--y", plot_opts.y_axis, "heatmap y axis parameter");
  plot_cmd->add_option("--out", plot_opts.out, "output SVG path")->required();

  try {
    app.parse(argc, argv);
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
    if (gen_cmd->parsed()) return cmd_gen_data(gen_opts);
    if (val_cmd->parsed()) return cmd_validate(validate_dir);
    if (train_cmd->parsed()) return cmd_train(train_opts);
    if (eval_cmd->parsed()) return cmd_eval(eval_opts);
    if (ablate_cmd->parsed()) return cmd_ablate(ablate_opts);
    if (contrast_cmd->parsed()) return cmd_contrast(contrast_opts);
    if (sweep_cmd->parsed()) return cmd_sweep(sweep_opts);
    if (plot_cmd->parsed()) return cmd_plot(plot_opts);
  } catch (const train::NumericError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  } catch (const data::FormatError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const data::IntegrityError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "usage error: %s\n", e.what());
    return 2;
  } catch (const std::logic_error& e) {
    std::fprintf(stderr, "error: internal invariant violated: %s\n", e.what());
    return 3;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
