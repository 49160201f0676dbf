#include "cel/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

using nlohmann::json;

namespace cel::eval {

namespace {

std::string fmt17(double x) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return buf;
}

// Continued-fraction core of the incomplete beta function (modified Lentz).
double betacf(double a, double b, double x) {
  const int max_iter = 300;
  const double eps = 3e-14, fpmin = 1e-300;
  double qab = a + b, qap = a + 1.0, qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::fabs(d) < fpmin) d = fpmin;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= max_iter; ++m) {
    double m2 = 2.0 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < fpmin) d = fpmin;
    c = 1.0 + aa / c;
    if (std::fabs(c) < fpmin) c = fpmin;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < fpmin) d = fpmin;
    c = 1.0 + aa / c;
    if (std::fabs(c) < fpmin) c = fpmin;
    d = 1.0 / d;
    double del = d * c;
    h *= del;
    if (std::fabs(del - 1.0) < eps) break;
  }
  return h;
}

double median_u32(std::vector<std::uint32_t> xs) {
  if (xs.empty()) return 0;
  std::sort(xs.begin(), xs.end());
  return xs[xs.size() / 2];  // upper median for even sizes
}

train::TrainView view_over(const data::PartialLabelDataset& ds,
                           const data::CandidateMatrix& cands) {
  train::TrainView v;
  v.m = ds.m;
  v.d = ds.d;
  v.features = &ds.features;
  v.candidates = &cands;
  v.labels = &ds.labels;
  return v;
}

}  // namespace

std::vector<std::uint32_t> argmax_rows(const Mat& p) {
  std::vector<std::uint32_t> out(p.rows);
  for (std::size_t i = 0; i < p.rows; ++i) {
    const double* row = p.row(i);
    std::size_t best = 0;
    for (std::size_t j = 1; j < p.cols; ++j)
      if (row[j] > row[best]) best = j;
    out[i] = static_cast<std::uint32_t>(best);
  }
  return out;
}

double accuracy(const Mat& p, std::span<const std::uint16_t> truth) {
  if (p.rows != truth.size()) throw std::invalid_argument("accuracy: length mismatch");
  auto preds = argmax_rows(p);
  return accuracy(preds, truth);
}

double accuracy(std::span<const std::uint32_t> preds, std::span<const std::uint16_t> truth) {
  if (preds.size() != truth.size()) throw std::invalid_argument("accuracy: length mismatch");
  if (preds.empty()) return 0.0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < preds.size(); ++i)
    if (preds[i] == truth[i]) ++hits;
  return static_cast<double>(hits) / static_cast<double>(preds.size());
}

double disambiguation_rate(const data::ConfidenceMatrix& t, std::span<const std::uint16_t> truth,
                           const data::CandidateMatrix& candidates) {
  if (t.m != truth.size() || t.m != candidates.m || t.q != candidates.q)
    throw std::invalid_argument("disambiguation_rate: shape mismatch");
  if (t.m == 0) return 0.0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < t.m; ++i) {
    const double* row = t.row(i);
    std::size_t best = 0;
    for (std::size_t j = 1; j < t.q; ++j)
      if (row[j] > row[best]) best = j;
    if (best == truth[i]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(t.m);
}

const char* verdict_name(Verdict v) {
  switch (v) {
    case Verdict::win: return "win";
    case Verdict::tie: return "tie";
    case Verdict::loss: return "loss";
  }
  return "tie";
}

double reg_inc_beta(double a, double b, double x) {
  if (x <= 0.0) return 0.0;
  if (x >= 1.0) return 1.0;
  double bt = std::exp(std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) +
                       b * std::log(1.0 - x));
  if (x < (a + 1.0) / (a + b + 2.0)) return bt * betacf(a, b, x) / a;
  return 1.0 - bt * betacf(b, a, 1.0 - x) / b;
}

TTestResult paired_t_test(std::span<const double> a, std::span<const double> b, double alpha) {
  if (a.size() != b.size()) throw std::invalid_argument("paired t-test: length mismatch");
  if (a.size() < 2) throw std::invalid_argument("paired t-test: need n >= 2 pairs");
  const std::size_t n = a.size();
  double mean = 0.0;
  for (std::size_t i = 0; i < n; ++i) mean += a[i] - b[i];
  mean /= static_cast<double>(n);
  double ss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double d = (a[i] - b[i]) - mean;
    ss += d * d;
  }
  double sd = std::sqrt(ss / static_cast<double>(n - 1));

  TTestResult r;
  r.mean_diff = mean;
  if (sd == 0.0) {
    // Constant differences: the statistic degenerates; decide by the mean.
    if (mean == 0.0) {
      r.t = 0.0;
      r.p = 1.0;
      r.verdict = Verdict::tie;
    } else {
      r.t = mean > 0 ? std::numeric_limits<double>::infinity()
                     : -std::numeric_limits<double>::infinity();
      r.p = 0.0;
      r.verdict = mean > 0 ? Verdict::win : Verdict::loss;
    }
    return r;
  }
  r.t = mean * std::sqrt(static_cast<double>(n)) / sd;
  double df = static_cast<double>(n - 1);
  r.p = reg_inc_beta(df / 2.0, 0.5, df / (df + r.t * r.t));
  if (r.p < alpha && mean > 0)
    r.verdict = Verdict::win;
  else if (r.p < alpha && mean < 0)
    r.verdict = Verdict::loss;
  else
    r.verdict = Verdict::tie;
  return r;
}

train::Observer make_observer(const data::PartialLabelDataset& train_ds,
                              const data::PartialLabelDataset* test_ds) {
  const data::PartialLabelDataset* tr = &train_ds;
  return [tr, test_ds](const train::EpochContext& ctx, train::EpochRecord& rec) {
    Mat p = train::predict(ctx.state.model, tr->features.data(), tr->m, tr->d);
    rec.train_acc = accuracy(p, {tr->truth.data(), tr->m});
    rec.conf_hit_rate =
        disambiguation_rate(ctx.state.confidence, {tr->truth.data(), tr->m}, tr->candidates);
    if (test_ds) {
      Mat pt = train::predict(ctx.state.model, test_ds->features.data(), test_ds->m, test_ds->d);
      rec.test_acc = accuracy(pt, {test_ds->truth.data(), test_ds->m});
    }
  };
}

train::BaselineObserver make_baseline_observer(const data::PartialLabelDataset* test_ds) {
  return [test_ds](const train::BaselineState& st, std::uint32_t, train::EpochRecord& rec) {
    if (!test_ds) return;
    Mat pt = train::predict(st.model, test_ds->features.data(), test_ds->m, test_ds->d);
    rec.test_acc = accuracy(pt, {test_ds->truth.data(), test_ds->m});
  };
}

ComparisonTable run_ablation(const data::PartialLabelDataset& train_ds,
                             const data::PartialLabelDataset& test_ds,
                             const net::ModelConfig& mcfg, const train::TrainConfig& base,
                             std::span<const std::uint64_t> seeds, const std::string& dataset_id) {
  struct Variant {
    const char* name;
    double alpha;
    double beta;
  };
  const Variant variants[] = {{"cls_only", 0.0, 0.0},
                              {"cls_cal", base.weights.alpha, 0.0},
                              {"full", base.weights.alpha, base.weights.beta}};

  ComparisonTable tbl;
  tbl.dataset_id = dataset_id;
  tbl.reference = "cls_only";
  auto view = train::make_train_view(train_ds);
  auto obs = make_observer(train_ds, &test_ds);

  std::vector<std::vector<double>> scores(3);
  for (std::uint64_t seed : seeds) {
    for (std::size_t v = 0; v < 3; ++v) {
      train::TrainConfig cfg = base;
      cfg.seed = seed;
      cfg.weights.alpha = variants[v].alpha;
      cfg.weights.beta = variants[v].beta;
      try {
        auto st = train::init_state(view, mcfg, cfg);
        train::train(view, cfg, st, obs);
        if (st.history.epochs.empty() || std::isnan(st.history.epochs.back().test_acc))
          throw std::runtime_error("missing final test accuracy");
        double acc = st.history.epochs.back().test_acc;
        scores[v].push_back(acc);
        tbl.runs.push_back(RunResult{variants[v].name, dataset_id, seed, acc,
                                     std::move(st.history)});
      } catch (const std::exception& e) {
        throw std::runtime_error("ablation variant '" + std::string(variants[v].name) +
                                 "' seed " + std::to_string(seed) + ": " + e.what());
      }
    }
  }

  for (std::size_t v = 0; v < 3; ++v) {
    MethodStats ms;
    ms.method = variants[v].name;
    ms.scores = scores[v];
    double mean = 0.0;
    for (double x : scores[v]) mean += x;
    mean /= static_cast<double>(scores[v].size());
    double ss = 0.0;
    for (double x : scores[v]) ss += (x - mean) * (x - mean);
    ms.mean = mean;
    ms.stddev = scores[v].size() > 1
                    ? std::sqrt(ss / static_cast<double>(scores[v].size() - 1))
                    : 0.0;
    tbl.methods.push_back(std::move(ms));
  }

  if (seeds.size() >= 2) {
    for (std::size_t v = 1; v < 3; ++v) {
      auto t = paired_t_test(scores[v], scores[0]);
      tbl.cells.push_back(ComparisonCell{variants[v].name, t.verdict, t.t, t.p, t.mean_diff});
    }
  } else {
    for (std::size_t v = 1; v < 3; ++v) {
      double diff = scores[v][0] - scores[0][0];
      Verdict verdict = diff > 0 ? Verdict::win : (diff < 0 ? Verdict::loss : Verdict::tie);
      tbl.cells.push_back(ComparisonCell{variants[v].name, verdict, 0.0, 1.0, diff});
    }
  }
  return tbl;
}

ContrastCurves run_setting_contrast(const ContrastInput& in, double rate,
                                    const net::BackboneConfig& bcfg,
                                    const train::TrainConfig& base,
                                    const gen::AuxConfig& aux,
                                    std::span<const std::uint64_t> seeds) {
  if (!in.pool || !in.test) throw std::invalid_argument("contrast: unbound datasets");
  const auto& pool = *in.pool;
  const std::uint32_t q = pool.labels.q;

  ContrastCurves out;
  std::vector<std::uint32_t> id_epochs, uni_epochs;
  for (std::uint64_t seed : seeds) {
    ContrastSeedCurves sc;
    sc.seed = seed;

    gen::AuxConfig acfg = aux;
    acfg.seed = seed;
    Mat scores = gen::train_aux_scorer(pool.features, static_cast<std::uint32_t>(pool.m),
                                                 static_cast<std::uint32_t>(pool.d), pool.truth, q,
                                                 acfg);
    auto gen_id = gen::generate_instance_dependent(scores, pool.truth, rate, seed);
    sc.avg_cls_id = data::candidate_stats(gen_id.candidates).avg_cls;
    double ru = q > 1 ? (sc.avg_cls_id - 1.0) / static_cast<double>(q - 1) : 0.0;
    ru = std::clamp(ru, 0.0, 1.0);
    sc.uniform_rate = ru;
    auto gen_u = gen::generate_uniform(pool.truth, q, ru, seed);
    sc.avg_cls_uniform = data::candidate_stats(gen_u.candidates).avg_cls;

    train::TrainConfig cfg = base;
    cfg.seed = seed;
    cfg.eval_every = 1;  // the curves need every epoch
    auto obs = make_baseline_observer(in.test);

    auto curve_of = [&](const data::CandidateMatrix& cands, std::vector<double>& acc,
                        std::uint32_t& to_half) {
      auto view = view_over(pool, cands);
      auto st = train::train_baseline(view, bcfg, cfg, obs);
      to_half = 0;
      for (const auto& rec : st.history.epochs) {
        acc.push_back(rec.test_acc);
        if (to_half == 0 && rec.test_acc >= 0.5) to_half = rec.epoch;
      }
    };
    curve_of(gen_id.candidates, sc.acc_id, sc.epochs_to_half_id);
    curve_of(gen_u.candidates, sc.acc_uniform, sc.epochs_to_half_uniform);

    // "Never reached" sorts worst.
    id_epochs.push_back(sc.epochs_to_half_id == 0 ? std::numeric_limits<std::uint32_t>::max()
                                                  : sc.epochs_to_half_id);
    uni_epochs.push_back(sc.epochs_to_half_uniform == 0
                             ? std::numeric_limits<std::uint32_t>::max()
                             : sc.epochs_to_half_uniform);
    out.seeds.push_back(std::move(sc));
  }
  auto to_public = [](double med) {
    return med >= static_cast<double>(std::numeric_limits<std::uint32_t>::max())
               ? 0u
               : static_cast<std::uint32_t>(med);
  };
  out.median_epochs_id = to_public(median_u32(id_epochs));
  out.median_epochs_uniform = to_public(median_u32(uni_epochs));
  return out;
}

std::vector<SweepRow> sweep(const data::PartialLabelDataset& train_ds,
                            const data::PartialLabelDataset& test_ds,
                            const net::ModelConfig& mcfg, const train::TrainConfig& base,
                            const SweepGrid& grid, std::span<const std::uint64_t> seeds) {
  auto dim_d = [](const std::vector<double>& v, double fallback) {
    return v.empty() ? std::vector<double>{fallback} : v;
  };
  auto alphas = dim_d(grid.alpha, base.weights.alpha);
  auto betas = dim_d(grid.beta, base.weights.beta);
  auto g1s = dim_d(grid.gamma1, base.weights.gamma1);
  auto g2s = dim_d(grid.gamma2, base.weights.gamma2);
  std::vector<std::uint32_t> lens =
      grid.embed_len.empty() ? std::vector<std::uint32_t>{mcfg.encoder.embed_len} : grid.embed_len;

  auto view = train::make_train_view(train_ds);
  auto obs = make_observer(train_ds, &test_ds);

  std::vector<SweepRow> rows;
  for (double a : alphas)
    for (double b : betas)
      for (double g1 : g1s)
        for (double g2 : g2s)
          for (std::uint32_t len : lens)
            for (std::uint64_t seed : seeds) {
              SweepRow row;
              row.alpha = a;
              row.beta = b;
              row.gamma1 = g1;
              row.gamma2 = g2;
              row.embed_len = len;
              row.seed = seed;
              train::TrainConfig cfg = base;
              cfg.seed = seed;
              cfg.eval_every = 0;  // metrics on the final epoch only
              cfg.weights.alpha = a;
              cfg.weights.beta = b;
              cfg.weights.gamma1 = g1;
              cfg.weights.gamma2 = g2;
              net::ModelConfig mc = mcfg;
              mc.encoder.embed_len = len;
              try {
                auto st = train::init_state(view, mc, cfg);
                train::train(view, cfg, st, obs);
                if (st.history.epochs.empty() ||
                    std::isnan(st.history.epochs.back().test_acc))
                  throw std::runtime_error("missing final test accuracy");
                row.final_acc = st.history.epochs.back().test_acc;
              } catch (const std::exception& e) {
                row.failed = true;
                row.error = e.what();
              }
              rows.push_back(std::move(row));
            }
  return rows;
}

void write_results_csv(const std::string& path, std::span<const ResultRow> rows) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw data::FormatError("cannot write results csv: " + path);
  out << "method,dataset,seed,alpha,beta,gamma1,gamma2,embed_len,final_acc\n";
  for (const auto& r : rows) {
    out << r.method << ',' << r.dataset_id << ',' << r.seed << ',' << fmt17(r.alpha) << ','
        << fmt17(r.beta) << ',' << fmt17(r.gamma1) << ',' << fmt17(r.gamma2) << ','
        << r.embed_len << ',' << fmt17(r.final_acc) << '\n';
  }
  if (!out) throw data::FormatError("short write on results csv: " + path);
}

std::vector<ResultRow> read_results_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw data::FormatError("missing results csv: " + path);
  std::string line;
  if (!std::getline(in, line)) throw data::FormatError("empty results csv: " + path);
  std::vector<ResultRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != 9) throw data::FormatError("malformed results row: " + line);
    ResultRow r;
    r.method = cells[0];
    r.dataset_id = cells[1];
    r.seed = std::stoull(cells[2]);
    r.alpha = std::strtod(cells[3].c_str(), nullptr);
    r.beta = std::strtod(cells[4].c_str(), nullptr);
    r.gamma1 = std::strtod(cells[5].c_str(), nullptr);
    r.gamma2 = std::strtod(cells[6].c_str(), nullptr);
    r.embed_len = static_cast<std::uint32_t>(std::stoul(cells[7]));
    r.final_acc = std::strtod(cells[8].c_str(), nullptr);
    rows.push_back(std::move(r));
  }
  return rows;
}

void write_comparison_json(const std::string& path, const ComparisonTable& table) {
  json j;
  j["dataset"] = table.dataset_id;
  j["reference"] = table.reference;
  json methods = json::array();
  for (const auto& m : table.methods) {
    methods.push_back(json{{"method", m.method},
                           {"mean", m.mean},
                           {"std", m.stddev},
                           {"scores", m.scores}});
  }
  j["methods"] = methods;
  json cells = json::array();
  for (const auto& c : table.cells) {
    cells.push_back(json{{"method", c.method},
                         {"verdict", verdict_name(c.verdict)},
                         {"t", c.t},
                         {"p", c.p},
                         {"mean_diff", c.mean_diff}});
  }
  j["cells"] = cells;
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw data::FormatError("cannot write comparison json: " + path);
  out << j.dump(2) << "\n";
  if (!out) throw data::FormatError("short write on comparison json: " + path);
}

}  // namespace cel::eval
