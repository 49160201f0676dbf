// Evaluation-harness checks: accuracy and disambiguation on hand fixtures,
// the paired t-test against closed forms and an independent quadrature
// oracle for the t distribution, the regularized incomplete beta against
// elementary identities, the three-variant ablation, sweeps, the setting
// contrast, and CSV/JSON artifact round-trips.

#define DOCTEST_CONFIG_IMPLEMENT
#include "doctest.h"

#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numbers>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "cel/candidate_gen.hpp"
#include "cel/eval.hpp"
#include "cel/kernels.hpp"
#include "cel/trainer.hpp"
#include "json.hpp"

using namespace cel;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    static int counter = 0;
    path = fs::temp_directory_path() /
           ("cel_eval_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    fs::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
};

data::PartialLabelDataset make_dataset(std::uint32_t m, std::uint32_t q, double overlap,
                                       double rate, std::uint64_t seed) {
  gen::SyntheticSpec spec;
  spec.q = q;
  spec.d = 4;
  spec.m = m;
  spec.overlap = overlap;
  spec.seed = seed;
  auto syn = gen::synthesize_gaussian(spec);
  auto res = gen::generate_uniform(syn.truth, q, rate, seed + 101);
  data::PartialLabelDataset ds;
  ds.m = m;
  ds.d = spec.d;
  ds.labels = syn.labels;
  ds.features = std::move(syn.features);
  ds.truth = std::move(syn.truth);
  ds.candidates = std::move(res.candidates);
  ds.meta.kind = "uniform";
  ds.meta.rate = rate;
  ds.meta.seed = seed;
  return ds;
}

net::ModelConfig small_model(std::uint32_t q) {
  net::ModelConfig mcfg;
  mcfg.backbone.input_dim = 4;
  mcfg.backbone.token_count = 2;
  mcfg.backbone.token_dim = 6;
  mcfg.backbone.hidden = {8};
  mcfg.encoder.classes = q;
  mcfg.encoder.embed_len = 6;
  mcfg.encoder.attn_width = 6;
  return mcfg;
}

train::TrainConfig small_config(std::uint32_t t_max, std::uint32_t t_w, std::uint32_t batch) {
  train::TrainConfig cfg;
  cfg.weights.t_max = t_max;
  cfg.weights.t_w = t_w;
  cfg.batch_size = batch;
  cfg.learning_rate = 0.05;
  cfg.seed = 11;
  return cfg;
}

// Student-t two-sided p-value by Simpson quadrature over the density; an
// oracle fully independent of the incomplete-beta implementation.
double t_pvalue_quadrature(double t, double df) {
  const double c =
      std::exp(std::lgamma((df + 1.0) / 2.0) - std::lgamma(df / 2.0)) / std::sqrt(df * std::numbers::pi);
  auto pdf = [&](double u) { return c * std::pow(1.0 + u * u / df, -(df + 1.0) / 2.0); };
  const double lo = std::fabs(t), hi = std::fabs(t) + 400.0;
  const int n = 400000;  // even
  const double h = (hi - lo) / n;
  double acc = pdf(lo) + pdf(hi);
  for (int i = 1; i < n; ++i) acc += pdf(lo + i * h) * (i % 2 ? 4.0 : 2.0);
  return 2.0 * acc * h / 3.0;
}

}  // namespace

int main(int argc, char** argv) {
  cel::kernels::init_from_env();
  return doctest::Context(argc, argv).run();
}

TEST_CASE("accuracy counts argmax hits with ties at the lowest index") {
  Mat p(4, 3);
  double rows[4][3] = {{0.5, 0.3, 0.2}, {0.3, 0.3, 0.4}, {0.4, 0.4, 0.2}, {0.1, 0.8, 0.1}};
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 3; ++j) p.at(i, j) = rows[i][j];
  std::vector<std::uint16_t> truth = {0, 2, 1, 1};
  CHECK(eval::accuracy(p, truth) == 0.75);  // the tie row resolves to class 0, a miss

  auto preds = eval::argmax_rows(p);
  CHECK(preds == std::vector<std::uint32_t>{0, 2, 0, 1});
  CHECK(eval::accuracy(preds, truth) == 0.75);

  std::vector<std::uint16_t> short_truth = {0, 2};
  CHECK_THROWS_AS(eval::accuracy(p, short_truth), std::invalid_argument);
}

TEST_CASE("disambiguation rate scores confidence argmax against the truth") {
  data::ConfidenceMatrix t(3, 3);
  double rows[3][3] = {{0.2, 0.5, 0.3}, {0.4, 0.4, 0.2}, {0.1, 0.2, 0.7}};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) t.row(i)[j] = rows[i][j];
  data::CandidateMatrix s(3, 3);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) s.set(i, j);
  std::vector<std::uint16_t> truth = {1, 1, 0};
  // Row 0 hits; row 1 ties and resolves to class 0 (a miss); row 2 misses.
  CHECK(eval::disambiguation_rate(t, truth, s) == doctest::Approx(1.0 / 3.0).epsilon(1e-15));

  data::CandidateMatrix wrong(2, 3);
  std::vector<std::uint16_t> t2 = {0, 1};
  CHECK_THROWS_AS(eval::disambiguation_rate(t, t2, wrong), std::invalid_argument);
}

TEST_CASE("regularized incomplete beta matches elementary identities") {
  for (double x : {0.05, 0.2, 0.5, 0.8, 0.95}) {
    CHECK(eval::reg_inc_beta(1.0, 1.0, x) == doctest::Approx(x).epsilon(1e-12));
    CHECK(eval::reg_inc_beta(2.0, 1.0, x) == doctest::Approx(x * x).epsilon(1e-12));
    CHECK(eval::reg_inc_beta(0.5, 0.5, x) ==
          doctest::Approx(2.0 / std::numbers::pi * std::asin(std::sqrt(x))).epsilon(1e-12));
    // Symmetry: I_x(a, b) = 1 - I_{1-x}(b, a).
    CHECK(eval::reg_inc_beta(3.0, 1.7, x) ==
          doctest::Approx(1.0 - eval::reg_inc_beta(1.7, 3.0, 1.0 - x)).epsilon(1e-12));
  }
  CHECK(eval::reg_inc_beta(2.0, 3.0, 0.0) == 0.0);
  CHECK(eval::reg_inc_beta(2.0, 3.0, 1.0) == 1.0);
}

TEST_CASE("identical samples give a tie with unit p-value") {
  std::vector<double> a = {0.5, 0.6, 0.7};
  auto r = eval::paired_t_test(a, a);
  CHECK(r.t == 0.0);
  CHECK(r.p == 1.0);
  CHECK(r.mean_diff == 0.0);
  CHECK(r.verdict == eval::Verdict::tie);
}

TEST_CASE("a constant nonzero difference degenerates to a certain verdict") {
  // Offset of exactly 0.5 so the pairwise differences are bitwise constant.
  std::vector<double> a = {1.5, 2.5, 3.5};
  std::vector<double> b = {1.0, 2.0, 3.0};
  auto r = eval::paired_t_test(a, b);
  CHECK(std::isinf(r.t));
  CHECK(r.t > 0);
  CHECK(r.p == 0.0);
  CHECK(r.verdict == eval::Verdict::win);
  auto s = eval::paired_t_test(b, a);
  CHECK(s.verdict == eval::Verdict::loss);
  CHECK(s.t < 0);
}

TEST_CASE("p-values match the closed forms for one and two degrees of freedom") {
  // n = 2 pairs: df = 1, two-sided p = 1 - (2/pi) atan |t|.
  std::vector<double> a1 = {1.0, 2.0};
  std::vector<double> b1 = {0.0, 0.5};
  auto r1 = eval::paired_t_test(a1, b1);
  CHECK(r1.p == doctest::Approx(1.0 - 2.0 / std::numbers::pi * std::atan(std::fabs(r1.t)))
                    .epsilon(1e-10));

  // n = 3 pairs: df = 2, two-sided p = 1 - |t| / sqrt(2 + t^2).
  std::vector<double> a2 = {0.9, 0.5, 0.75};
  std::vector<double> b2 = {0.6, 0.45, 0.5};
  auto r2 = eval::paired_t_test(a2, b2);
  CHECK(r2.p ==
        doctest::Approx(1.0 - std::fabs(r2.t) / std::sqrt(2.0 + r2.t * r2.t)).epsilon(1e-10));
}

TEST_CASE("p-values agree with direct quadrature of the t density") {
  // df = 4 via 5 pairs with a crafted mean/spread.
  std::vector<double> a = {0.30, 0.10, 0.25, 0.05, 0.20};
  std::vector<double> zero(5, 0.0);
  auto r = eval::paired_t_test(a, zero);
  CHECK(r.p == doctest::Approx(t_pvalue_quadrature(r.t, 4.0)).epsilon(1e-7));

  std::vector<double> c = {0.3, -0.1, 0.2, 0.05, -0.25, 0.4, 0.1, -0.05, 0.15, 0.0, 0.22};
  auto r2 = eval::paired_t_test(c, std::vector<double>(11, 0.0));
  CHECK(r2.p == doctest::Approx(t_pvalue_quadrature(r2.t, 10.0)).epsilon(1e-7));
}

TEST_CASE("the t statistic follows the textbook formula") {
  std::vector<double> a = {0.62, 0.71, 0.66, 0.74};
  std::vector<double> b = {0.60, 0.65, 0.67, 0.70};
  auto r = eval::paired_t_test(a, b);
  // Hand recomputation.
  std::vector<double> d(4);
  double mean = 0;
  for (int i = 0; i < 4; ++i) {
    d[i] = a[i] - b[i];
    mean += d[i];
  }
  mean /= 4;
  double ss = 0;
  for (double x : d) ss += (x - mean) * (x - mean);
  double sd = std::sqrt(ss / 3.0);
  CHECK(r.t == doctest::Approx(mean * 2.0 / sd).epsilon(1e-12));
  CHECK(r.mean_diff == doctest::Approx(mean).epsilon(1e-15));
}

TEST_CASE("degenerate sample sizes are rejected") {
  std::vector<double> one = {0.5};
  CHECK_THROWS_AS(eval::paired_t_test(one, one), std::invalid_argument);
  std::vector<double> two = {0.5, 0.6};
  std::vector<double> three = {0.5, 0.6, 0.7};
  CHECK_THROWS_AS(eval::paired_t_test(two, three), std::invalid_argument);
}

TEST_CASE("the ablation trains three variants per seed from a shared start") {
  auto train_ds = make_dataset(60, 3, 0.4, 0.3, 51);
  auto test_ds = make_dataset(30, 3, 0.4, 0.3, 52);
  auto mcfg = small_model(3);
  auto base = small_config(4, 2, /*batch=*/60);  // one batch per epoch
  std::vector<std::uint64_t> seeds = {1, 2};

  auto tbl = eval::run_ablation(train_ds, test_ds, mcfg, base, seeds, "toy");
  CHECK(tbl.dataset_id == "toy");
  CHECK(tbl.reference == "cls_only");
  REQUIRE(tbl.methods.size() == 3);
  CHECK(tbl.methods[0].method == "cls_only");
  CHECK(tbl.methods[1].method == "cls_cal");
  CHECK(tbl.methods[2].method == "full");
  REQUIRE(tbl.cells.size() == 2);
  CHECK(tbl.cells[0].method == "cls_cal");
  CHECK(tbl.cells[1].method == "full");
  REQUIRE(tbl.runs.size() == 6);

  // Same seed, same initialization, one batch per epoch: the epoch-1
  // classification loss is computed before any variant-specific update and
  // must agree bit for bit across the three variants.
  for (std::uint64_t seed : seeds) {
    std::vector<double> first_losses;
    for (const auto& run : tbl.runs)
      if (run.seed == seed) first_losses.push_back(run.history.epochs.at(0).loss_cls);
    REQUIRE(first_losses.size() == 3);
    CHECK(first_losses[0] == first_losses[1]);
    CHECK(first_losses[0] == first_losses[2]);
  }

  for (const auto& ms : tbl.methods) {
    REQUIRE(ms.scores.size() == 2);
    double mean = (ms.scores[0] + ms.scores[1]) / 2.0;
    CHECK(ms.mean == doctest::Approx(mean).epsilon(1e-15));
    double ss = (ms.scores[0] - mean) * (ms.scores[0] - mean) +
                (ms.scores[1] - mean) * (ms.scores[1] - mean);
    CHECK(ms.stddev == doctest::Approx(std::sqrt(ss)).epsilon(1e-12));
    for (double s : ms.scores) {
      CHECK(s >= 0.0);
      CHECK(s <= 1.0);
    }
  }

  // Cells reproduce the paired test of each method against the reference.
  for (std::size_t c = 0; c < 2; ++c) {
    auto expect = eval::paired_t_test(tbl.methods[c + 1].scores, tbl.methods[0].scores);
    CHECK(tbl.cells[c].t == expect.t);
    CHECK(tbl.cells[c].p == expect.p);
    CHECK(tbl.cells[c].mean_diff == expect.mean_diff);
    CHECK(tbl.cells[c].verdict == expect.verdict);
  }
}

TEST_CASE("a parameter sweep covers the grid-by-seed cartesian product") {
  auto train_ds = make_dataset(40, 3, 0.4, 0.3, 61);
  auto test_ds = make_dataset(20, 3, 0.4, 0.3, 62);
  auto mcfg = small_model(3);
  auto base = small_config(2, 1, 20);

  eval::SweepGrid grid;
  grid.alpha = {0.1, 0.5, 0.9};
  std::vector<std::uint64_t> seeds = {1, 2};
  auto rows = eval::sweep(train_ds, test_ds, mcfg, base, grid, seeds);
  REQUIRE(rows.size() == 6);
  std::set<std::pair<double, std::uint64_t>> combos;
  for (const auto& r : rows) {
    combos.insert({r.alpha, r.seed});
    CHECK_FALSE(r.failed);
    CHECK(r.beta == base.weights.beta);          // pinned dimensions keep the base value
    CHECK(r.gamma1 == base.weights.gamma1);
    CHECK(r.gamma2 == base.weights.gamma2);
    CHECK(r.embed_len == mcfg.encoder.embed_len);
    CHECK(r.final_acc >= 0.0);
    CHECK(r.final_acc <= 1.0);
  }
  CHECK(combos.size() == 6);

  eval::SweepGrid grid2;
  grid2.alpha = {0.1, 0.9};
  grid2.embed_len = {4, 8};
  auto rows2 = eval::sweep(train_ds, test_ds, mcfg, base, grid2, std::vector<std::uint64_t>{3});
  REQUIRE(rows2.size() == 4);
  std::set<std::pair<double, std::uint32_t>> combos2;
  for (const auto& r : rows2) combos2.insert({r.alpha, r.embed_len});
  CHECK(combos2.size() == 4);
}

TEST_CASE("sweep failures are recorded per cell without aborting the grid") {
  auto train_ds = make_dataset(40, 3, 0.4, 0.3, 63);
  auto test_ds = make_dataset(20, 3, 0.4, 0.3, 64);
  auto base = small_config(2, 1, 20);
  base.learning_rate = 1e18;  // guaranteed numeric blow-up
  eval::SweepGrid grid;
  grid.alpha = {0.1, 0.5};
  auto rows = eval::sweep(train_ds, test_ds, small_model(3), base, grid,
                          std::vector<std::uint64_t>{1});
  REQUIRE(rows.size() == 2);
  for (const auto& r : rows) {
    CHECK(r.failed);
    CHECK_FALSE(r.error.empty());
  }
}

TEST_CASE("results CSV round-trips doubles exactly") {
  std::vector<eval::ResultRow> rows;
  eval::ResultRow r1;
  r1.method = "full";
  r1.dataset_id = "blobs_q8";
  r1.seed = 42;
  r1.alpha = 1.0 / 3.0;
  r1.beta = 0.1 + 0.2;  // not exactly 0.3
  r1.gamma1 = 1e-17;
  r1.gamma2 = 123456.789012345678;
  r1.embed_len = 16;
  r1.final_acc = 0.7071067811865476;
  eval::ResultRow r2;
  r2.method = "cls_only";
  r2.dataset_id = "blobs_q8";
  r2.seed = 7;
  r2.final_acc = 0.25;
  rows = {r1, r2};

  TempDir tmp;
  const std::string path = (tmp.path / "results.csv").string();
  eval::write_results_csv(path, rows);
  auto back = eval::read_results_csv(path);
  REQUIRE(back.size() == 2);
  CHECK(back[0].method == r1.method);
  CHECK(back[0].dataset_id == r1.dataset_id);
  CHECK(back[0].seed == r1.seed);
  CHECK(back[0].alpha == r1.alpha);
  CHECK(back[0].beta == r1.beta);
  CHECK(back[0].gamma1 == r1.gamma1);
  CHECK(back[0].gamma2 == r1.gamma2);
  CHECK(back[0].embed_len == r1.embed_len);
  CHECK(back[0].final_acc == r1.final_acc);
  CHECK(back[1].seed == 7);
  CHECK(back[1].final_acc == 0.25);
}

TEST_CASE("the comparison JSON carries methods, cells, and verdict names") {
  eval::ComparisonTable tbl;
  tbl.dataset_id = "toy";
  tbl.reference = "cls_only";
  eval::MethodStats ms;
  ms.method = "full";
  ms.mean = 0.5;
  ms.stddev = 0.01;
  ms.scores = {0.49, 0.51};
  tbl.methods.push_back(ms);
  eval::ComparisonCell cell;
  cell.method = "full";
  cell.verdict = eval::Verdict::win;
  cell.t = 3.5;
  cell.p = 0.01;
  cell.mean_diff = 0.02;
  tbl.cells.push_back(cell);

  TempDir tmp;
  const std::string path = (tmp.path / "comparison.json").string();
  eval::write_comparison_json(path, tbl);
  std::ifstream in(path);
  auto j = nlohmann::json::parse(in);
  CHECK(j.at("dataset") == "toy");
  CHECK(j.at("reference") == "cls_only");
  REQUIRE(j.at("methods").size() == 1);
  CHECK(j.at("methods")[0].at("method") == "full");
  CHECK(j.at("methods")[0].at("mean") == 0.5);
  CHECK(j.at("methods")[0].at("scores").size() == 2);
  REQUIRE(j.at("cells").size() == 1);
  CHECK(j.at("cells")[0].at("verdict") == "win");
  CHECK(j.at("cells")[0].at("p") == 0.01);
}

TEST_CASE("the setting contrast matches candidate cardinality across settings") {
  // Pool with clean separation so both settings learn inside the horizon.
  auto pool = make_dataset(90, 3, 0.3, 0.0, 71);
  auto test = make_dataset(45, 3, 0.3, 0.0, 72);
  eval::ContrastInput in;
  in.pool = &pool;
  in.test = &test;

  net::BackboneConfig bcfg;
  bcfg.input_dim = 4;
  bcfg.token_count = 2;
  bcfg.token_dim = 6;
  bcfg.hidden = {8};
  auto base = small_config(6, 6, 30);
  gen::AuxConfig aux;
  aux.epochs = 8;
  std::vector<std::uint64_t> seeds = {1, 2, 3};

  auto curves = eval::run_setting_contrast(in, 0.4, bcfg, base, aux, seeds);
  REQUIRE(curves.seeds.size() == 3);
  std::vector<std::uint32_t> id_e, uni_e;
  for (const auto& sc : curves.seeds) {
    CHECK(sc.acc_id.size() == 6);
    CHECK(sc.acc_uniform.size() == 6);
    CHECK(sc.avg_cls_id >= 1.0);
    CHECK(sc.avg_cls_uniform >= 1.0);
    // The uniform rate is chosen to match the instance-dependent cardinality.
    CHECK(sc.uniform_rate >= 0.0);
    CHECK(sc.uniform_rate <= 1.0);
    CHECK(std::fabs(sc.avg_cls_uniform - sc.avg_cls_id) < 0.6);
    id_e.push_back(sc.epochs_to_half_id);
    uni_e.push_back(sc.epochs_to_half_uniform);
  }
  // Medians come from the per-seed values (0 = never reached sorts worst).
  auto med = [](std::vector<std::uint32_t> v) {
    for (auto& x : v)
      if (x == 0) x = std::numeric_limits<std::uint32_t>::max();
    std::sort(v.begin(), v.end());
    std::uint32_t m = v[v.size() / 2];
    return m == std::numeric_limits<std::uint32_t>::max() ? 0u : m;
  };
  CHECK(curves.median_epochs_id == med(id_e));
  CHECK(curves.median_epochs_uniform == med(uni_e));

  CHECK_THROWS_AS(
      eval::run_setting_contrast(eval::ContrastInput{}, 0.4, bcfg, base, aux, seeds),
      std::invalid_argument);
}
