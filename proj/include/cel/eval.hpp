#pragma once

// Evaluation harness: accuracy metrics, label-disambiguation quality, the
// paired t-test with win/tie/loss verdicts, the three-variant ablation, the
// instance-dependent vs uniform generation contrast, parameter sweeps, and
// CSV/JSON artifact emission. This is the only module besides candidate
// generation that reads ground-truth labels.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "cel/candidate_gen.hpp"
#include "cel/data.hpp"
#include "cel/network.hpp"
#include "cel/trainer.hpp"

namespace cel::eval {

std::vector<std::uint32_t> argmax_rows(const Mat& p);  // ties break to lowest index

double accuracy(const Mat& p, std::span<const std::uint16_t> truth);
double accuracy(std::span<const std::uint32_t> preds, std::span<const std::uint16_t> truth);

// Fraction of training rows whose confidence argmax hits the truth.
double disambiguation_rate(const data::ConfidenceMatrix& t, std::span<const std::uint16_t> truth,
                           const data::CandidateMatrix& candidates);

enum class Verdict { win, tie, loss };
const char* verdict_name(Verdict v);

struct TTestResult {
  double t = 0.0;
  double p = 1.0;
  double mean_diff = 0.0;
  Verdict verdict = Verdict::tie;
};

// Two-sided paired t-test of a vs b: win when p < alpha and mean(a) > mean(b).
// Zero-variance differences short-circuit: zero mean -> tie, else win/loss.
TTestResult paired_t_test(std::span<const double> a, std::span<const double> b,
                          double alpha = 0.05);

// Regularized incomplete beta I_x(a, b); the t-test p-value machinery,
// exposed for oracle tests.
double reg_inc_beta(double a, double b, double x);

struct RunResult {
  std::string method;
  std::string dataset_id;
  std::uint64_t seed = 0;
  double final_test_acc = 0.0;
  train::TrainHistory history;
};

struct MethodStats {
  std::string method;
  double mean = 0.0;
  double stddev = 0.0;  // sample standard deviation (n - 1)
  std::vector<double> scores;
};

struct ComparisonCell {
  std::string method;
  Verdict verdict = Verdict::tie;
  double t = 0.0;
  double p = 1.0;
  double mean_diff = 0.0;
};

struct ComparisonTable {
  std::string dataset_id;
  std::string reference;  // method the cells compare against
  std::vector<MethodStats> methods;
  std::vector<ComparisonCell> cells;  // one per non-reference method
  std::vector<RunResult> runs;
};

// Observer filling train/test accuracy and the confidence hit rate on each
// epoch record. Keeps pointers; the datasets must outlive the observer.
train::Observer make_observer(const data::PartialLabelDataset& train_ds,
                              const data::PartialLabelDataset* test_ds);
train::BaselineObserver make_baseline_observer(const data::PartialLabelDataset* test_ds);

// Trains cls-only (alpha = beta = 0), cls+cal (beta = 0), and the full
// objective once per seed from a shared per-seed initialization.
ComparisonTable run_ablation(const data::PartialLabelDataset& train_ds,
                             const data::PartialLabelDataset& test_ds,
                             const net::ModelConfig& mcfg, const train::TrainConfig& base,
                             std::span<const std::uint64_t> seeds, const std::string& dataset_id);

struct ContrastInput {
  const data::PartialLabelDataset* pool = nullptr;  // features + truth; candidates ignored
  const data::PartialLabelDataset* test = nullptr;
};

struct ContrastSeedCurves {
  std::uint64_t seed = 0;
  double avg_cls_id = 0.0;
  double avg_cls_uniform = 0.0;
  double uniform_rate = 0.0;  // chosen so expected Avg. CLs matches the observed i.d. value
  std::vector<double> acc_id;       // per-epoch test accuracy
  std::vector<double> acc_uniform;
  std::uint32_t epochs_to_half_id = 0;  // 0 = threshold never reached
  std::uint32_t epochs_to_half_uniform = 0;
};

struct ContrastCurves {
  std::vector<ContrastSeedCurves> seeds;
  std::uint32_t median_epochs_id = 0;
  std::uint32_t median_epochs_uniform = 0;
};

// Fig. 2-style experiment: same features/truth, instance-dependent vs
// uniform candidate sets at matched average cardinality, baseline model.
ContrastCurves run_setting_contrast(const ContrastInput& in, double rate,
                                    const net::BackboneConfig& bcfg,
                                    const train::TrainConfig& base,
                                    const gen::AuxConfig& aux,
                                    std::span<const std::uint64_t> seeds);

struct SweepGrid {
  std::vector<double> alpha;
  std::vector<double> beta;
  std::vector<double> gamma1;
  std::vector<double> gamma2;
  std::vector<std::uint32_t> embed_len;
};

struct SweepRow {
  double alpha = 0.0, beta = 0.0, gamma1 = 0.0, gamma2 = 0.0;
  std::uint32_t embed_len = 0;
  std::uint64_t seed = 0;
  double final_acc = 0.0;
  bool failed = false;
  std::string error;
};

// Cartesian product of the grid (empty dimensions pin the base value) by
// seeds; per-cell failures are recorded and the sweep continues.
std::vector<SweepRow> sweep(const data::PartialLabelDataset& train_ds,
                            const data::PartialLabelDataset& test_ds,
                            const net::ModelConfig& mcfg, const train::TrainConfig& base,
                            const SweepGrid& grid, std::span<const std::uint64_t> seeds);

struct ResultRow {
  std::string method;
  std::string dataset_id;
  std::uint64_t seed = 0;
  double alpha = 0.0, beta = 0.0, gamma1 = 0.0, gamma2 = 0.0;
  std::uint32_t embed_len = 0;
  double final_acc = 0.0;
};

void write_results_csv(const std::string& path, std::span<const ResultRow> rows);
std::vector<ResultRow> read_results_csv(const std::string& path);
void write_comparison_json(const std::string& path, const ComparisonTable& table);

}  // namespace cel::eval
