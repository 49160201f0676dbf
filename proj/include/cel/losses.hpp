#pragma once

// Loss functions and training-state updates: confidence initialization and
// renormalization, the cross-entropy classification loss, the class
// associative loss over normalized class-wise embeddings, the prototype
// bank with its discriminative loss, and the two-stage total objective.
//
// Prototypes are a buffer, not parameters: no gradient ever reaches the
// bank, and the gradient manifest is asserted to carry no bank entries.

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "cel/array.hpp"
#include "cel/data.hpp"

namespace cel::loss {

struct PrototypeBank {
  std::uint32_t q = 0;
  std::uint32_t l = 0;
  Mat rows;                              // q x l; initialized rows unit-norm, others zero
  std::vector<std::uint8_t> initialized; // per class
  std::vector<std::uint64_t> update_count;

  static PrototypeBank zeros(std::uint32_t q, std::uint32_t l) {
    PrototypeBank b;
    b.q = q;
    b.l = l;
    b.rows = Mat(q, l);
    b.initialized.assign(q, 0);
    b.update_count.assign(q, 0);
    return b;
  }
};

struct LossWeights {
  double alpha = 0.5;
  double beta = 1.0;
  double gamma1 = 1.0;
  double gamma2 = 1.0;
  std::uint32_t t_w = 50;    // stage-switch epoch; epoch <= t_w is stage 1
  std::uint32_t t_max = 100;
};

enum class SelectionMode { strict, restricted };

// T_ij = 1/|S_i| on candidates, 0 elsewhere. Throws std::invalid_argument
// on an empty candidate row.
data::ConfidenceMatrix init_confidence(const data::CandidateMatrix& s);

// T_ij = P_ij / sum_{k in S_i} P_ik on candidates, 0 elsewhere. A zero
// candidate mass row falls back to uniform over S_i and is counted.
data::ConfidenceMatrix update_confidence(const Mat& p, const data::CandidateMatrix& s,
                                         std::uint64_t* fallback_rows = nullptr);

// Batch variant: p row b updates T row rows[b].
void update_confidence_rows(const Mat& p, const data::CandidateMatrix& s,
                            std::span<const std::uint32_t> rows, data::ConfidenceMatrix& t,
                            std::uint64_t* fallback_rows = nullptr);

// Mean over rows of sum_j -T_ij log max(P_ij, 1e-12).
double cls_loss(const Mat& p, const Mat& t_rows);
// dlogits = (P - T) / B, the softmax cross-entropy gradient.
void cls_backward(const Mat& p, const Mat& t_rows, Mat& dlogits);

struct CalSims {
  Vec s;  // per sample: mean pairwise similarity inside the candidate set
  Vec d;  // per sample: mean candidate/non-candidate similarity (0 on full sets)
  std::uint64_t full_set_rows = 0;
};

// e_hat: B x q x l with unit (or zero) class rows; rows[b] names the
// candidate row of batch sample b.
CalSims cal_similarities(const Ten3& e_hat, const data::CandidateMatrix& s,
                         std::span<const std::uint32_t> rows);
// (1/B) sum_i (1 - s_i) + gamma1 * |d_i|
double cal_loss(const CalSims& sims, double gamma1);
// Accumulates weight * d(cal_loss)/d(e_hat) into de_hat.
void cal_backward(const Ten3& e_hat, const data::CandidateMatrix& s,
                  std::span<const std::uint32_t> rows, const CalSims& sims, double gamma1,
                  double weight, Ten3& de_hat);

// strict: global argmax of p_row if it lies in the candidate set, else none.
// restricted: argmax over the candidate set (always some class).
// Ties break to the lowest class index.
std::optional<std::uint32_t> select_high_confidence(std::span<const double> p_row,
                                                    const data::CandidateMatrix& s,
                                                    std::size_t row, SelectionMode mode);

struct Selection {
  std::uint32_t batch_index;
  std::uint32_t cls;
};

std::vector<Selection> select_batch(const Mat& p, const data::CandidateMatrix& s,
                                    std::span<const std::uint32_t> rows, SelectionMode mode);

// Q^c <- normalize(Q^c + e_hat_i^c), applied sequentially in batch order.
// A zero-norm sum leaves the row untouched.
void update_prototypes(PrototypeBank& bank, const Ten3& e_hat,
                       std::span<const Selection> selections);

struct PdlSims {
  std::vector<std::uint32_t> batch_index;  // kept selections only
  std::vector<std::uint32_t> cls;
  Vec s;  // <E^c, Q^c>
  Vec d;  // sum_{k != c} <E^c, Q^k> / (q - 1), zero rows included in the count
  std::uint64_t skipped = 0;  // selections whose prototype is uninitialized
};

PdlSims pdl_similarities(const Ten3& e_hat, const PrototypeBank& bank,
                         std::span<const Selection> selections);
// Mean over kept selections of (1 - s) + gamma2 * |d|; 0 when none kept.
double pdl_loss(const PdlSims& sims, double gamma2);
void pdl_backward(const PrototypeBank& bank, const PdlSims& sims, double gamma2, double weight,
                  Ten3& de_hat);

// Stage 1 (epoch <= t_w): cls + alpha * cal. Stage 2: + beta * pdl.
double total_loss(std::uint32_t epoch, double lcls, double lcal, double lpdl,
                  const LossWeights& w);

}  // namespace cel::loss
