#include "cel/losses.hpp"

#include <cassert>
#include <cmath>
#include <cstdio>
#include <stdexcept>

#include "cel/kernels.hpp"

namespace cel::loss {

namespace {

constexpr double kLogFloor = 1e-12;

double sign(double x) { return x > 0 ? 1.0 : (x < 0 ? -1.0 : 0.0); }

}  // namespace

data::ConfidenceMatrix init_confidence(const data::CandidateMatrix& s) {
  data::ConfidenceMatrix t(s.m, s.q);
  for (std::size_t i = 0; i < s.m; ++i) {
    std::size_t n = s.row_count(i);
    if (n == 0) {
      char buf[64];
      std::snprintf(buf, sizeof(buf), "empty candidate set at row %zu", i);
      throw std::invalid_argument(buf);
    }
    double u = 1.0 / static_cast<double>(n);
    double* row = t.row(i);
    for (std::size_t j = 0; j < s.q; ++j)
      if (s.test(i, j)) row[j] = u;
  }
  return t;
}

data::ConfidenceMatrix update_confidence(const Mat& p, const data::CandidateMatrix& s,
                                         std::uint64_t* fallback_rows) {
  assert(p.rows == s.m && p.cols == s.q);
  data::ConfidenceMatrix t(s.m, s.q);
  std::vector<std::uint32_t> rows(s.m);
  for (std::size_t i = 0; i < s.m; ++i) rows[i] = static_cast<std::uint32_t>(i);
  update_confidence_rows(p, s, rows, t, fallback_rows);
  return t;
}

void update_confidence_rows(const Mat& p, const data::CandidateMatrix& s,
                            std::span<const std::uint32_t> rows, data::ConfidenceMatrix& t,
                            std::uint64_t* fallback_rows) {
  assert(p.rows == rows.size() && p.cols == s.q);
  for (std::size_t b = 0; b < rows.size(); ++b) {
    std::size_t i = rows[b];
    const double* pr = p.row(b);
    double* tr = t.row(i);
    double denom = 0.0;
    std::size_t n = 0;
    for (std::size_t j = 0; j < s.q; ++j) {
      if (s.test(i, j)) {
        denom += pr[j];
        ++n;
      }
    }
    if (n == 0) throw std::invalid_argument("empty candidate set");
    if (denom == 0.0) {
      if (fallback_rows) ++*fallback_rows;
      double u = 1.0 / static_cast<double>(n);
      for (std::size_t j = 0; j < s.q; ++j) tr[j] = s.test(i, j) ? u : 0.0;
      continue;
    }
    if (n == 1) {
      // p_j / p_j: the supervised limit stays exactly one-hot.
      for (std::size_t j = 0; j < s.q; ++j) tr[j] = s.test(i, j) ? 1.0 : 0.0;
      continue;
    }
    const double inv = 1.0 / denom;
    for (std::size_t j = 0; j < s.q; ++j) tr[j] = s.test(i, j) ? pr[j] * inv : 0.0;
  }
}

double cls_loss(const Mat& p, const Mat& t_rows) {
  assert(p.rows == t_rows.rows && p.cols == t_rows.cols);
  double total = 0.0;
  for (std::size_t i = 0; i < p.rows; ++i) {
    const double* pr = p.row(i);
    const double* tr = t_rows.row(i);
    for (std::size_t j = 0; j < p.cols; ++j) {
      if (tr[j] != 0.0) total -= tr[j] * std::log(std::max(pr[j], kLogFloor));
    }
  }
  return total / static_cast<double>(p.rows);
}

void cls_backward(const Mat& p, const Mat& t_rows, Mat& dlogits) {
  assert(dlogits.rows == p.rows && dlogits.cols == p.cols);
  double inv_b = 1.0 / static_cast<double>(p.rows);
  for (std::size_t i = 0; i < p.rows * p.cols; ++i)
    dlogits.v[i] += (p.v[i] - t_rows.v[i]) * inv_b;
}

CalSims cal_similarities(const Ten3& e_hat, const data::CandidateMatrix& s,
                         std::span<const std::uint32_t> rows) {
  assert(e_hat.n0 == rows.size() && e_hat.n1 == s.q);
  std::size_t b_n = e_hat.n0, q = e_hat.n1, l = e_hat.n2;
  CalSims out;
  out.s.assign(b_n, 0.0);
  out.d.assign(b_n, 0.0);
  Vec u(l), w(l);
  for (std::size_t b = 0; b < b_n; ++b) {
    std::size_t i = rows[b];
    std::fill(u.begin(), u.end(), 0.0);
    std::fill(w.begin(), w.end(), 0.0);
    std::size_t n_in = 0;
    for (std::size_t j = 0; j < q; ++j) {
      const double* e = e_hat.row(b, j);
      if (s.test(i, j)) {
        kernels::axpy(1.0, e, u.data(), l);
        ++n_in;
      } else {
        kernels::axpy(1.0, e, w.data(), l);
      }
    }
    assert(n_in > 0);
    double nn = static_cast<double>(n_in);
    out.s[b] = kernels::dot(u.data(), u.data(), l) / (nn * nn);
    if (n_in == q) {
      out.d[b] = 0.0;
      ++out.full_set_rows;
    } else {
      out.d[b] = kernels::dot(u.data(), w.data(), l) / (nn * static_cast<double>(q - n_in));
    }
  }
  return out;
}

double cal_loss(const CalSims& sims, double gamma1) {
  if (sims.s.empty()) return 0.0;
  double total = 0.0;
  for (std::size_t b = 0; b < sims.s.size(); ++b)
    total += (1.0 - sims.s[b]) + gamma1 * std::fabs(sims.d[b]);
  return total / static_cast<double>(sims.s.size());
}

void cal_backward(const Ten3& e_hat, const data::CandidateMatrix& s,
                  std::span<const std::uint32_t> rows, const CalSims& sims, double gamma1,
                  double weight, Ten3& de_hat) {
  std::size_t b_n = e_hat.n0, q = e_hat.n1, l = e_hat.n2;
  assert(de_hat.n0 == b_n && de_hat.n1 == q && de_hat.n2 == l);
  double inv_b = 1.0 / static_cast<double>(b_n);
  Vec u(l), w(l);
  for (std::size_t b = 0; b < b_n; ++b) {
    std::size_t i = rows[b];
    std::fill(u.begin(), u.end(), 0.0);
    std::fill(w.begin(), w.end(), 0.0);
    std::size_t n_in = 0;
    for (std::size_t j = 0; j < q; ++j) {
      const double* e = e_hat.row(b, j);
      if (s.test(i, j)) {
        kernels::axpy(1.0, e, u.data(), l);
        ++n_in;
      } else {
        kernels::axpy(1.0, e, w.data(), l);
      }
    }
    double nn = static_cast<double>(n_in);
    // d/ds of the per-sample term is -1; |d| contributes sign(d) * gamma1.
    double gs = -weight * inv_b;
    double s_coef = gs * 2.0 / (nn * nn);
    double gd = weight * inv_b * gamma1 * sign(sims.d[b]);
    double d_coef = n_in < q ? gd / (nn * static_cast<double>(q - n_in)) : 0.0;
    for (std::size_t j = 0; j < q; ++j) {
      double* de = de_hat.row(b, j);
      if (s.test(i, j)) {
        kernels::axpy(s_coef, u.data(), de, l);
        if (d_coef != 0.0) kernels::axpy(d_coef, w.data(), de, l);
      } else if (d_coef != 0.0) {
        kernels::axpy(d_coef, u.data(), de, l);
      }
    }
  }
}

std::optional<std::uint32_t> select_high_confidence(std::span<const double> p_row,
                                                    const data::CandidateMatrix& s,
                                                    std::size_t row, SelectionMode mode) {
  std::size_t q = p_row.size();
  if (mode == SelectionMode::strict) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < q; ++j)
      if (p_row[j] > p_row[best]) best = j;
    if (s.test(row, best)) return static_cast<std::uint32_t>(best);
    return std::nullopt;
  }
  std::optional<std::uint32_t> best;
  for (std::size_t j = 0; j < q; ++j) {
    if (!s.test(row, j)) continue;
    if (!best || p_row[j] > p_row[*best]) best = static_cast<std::uint32_t>(j);
  }
  return best;
}

std::vector<Selection> select_batch(const Mat& p, const data::CandidateMatrix& s,
                                    std::span<const std::uint32_t> rows, SelectionMode mode) {
  assert(p.rows == rows.size() && p.cols == s.q);
  std::vector<Selection> out;
  for (std::size_t b = 0; b < p.rows; ++b) {
    auto c = select_high_confidence({p.row(b), p.cols}, s, rows[b], mode);
    if (c) out.push_back({static_cast<std::uint32_t>(b), *c});
  }
  return out;
}

void update_prototypes(PrototypeBank& bank, const Ten3& e_hat,
                       std::span<const Selection> selections) {
  assert(bank.q == e_hat.n1 && bank.l == e_hat.n2);
  std::size_t l = bank.l;
  Vec sum(l);
  for (const auto& sel : selections) {
    const double* e = e_hat.row(sel.batch_index, sel.cls);
    double* qr = bank.rows.row(sel.cls);
    for (std::size_t k = 0; k < l; ++k) sum[k] = qr[k] + e[k];
    double norm = kernels::nrm2(sum.data(), l);
    if (norm == 0.0) continue;
    for (std::size_t k = 0; k < l; ++k) qr[k] = sum[k] / norm;
    bank.initialized[sel.cls] = 1;
    ++bank.update_count[sel.cls];
  }
}

PdlSims pdl_similarities(const Ten3& e_hat, const PrototypeBank& bank,
                         std::span<const Selection> selections) {
  assert(bank.q == e_hat.n1 && bank.l == e_hat.n2);
  std::size_t q = bank.q, l = bank.l;
  PdlSims out;
  for (const auto& sel : selections) {
    if (!bank.initialized[sel.cls]) {
      ++out.skipped;
      continue;
    }
    const double* e = e_hat.row(sel.batch_index, sel.cls);
    double own = kernels::dot(e, bank.rows.row(sel.cls), l);
    double cross = 0.0;
    for (std::size_t k = 0; k < q; ++k) {
      if (k == sel.cls) continue;
      cross += kernels::dot(e, bank.rows.row(k), l);
    }
    out.batch_index.push_back(sel.batch_index);
    out.cls.push_back(sel.cls);
    out.s.push_back(own);
    out.d.push_back(q > 1 ? cross / static_cast<double>(q - 1) : 0.0);
  }
  return out;
}

double pdl_loss(const PdlSims& sims, double gamma2) {
  if (sims.s.empty()) return 0.0;
  double total = 0.0;
  for (std::size_t k = 0; k < sims.s.size(); ++k)
    total += (1.0 - sims.s[k]) + gamma2 * std::fabs(sims.d[k]);
  return total / static_cast<double>(sims.s.size());
}

void pdl_backward(const PrototypeBank& bank, const PdlSims& sims, double gamma2, double weight,
                  Ten3& de_hat) {
  if (sims.s.empty()) return;
  std::size_t q = bank.q, l = bank.l;
  assert(de_hat.n1 == q && de_hat.n2 == l);
  double inv_n = 1.0 / static_cast<double>(sims.s.size());
  Vec bank_sum(l, 0.0);
  for (std::size_t k = 0; k < q; ++k)
    kernels::axpy(1.0, bank.rows.row(k), bank_sum.data(), l);
  Vec rest(l);
  for (std::size_t k = 0; k < sims.s.size(); ++k) {
    std::uint32_t c = sims.cls[k];
    double* de = de_hat.row(sims.batch_index[k], c);
    const double* qc = bank.rows.row(c);
    kernels::axpy(-weight * inv_n, qc, de, l);
    if (q > 1) {
      double gd = weight * inv_n * gamma2 * sign(sims.d[k]) / static_cast<double>(q - 1);
      if (gd != 0.0) {
        for (std::size_t t = 0; t < l; ++t) rest[t] = bank_sum[t] - qc[t];
        kernels::axpy(gd, rest.data(), de, l);
      }
    }
  }
}

double total_loss(std::uint32_t epoch, double lcls, double lcal, double lpdl,
                  const LossWeights& w) {
  double total = lcls + w.alpha * lcal;
  if (epoch > w.t_w) total += w.beta * lpdl;
  return total;
}

}  // namespace cel::loss
