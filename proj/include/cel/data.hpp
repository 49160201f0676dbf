#pragma once

// Core domain types and the on-disk partial-label dataset format.
//
// A dataset directory holds:
//   meta.json       m, d, q, generator record, "plds_version": 1, optional
//                   superclass map and class names
//   features.bin    float32 little-endian, m x d row-major
//   truth.bin       uint16 little-endian, length m (evaluation only)
//   candidates.bin  packed bitset rows, ceil(q/8) bytes per row, bit j of
//                   row i = membership of class j, LSB-first within a byte

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "cel/array.hpp"

namespace cel::data {

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IntegrityError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct LabelSpace {
  std::uint32_t q = 0;
  std::optional<std::vector<std::string>> names;
  std::optional<std::vector<std::uint32_t>> superclass_of;
};

// Candidate membership, one byte per (sample, class) in memory; packed to
// bits only on disk.
struct CandidateMatrix {
  std::uint32_t m = 0;
  std::uint32_t q = 0;
  std::vector<std::uint8_t> bits;  // m*q, 0/1

  CandidateMatrix() = default;
  CandidateMatrix(std::uint32_t m_, std::uint32_t q_) : m(m_), q(q_), bits(std::size_t(m_) * q_, 0) {}

  bool test(std::size_t i, std::size_t j) const { return bits[i * q + j] != 0; }
  void set(std::size_t i, std::size_t j, bool v = true) { bits[i * q + j] = v ? 1 : 0; }
  std::uint32_t row_count(std::size_t i) const {
    std::uint32_t c = 0;
    for (std::size_t j = 0; j < q; ++j) c += bits[i * q + j];
    return c;
  }
  std::vector<std::uint32_t> row_members(std::size_t i) const {
    std::vector<std::uint32_t> out;
    for (std::uint32_t j = 0; j < q; ++j)
      if (bits[i * q + j]) out.push_back(j);
    return out;
  }
};

struct GenMeta {
  std::string kind = "none";
  double rate = 0.0;
  std::uint64_t seed = 0;
  std::string source;
  std::uint64_t fallback_uniform_rows = 0;
  std::uint64_t singleton_superclass_rows = 0;
};

struct PartialLabelDataset {
  std::uint32_t m = 0;
  std::uint32_t d = 0;
  LabelSpace labels;
  std::vector<float> features;      // m*d row-major
  std::vector<std::uint16_t> truth; // length m, held out from training
  CandidateMatrix candidates;
  GenMeta meta;

  std::uint32_t q() const { return labels.q; }
  const float* feature_row(std::size_t i) const { return features.data() + i * d; }
};

struct ValidationIssue {
  long row = -1;  // -1 for dataset-level issues
  std::string code;
  std::string message;
};

struct ValidationReport {
  std::vector<ValidationIssue> issues;
  bool ok() const { return issues.empty(); }
};

// Reports every invariant violation; never throws on content problems.
ValidationReport validate_dataset(const PartialLabelDataset& ds);

void save_dataset(const PartialLabelDataset& ds, const std::filesystem::path& dir);
PartialLabelDataset load_dataset(const std::filesystem::path& dir);

struct CandidateStats {
  double avg_cls = 0.0;
  std::vector<std::uint64_t> histogram;  // histogram[k] = #rows with |S| == k, k in [0, q]
};

CandidateStats candidate_stats(const CandidateMatrix& c);
CandidateStats candidate_stats(const PartialLabelDataset& ds);

// Per-sample label confidence, row-stochastic over the candidate set.
struct ConfidenceMatrix {
  std::uint32_t m = 0;
  std::uint32_t q = 0;
  std::vector<double> values;  // m*q

  ConfidenceMatrix() = default;
  ConfidenceMatrix(std::uint32_t m_, std::uint32_t q_) : m(m_), q(q_), values(std::size_t(m_) * q_, 0.0) {}

  double* row(std::size_t i) { return values.data() + i * q; }
  const double* row(std::size_t i) const { return values.data() + i * q; }
};

// Row sums within tol of 1 and exact zeros off-candidate.
bool confidence_valid(const ConfidenceMatrix& t, const CandidateMatrix& s, double tol = 1e-9,
                      std::string* why = nullptr);

}  // namespace cel::data
