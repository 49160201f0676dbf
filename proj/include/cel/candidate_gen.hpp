#pragma once

// Candidate label set generation: instance-dependent (score-guided),
// uniform, and superclass-restricted, plus Gaussian-blob feature synthesis
// and the auxiliary clean-label scorer the instance-dependent protocol
// needs. All randomness is counter-based, keyed by (seed, sample, class),
// so output is independent of iteration order.

#include <cstdint>
#include <vector>

#include "cel/array.hpp"
#include "cel/data.hpp"

namespace cel::gen {

enum class GeneratorKind { instance_dependent, uniform, hierarchical };

const char* kind_name(GeneratorKind k);

struct GeneratorConfig {
  GeneratorKind kind = GeneratorKind::instance_dependent;
  double rate = 0.1;                // flip-rate scalar in [0, 1]
  std::uint64_t seed = 0;
  int aux_train_epochs = 15;        // instance_dependent / hierarchical only
};

struct SyntheticSpec {
  std::uint32_t q = 2;
  std::uint32_t d = 2;
  std::uint32_t m = 10;
  double cluster_spread = 1.0;  // per-class std of points around the center
  // Ratio of within-class spread to between-class spacing: centers sit at
  // radius cluster_spread / overlap, so small values give far-apart blobs.
  double overlap = 0.2;
  std::uint64_t seed = 0;
};

struct SyntheticData {
  std::uint32_t m = 0;
  std::uint32_t d = 0;
  std::vector<float> features;       // m*d row-major
  std::vector<std::uint16_t> truth;  // truth_i = i % q (round-robin priors)
  data::LabelSpace labels;
};

SyntheticData synthesize_gaussian(const SyntheticSpec& spec);

struct AuxConfig {
  int epochs = 15;
  std::uint64_t seed = 0;
  std::uint32_t hidden = 48;
  double lr = 0.2;
  double momentum = 0.9;
  std::uint32_t batch = 128;
};

// Trains a small two-layer classifier on the clean labels (generation-time
// privilege) and returns the row-stochastic m x q score matrix.
// Throws std::invalid_argument when m < q.
Mat train_aux_scorer(const std::vector<float>& features, std::uint32_t m, std::uint32_t d,
                     const std::vector<std::uint16_t>& truth, std::uint32_t q, const AuxConfig& cfg);

struct GenResult {
  data::CandidateMatrix candidates;
  std::uint64_t fallback_uniform_rows = 0;      // all-zero non-true scores
  std::uint64_t singleton_superclass_rows = 0;  // no legal noisy label
};

// Truth bit always set; class j != y included with probability
// clamp(rate*(q-1)*xi_ij / sum_k xi_ik, 0, 1) where xi is the scorer's
// non-true score row normalized by its max. Expected extra candidates per
// sample is rate*(q-1) when no clamping occurs.
GenResult generate_instance_dependent(const Mat& scores, const std::vector<std::uint16_t>& truth,
                                      double rate, std::uint64_t seed);

// Each j != y included independently with probability rate. A single
// threshold draw per (i, j) makes the output monotone in rate.
GenResult generate_uniform(const std::vector<std::uint16_t>& truth, std::uint32_t q, double rate,
                           std::uint64_t seed);

// Instance-dependent rule restricted to classes sharing the truth's
// superclass; the xi normalization runs over that restricted set.
GenResult generate_hierarchical(const Mat& scores, const std::vector<std::uint16_t>& truth,
                                const std::vector<std::uint32_t>& superclass_of, double rate,
                                std::uint64_t seed);

}  // namespace cel::gen
