#include "cel/candidate_gen.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "cel/kernels.hpp"
#include "cel/rng.hpp"

namespace cel::gen {

namespace {

// Counter-stream domains, one per purpose.
constexpr std::uint64_t kDomainCenters = 0x11;
constexpr std::uint64_t kDomainPoints = 0x22;
constexpr std::uint64_t kDomainUniformGen = 0x33;
constexpr std::uint64_t kDomainInstanceGen = 0x44;
constexpr std::uint64_t kDomainHierGen = 0x55;

}  // namespace

const char* kind_name(GeneratorKind k) {
  switch (k) {
    case GeneratorKind::instance_dependent: return "instance_dependent";
    case GeneratorKind::uniform: return "uniform";
    case GeneratorKind::hierarchical: return "hierarchical";
  }
  return "unknown";
}

SyntheticData synthesize_gaussian(const SyntheticSpec& spec) {
  if (spec.q < 2 || spec.d == 0 || spec.m == 0)
    throw std::invalid_argument("synthesize_gaussian: counts must be positive, q >= 2");
  if (spec.cluster_spread <= 0.0 || spec.overlap <= 0.0)
    throw std::invalid_argument("synthesize_gaussian: spread and overlap must be > 0");

  const rng::CounterRng centers_rng(spec.seed, kDomainCenters);
  const rng::CounterRng points_rng(spec.seed, kDomainPoints);

  // Unit-direction centers scaled to radius spread/overlap.
  Mat centers(spec.q, spec.d);
  for (std::uint32_t c = 0; c < spec.q; ++c) {
    double* row = centers.row(c);
    for (std::uint32_t k = 0; k < spec.d; ++k) row[k] = centers_rng.gaussian(c, k);
    const double norm = kernels::nrm2(row, spec.d);
    const double scale = (spec.cluster_spread / spec.overlap) / (norm > 0.0 ? norm : 1.0);
    kernels::scal(scale, row, spec.d);
  }

  SyntheticData out;
  out.m = spec.m;
  out.d = spec.d;
  out.labels.q = spec.q;
  out.features.resize(std::size_t(spec.m) * spec.d);
  out.truth.resize(spec.m);
  for (std::uint32_t i = 0; i < spec.m; ++i) {
    const std::uint32_t y = i % spec.q;
    out.truth[i] = static_cast<std::uint16_t>(y);
    const double* c = centers.row(y);
    float* row = out.features.data() + std::size_t(i) * spec.d;
    for (std::uint32_t k = 0; k < spec.d; ++k)
      row[k] = static_cast<float>(c[k] + spec.cluster_spread * points_rng.gaussian(i, k));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Auxiliary scorer: d -> hidden (tanh) -> q, softmax cross-entropy on the
// clean labels, SGD with momentum. Shape and schedule are knobs only; the
// contract is the row-stochastic score matrix.
// ---------------------------------------------------------------------------

Mat train_aux_scorer(const std::vector<float>& features, std::uint32_t m, std::uint32_t d,
                     const std::vector<std::uint16_t>& truth, std::uint32_t q,
                     const AuxConfig& cfg) {
  if (m < q) throw std::invalid_argument("train_aux_scorer: insufficient samples (m < q)");
  if (features.size() != std::size_t(m) * d || truth.size() != m)
    throw std::invalid_argument("train_aux_scorer: shape mismatch");

  const std::uint32_t h = cfg.hidden;
  Mat w1(h, d), w2(q, h);
  Vec b1(h, 0.0), b2(q, 0.0);
  {
    rng::Engine init(rng::splitmix64(cfg.seed) ^ 0xA0A0A0A0ULL);
    const double s1 = 1.0 / std::sqrt(double(d));
    for (double& w : w1.v) w = init.uniform(-s1, s1);
    const double s2 = 1.0 / std::sqrt(double(h));
    for (double& w : w2.v) w = init.uniform(-s2, s2);
  }
  Mat vw1(h, d), vw2(q, h);
  Vec vb1(h, 0.0), vb2(q, 0.0);

  Vec x(d), hidden(h), logits(q), dlogits(q), dhidden(h);
  std::vector<std::uint32_t> order(m);
  std::iota(order.begin(), order.end(), 0u);

  const auto forward = [&](std::uint32_t i) {
    const float* f = features.data() + std::size_t(i) * d;
    for (std::uint32_t k = 0; k < d; ++k) x[k] = f[k];
    for (std::uint32_t j = 0; j < h; ++j)
      hidden[j] = std::tanh(kernels::dot(w1.row(j), x.data(), d) + b1[j]);
    for (std::uint32_t j = 0; j < q; ++j)
      logits[j] = kernels::dot(w2.row(j), hidden.data(), h) + b2[j];
    kernels::softmax_inplace(logits.data(), q);
  };

  const std::uint32_t batch = std::max<std::uint32_t>(1, cfg.batch);
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    rng::Engine shuffle_rng(rng::splitmix64(cfg.seed) ^ rng::splitmix64(std::uint64_t(epoch)));
    rng::fisher_yates(std::span<std::uint32_t>(order), shuffle_rng);
    for (std::uint32_t start = 0; start < m; start += batch) {
      const std::uint32_t bsz = std::min(batch, m - start);
      Mat gw1(h, d), gw2(q, h);
      Vec gb1(h, 0.0), gb2(q, 0.0);
      for (std::uint32_t bi = 0; bi < bsz; ++bi) {
        const std::uint32_t i = order[start + bi];
        forward(i);
        for (std::uint32_t j = 0; j < q; ++j)
          dlogits[j] = (logits[j] - (truth[i] == j ? 1.0 : 0.0)) / double(bsz);
        std::fill(dhidden.begin(), dhidden.end(), 0.0);
        for (std::uint32_t j = 0; j < q; ++j) {
          kernels::axpy(dlogits[j], hidden.data(), gw2.row(j), h);
          gb2[j] += dlogits[j];
          kernels::axpy(dlogits[j], w2.row(j), dhidden.data(), h);
        }
        for (std::uint32_t j = 0; j < h; ++j) {
          const double g = dhidden[j] * (1.0 - hidden[j] * hidden[j]);
          kernels::axpy(g, x.data(), gw1.row(j), d);
          gb1[j] += g;
        }
      }
      const auto step = [&](Vec& p, Vec& v, const Vec& g) {
        kernels::scal(cfg.momentum, v.data(), v.size());
        kernels::axpy(1.0, g.data(), v.data(), g.size());
        kernels::axpy(-cfg.lr, v.data(), p.data(), p.size());
      };
      step(w1.v, vw1.v, gw1.v);
      step(b1, vb1, gb1);
      step(w2.v, vw2.v, gw2.v);
      step(b2, vb2, gb2);
    }
  }

  Mat scores(m, q);
  for (std::uint32_t i = 0; i < m; ++i) {
    forward(i);
    std::copy(logits.begin(), logits.end(), scores.row(i));
  }
  return scores;
}

// ---------------------------------------------------------------------------
// Generators
// ---------------------------------------------------------------------------

namespace {

// Shared core of the instance-dependent rule over an eligible class set.
// scale = rate * (#eligible non-true classes).
void include_by_scores(const Mat& scores, std::uint32_t i, std::uint16_t y,
                       const std::vector<std::uint32_t>& eligible, double rate,
                       const rng::CounterRng& stream, data::CandidateMatrix& cand,
                       std::uint64_t& fallback_rows) {
  const double* s = scores.row(i);
  double max_s = 0.0;
  for (std::uint32_t j : eligible) max_s = std::max(max_s, s[j]);

  const double scale = rate * double(eligible.size());
  if (max_s <= 0.0) {
    // Degenerate score row: fall back to uniform inclusion at p = rate.
    ++fallback_rows;
    for (std::uint32_t j : eligible)
      if (stream.uniform(i, j) < rate) cand.set(i, j);
    return;
  }
  double z = 0.0;
  for (std::uint32_t j : eligible) z += s[j] / max_s;
  for (std::uint32_t j : eligible) {
    const double xi = s[j] / max_s;
    const double p = std::clamp(scale * xi / z, 0.0, 1.0);
    if (stream.uniform(i, j) < p) cand.set(i, j);
  }
  (void)y;
}

}  // namespace

GenResult generate_instance_dependent(const Mat& scores, const std::vector<std::uint16_t>& truth,
                                      double rate, std::uint64_t seed) {
  const std::uint32_t m = static_cast<std::uint32_t>(truth.size());
  const std::uint32_t q = static_cast<std::uint32_t>(scores.cols);
  if (scores.rows != m) throw std::invalid_argument("generate_instance_dependent: shape mismatch");
  GenResult out;
  out.candidates = data::CandidateMatrix(m, q);
  const rng::CounterRng stream(seed, kDomainInstanceGen);
  std::vector<std::uint32_t> eligible;
  for (std::uint32_t i = 0; i < m; ++i) {
    const std::uint16_t y = truth[i];
    out.candidates.set(i, y);
    eligible.clear();
    for (std::uint32_t j = 0; j < q; ++j)
      if (j != y) eligible.push_back(j);
    include_by_scores(scores, i, y, eligible, rate, stream, out.candidates,
                      out.fallback_uniform_rows);
  }
  return out;
}

GenResult generate_uniform(const std::vector<std::uint16_t>& truth, std::uint32_t q, double rate,
                           std::uint64_t seed) {
  const std::uint32_t m = static_cast<std::uint32_t>(truth.size());
  GenResult out;
  out.candidates = data::CandidateMatrix(m, q);
  const rng::CounterRng stream(seed, kDomainUniformGen);
  for (std::uint32_t i = 0; i < m; ++i) {
    out.candidates.set(i, truth[i]);
    for (std::uint32_t j = 0; j < q; ++j) {
      if (j == truth[i]) continue;
      if (stream.uniform(i, j) < rate) out.candidates.set(i, j);
    }
  }
  return out;
}

GenResult generate_hierarchical(const Mat& scores, const std::vector<std::uint16_t>& truth,
                                const std::vector<std::uint32_t>& superclass_of, double rate,
                                std::uint64_t seed) {
  const std::uint32_t m = static_cast<std::uint32_t>(truth.size());
  const std::uint32_t q = static_cast<std::uint32_t>(scores.cols);
  if (scores.rows != m || superclass_of.size() != q)
    throw std::invalid_argument("generate_hierarchical: shape mismatch");
  GenResult out;
  out.candidates = data::CandidateMatrix(m, q);
  const rng::CounterRng stream(seed, kDomainHierGen);
  std::vector<std::uint32_t> eligible;
  for (std::uint32_t i = 0; i < m; ++i) {
    const std::uint16_t y = truth[i];
    out.candidates.set(i, y);
    eligible.clear();
    for (std::uint32_t j = 0; j < q; ++j)
      if (j != y && superclass_of[j] == superclass_of[y]) eligible.push_back(j);
    if (eligible.empty()) {
      ++out.singleton_superclass_rows;
      continue;
    }
    include_by_scores(scores, i, y, eligible, rate, stream, out.candidates,
                      out.fallback_uniform_rows);
  }
  return out;
}

}  // namespace cel::gen
