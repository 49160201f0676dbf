#pragma once

// The three-module model: a token-emitting MLP backbone f, a single-block
// class-query cross-attention encoder g producing one embedding per class,
// and a per-class linear classifier group z. A single-embedding baseline
// (mean-pooled tokens, one linear head) is kept alongside for the setting
// contrasts. All forwards have handwritten backwards; gradients are checked
// against finite differences in the test suite.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "cel/array.hpp"

namespace cel::net {

enum class Activation { tanh_fn, relu, identity };

struct BackboneConfig {
  std::uint32_t input_dim = 16;
  std::uint32_t token_count = 4;  // N feature tokens standing in for the H*W grid
  std::uint32_t token_dim = 16;   // C
  std::vector<std::uint32_t> hidden = {32};
  Activation act = Activation::tanh_fn;
};

struct EncoderConfig {
  std::uint32_t classes = 8;      // q, one query per class
  std::uint32_t embed_len = 16;   // l
  std::uint32_t attn_width = 16;  // key/query/value width
  // Query init half-range multiplier. Near-zero queries give every class the
  // same (near-uniform) attention pattern, which collapses the class-wise
  // embeddings onto one vector and starves the similarity losses of signal;
  // a larger scale separates the per-class patterns from the first step.
  double query_scale = 8.0;
};

struct ModelConfig {
  BackboneConfig backbone;
  EncoderConfig encoder;
};

struct LinearLayer {
  Mat w;  // out x in
  Vec b;  // out
};

struct Backbone {
  BackboneConfig cfg;
  std::vector<LinearLayer> layers;  // hidden... + final (N*C) linear output
};

struct Encoder {
  EncoderConfig cfg;
  Mat queries;      // q x attn_width
  LinearLayer key;  // attn_width x C
  LinearLayer val;  // attn_width x C
  LinearLayer out;  // l x attn_width
};

struct Heads {
  Mat w;  // q x l; head j reads only embedding row j
  Vec b;  // q
};

struct CelModel {
  Backbone backbone;
  Encoder encoder;
  Heads heads;
};

struct BaselineModel {
  Backbone backbone;
  std::uint32_t classes = 0;
  LinearLayer head;  // q x C on the mean-pooled token
};

CelModel init_cel_model(const ModelConfig& cfg, std::uint64_t seed);
BaselineModel init_baseline_model(const BackboneConfig& cfg, std::uint32_t classes,
                                  std::uint64_t seed);
CelModel zeros_like(const CelModel& m);
BaselineModel zeros_like(const BaselineModel& m);

// Named flat views over every learnable array, in a fixed manifest order.
// Optimizer steps, checkpoints, and the gradient manifest all walk this.
void for_each_array(CelModel& m, const std::function<void(const std::string&, Vec&)>& fn);
void for_each_array(const CelModel& m,
                    const std::function<void(const std::string&, const Vec&)>& fn);
void for_each_array(BaselineModel& m, const std::function<void(const std::string&, Vec&)>& fn);
void for_each_array(const BaselineModel& m,
                    const std::function<void(const std::string&, const Vec&)>& fn);

// ---- backbone -------------------------------------------------------------

struct BackboneCache {
  Mat input;
  std::vector<Mat> pre;   // per layer, before activation
  std::vector<Mat> post;  // per layer, after activation (last layer linear)
};

// x: B x d -> tokens B x N x C. Throws std::invalid_argument on non-finite
// input.
Ten3 backbone_forward(const Backbone& bb, const Mat& x, BackboneCache* cache = nullptr);
void backbone_backward(const Backbone& bb, const BackboneCache& cache, const Ten3& dtokens,
                       Backbone& grads, Mat* dx = nullptr);

// ---- class-wise encoder -----------------------------------------------------

struct EncoderCache {
  Ten3 tokens;    // B x N x C
  Ten3 keys;      // B x N x w
  Ten3 vals;      // B x N x w
  Ten3 attn;      // B x q x N, softmax over N
  Ten3 attended;  // B x q x w
};

// tokens B x N x C -> E, B x q x l; one embedding row per class.
Ten3 classwise_encode(const Encoder& enc, const Ten3& tokens, EncoderCache* cache = nullptr);
void classwise_encode_backward(const Encoder& enc, const EncoderCache& cache, const Ten3& dE,
                               Encoder& grads, Ten3* dtokens = nullptr);

// ---- classifier group -------------------------------------------------------

// E: B x q x l -> P: B x q rows on the simplex (logit_j = w_j . E^j + b_j).
Mat classify(const Heads& heads, const Ten3& E);
void classify_backward(const Heads& heads, const Ten3& E, const Mat& dlogits, Heads& grads,
                       Ten3* dE = nullptr);

// ---- normalization ----------------------------------------------------------

// L2-normalizes every class row; zero rows stay zero and are counted.
Ten3 normalize_embeddings(const Ten3& e, std::uint64_t* zero_rows = nullptr);
void normalize_backward(const Ten3& e_raw, const Ten3& e_hat, const Ten3& dhat, Ten3& de);

// ---- baseline ---------------------------------------------------------------

struct BaselineCache {
  BackboneCache bb;
  Ten3 tokens;
  Mat pooled;  // B x C
};

Mat baseline_forward(const BaselineModel& m, const Mat& x, BaselineCache* cache = nullptr);
void baseline_backward(const BaselineModel& m, const BaselineCache& cache, const Mat& dlogits,
                       BaselineModel& grads, Mat* dx = nullptr);

}  // namespace cel::net
