#include "cel/network.hpp"

#include <cmath>
#include <stdexcept>

#include "cel/kernels.hpp"
#include "cel/rng.hpp"

namespace cel::net {

namespace {

double activate(Activation a, double x) {
  switch (a) {
    case Activation::tanh_fn: return std::tanh(x);
    case Activation::relu: return x > 0.0 ? x : 0.0;
    case Activation::identity: return x;
  }
  return x;
}

// Derivative in terms of (pre, post) so tanh reuses the activated value.
double activate_grad(Activation a, double pre, double post) {
  switch (a) {
    case Activation::tanh_fn: return 1.0 - post * post;
    case Activation::relu: return pre > 0.0 ? 1.0 : 0.0;
    case Activation::identity: return 1.0;
  }
  (void)pre;
  return 1.0;
}

LinearLayer init_linear(std::uint32_t out, std::uint32_t in, rng::Engine& e) {
  LinearLayer l;
  l.w = Mat(out, in);
  l.b.assign(out, 0.0);
  const double s = 1.0 / std::sqrt(double(in));
  for (double& w : l.w.v) w = e.uniform(-s, s);
  return l;
}

// y = W x + b
void linear_apply(const LinearLayer& l, const double* x, double* y) {
  for (std::size_t j = 0; j < l.w.rows; ++j) y[j] = kernels::dot(l.w.row(j), x, l.w.cols) + l.b[j];
}

// Accumulates dW += dy (x) x, db += dy, and optionally dx += W^T dy.
void linear_backward(const LinearLayer& l, const double* x, const double* dy, LinearLayer& g,
                     double* dx) {
  for (std::size_t j = 0; j < l.w.rows; ++j) {
    if (dy[j] != 0.0) kernels::axpy(dy[j], x, g.w.row(j), l.w.cols);
    g.b[j] += dy[j];
    if (dx != nullptr && dy[j] != 0.0) kernels::axpy(dy[j], l.w.row(j), dx, l.w.cols);
  }
}

void check_finite(const Mat& x, const char* who) {
  for (double v : x.v)
    if (!std::isfinite(v)) throw std::invalid_argument(std::string(who) + ": non-finite input");
}

}  // namespace

CelModel init_cel_model(const ModelConfig& cfg, std::uint64_t seed) {
  // Fixed init order: backbone layers, then queries, key, val, out, heads.
  rng::Engine e(rng::splitmix64(seed) ^ 0xCE1CE1ULL);
  CelModel m;
  m.backbone.cfg = cfg.backbone;
  std::uint32_t in = cfg.backbone.input_dim;
  for (std::uint32_t h : cfg.backbone.hidden) {
    m.backbone.layers.push_back(init_linear(h, in, e));
    in = h;
  }
  m.backbone.layers.push_back(init_linear(cfg.backbone.token_count * cfg.backbone.token_dim, in, e));

  m.encoder.cfg = cfg.encoder;
  const std::uint32_t w = cfg.encoder.attn_width;
  m.encoder.queries = Mat(cfg.encoder.classes, w);
  {
    const double s = cfg.encoder.query_scale / std::sqrt(double(w));
    for (double& v : m.encoder.queries.v) v = e.uniform(-s, s);
  }
  m.encoder.key = init_linear(w, cfg.backbone.token_dim, e);
  m.encoder.val = init_linear(w, cfg.backbone.token_dim, e);
  m.encoder.out = init_linear(cfg.encoder.embed_len, w, e);

  m.heads.w = Mat(cfg.encoder.classes, cfg.encoder.embed_len);
  m.heads.b.assign(cfg.encoder.classes, 0.0);
  {
    const double s = 1.0 / std::sqrt(double(cfg.encoder.embed_len));
    for (double& v : m.heads.w.v) v = e.uniform(-s, s);
  }
  return m;
}

BaselineModel init_baseline_model(const BackboneConfig& cfg, std::uint32_t classes,
                                  std::uint64_t seed) {
  rng::Engine e(rng::splitmix64(seed) ^ 0xBA5E11ULL);
  BaselineModel m;
  m.backbone.cfg = cfg;
  std::uint32_t in = cfg.input_dim;
  for (std::uint32_t h : cfg.hidden) {
    m.backbone.layers.push_back(init_linear(h, in, e));
    in = h;
  }
  m.backbone.layers.push_back(init_linear(cfg.token_count * cfg.token_dim, in, e));
  m.classes = classes;
  m.head = init_linear(classes, cfg.token_dim, e);
  return m;
}

namespace {

Backbone backbone_zeros(const Backbone& b) {
  Backbone z;
  z.cfg = b.cfg;
  for (const auto& l : b.layers) {
    LinearLayer g;
    g.w = Mat(l.w.rows, l.w.cols);
    g.b.assign(l.b.size(), 0.0);
    z.layers.push_back(std::move(g));
  }
  return z;
}

}  // namespace

CelModel zeros_like(const CelModel& m) {
  CelModel z;
  z.backbone = backbone_zeros(m.backbone);
  z.encoder.cfg = m.encoder.cfg;
  z.encoder.queries = Mat(m.encoder.queries.rows, m.encoder.queries.cols);
  auto zl = [](const LinearLayer& l) {
    LinearLayer g;
    g.w = Mat(l.w.rows, l.w.cols);
    g.b.assign(l.b.size(), 0.0);
    return g;
  };
  z.encoder.key = zl(m.encoder.key);
  z.encoder.val = zl(m.encoder.val);
  z.encoder.out = zl(m.encoder.out);
  z.heads.w = Mat(m.heads.w.rows, m.heads.w.cols);
  z.heads.b.assign(m.heads.b.size(), 0.0);
  return z;
}

BaselineModel zeros_like(const BaselineModel& m) {
  BaselineModel z;
  z.backbone = backbone_zeros(m.backbone);
  z.classes = m.classes;
  z.head.w = Mat(m.head.w.rows, m.head.w.cols);
  z.head.b.assign(m.head.b.size(), 0.0);
  return z;
}

void for_each_array(CelModel& m, const std::function<void(const std::string&, Vec&)>& fn) {
  for (std::size_t i = 0; i < m.backbone.layers.size(); ++i) {
    fn("backbone.layer" + std::to_string(i) + ".w", m.backbone.layers[i].w.v);
    fn("backbone.layer" + std::to_string(i) + ".b", m.backbone.layers[i].b);
  }
  fn("encoder.queries", m.encoder.queries.v);
  fn("encoder.key.w", m.encoder.key.w.v);
  fn("encoder.key.b", m.encoder.key.b);
  fn("encoder.val.w", m.encoder.val.w.v);
  fn("encoder.val.b", m.encoder.val.b);
  fn("encoder.out.w", m.encoder.out.w.v);
  fn("encoder.out.b", m.encoder.out.b);
  fn("heads.w", m.heads.w.v);
  fn("heads.b", m.heads.b);
}

void for_each_array(const CelModel& m,
                    const std::function<void(const std::string&, const Vec&)>& fn) {
  for_each_array(const_cast<CelModel&>(m),
                 [&](const std::string& n, Vec& v) { fn(n, v); });
}

void for_each_array(BaselineModel& m, const std::function<void(const std::string&, Vec&)>& fn) {
  for (std::size_t i = 0; i < m.backbone.layers.size(); ++i) {
    fn("backbone.layer" + std::to_string(i) + ".w", m.backbone.layers[i].w.v);
    fn("backbone.layer" + std::to_string(i) + ".b", m.backbone.layers[i].b);
  }
  fn("head.w", m.head.w.v);
  fn("head.b", m.head.b);
}

void for_each_array(const BaselineModel& m,
                    const std::function<void(const std::string&, const Vec&)>& fn) {
  for_each_array(const_cast<BaselineModel&>(m),
                 [&](const std::string& n, Vec& v) { fn(n, v); });
}

// ---------------------------------------------------------------------------

Ten3 backbone_forward(const Backbone& bb, const Mat& x, BackboneCache* cache) {
  check_finite(x, "backbone_forward");
  const std::size_t batch = x.rows;
  const std::size_t layers = bb.layers.size();
  BackboneCache local;
  BackboneCache& c = cache != nullptr ? *cache : local;
  c.input = x;
  c.pre.assign(layers, Mat());
  c.post.assign(layers, Mat());

  const Mat* cur = &c.input;
  for (std::size_t li = 0; li < layers; ++li) {
    const LinearLayer& l = bb.layers[li];
    const bool last = li + 1 == layers;
    c.pre[li] = Mat(batch, l.w.rows);
    c.post[li] = Mat(batch, l.w.rows);
    for (std::size_t b = 0; b < batch; ++b) {
      linear_apply(l, cur->row(b), c.pre[li].row(b));
      for (std::size_t j = 0; j < l.w.rows; ++j)
        c.post[li].at(b, j) = last ? c.pre[li].at(b, j) : activate(bb.cfg.act, c.pre[li].at(b, j));
    }
    cur = &c.post[li];
  }

  Ten3 tokens(batch, bb.cfg.token_count, bb.cfg.token_dim);
  tokens.v = c.post.back().v;  // same row-major layout
  return tokens;
}

void backbone_backward(const Backbone& bb, const BackboneCache& cache, const Ten3& dtokens,
                       Backbone& grads, Mat* dx) {
  const std::size_t batch = cache.input.rows;
  const std::size_t layers = bb.layers.size();
  Mat dpost(batch, bb.cfg.token_count * bb.cfg.token_dim);
  dpost.v = dtokens.v;

  for (std::size_t li = layers; li-- > 0;) {
    const LinearLayer& l = bb.layers[li];
    const bool last = li + 1 == layers;
    const Mat& input = li == 0 ? cache.input : cache.post[li - 1];
    Mat dprev(batch, l.w.cols);
    for (std::size_t b = 0; b < batch; ++b) {
      // dpre = dpost * act'(pre)
      double* dp = dpost.row(b);
      if (!last)
        for (std::size_t j = 0; j < l.w.rows; ++j)
          dp[j] *= activate_grad(bb.cfg.act, cache.pre[li].at(b, j), cache.post[li].at(b, j));
      linear_backward(l, input.row(b), dp, grads.layers[li], dprev.row(b));
    }
    if (li == 0) {
      if (dx != nullptr)
        kernels::axpy(1.0, dprev.v.data(), dx->v.data(), dprev.v.size());
    } else {
      dpost = std::move(dprev);
    }
  }
}

Ten3 classwise_encode(const Encoder& enc, const Ten3& tokens, EncoderCache* cache) {
  const std::size_t batch = tokens.n0;
  const std::size_t n = tokens.n1;
  const std::size_t q = enc.cfg.classes;
  const std::size_t w = enc.cfg.attn_width;
  const std::size_t l = enc.cfg.embed_len;
  const double inv_sqrt_w = 1.0 / std::sqrt(double(w));

  EncoderCache local;
  EncoderCache& c = cache != nullptr ? *cache : local;
  c.tokens = tokens;
  c.keys = Ten3(batch, n, w);
  c.vals = Ten3(batch, n, w);
  c.attn = Ten3(batch, q, n);
  c.attended = Ten3(batch, q, w);

  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t t = 0; t < n; ++t) {
      linear_apply(enc.key, tokens.row(b, t), c.keys.row(b, t));
      linear_apply(enc.val, tokens.row(b, t), c.vals.row(b, t));
    }

  Ten3 e(batch, q, l);
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t j = 0; j < q; ++j) {
      double* a = c.attn.row(b, j);
      for (std::size_t t = 0; t < n; ++t)
        a[t] = kernels::dot(enc.queries.row(j), c.keys.row(b, t), w) * inv_sqrt_w;
      kernels::softmax_inplace(a, n);
      double* att = c.attended.row(b, j);
      for (std::size_t t = 0; t < n; ++t) kernels::axpy(a[t], c.vals.row(b, t), att, w);
      linear_apply(enc.out, att, e.row(b, j));
    }
  return e;
}

void classwise_encode_backward(const Encoder& enc, const EncoderCache& cache, const Ten3& dE,
                               Encoder& grads, Ten3* dtokens) {
  const std::size_t batch = cache.tokens.n0;
  const std::size_t n = cache.tokens.n1;
  const std::size_t q = enc.cfg.classes;
  const std::size_t w = enc.cfg.attn_width;
  const double inv_sqrt_w = 1.0 / std::sqrt(double(w));

  Ten3 dkeys(batch, n, w), dvals(batch, n, w);
  Vec datt(w), dattn(n), dscore(n);

  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t j = 0; j < q; ++j) {
      // out projection
      std::fill(datt.begin(), datt.end(), 0.0);
      linear_backward(enc.out, cache.attended.row(b, j), dE.row(b, j), grads.out, datt.data());

      const double* a = cache.attn.row(b, j);
      for (std::size_t t = 0; t < n; ++t) {
        dattn[t] = kernels::dot(datt.data(), cache.vals.row(b, t), w);
        kernels::axpy(a[t], datt.data(), dvals.row(b, t), w);
      }
      // softmax backward over the token axis
      double inner = 0.0;
      for (std::size_t t = 0; t < n; ++t) inner += a[t] * dattn[t];
      for (std::size_t t = 0; t < n; ++t) dscore[t] = a[t] * (dattn[t] - inner);

      for (std::size_t t = 0; t < n; ++t) {
        const double g = dscore[t] * inv_sqrt_w;
        if (g == 0.0) continue;
        kernels::axpy(g, cache.keys.row(b, t), grads.queries.row(j), w);
        kernels::axpy(g, enc.queries.row(j), dkeys.row(b, t), w);
      }
    }
  }

  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t t = 0; t < n; ++t) {
      double* dtok = dtokens != nullptr ? dtokens->row(b, t) : nullptr;
      linear_backward(enc.key, cache.tokens.row(b, t), dkeys.row(b, t), grads.key, dtok);
      linear_backward(enc.val, cache.tokens.row(b, t), dvals.row(b, t), grads.val, dtok);
    }
}

Mat classify(const Heads& heads, const Ten3& e) {
  const std::size_t batch = e.n0;
  const std::size_t q = heads.w.rows;
  Mat p(batch, q);
  for (std::size_t b = 0; b < batch; ++b) {
    double* row = p.row(b);
    for (std::size_t j = 0; j < q; ++j)
      row[j] = kernels::dot(heads.w.row(j), e.row(b, j), heads.w.cols) + heads.b[j];
    kernels::softmax_inplace(row, q);
  }
  return p;
}

void classify_backward(const Heads& heads, const Ten3& e, const Mat& dlogits, Heads& grads,
                       Ten3* dE) {
  const std::size_t batch = e.n0;
  const std::size_t q = heads.w.rows;
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t j = 0; j < q; ++j) {
      const double g = dlogits.at(b, j);
      if (g == 0.0) continue;
      kernels::axpy(g, e.row(b, j), grads.w.row(j), heads.w.cols);
      grads.b[j] += g;
      if (dE != nullptr) kernels::axpy(g, heads.w.row(j), dE->row(b, j), heads.w.cols);
    }
}

Ten3 normalize_embeddings(const Ten3& e, std::uint64_t* zero_rows) {
  Ten3 out = e;
  for (std::size_t b = 0; b < e.n0; ++b)
    for (std::size_t j = 0; j < e.n1; ++j) {
      double* row = out.row(b, j);
      const double norm = kernels::nrm2(row, e.n2);
      if (norm == 0.0) {
        if (zero_rows != nullptr) ++*zero_rows;
        continue;  // zero row maps to zero
      }
      // Elementwise division is correctly rounded per entry (a reciprocal
      // multiply can land one ulp off), and it is identical across modes.
      for (std::size_t k = 0; k < e.n2; ++k) row[k] /= norm;
    }
  return out;
}

void normalize_backward(const Ten3& e_raw, const Ten3& e_hat, const Ten3& dhat, Ten3& de) {
  const std::size_t l = e_raw.n2;
  for (std::size_t b = 0; b < e_raw.n0; ++b)
    for (std::size_t j = 0; j < e_raw.n1; ++j) {
      const double norm = kernels::nrm2(e_raw.row(b, j), l);
      if (norm == 0.0) continue;  // subgradient 0 at the degenerate point
      const double* hat = e_hat.row(b, j);
      const double* g = dhat.row(b, j);
      const double inner = kernels::dot(hat, g, l);
      double* out = de.row(b, j);
      kernels::axpy(1.0 / norm, g, out, l);
      kernels::axpy(-inner / norm, hat, out, l);
    }
}

Mat baseline_forward(const BaselineModel& m, const Mat& x, BaselineCache* cache) {
  BaselineCache local;
  BaselineCache& c = cache != nullptr ? *cache : local;
  c.tokens = backbone_forward(m.backbone, x, &c.bb);
  const std::size_t batch = x.rows;
  const std::size_t n = m.backbone.cfg.token_count;
  const std::size_t cdim = m.backbone.cfg.token_dim;
  c.pooled = Mat(batch, cdim);
  for (std::size_t b = 0; b < batch; ++b) {
    double* row = c.pooled.row(b);
    for (std::size_t t = 0; t < n; ++t) kernels::axpy(1.0 / double(n), c.tokens.row(b, t), row, cdim);
  }
  Mat p(batch, m.classes);
  for (std::size_t b = 0; b < batch; ++b) {
    linear_apply(m.head, c.pooled.row(b), p.row(b));
    kernels::softmax_inplace(p.row(b), m.classes);
  }
  return p;
}

void baseline_backward(const BaselineModel& m, const BaselineCache& cache, const Mat& dlogits,
                       BaselineModel& grads, Mat* dx) {
  const std::size_t batch = cache.pooled.rows;
  const std::size_t n = m.backbone.cfg.token_count;
  const std::size_t cdim = m.backbone.cfg.token_dim;
  Mat dpooled(batch, cdim);
  for (std::size_t b = 0; b < batch; ++b)
    linear_backward(m.head, cache.pooled.row(b), dlogits.row(b), grads.head, dpooled.row(b));
  Ten3 dtokens(batch, n, cdim);
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t t = 0; t < n; ++t)
      kernels::axpy(1.0 / double(n), dpooled.row(b), dtokens.row(b, t), cdim);
  backbone_backward(m.backbone, cache.bb, dtokens, grads.backbone, dx);
}

}  // namespace cel::net
