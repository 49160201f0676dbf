#include "cel/trainer.hpp"

#include <algorithm>
#include <bit>
#include <cassert>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <numbers>
#include <numeric>
#include <span>
#include <sstream>

#include "json.hpp"

#include "cel/config_io.hpp"
#include "cel/kernels.hpp"
#include "cel/rng.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace cel::train {

static_assert(std::endian::native == std::endian::little,
              "checkpoint blobs are little-endian");

namespace {

std::uint64_t epoch_seed(std::uint64_t seed, std::uint32_t epoch) {
  return rng::splitmix64(rng::splitmix64(seed) ^ rng::splitmix64(0x45504F43ULL + epoch));
}

void gather_batch(const TrainView& view, std::span<const std::uint32_t> rows, Mat& x) {
  const float* f = view.features->data();
  for (std::size_t b = 0; b < rows.size(); ++b) {
    const float* src = f + std::size_t(rows[b]) * view.d;
    double* dst = x.row(b);
    for (std::size_t k = 0; k < view.d; ++k) dst[k] = static_cast<double>(src[k]);
  }
}

template <class Model>
void zero_arrays(Model& m) {
  net::for_each_array(m, [](const std::string&, Vec& v) { std::fill(v.begin(), v.end(), 0.0); });
}

template <class Model>
std::vector<Vec*> array_ptrs(Model& m) {
  std::vector<Vec*> out;
  net::for_each_array(m, [&](const std::string&, Vec& v) { out.push_back(&v); });
  return out;
}

template <class Model>
std::vector<const Vec*> array_ptrs(const Model& m) {
  std::vector<const Vec*> out;
  net::for_each_array(m, [&](const std::string&, const Vec& v) { out.push_back(&v); });
  return out;
}

void step_arrays(std::vector<Vec*> params, std::vector<const Vec*> grads,
                 std::vector<Vec*> velocity, double lr_t, double momentum, double weight_decay) {
  if (params.size() != grads.size() || params.size() != velocity.size())
    throw std::invalid_argument("optimizer: array list size mismatch");
  for (std::size_t a = 0; a < params.size(); ++a) {
    Vec& p = *params[a];
    const Vec& g = *grads[a];
    Vec& v = *velocity[a];
    if (p.size() != g.size() || p.size() != v.size())
      throw std::invalid_argument("optimizer: parameter/gradient shape mismatch");
    for (std::size_t k = 0; k < p.size(); ++k) {
      v[k] = momentum * v[k] + g[k] + weight_decay * p[k];
      p[k] -= lr_t * v[k];
    }
  }
}

void check_updated_rows(const data::ConfidenceMatrix& t, const data::CandidateMatrix& s,
                        std::span<const std::uint32_t> rows, std::uint32_t epoch,
                        std::size_t batch) {
  for (std::uint32_t i : rows) {
    double sum = 0.0;
    for (std::size_t j = 0; j < s.q; ++j) {
      double v = t.row(i)[j];
      if (!s.test(i, j)) {
        if (v != 0.0) {
          char buf[128];
          std::snprintf(buf, sizeof(buf),
                        "confidence leak off-candidate at row %u class %zu (epoch %u batch %zu)",
                        i, j, epoch, batch);
          throw std::logic_error(buf);
        }
      } else {
        sum += v;
      }
    }
    if (std::fabs(sum - 1.0) > 1e-9) {
      char buf[128];
      std::snprintf(buf, sizeof(buf),
                    "confidence row %u sums to %.17g (epoch %u batch %zu)", i, sum, epoch, batch);
      throw std::logic_error(buf);
    }
  }
}

void check_epoch_invariants(const TrainState& state, const data::CandidateMatrix& cands,
                            std::uint32_t epoch, const std::string& last_ckpt) {
  std::string why;
  if (!data::confidence_valid(state.confidence, cands, 1e-9, &why))
    throw std::logic_error("confidence invariant violated after epoch " + std::to_string(epoch) +
                           ": " + why);
  for (std::uint32_t c = 0; c < state.bank.q; ++c) {
    if (!state.bank.initialized[c]) continue;
    double n = kernels::nrm2(state.bank.rows.row(c), state.bank.l);
    if (std::fabs(n - 1.0) > 1e-9)
      throw std::logic_error("prototype row " + std::to_string(c) + " has norm " +
                             std::to_string(n) + " after epoch " + std::to_string(epoch));
  }
  std::string bad;
  net::for_each_array(state.model, [&](const std::string& name, const Vec& v) {
    if (!bad.empty()) return;
    for (double x : v)
      if (!std::isfinite(x)) {
        bad = name;
        return;
      }
  });
  if (!bad.empty())
    throw NumericError(epoch, 0, "non-finite parameter in " + bad, last_ckpt);
}

// ---- checkpoint plumbing ----

std::uint64_t fnv1a64(const void* data, std::size_t n) {
  const auto* p = static_cast<const unsigned char*>(data);
  std::uint64_t h = 1469598103934665603ULL;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 1099511628211ULL;
  }
  return h;
}

std::string hex64(std::uint64_t x) {
  char buf[19];
  std::snprintf(buf, sizeof(buf), "0x%016" PRIx64, x);
  return buf;
}

void write_blob(const fs::path& path, const void* data, std::size_t bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw data::FormatError("cannot open for write: " + path.string());
  out.write(static_cast<const char*>(data), static_cast<std::streamsize>(bytes));
  if (!out) throw data::FormatError("short write: " + path.string());
}

std::vector<char> read_blob(const fs::path& path) {
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  if (!in) throw data::FormatError("missing file: " + path.string());
  auto size = in.tellg();
  std::vector<char> buf(static_cast<std::size_t>(size));
  in.seekg(0);
  in.read(buf.data(), size);
  if (!in) throw data::FormatError("short read: " + path.string());
  return buf;
}

json blob_entry(const std::string& file, const char* dtype, std::size_t count, const void* data,
                std::size_t bytes) {
  return json{{"file", file}, {"dtype", dtype}, {"count", count},
              {"fnv1a64", hex64(fnv1a64(data, bytes))}};
}

std::vector<char> load_verified(const fs::path& dir, const json& entry, std::size_t elem_size) {
  std::string file = entry.at("file").get<std::string>();
  auto bytes = read_blob(dir / file);
  std::uint64_t want = std::stoull(entry.at("fnv1a64").get<std::string>(), nullptr, 16);
  if (fnv1a64(bytes.data(), bytes.size()) != want)
    throw data::IntegrityError("checkpoint blob hash mismatch: " + file);
  std::size_t count = entry.at("count").get<std::size_t>();
  if (bytes.size() != count * elem_size)
    throw data::IntegrityError("checkpoint blob size mismatch: " + file);
  return bytes;
}

// Concatenates model arrays in manifest order.
std::pair<Vec, json> flatten_arrays(const net::CelModel& m) {
  Vec flat;
  json layout = json::array();
  net::for_each_array(m, [&](const std::string& name, const Vec& v) {
    layout.push_back(json{{"name", name}, {"count", v.size()}});
    flat.insert(flat.end(), v.begin(), v.end());
  });
  return {std::move(flat), std::move(layout)};
}

void unflatten_arrays(net::CelModel& m, const Vec& flat, const json& layout) {
  std::size_t off = 0, idx = 0;
  std::string err;
  net::for_each_array(m, [&](const std::string& name, Vec& v) {
    if (!err.empty()) return;
    if (idx >= layout.size() || layout[idx].at("name").get<std::string>() != name ||
        layout[idx].at("count").get<std::size_t>() != v.size()) {
      err = "checkpoint array layout mismatch at " + name;
      return;
    }
    if (off + v.size() > flat.size()) {
      err = "checkpoint array overrun at " + name;
      return;
    }
    std::copy(flat.begin() + off, flat.begin() + off + v.size(), v.begin());
    off += v.size();
    ++idx;
  });
  if (err.empty() && (off != flat.size() || idx != layout.size()))
    err = "checkpoint array layout has extra entries";
  if (!err.empty()) throw data::IntegrityError(err);
}

double jnum(const json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nan("");
  return j.at(key).get<double>();
}

json record_to_json(const EpochRecord& r) {
  json j{{"epoch", r.epoch},
         {"lr", r.lr},
         {"loss_cls", r.loss_cls},
         {"loss_cal", r.loss_cal},
         {"loss_pdl", r.loss_pdl},
         {"pdl_skipped", r.pdl_skipped},
         {"conf_fallback_rows", r.conf_fallback_rows},
         {"cal_full_set_rows", r.cal_full_set_rows},
         {"zero_embedding_rows", r.zero_embedding_rows},
         {"selected", r.selected}};
  j["train_acc"] = r.train_acc;  // NaN serializes as null
  j["test_acc"] = r.test_acc;
  j["conf_hit_rate"] = r.conf_hit_rate;
  return j;
}

EpochRecord record_from_json(const json& j) {
  EpochRecord r;
  r.epoch = j.at("epoch").get<std::uint32_t>();
  r.lr = j.at("lr").get<double>();
  r.loss_cls = j.at("loss_cls").get<double>();
  r.loss_cal = j.at("loss_cal").get<double>();
  r.loss_pdl = j.at("loss_pdl").get<double>();
  r.pdl_skipped = j.at("pdl_skipped").get<std::uint64_t>();
  r.conf_fallback_rows = j.at("conf_fallback_rows").get<std::uint64_t>();
  r.cal_full_set_rows = j.at("cal_full_set_rows").get<std::uint64_t>();
  r.zero_embedding_rows = j.at("zero_embedding_rows").get<std::uint64_t>();
  r.selected = j.at("selected").get<std::uint64_t>();
  r.train_acc = jnum(j, "train_acc");
  r.test_acc = jnum(j, "test_acc");
  r.conf_hit_rate = jnum(j, "conf_hit_rate");
  return r;
}

std::string fmt17(double x) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return buf;
}

}  // namespace

TrainView make_train_view(const data::PartialLabelDataset& ds) {
  TrainView v;
  v.m = ds.m;
  v.d = ds.d;
  v.features = &ds.features;
  v.candidates = &ds.candidates;
  v.labels = &ds.labels;
  return v;
}

void validate_config(const TrainConfig& cfg) {
  if (cfg.batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
  if (!(cfg.learning_rate > 0)) throw std::invalid_argument("learning_rate must be > 0");
  if (!(cfg.momentum >= 0 && cfg.momentum < 1))
    throw std::invalid_argument("momentum must be in [0, 1)");
  if (!(cfg.weight_decay >= 0)) throw std::invalid_argument("weight_decay must be >= 0");
  if (cfg.augmentation != "identity")
    throw std::invalid_argument("unsupported augmentation hook: " + cfg.augmentation);
  if (cfg.checkpoint_every > 0 && cfg.checkpoint_dir.empty())
    throw std::invalid_argument("checkpoint_every set without checkpoint_dir");
}

NumericError::NumericError(std::uint32_t epoch_, std::size_t batch_, const std::string& what_,
                           std::string last_checkpoint_)
    : std::runtime_error("numerical failure at epoch " + std::to_string(epoch_) + " batch " +
                         std::to_string(batch_) + ": " + what_ +
                         (last_checkpoint_.empty() ? std::string()
                                                   : " (last checkpoint: " + last_checkpoint_ + ")")),
      epoch(epoch_),
      batch(batch_),
      last_checkpoint(std::move(last_checkpoint_)) {}

double lr_schedule(std::uint32_t epoch, std::uint32_t t_max, double lr0) {
  if (t_max == 0) return lr0;
  double phase = std::numbers::pi * static_cast<double>(epoch - 1) / static_cast<double>(t_max);
  return lr0 * (1.0 + std::cos(phase)) / 2.0;
}

void optimizer_step(net::CelModel& params, const net::CelModel& grads, net::CelModel& velocity,
                    double lr_t, double momentum, double weight_decay) {
  step_arrays(array_ptrs(params), array_ptrs(grads), array_ptrs(velocity), lr_t, momentum,
              weight_decay);
}

void optimizer_step(net::BaselineModel& params, const net::BaselineModel& grads,
                    net::BaselineModel& velocity, double lr_t, double momentum,
                    double weight_decay) {
  step_arrays(array_ptrs(params), array_ptrs(grads), array_ptrs(velocity), lr_t, momentum,
              weight_decay);
}

TrainState init_state(const TrainView& view, const net::ModelConfig& mcfg,
                      const TrainConfig& cfg) {
  validate_config(cfg);
  if (!view.features || !view.candidates) throw std::invalid_argument("unbound train view");
  if (mcfg.backbone.input_dim != view.d)
    throw std::invalid_argument("model input_dim does not match dataset dimensionality");
  if (mcfg.encoder.classes != view.candidates->q)
    throw std::invalid_argument("model class count does not match dataset label space");
  TrainState st;
  st.model_config = mcfg;
  st.model = net::init_cel_model(mcfg, cfg.seed);
  st.velocity = net::zeros_like(st.model);
  st.bank = loss::PrototypeBank::zeros(mcfg.encoder.classes, mcfg.encoder.embed_len);
  st.confidence = loss::init_confidence(*view.candidates);
  st.epoch = 0;
  return st;
}

void train(const TrainView& view, const TrainConfig& cfg, TrainState& state, const Observer& obs,
           std::uint32_t until) {
  validate_config(cfg);
  const auto& cands = *view.candidates;
  const std::size_t m = view.m;
  const std::uint32_t q = cands.q;
  const std::uint32_t l = state.model_config.encoder.embed_len;
  const std::uint32_t n_tok = state.model_config.backbone.token_count;
  const std::uint32_t c_tok = state.model_config.backbone.token_dim;
  if (state.confidence.m != m || state.confidence.q != q)
    throw std::invalid_argument("confidence matrix does not match dataset");

  const std::uint32_t t_max = cfg.weights.t_max;
  const std::uint32_t target = until == 0 ? t_max : std::min(until, t_max);
  std::string last_ckpt;
  std::vector<std::uint32_t> order(m);
  net::CelModel grads = net::zeros_like(state.model);

  for (std::uint32_t epoch = state.epoch + 1; epoch <= target; ++epoch) {
    const double lr = lr_schedule(epoch, t_max, cfg.learning_rate);
    const bool stage2 = epoch > cfg.weights.t_w;
    std::iota(order.begin(), order.end(), 0u);
    rng::Engine shuffle(epoch_seed(cfg.seed, epoch));
    rng::fisher_yates(std::span<std::uint32_t>(order), shuffle);

    double cls_sum = 0.0, cal_sum = 0.0, pdl_weighted = 0.0;
    std::uint64_t pdl_kept = 0;
    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = lr;

    std::size_t batch_index = 0;
    for (std::size_t off = 0; off < m; off += cfg.batch_size, ++batch_index) {
      const std::size_t bn = std::min<std::size_t>(cfg.batch_size, m - off);
      std::span<const std::uint32_t> rows(order.data() + off, bn);

      Mat x(bn, view.d);
      gather_batch(view, rows, x);

      net::BackboneCache bcache;
      net::EncoderCache ecache;
      Ten3 tokens, e_raw, e_hat;
      Mat p;
      try {
        tokens = net::backbone_forward(state.model.backbone, x, &bcache);
        e_raw = net::classwise_encode(state.model.encoder, tokens, &ecache);
        p = net::classify(state.model.heads, e_raw);
        std::uint64_t zero_rows = 0;
        e_hat = net::normalize_embeddings(e_raw, &zero_rows);
        rec.zero_embedding_rows += zero_rows;
      } catch (const std::invalid_argument& e) {
        throw NumericError(epoch, batch_index, e.what(), last_ckpt);
      }

      Mat t_batch(bn, q);
      for (std::size_t b = 0; b < bn; ++b)
        std::memcpy(t_batch.row(b), state.confidence.row(rows[b]), q * sizeof(double));

      const double lcls = loss::cls_loss(p, t_batch);
      auto cal = loss::cal_similarities(e_hat, cands, rows);
      const double lcal = loss::cal_loss(cal, cfg.weights.gamma1);
      auto selections = loss::select_batch(p, cands, rows, cfg.selection);

      loss::PdlSims psims;
      double lpdl = 0.0;
      if (stage2) {
        psims = loss::pdl_similarities(e_hat, state.bank, selections);
        lpdl = loss::pdl_loss(psims, cfg.weights.gamma2);
        rec.pdl_skipped += psims.skipped;
      }
      if (!std::isfinite(lcls) || !std::isfinite(lcal) || !std::isfinite(lpdl))
        throw NumericError(epoch, batch_index, "non-finite loss", last_ckpt);

      zero_arrays(grads);
      Mat dlogits(bn, q);
      loss::cls_backward(p, t_batch, dlogits);
      Ten3 de_hat(bn, q, l);
      loss::cal_backward(e_hat, cands, rows, cal, cfg.weights.gamma1, cfg.weights.alpha, de_hat);
      if (stage2)
        loss::pdl_backward(state.bank, psims, cfg.weights.gamma2, cfg.weights.beta, de_hat);

      Ten3 de(bn, q, l);
      net::classify_backward(state.model.heads, e_raw, dlogits, grads.heads, &de);
      net::normalize_backward(e_raw, e_hat, de_hat, de);
      Ten3 dtokens(bn, n_tok, c_tok);
      net::classwise_encode_backward(state.model.encoder, ecache, de, grads.encoder, &dtokens);
      net::backbone_backward(state.model.backbone, bcache, dtokens, grads.backbone, nullptr);

      loss::update_confidence_rows(p, cands, rows, state.confidence, &rec.conf_fallback_rows);
      if (cfg.verify_each_update)
        check_updated_rows(state.confidence, cands, rows, epoch, batch_index);
      loss::update_prototypes(state.bank, e_hat, selections);
      optimizer_step(state.model, grads, state.velocity, lr, cfg.momentum, cfg.weight_decay);

      cls_sum += lcls * static_cast<double>(bn);
      cal_sum += lcal * static_cast<double>(bn);
      pdl_weighted += lpdl * static_cast<double>(psims.s.size());
      pdl_kept += psims.s.size();
      rec.cal_full_set_rows += cal.full_set_rows;
      rec.selected += selections.size();
    }

    rec.loss_cls = cls_sum / static_cast<double>(m);
    rec.loss_cal = cal_sum / static_cast<double>(m);
    rec.loss_pdl = pdl_kept > 0 ? pdl_weighted / static_cast<double>(pdl_kept) : 0.0;

    check_epoch_invariants(state, cands, epoch, last_ckpt);
    state.epoch = epoch;
    state.history.epochs.push_back(rec);
    EpochRecord& stored = state.history.epochs.back();

    const bool fire = obs && ((cfg.eval_every > 0 && epoch % cfg.eval_every == 0) ||
                              epoch == target || epoch == t_max);
    if (fire) obs(EpochContext{state, epoch}, stored);

    if (cfg.checkpoint_every > 0 && epoch % cfg.checkpoint_every == 0) {
      char name[32];
      std::snprintf(name, sizeof(name), "epoch_%04u", epoch);
      fs::path dir = fs::path(cfg.checkpoint_dir) / name;
      save_checkpoint(dir.string(), state, cfg);
      last_ckpt = dir.string();
    }
  }
}

void save_checkpoint(const std::string& dir, const TrainState& state, const TrainConfig& cfg) {
  fs::create_directories(dir);
  fs::path base(dir);

  auto [params, layout] = flatten_arrays(state.model);
  auto [velocity, layout2] = flatten_arrays(state.velocity);
  if (layout != layout2) throw std::logic_error("velocity layout diverged from parameters");

  json manifest;
  manifest["cel_checkpoint_version"] = 1;
  manifest["epoch"] = state.epoch;
  manifest["model"] = cfgio::model_config_to_json(state.model_config);
  manifest["train"] = cfgio::train_config_to_json(cfg);
  manifest["arrays"] = layout;
  manifest["bank"] = json{{"q", state.bank.q}, {"l", state.bank.l}};
  manifest["confidence"] = json{{"m", state.confidence.m}, {"q", state.confidence.q}};

  json blobs = json::array();
  auto dump = [&](const std::string& file, const char* dtype, const void* data, std::size_t count,
                  std::size_t elem) {
    write_blob(base / file, data, count * elem);
    blobs.push_back(blob_entry(file, dtype, count, data, count * elem));
  };
  dump("params.bin", "f64", params.data(), params.size(), 8);
  dump("velocity.bin", "f64", velocity.data(), velocity.size(), 8);
  dump("bank_rows.bin", "f64", state.bank.rows.v.data(), state.bank.rows.v.size(), 8);
  dump("bank_init.bin", "u8", state.bank.initialized.data(), state.bank.initialized.size(), 1);
  dump("bank_counts.bin", "u64", state.bank.update_count.data(), state.bank.update_count.size(),
       8);
  dump("confidence.bin", "f64", state.confidence.values.data(), state.confidence.values.size(), 8);
  manifest["blobs"] = blobs;

  json hist = json::array();
  for (const auto& r : state.history.epochs) hist.push_back(record_to_json(r));
  manifest["history"] = hist;

  std::ofstream out(base / "manifest.json", std::ios::trunc);
  if (!out) throw data::FormatError("cannot write checkpoint manifest in " + dir);
  out << manifest.dump(2) << "\n";
  if (!out) throw data::FormatError("short write on checkpoint manifest in " + dir);
}

TrainState load_checkpoint(const std::string& dir, TrainConfig* cfg_out) {
  fs::path base(dir);
  std::ifstream in(base / "manifest.json");
  if (!in) throw data::FormatError("missing checkpoint manifest: " + (base / "manifest.json").string());
  json manifest;
  try {
    manifest = json::parse(in);
  } catch (const json::parse_error& e) {
    throw data::FormatError("checkpoint manifest parse error: " + std::string(e.what()));
  }
  if (!manifest.contains("cel_checkpoint_version"))
    throw data::FormatError("not a checkpoint manifest: " + dir);
  if (manifest.at("cel_checkpoint_version").get<int>() != 1)
    throw data::FormatError("unsupported checkpoint version in " + dir);

  TrainState st;
  st.model_config = cfgio::model_config_from_json(manifest.at("model"));
  TrainConfig cfg = cfgio::train_config_from_json(manifest.at("train"));
  if (cfg_out) *cfg_out = cfg;
  st.model = net::init_cel_model(st.model_config, cfg.seed);
  st.velocity = net::zeros_like(st.model);
  st.epoch = manifest.at("epoch").get<std::uint32_t>();

  std::map<std::string, json> blob_index;
  for (const auto& b : manifest.at("blobs")) blob_index[b.at("file").get<std::string>()] = b;
  auto need = [&](const char* file) -> const json& {
    auto it = blob_index.find(file);
    if (it == blob_index.end())
      throw data::FormatError(std::string("checkpoint manifest missing blob entry: ") + file);
    return it->second;
  };
  auto read_f64 = [&](const char* file) {
    auto bytes = load_verified(base, need(file), 8);
    Vec v(bytes.size() / 8);
    std::memcpy(v.data(), bytes.data(), bytes.size());
    return v;
  };

  unflatten_arrays(st.model, read_f64("params.bin"), manifest.at("arrays"));
  unflatten_arrays(st.velocity, read_f64("velocity.bin"), manifest.at("arrays"));

  std::uint32_t bq = manifest.at("bank").at("q").get<std::uint32_t>();
  std::uint32_t bl = manifest.at("bank").at("l").get<std::uint32_t>();
  st.bank = loss::PrototypeBank::zeros(bq, bl);
  Vec bank_rows = read_f64("bank_rows.bin");
  if (bank_rows.size() != st.bank.rows.v.size())
    throw data::IntegrityError("bank rows blob does not match bank dimensions");
  st.bank.rows.v = std::move(bank_rows);
  auto init_bytes = load_verified(base, need("bank_init.bin"), 1);
  if (init_bytes.size() != bq) throw data::IntegrityError("bank init blob size mismatch");
  std::memcpy(st.bank.initialized.data(), init_bytes.data(), bq);
  auto count_bytes = load_verified(base, need("bank_counts.bin"), 8);
  if (count_bytes.size() != std::size_t(bq) * 8)
    throw data::IntegrityError("bank counts blob size mismatch");
  std::memcpy(st.bank.update_count.data(), count_bytes.data(), count_bytes.size());

  std::uint32_t cm = manifest.at("confidence").at("m").get<std::uint32_t>();
  std::uint32_t cq = manifest.at("confidence").at("q").get<std::uint32_t>();
  st.confidence = data::ConfidenceMatrix(cm, cq);
  Vec conf = read_f64("confidence.bin");
  if (conf.size() != st.confidence.values.size())
    throw data::IntegrityError("confidence blob does not match dimensions");
  st.confidence.values = std::move(conf);

  for (const auto& r : manifest.at("history")) st.history.epochs.push_back(record_from_json(r));
  return st;
}

void write_history_csv(const std::string& path, const TrainHistory& history) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw data::FormatError("cannot write history csv: " + path);
  out << "epoch,lr,loss_cls,loss_cal,loss_pdl,train_acc,test_acc,pdl_skipped,conf_hit_rate\n";
  for (const auto& r : history.epochs) {
    out << r.epoch << ',' << fmt17(r.lr) << ',' << fmt17(r.loss_cls) << ',' << fmt17(r.loss_cal)
        << ',' << fmt17(r.loss_pdl) << ',' << fmt17(r.train_acc) << ',' << fmt17(r.test_acc)
        << ',' << r.pdl_skipped << ',' << fmt17(r.conf_hit_rate) << '\n';
  }
  if (!out) throw data::FormatError("short write on history csv: " + path);
}

TrainHistory read_history_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw data::FormatError("missing history csv: " + path);
  std::string line;
  if (!std::getline(in, line)) throw data::FormatError("empty history csv: " + path);
  TrainHistory h;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != 9) throw data::FormatError("malformed history row: " + line);
    EpochRecord r;
    r.epoch = static_cast<std::uint32_t>(std::stoul(cells[0]));
    r.lr = std::strtod(cells[1].c_str(), nullptr);
    r.loss_cls = std::strtod(cells[2].c_str(), nullptr);
    r.loss_cal = std::strtod(cells[3].c_str(), nullptr);
    r.loss_pdl = std::strtod(cells[4].c_str(), nullptr);
    r.train_acc = std::strtod(cells[5].c_str(), nullptr);
    r.test_acc = std::strtod(cells[6].c_str(), nullptr);
    r.pdl_skipped = std::stoull(cells[7]);
    r.conf_hit_rate = std::strtod(cells[8].c_str(), nullptr);
    h.epochs.push_back(r);
  }
  return h;
}

Mat predict(const net::CelModel& model, const float* features, std::size_t m, std::size_t d) {
  const std::size_t chunk = 256;
  Mat p(m, model.encoder.cfg.classes);
  for (std::size_t off = 0; off < m; off += chunk) {
    std::size_t bn = std::min(chunk, m - off);
    Mat x(bn, d);
    for (std::size_t b = 0; b < bn; ++b)
      for (std::size_t k = 0; k < d; ++k)
        x.at(b, k) = static_cast<double>(features[(off + b) * d + k]);
    Ten3 tokens = net::backbone_forward(model.backbone, x);
    Ten3 e = net::classwise_encode(model.encoder, tokens);
    Mat pb = net::classify(model.heads, e);
    std::memcpy(p.row(off), pb.v.data(), pb.v.size() * sizeof(double));
  }
  return p;
}

Mat predict(const net::BaselineModel& model, const float* features, std::size_t m,
            std::size_t d) {
  const std::size_t chunk = 256;
  Mat p(m, model.classes);
  for (std::size_t off = 0; off < m; off += chunk) {
    std::size_t bn = std::min(chunk, m - off);
    Mat x(bn, d);
    for (std::size_t b = 0; b < bn; ++b)
      for (std::size_t k = 0; k < d; ++k)
        x.at(b, k) = static_cast<double>(features[(off + b) * d + k]);
    Mat pb = net::baseline_forward(model, x);
    std::memcpy(p.row(off), pb.v.data(), pb.v.size() * sizeof(double));
  }
  return p;
}

BaselineState train_baseline(const TrainView& view, const net::BackboneConfig& bcfg,
                             const TrainConfig& cfg, const BaselineObserver& obs) {
  validate_config(cfg);
  if (!view.features || !view.candidates) throw std::invalid_argument("unbound train view");
  if (bcfg.input_dim != view.d)
    throw std::invalid_argument("backbone input_dim does not match dataset dimensionality");
  const auto& cands = *view.candidates;
  const std::size_t m = view.m;
  const std::uint32_t q = cands.q;
  const std::uint32_t t_max = cfg.weights.t_max;

  BaselineState st;
  st.model = net::init_baseline_model(bcfg, q, cfg.seed);
  st.velocity = net::zeros_like(st.model);
  st.confidence = loss::init_confidence(cands);

  std::vector<std::uint32_t> order(m);
  net::BaselineModel grads = net::zeros_like(st.model);

  for (std::uint32_t epoch = 1; epoch <= t_max; ++epoch) {
    const double lr = lr_schedule(epoch, t_max, cfg.learning_rate);
    std::iota(order.begin(), order.end(), 0u);
    rng::Engine shuffle(epoch_seed(cfg.seed, epoch));
    rng::fisher_yates(std::span<std::uint32_t>(order), shuffle);

    double cls_sum = 0.0;
    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = lr;

    std::size_t batch_index = 0;
    for (std::size_t off = 0; off < m; off += cfg.batch_size, ++batch_index) {
      const std::size_t bn = std::min<std::size_t>(cfg.batch_size, m - off);
      std::span<const std::uint32_t> rows(order.data() + off, bn);
      Mat x(bn, view.d);
      gather_batch(view, rows, x);

      net::BaselineCache cache;
      Mat p;
      try {
        p = net::baseline_forward(st.model, x, &cache);
      } catch (const std::invalid_argument& e) {
        throw NumericError(epoch, batch_index, e.what(), "");
      }

      Mat t_batch(bn, q);
      for (std::size_t b = 0; b < bn; ++b)
        std::memcpy(t_batch.row(b), st.confidence.row(rows[b]), q * sizeof(double));

      const double lcls = loss::cls_loss(p, t_batch);
      if (!std::isfinite(lcls)) throw NumericError(epoch, batch_index, "non-finite loss", "");

      zero_arrays(grads);
      Mat dlogits(bn, q);
      loss::cls_backward(p, t_batch, dlogits);
      net::baseline_backward(st.model, cache, dlogits, grads, nullptr);

      loss::update_confidence_rows(p, cands, rows, st.confidence, &rec.conf_fallback_rows);
      optimizer_step(st.model, grads, st.velocity, lr, cfg.momentum, cfg.weight_decay);
      cls_sum += lcls * static_cast<double>(bn);
    }

    rec.loss_cls = cls_sum / static_cast<double>(m);
    std::string why;
    if (!data::confidence_valid(st.confidence, cands, 1e-9, &why))
      throw std::logic_error("confidence invariant violated after epoch " +
                             std::to_string(epoch) + ": " + why);
    st.history.epochs.push_back(rec);
    EpochRecord& stored = st.history.epochs.back();
    const bool fire = obs && ((cfg.eval_every > 0 && epoch % cfg.eval_every == 0) ||
                              epoch == t_max);
    if (fire) obs(st, epoch, stored);
  }
  return st;
}

}  // namespace cel::train
