#include "cel/config_io.hpp"

#include <set>
#include <stdexcept>
#include <string>

namespace cel::cfgio {

using nlohmann::json;

namespace {

void reject_unknown(const json& j, const std::set<std::string>& known, const char* where) {
  for (const auto& item : j.items()) {
    if (!known.count(item.key()))
      throw std::invalid_argument(std::string(where) + ": unknown key '" + item.key() + "'");
  }
}

const char* act_name(net::Activation a) {
  switch (a) {
    case net::Activation::tanh_fn: return "tanh";
    case net::Activation::relu: return "relu";
    case net::Activation::identity: return "identity";
  }
  return "tanh";
}

net::Activation act_from(const std::string& s) {
  if (s == "tanh") return net::Activation::tanh_fn;
  if (s == "relu") return net::Activation::relu;
  if (s == "identity") return net::Activation::identity;
  throw std::invalid_argument("activation: unknown value '" + s + "'");
}

}  // namespace

json model_config_to_json(const net::ModelConfig& cfg) {
  return json{{"input_dim", cfg.backbone.input_dim},
              {"token_count", cfg.backbone.token_count},
              {"token_dim", cfg.backbone.token_dim},
              {"hidden", cfg.backbone.hidden},
              {"activation", act_name(cfg.backbone.act)},
              {"classes", cfg.encoder.classes},
              {"embed_len", cfg.encoder.embed_len},
              {"attn_width", cfg.encoder.attn_width},
              {"query_scale", cfg.encoder.query_scale}};
}

net::ModelConfig model_config_from_json(const json& j) {
  static const std::set<std::string> known = {"input_dim", "token_count",  "token_dim",
                                              "hidden",    "activation",   "classes",
                                              "embed_len", "attn_width",   "query_scale"};
  reject_unknown(j, known, "model config");
  net::ModelConfig cfg;
  if (j.contains("input_dim")) cfg.backbone.input_dim = j.at("input_dim").get<std::uint32_t>();
  if (j.contains("token_count")) cfg.backbone.token_count = j.at("token_count").get<std::uint32_t>();
  if (j.contains("token_dim")) cfg.backbone.token_dim = j.at("token_dim").get<std::uint32_t>();
  if (j.contains("hidden")) cfg.backbone.hidden = j.at("hidden").get<std::vector<std::uint32_t>>();
  if (j.contains("activation")) cfg.backbone.act = act_from(j.at("activation").get<std::string>());
  if (j.contains("classes")) cfg.encoder.classes = j.at("classes").get<std::uint32_t>();
  if (j.contains("embed_len")) cfg.encoder.embed_len = j.at("embed_len").get<std::uint32_t>();
  if (j.contains("attn_width")) cfg.encoder.attn_width = j.at("attn_width").get<std::uint32_t>();
  if (j.contains("query_scale")) cfg.encoder.query_scale = j.at("query_scale").get<double>();
  return cfg;
}

json train_config_to_json(const train::TrainConfig& cfg) {
  return json{{"alpha", cfg.weights.alpha},
              {"beta", cfg.weights.beta},
              {"gamma1", cfg.weights.gamma1},
              {"gamma2", cfg.weights.gamma2},
              {"t_w", cfg.weights.t_w},
              {"t_max", cfg.weights.t_max},
              {"batch_size", cfg.batch_size},
              {"learning_rate", cfg.learning_rate},
              {"momentum", cfg.momentum},
              {"weight_decay", cfg.weight_decay},
              {"seed", cfg.seed},
              {"selection", cfg.selection == loss::SelectionMode::strict ? "strict" : "restricted"},
              {"augmentation", cfg.augmentation},
              {"eval_every", cfg.eval_every},
              {"checkpoint_every", cfg.checkpoint_every}};
}

train::TrainConfig train_config_from_json(const json& j) {
  static const std::set<std::string> known = {
      "alpha",        "beta",     "gamma1",       "gamma2",     "t_w",
      "t_max",        "batch_size", "learning_rate", "momentum", "weight_decay",
      "seed",         "selection", "augmentation", "eval_every", "checkpoint_every"};
  reject_unknown(j, known, "train config");
  train::TrainConfig cfg;
  if (j.contains("alpha")) cfg.weights.alpha = j.at("alpha").get<double>();
  if (j.contains("beta")) cfg.weights.beta = j.at("beta").get<double>();
  if (j.contains("gamma1")) cfg.weights.gamma1 = j.at("gamma1").get<double>();
  if (j.contains("gamma2")) cfg.weights.gamma2 = j.at("gamma2").get<double>();
  if (j.contains("t_w")) cfg.weights.t_w = j.at("t_w").get<std::uint32_t>();
  if (j.contains("t_max")) cfg.weights.t_max = j.at("t_max").get<std::uint32_t>();
  if (j.contains("batch_size")) cfg.batch_size = j.at("batch_size").get<std::uint32_t>();
  if (j.contains("learning_rate")) cfg.learning_rate = j.at("learning_rate").get<double>();
  if (j.contains("momentum")) cfg.momentum = j.at("momentum").get<double>();
  if (j.contains("weight_decay")) cfg.weight_decay = j.at("weight_decay").get<double>();
  if (j.contains("seed")) cfg.seed = j.at("seed").get<std::uint64_t>();
  if (j.contains("selection")) {
    std::string s = j.at("selection").get<std::string>();
    if (s == "strict")
      cfg.selection = loss::SelectionMode::strict;
    else if (s == "restricted")
      cfg.selection = loss::SelectionMode::restricted;
    else
      throw std::invalid_argument("selection: unknown value '" + s + "'");
  }
  if (j.contains("augmentation")) cfg.augmentation = j.at("augmentation").get<std::string>();
  if (j.contains("eval_every")) cfg.eval_every = j.at("eval_every").get<std::uint32_t>();
  if (j.contains("checkpoint_every"))
    cfg.checkpoint_every = j.at("checkpoint_every").get<std::uint32_t>();
  return cfg;
}

}  // namespace cel::cfgio
