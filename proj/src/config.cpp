#include "hg/config.hpp"

#include <cstdint>
#include <sstream>

#include <json.hpp>

#include "hg/error.hpp"

using nlohmann::json;

namespace hg {

namespace {

std::string backbone_kind_name(BackboneKind k) {
  return k == BackboneKind::gcn ? "gcn" : "gin";
}

BackboneKind parse_backbone_kind(const std::string& s) {
  if (s == "gcn") return BackboneKind::gcn;
  if (s == "gin") return BackboneKind::gin;
  throw ConfigError("unknown backbone '" + s + "'");
}

}  // namespace

TrainMode parse_train_mode(const std::string& name) {
  if (name == "e2e" || name == "end_to_end") return TrainMode::end_to_end;
  if (name == "ft" || name == "ft_frozen") return TrainMode::ft_frozen;
  if (name == "fullft" || name == "full_ft") return TrainMode::full_ft;
  throw ConfigError("unknown mode '" + name + "'");
}

std::string train_mode_name(TrainMode mode) {
  switch (mode) {
    case TrainMode::end_to_end: return "e2e";
    case TrainMode::ft_frozen: return "ft";
    case TrainMode::full_ft: return "fullft";
  }
  return "e2e";
}

ReadoutKind parse_readout_kind(const std::string& name) {
  if (name == "histograph") return ReadoutKind::histograph;
  if (name == "mean") return ReadoutKind::mean;
  if (name == "sum") return ReadoutKind::sum;
  if (name == "max") return ReadoutKind::max;
  if (name == "jk" || name == "jk_concat") return ReadoutKind::jk_concat;
  throw ConfigError("unknown readout '" + name + "'");
}

std::string readout_kind_name(ReadoutKind kind) {
  switch (kind) {
    case ReadoutKind::histograph: return "histograph";
    case ReadoutKind::mean: return "mean";
    case ReadoutKind::sum: return "sum";
    case ReadoutKind::max: return "max";
    case ReadoutKind::jk_concat: return "jk";
  }
  return "mean";
}

TaskKind parse_task_kind(const std::string& name) {
  if (name == "graph" || name == "graph_class") return TaskKind::graph_class;
  if (name == "node" || name == "node_class") return TaskKind::node_class;
  if (name == "regress" || name == "node_regress") {
    return TaskKind::node_regress;
  }
  throw ConfigError("unknown task '" + name + "'");
}

std::string task_kind_name(TaskKind task) {
  switch (task) {
    case TaskKind::graph_class: return "graph";
    case TaskKind::node_class: return "node";
    case TaskKind::node_regress: return "regress";
  }
  return "graph";
}

std::string config_to_json(const TrainConfig& cfg) {
  json j;
  j["train.epochs"] = cfg.epochs;
  j["train.batch"] = cfg.batch_size;
  j["train.lr"] = cfg.lr;
  j["train.wd"] = cfg.weight_decay;
  j["train.seed"] = cfg.seed;
  j["train.mode"] = train_mode_name(cfg.mode);
  j["train.val_fraction"] = cfg.val_fraction;
  j["task"] = task_kind_name(cfg.task);
  j["readout"] = readout_kind_name(cfg.readout);
  j["backbone.kind"] = backbone_kind_name(cfg.backbone.kind);
  j["backbone.layers"] = cfg.backbone.layers;
  j["backbone.hidden"] = cfg.backbone.hidden;
  j["pool.heads"] = cfg.pool.heads;
  j["pool.use_residual"] = cfg.pool.use_residual;
  j["pool.use_layernorm"] = cfg.pool.use_layernorm;
  j["pool.norm_epsilon"] = cfg.pool.norm_epsilon;
  j["pool.ln_epsilon"] = cfg.pool.ln_epsilon;
  j["pool.mix_mode"] =
      cfg.pool.mix_mode == MixMode::learnable ? "learnable" : "fixed";
  j["pool.mix_alpha"] = cfg.pool.mix_alpha;
  j["pool.use_layerwise_attention"] = cfg.pool.use_layerwise_attention;
  j["pool.use_signed_norm"] = cfg.pool.use_signed_norm;
  j["pool.use_nodewise_attention"] = cfg.pool.use_nodewise_attention;
  j["pool.p_mha"] = cfg.pool.p_mha;
  j["pool.p_mask"] = cfg.pool.p_mask;
  j["pool.zero_attention"] = cfg.pool.zero_attention;
  if (cfg.pool.alpha_override) {
    j["pool.alpha_override"] = *cfg.pool.alpha_override;
  }
  j["data.feat_dim"] = cfg.feat_dim;
  j["data.num_classes"] = cfg.num_classes;
  return j.dump();
}

TrainConfig config_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  TrainConfig cfg;
  try {
    auto get = [&j](const char* key, auto fallback) {
      using V = decltype(fallback);
      return j.contains(key) ? j.at(key).get<V>() : fallback;
    };
    cfg.epochs = get("train.epochs", cfg.epochs);
    cfg.batch_size = get("train.batch", cfg.batch_size);
    cfg.lr = get("train.lr", cfg.lr);
    cfg.weight_decay = get("train.wd", cfg.weight_decay);
    cfg.seed = get("train.seed", cfg.seed);
    cfg.mode = parse_train_mode(get("train.mode", train_mode_name(cfg.mode)));
    cfg.val_fraction = get("train.val_fraction", cfg.val_fraction);
    cfg.task = parse_task_kind(get("task", task_kind_name(cfg.task)));
    cfg.readout =
        parse_readout_kind(get("readout", readout_kind_name(cfg.readout)));
    cfg.backbone.kind = parse_backbone_kind(
        get("backbone.kind", backbone_kind_name(cfg.backbone.kind)));
    cfg.backbone.layers = get("backbone.layers", cfg.backbone.layers);
    cfg.backbone.hidden = get("backbone.hidden", cfg.backbone.hidden);
    cfg.pool.heads = get("pool.heads", cfg.pool.heads);
    cfg.pool.use_residual = get("pool.use_residual", cfg.pool.use_residual);
    cfg.pool.use_layernorm = get("pool.use_layernorm", cfg.pool.use_layernorm);
    cfg.pool.norm_epsilon = get("pool.norm_epsilon", cfg.pool.norm_epsilon);
    cfg.pool.ln_epsilon = get("pool.ln_epsilon", cfg.pool.ln_epsilon);
    cfg.pool.mix_mode = get("pool.mix_mode", std::string("learnable")) ==
                                "fixed"
                            ? MixMode::fixed
                            : MixMode::learnable;
    cfg.pool.mix_alpha = get("pool.mix_alpha", cfg.pool.mix_alpha);
    cfg.pool.use_layerwise_attention =
        get("pool.use_layerwise_attention", cfg.pool.use_layerwise_attention);
    cfg.pool.use_signed_norm =
        get("pool.use_signed_norm", cfg.pool.use_signed_norm);
    cfg.pool.use_nodewise_attention =
        get("pool.use_nodewise_attention", cfg.pool.use_nodewise_attention);
    cfg.pool.p_mha = get("pool.p_mha", cfg.pool.p_mha);
    cfg.pool.p_mask = get("pool.p_mask", cfg.pool.p_mask);
    cfg.pool.zero_attention =
        get("pool.zero_attention", cfg.pool.zero_attention);
    if (j.contains("pool.alpha_override")) {
      cfg.pool.alpha_override =
          j.at("pool.alpha_override").get<std::vector<double>>();
    }
    cfg.feat_dim = get("data.feat_dim", cfg.feat_dim);
    cfg.num_classes = get("data.num_classes", cfg.num_classes);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  cfg.canonicalize();
  return cfg;
}

std::string merge_config_json(const std::string& base,
                              const std::string& overlay) {
  json jb, jo;
  try {
    jb = json::parse(base);
    jo = json::parse(overlay);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config merge: ") + e.what());
  }
  for (auto it = jo.begin(); it != jo.end(); ++it) {
    jb[it.key()] = it.value();
  }
  return jb.dump();
}

std::string config_hash(const std::string& text) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ull;
  }
  std::ostringstream os;
  os << std::hex << h;
  return os.str();
}

}  // namespace hg
