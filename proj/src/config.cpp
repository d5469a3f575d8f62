#include "geosurge/config.hpp"

#include <fstream>
#include <set>

#include "geosurge/error.hpp"

namespace geosurge::config {

namespace {

void reject_unknown(const nlohmann::json& obj, const std::set<std::string>& allowed,
                    const std::string& path) {
  for (const auto& [key, value] : obj.items()) {
    if (!allowed.contains(key)) {
      throw ConfigError("unknown config key: " + (path.empty() ? key : path + "." + key));
    }
  }
}

template <typename T>
void get_if(const nlohmann::json& obj, const char* key, T& out) {
  if (obj.contains(key)) out = obj.at(key).get<T>();
}

}  // namespace

void RunConfig::validate() const {
  if (precision != "f32" && precision != "f64") {
    throw ConfigError("precision must be \"f32\" or \"f64\"");
  }
  if (threads < 1) throw ConfigError("threads must be >= 1");
  if (partition.tau_min < 1) throw ConfigError("partition.tau_min must be >= 1");
  if (partition.schedule.empty()) throw ConfigError("partition.schedule must be nonempty");
  fusion.validate();
  train.validate();
  if (inference.top_k < 1) throw ConfigError("inference.top_k must be >= 1");
  synth.validate();
  if (eval.thresholds_km.empty()) throw ConfigError("eval.thresholds_km must be nonempty");
}

nlohmann::json RunConfig::to_json() const {
  nlohmann::json doc;
  doc["seed"] = seed;
  doc["threads"] = threads;
  doc["precision"] = precision;
  doc["partition"] = {{"tau_min", partition.tau_min},
                      {"schedule", partition.schedule},
                      {"split", partition.split},
                      {"member_ids", partition.member_ids}};
  doc["fusion"] = {
      {"enabled", fusion.enabled},
      {"d_s", fusion.d_s},
      {"d_kv", fusion.d_kv},
      {"latent_dim", fusion.latent_dim},
      {"heads", fusion.heads},
      {"blocks", fusion.blocks},
      {"mlp_hidden", fusion.mlp_hidden},
      {"out_dim", fusion.out_dim},
      {"num_classes", fusion.num_classes},
      {"seg_h", fusion.seg_h},
      {"seg_w", fusion.seg_w},
      {"activation", fusion.activation == fusion::Activation::kGelu ? "gelu" : "relu"},
      {"rgb_encoder_block", fusion.rgb_encoder_block}};
  doc["train"] = {{"batch_size", train.batch_size},
                  {"lr", train.lr},
                  {"weight_decay", train.weight_decay},
                  {"lr_gamma", train.lr_gamma},
                  {"patience", train.patience},
                  {"epochs_max", train.epochs_max},
                  {"val_fraction", train.val_fraction},
                  {"grad_accum", train.grad_accum},
                  {"mask_same_cell_negatives", train.mask_same_cell_negatives}};
  doc["inference"] = {
      {"mode", inference.mode == geosurge::inference::ScoreMode::kSoftmax ? "softmax"
                                                                          : "raw_product"},
      {"top_k", inference.top_k},
      {"split", inference.split}};
  doc["eval"] = {{"thresholds_km", eval.thresholds_km}};
  doc["synth"] = {{"n_clusters", synth.n_clusters},
                  {"samples_per_cluster", synth.samples_per_cluster},
                  {"noise_sigma", synth.noise_sigma},
                  {"rgb_rows", synth.rgb_rows},
                  {"d_kv", synth.d_kv},
                  {"seg_h", synth.seg_h},
                  {"seg_w", synth.seg_w},
                  {"num_classes", synth.num_classes},
                  {"geo_sigma_km", synth.geo_sigma_km},
                  {"holdout_fraction", synth.holdout_fraction}};
  return doc;
}

RunConfig RunConfig::from_json(const nlohmann::json& doc) {
  RunConfig cfg;
  try {
    reject_unknown(doc, {"seed", "threads", "precision", "partition", "fusion", "train",
                         "inference", "eval", "synth"},
                   "");
    get_if(doc, "seed", cfg.seed);
    get_if(doc, "threads", cfg.threads);
    get_if(doc, "precision", cfg.precision);
    if (doc.contains("partition")) {
      const auto& p = doc["partition"];
      reject_unknown(p, {"tau_min", "schedule", "split", "member_ids"}, "partition");
      get_if(p, "tau_min", cfg.partition.tau_min);
      get_if(p, "schedule", cfg.partition.schedule);
      get_if(p, "split", cfg.partition.split);
      get_if(p, "member_ids", cfg.partition.member_ids);
    }
    if (doc.contains("fusion")) {
      const auto& f = doc["fusion"];
      reject_unknown(f,
                     {"enabled", "d_s", "d_kv", "latent_dim", "heads", "blocks", "mlp_hidden",
                      "out_dim", "num_classes", "seg_h", "seg_w", "activation",
                      "rgb_encoder_block"},
                     "fusion");
      get_if(f, "enabled", cfg.fusion.enabled);
      get_if(f, "d_s", cfg.fusion.d_s);
      get_if(f, "d_kv", cfg.fusion.d_kv);
      get_if(f, "latent_dim", cfg.fusion.latent_dim);
      get_if(f, "heads", cfg.fusion.heads);
      get_if(f, "blocks", cfg.fusion.blocks);
      get_if(f, "mlp_hidden", cfg.fusion.mlp_hidden);
      get_if(f, "out_dim", cfg.fusion.out_dim);
      get_if(f, "num_classes", cfg.fusion.num_classes);
      get_if(f, "seg_h", cfg.fusion.seg_h);
      get_if(f, "seg_w", cfg.fusion.seg_w);
      if (f.contains("activation")) {
        std::string act = f["activation"].get<std::string>();
        if (act == "gelu") {
          cfg.fusion.activation = fusion::Activation::kGelu;
        } else if (act == "relu") {
          cfg.fusion.activation = fusion::Activation::kRelu;
        } else {
          throw ConfigError("fusion.activation must be \"gelu\" or \"relu\"");
        }
      }
      get_if(f, "rgb_encoder_block", cfg.fusion.rgb_encoder_block);
    }
    if (doc.contains("train")) {
      const auto& t = doc["train"];
      reject_unknown(t,
                     {"batch_size", "lr", "weight_decay", "lr_gamma", "patience", "epochs_max",
                      "val_fraction", "grad_accum", "mask_same_cell_negatives"},
                     "train");
      get_if(t, "batch_size", cfg.train.batch_size);
      get_if(t, "lr", cfg.train.lr);
      get_if(t, "weight_decay", cfg.train.weight_decay);
      get_if(t, "lr_gamma", cfg.train.lr_gamma);
      get_if(t, "patience", cfg.train.patience);
      get_if(t, "epochs_max", cfg.train.epochs_max);
      get_if(t, "val_fraction", cfg.train.val_fraction);
      get_if(t, "grad_accum", cfg.train.grad_accum);
      get_if(t, "mask_same_cell_negatives", cfg.train.mask_same_cell_negatives);
    }
    if (doc.contains("inference")) {
      const auto& i = doc["inference"];
      reject_unknown(i, {"mode", "top_k", "split"}, "inference");
      if (i.contains("mode")) {
        std::string mode = i["mode"].get<std::string>();
        if (mode == "softmax") {
          cfg.inference.mode = geosurge::inference::ScoreMode::kSoftmax;
        } else if (mode == "raw_product") {
          cfg.inference.mode = geosurge::inference::ScoreMode::kRawProduct;
        } else {
          throw ConfigError("inference.mode must be \"softmax\" or \"raw_product\"");
        }
      }
      get_if(i, "top_k", cfg.inference.top_k);
      get_if(i, "split", cfg.inference.split);
    }
    if (doc.contains("eval")) {
      reject_unknown(doc["eval"], {"thresholds_km"}, "eval");
      get_if(doc["eval"], "thresholds_km", cfg.eval.thresholds_km);
    }
    if (doc.contains("synth")) {
      const auto& s = doc["synth"];
      reject_unknown(s,
                     {"n_clusters", "samples_per_cluster", "noise_sigma", "rgb_rows", "d_kv",
                      "seg_h", "seg_w", "num_classes", "geo_sigma_km", "holdout_fraction"},
                     "synth");
      get_if(s, "n_clusters", cfg.synth.n_clusters);
      get_if(s, "samples_per_cluster", cfg.synth.samples_per_cluster);
      get_if(s, "noise_sigma", cfg.synth.noise_sigma);
      get_if(s, "rgb_rows", cfg.synth.rgb_rows);
      get_if(s, "d_kv", cfg.synth.d_kv);
      get_if(s, "seg_h", cfg.synth.seg_h);
      get_if(s, "seg_w", cfg.synth.seg_w);
      get_if(s, "num_classes", cfg.synth.num_classes);
      get_if(s, "geo_sigma_km", cfg.synth.geo_sigma_km);
      get_if(s, "holdout_fraction", cfg.synth.holdout_fraction);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed config: ") + e.what());
  }
  cfg.train.seed = cfg.seed;
  cfg.synth.seed = cfg.seed;
  cfg.validate();
  return cfg;
}

RunConfig RunConfig::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path);
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config " + path + " is not valid JSON: " + e.what());
  }
  return from_json(doc);
}

void apply_override(nlohmann::json& doc, const std::string& assignment) {
  size_t eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ConfigError("override must look like key.path=value: " + assignment);
  }
  std::string path = assignment.substr(0, eq);
  std::string value = assignment.substr(eq + 1);
  nlohmann::json parsed;
  try {
    parsed = nlohmann::json::parse(value);
  } catch (const nlohmann::json::exception&) {
    parsed = value;  // plain string
  }
  nlohmann::json* node = &doc;
  size_t start = 0;
  while (true) {
    size_t dot = path.find('.', start);
    std::string key = path.substr(start, dot == std::string::npos ? dot : dot - start);
    if (key.empty()) throw ConfigError("bad override path: " + path);
    if (dot == std::string::npos) {
      (*node)[key] = parsed;
      break;
    }
    node = &(*node)[key];
    start = dot + 1;
  }
}

}  // namespace geosurge::config
