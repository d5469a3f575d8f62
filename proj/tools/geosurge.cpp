// geosurge: balanced geocell partitioning, contrastive geo-embedding
// training, hierarchical inference, and GCD evaluation over ingested
// features.

#include <CLI11.hpp>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "geosurge/config.hpp"
#include "geosurge/error.hpp"
#include "geosurge/pipeline.hpp"

namespace {

using geosurge::config::RunConfig;

struct CommonOpts {
  std::string config_path;
  std::vector<std::string> overrides;
  int64_t seed = -1;
  int64_t threads = -1;
};

void add_common(CLI::App* cmd, CommonOpts& opts) {
  cmd->add_option("--config", opts.config_path, "run configuration JSON");
  cmd->add_option("--set", opts.overrides,
                  "override a config key, e.g. --set train.lr=0.001 (repeatable)");
  cmd->add_option("--seed", opts.seed, "override the run seed");
  cmd->add_option("--threads", opts.threads,
                  "worker cap (default 1; falls back to GEOSURGE_THREADS)");
}

RunConfig resolve_config(const CommonOpts& opts) {
  nlohmann::json doc = nlohmann::json::object();
  if (!opts.config_path.empty()) {
    std::ifstream in(opts.config_path);
    if (!in) throw geosurge::ConfigError("cannot open config " + opts.config_path);
    try {
      in >> doc;
    } catch (const nlohmann::json::exception& e) {
      throw geosurge::ConfigError("config " + opts.config_path + " is not valid JSON: " +
                                  e.what());
    }
  }
  for (const std::string& o : opts.overrides) geosurge::config::apply_override(doc, o);
  if (opts.seed >= 0) doc["seed"] = opts.seed;
  if (opts.threads >= 1) {
    doc["threads"] = opts.threads;
  } else if (!doc.contains("threads")) {
    if (const char* env = std::getenv("GEOSURGE_THREADS")) {
      doc["threads"] = std::stoul(env);
    }
  }
  return RunConfig::from_json(doc);
}

std::vector<size_t> parse_schedule(const std::string& csv) {
  std::vector<size_t> out;
  size_t start = 0;
  while (start <= csv.size()) {
    size_t comma = csv.find(',', start);
    std::string tok = csv.substr(start, comma == std::string::npos ? comma : comma - start);
    if (tok.empty()) throw geosurge::ConfigError("bad --tau-max list: " + csv);
    out.push_back(std::stoull(tok));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"geosurge: hierarchical geocell embeddings for image geo-localization"};
  app.require_subcommand(1);

  CommonOpts opts;

  auto* synth = app.add_subcommand("synth", "generate a synthetic geotagged dataset");
  std::string synth_out;
  synth->add_option("--out", synth_out, "output directory")->required();
  add_common(synth, opts);

  auto* part = app.add_subcommand("partition", "build the balanced partition hierarchy");
  geosurge::pipeline::PartitionArgs part_args;
  std::string tau_max_csv;
  int64_t tau_min_flag = -1;
  part->add_option("--manifest", part_args.manifest, "dataset manifest (JSONL)")->required();
  part->add_option("--out", part_args.out, "hierarchy JSON output")->required();
  part->add_option("--tau-min", tau_min_flag, "min samples per kept cell");
  part->add_option("--tau-max", tau_max_csv,
                   "comma-separated tau_max schedule, coarsest to finest");
  add_common(part, opts);

  auto* train = app.add_subcommand("train", "train fusion weights and geo embeddings");
  geosurge::pipeline::TrainArgs train_args;
  train->add_option("--manifest", train_args.manifest, "dataset manifest (JSONL)")->required();
  train->add_option("--hierarchy", train_args.hierarchy, "partition hierarchy JSON")->required();
  train->add_option("--out", train_args.checkpoint_out, "checkpoint output")->required();
  train->add_option("--log", train_args.log_out, "training log JSONL output");
  add_common(train, opts);

  auto* infer = app.add_subcommand("infer", "predict GPS for a manifest split");
  geosurge::pipeline::InferArgs infer_args;
  infer->add_option("--manifest", infer_args.manifest, "dataset manifest (JSONL)")->required();
  infer->add_option("--hierarchy", infer_args.hierarchy, "partition hierarchy JSON")->required();
  infer->add_option("--checkpoint", infer_args.checkpoint, "trained checkpoint")->required();
  infer->add_option("--out", infer_args.out_csv, "predictions CSV output")->required();
  infer->add_option("--out-json", infer_args.out_json, "detailed predictions JSON output");
  add_common(infer, opts);

  auto* eval = app.add_subcommand("eval", "score predictions against ground truth");
  geosurge::pipeline::EvalArgs eval_args;
  eval->add_option("--pred", eval_args.predictions, "predictions CSV")->required();
  eval->add_option("--truth", eval_args.truth, "ground-truth CSV")->required();
  eval->add_option("--out-json", eval_args.out_json, "report JSON output");
  eval->add_option("--out-csv", eval_args.out_csv, "report CSV output");
  add_common(eval, opts);

  auto* inspect = app.add_subcommand("inspect", "summarize any artifact file");
  std::string inspect_path;
  inspect->add_option("path", inspect_path, "artifact to summarize")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;  // usage errors are exit code 1
  }

  try {
    if (inspect->parsed()) {
      geosurge::pipeline::run_inspect(inspect_path, std::cout);
      return 0;
    }
    RunConfig cfg = resolve_config(opts);
    if (synth->parsed()) {
      geosurge::pipeline::run_synth(cfg, synth_out, std::cout);
    } else if (part->parsed()) {
      if (tau_min_flag >= 0) cfg.partition.tau_min = static_cast<size_t>(tau_min_flag);
      if (!tau_max_csv.empty()) cfg.partition.schedule = parse_schedule(tau_max_csv);
      cfg.validate();
      geosurge::pipeline::run_partition(cfg, part_args, std::cout);
    } else if (train->parsed()) {
      geosurge::pipeline::run_train(cfg, train_args, std::cout);
    } else if (infer->parsed()) {
      geosurge::pipeline::run_infer(cfg, infer_args, std::cout);
    } else if (eval->parsed()) {
      geosurge::pipeline::run_eval(cfg, eval_args, std::cout);
    }
    return 0;
  } catch (const geosurge::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const geosurge::IntegrityError& e) {
    std::cerr << "integrity error: " << e.what() << "\n";
    return 3;
  } catch (const geosurge::DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
