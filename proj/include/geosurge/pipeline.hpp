#pragma once

#include <iosfwd>
#include <string>

#include "geosurge/config.hpp"
#include "geosurge/datakit.hpp"
#include "geosurge/evalkit.hpp"

namespace geosurge::pipeline {

struct PartitionArgs {
  std::string manifest;
  std::string out;
};

struct TrainArgs {
  std::string manifest;
  std::string hierarchy;
  std::string checkpoint_out;
  std::string log_out;  // optional JSONL
};

struct InferArgs {
  std::string manifest;
  std::string hierarchy;
  std::string checkpoint;
  std::string out_csv;
  std::string out_json;  // optional
};

struct EvalArgs {
  std::string predictions;
  std::string truth;
  std::string out_json;  // optional
  std::string out_csv;   // optional
};

struct TrainSummary {
  size_t train_samples = 0;
  size_t val_samples = 0;
  size_t excluded_samples = 0;
  size_t epochs_run = 0;
  double best_val_loss = 0;
};

void run_partition(const config::RunConfig& cfg, const PartitionArgs& args, std::ostream& log);
TrainSummary run_train(const config::RunConfig& cfg, const TrainArgs& args, std::ostream& log);
void run_infer(const config::RunConfig& cfg, const InferArgs& args, std::ostream& log);
evalkit::ThresholdReport run_eval(const config::RunConfig& cfg, const EvalArgs& args,
                                  std::ostream& log);
datakit::SyntheticPaths run_synth(const config::RunConfig& cfg, const std::string& out_dir,
                                  std::ostream& log);
void run_inspect(const std::string& path, std::ostream& out);

}  // namespace geosurge::pipeline
