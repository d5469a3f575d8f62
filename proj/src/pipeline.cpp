#include "geosurge/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <ostream>
#include <set>
#include <string_view>
#include <thread>

#include "geosurge/error.hpp"
#include "geosurge/geoembed.hpp"
#include "geosurge/inference.hpp"
#include "geosurge/partition.hpp"
#include "geosurge/trainer.hpp"

namespace geosurge::pipeline {

namespace fs = std::filesystem;
using config::RunConfig;

namespace {

std::string dir_of(const std::string& path) {
  fs::path p(path);
  return p.has_parent_path() ? p.parent_path().string() : ".";
}

std::vector<datakit::ManifestRecord> load_split(const std::string& manifest_path,
                                                const std::string& split) {
  std::vector<datakit::ManifestRecord> all = datakit::read_manifest(manifest_path);
  if (split == "all") return all;
  std::vector<datakit::ManifestRecord> out;
  for (auto& r : all) {
    if (r.split == split) out.push_back(std::move(r));
  }
  if (out.empty()) {
    throw DataError("manifest " + manifest_path + " has no records with split \"" + split +
                    "\"");
  }
  return out;
}

std::vector<partition::Sample> to_samples(std::span<const datakit::ManifestRecord> records) {
  std::vector<partition::Sample> samples;
  samples.reserve(records.size());
  for (size_t i = 0; i < records.size(); ++i) {
    samples.push_back({records[i].id, geodesy::GeoPoint(records[i].lat, records[i].lon), i});
  }
  return samples;
}

// Reads blob records through a per-file stream cache.
class BlobReader {
 public:
  explicit BlobReader(std::string base_dir) : base_(std::move(base_dir)) {}

  datakit::TensorRecord read(const datakit::BlobRef& ref) {
    std::ifstream& in = open(ref.file);
    return datakit::read_record(in, ref.offset, ref.file);
  }

 private:
  std::ifstream& open(const std::string& file) {
    auto it = streams_.find(file);
    if (it != streams_.end()) return it->second;
    fs::path p = fs::path(file).is_absolute() ? fs::path(file) : fs::path(base_) / file;
    auto [pos, inserted] = streams_.emplace(file, std::ifstream(p, std::ios::binary));
    if (!pos->second) throw DataError("cannot open blob file " + p.string());
    return pos->second;
  }

  std::string base_;
  std::map<std::string, std::ifstream> streams_;
};

void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::trunc | std::ios::binary);
  if (!out) throw DataError("cannot write " + path);
  out << content;
  if (!out) throw DataError("write failed: " + path);
}

void parallel_for(size_t n, size_t threads, const std::function<void(size_t)>& fn) {
  threads = std::max<size_t>(1, std::min(threads, n));
  if (threads == 1) {
    for (size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(threads);
  for (size_t t = 0; t < threads; ++t) {
    pool.emplace_back([&, t]() {
      try {
        for (size_t i = t; i < n; i += threads) fn(i);
      } catch (...) {
        errors[t] = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

template <typename T>
std::vector<trainer::TrainSample<T>> load_training_samples(
    std::span<const datakit::ManifestRecord> records, const std::string& base_dir,
    const partition::PartitionHierarchy& hierarchy, size_t& excluded) {
  // Row index per level for every finest cell.
  std::vector<std::map<geodesy::CellId, size_t>> row_of(hierarchy.levels.size());
  for (size_t l = 0; l < hierarchy.levels.size(); ++l) {
    for (size_t i = 0; i < hierarchy.levels[l].cells.size(); ++i) {
      row_of[l].emplace(hierarchy.levels[l].cells[i].id, i);
    }
  }
  BlobReader blobs(base_dir);
  std::vector<trainer::TrainSample<T>> out;
  excluded = 0;
  for (const datakit::ManifestRecord& r : records) {
    geodesy::GeoPoint loc(r.lat, r.lon);
    auto finest = partition::assign(loc, hierarchy.levels.back());
    if (!finest) {
      ++excluded;  // discarded-territory samples never enter training
      continue;
    }
    const std::vector<geodesy::CellId>& chain = hierarchy.parent_links.at(*finest);
    trainer::TrainSample<T> s;
    s.id = r.id;
    s.location = loc;
    for (size_t l = 0; l < chain.size(); ++l) s.level_rows.push_back(row_of[l].at(chain[l]));
    s.rgb = datakit::record_to_matrix<T>(blobs.read(r.rgb_blob), r.id);
    s.seg = datakit::record_to_segmap(blobs.read(r.seg_blob), r.id);
    if (s.rgb.rows() != r.rgb_rows || s.rgb.cols() != r.rgb_cols || s.seg.h != r.seg_h ||
        s.seg.w != r.seg_w) {
      throw DataError("sample " + r.id + ": blob shape does not match its manifest record");
    }
    out.push_back(std::move(s));
  }
  return out;
}

nlohmann::json hierarchy_doc_with_config(const RunConfig& cfg,
                                         const partition::PartitionHierarchy& h,
                                         const partition::CoverageReport& coverage) {
  nlohmann::json doc = partition::hierarchy_to_json(h, cfg.partition.member_ids);
  doc["config"] = cfg.to_json();
  doc["coverage"] = partition::coverage_to_json(coverage);
  return doc;
}

partition::PartitionHierarchy hierarchy_from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open hierarchy " + path);
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("hierarchy " + path + " is not valid JSON: " + e.what());
  }
  return partition::hierarchy_from_json(doc);
}

template <typename T>
datakit::Checkpoint build_checkpoint(const RunConfig& cfg, const std::string& hierarchy_hash,
                                     fusion::FusionParams<T>& fparams,
                                     geoembed::GeoRepresentation<T>& geo) {
  datakit::Checkpoint ckpt;
  ckpt.config = cfg.to_json();
  ckpt.hierarchy_hash = hierarchy_hash;
  ckpt.precision = std::is_same_v<T, double> ? "f64" : "f32";
  for (auto& le : geo.levels) {
    std::vector<std::string> ids;
    ids.reserve(le.cells.size());
    for (const auto& c : le.cells) ids.push_back(c.to_string());
    ckpt.geo_cells.push_back(std::move(ids));
  }
  std::vector<autodiff::Param<T>*> params = fparams.params();
  for (auto* p : geo.params()) params.push_back(p);
  for (autodiff::Param<T>* p : params) ckpt.tensors.emplace(p->name, datakit::to_record(p->value));
  return ckpt;
}

template <typename T>
TrainSummary run_train_typed(const RunConfig& cfg, const TrainArgs& args, std::ostream& log) {
  std::vector<datakit::ManifestRecord> records = load_split(args.manifest, cfg.partition.split);
  partition::PartitionHierarchy hierarchy = hierarchy_from_file(args.hierarchy);
  std::string hhash = datakit::file_hash(args.hierarchy);

  size_t excluded = 0;
  std::vector<trainer::TrainSample<T>> samples =
      load_training_samples<T>(records, dir_of(args.manifest), hierarchy, excluded);
  if (samples.empty()) throw DataError("train: every sample fell in discarded territory");
  if (samples[0].rgb.cols() != cfg.fusion.d_kv) {
    throw ConfigError("train: data has rgb token width " + std::to_string(samples[0].rgb.cols()) +
                      " but fusion.d_kv is " + std::to_string(cfg.fusion.d_kv));
  }
  if (cfg.fusion.enabled &&
      (samples[0].seg.h != cfg.fusion.seg_h || samples[0].seg.w != cfg.fusion.seg_w)) {
    throw ConfigError("train: data has seg maps " + std::to_string(samples[0].seg.h) + "x" +
                      std::to_string(samples[0].seg.w) + " but fusion config expects " +
                      std::to_string(cfg.fusion.seg_h) + "x" + std::to_string(cfg.fusion.seg_w));
  }

  fusion::FusionParams<T> fparams = fusion::init_fusion<T>(cfg.fusion, cfg.seed);
  geoembed::GeoRepresentation<T> geo =
      geoembed::init_embeddings<T>(hierarchy, cfg.fusion.out_dim, cfg.seed);

  trainer::FitResult<T> res = trainer::fit<T>(samples, fparams, cfg.fusion, geo, cfg.train);

  datakit::Checkpoint ckpt = build_checkpoint(cfg, hhash, fparams, geo);
  datakit::write_checkpoint(args.checkpoint_out, ckpt);

  if (!args.log_out.empty()) {
    std::string lines;
    for (const trainer::EpochLog& el : res.log) {
      nlohmann::json rec = {{"epoch", el.epoch},
                            {"lr", el.lr},
                            {"train_loss", el.train_loss},
                            {"val_loss", el.val_loss},
                            {"per_level_losses", el.per_level_losses},
                            {"wall_s", el.wall_s}};
      lines += rec.dump() + "\n";
    }
    write_text_file(args.log_out, lines);
  }

  for (const trainer::EpochLog& el : res.log) {
    char buf[160];
    std::snprintf(buf, sizeof(buf), "epoch %zu  lr %.3g  train %.4f  val %.4f\n", el.epoch,
                  el.lr, el.train_loss, el.val_loss);
    log << buf;
  }
  TrainSummary sum;
  sum.train_samples = samples.size();
  sum.excluded_samples = excluded;
  sum.epochs_run = res.epochs_run;
  sum.best_val_loss = res.best_val_loss;
  log << "trained " << samples.size() << " samples (" << excluded << " excluded), best val "
      << sum.best_val_loss << " after " << res.epochs_run << " epochs -> "
      << args.checkpoint_out << "\n";
  return sum;
}

template <typename T>
void load_params_from_checkpoint(const datakit::Checkpoint& ckpt,
                                 std::vector<autodiff::Param<T>*> params) {
  std::vector<std::tuple<std::string, uint64_t, uint64_t>> expected;
  expected.reserve(params.size());
  for (auto* p : params) expected.push_back({p->name, p->value.rows(), p->value.cols()});
  datakit::check_expected_tensors(ckpt, expected);
  for (auto* p : params) {
    p->value = datakit::record_to_matrix<T>(ckpt.tensors.at(p->name), p->name);
  }
}

struct QueryFeatures {
  std::vector<std::string> ids;
  std::vector<std::vector<double>> features;
};

template <typename T>
QueryFeatures featurize_queries(const RunConfig& live_cfg, const RunConfig& ckpt_cfg,
                                const datakit::Checkpoint& ckpt,
                                std::span<const datakit::ManifestRecord> records,
                                const std::string& base_dir) {
  fusion::FusionParams<T> fparams = fusion::init_fusion<T>(ckpt_cfg.fusion, ckpt_cfg.seed);
  load_params_from_checkpoint<T>(ckpt, fparams.params());

  // Load raw features up front; fuse in parallel afterwards.
  BlobReader blobs(base_dir);
  std::vector<autodiff::Tensor<T>> rgbs(records.size());
  std::vector<fusion::SegMap> segs(records.size());
  QueryFeatures out;
  out.ids.resize(records.size());
  out.features.resize(records.size());
  for (size_t i = 0; i < records.size(); ++i) {
    rgbs[i] = datakit::record_to_matrix<T>(blobs.read(records[i].rgb_blob), records[i].id);
    segs[i] = datakit::record_to_segmap(blobs.read(records[i].seg_blob), records[i].id);
    out.ids[i] = records[i].id;
  }
  parallel_for(records.size(), live_cfg.threads, [&](size_t i) {
    autodiff::Tape<T> t;
    fusion::FusionVars<T> fv = fusion::bind_fusion(t, fparams);
    autodiff::Var v = fusion::visual_feature(t, rgbs[i], segs[i], fv, ckpt_cfg.fusion);
    const autodiff::Tensor<T>& row = t.val(v);
    std::vector<double> f(row.cols());
    for (size_t j = 0; j < row.cols(); ++j) f[j] = static_cast<double>(row.at(0, j));
    out.features[i] = std::move(f);
  });
  return out;
}

}  // namespace

void run_partition(const RunConfig& cfg, const PartitionArgs& args, std::ostream& log) {
  std::vector<datakit::ManifestRecord> records = load_split(args.manifest, cfg.partition.split);
  std::vector<partition::Sample> samples = to_samples(records);
  partition::PartitionHierarchy h =
      partition::build_hierarchy(samples, cfg.partition.tau_min, cfg.partition.schedule);
  partition::CoverageReport coverage = partition::coverage_report(h, samples);
  write_text_file(args.out, hierarchy_doc_with_config(cfg, h, coverage).dump(2) + "\n");
  for (size_t l = 0; l < h.levels.size(); ++l) {
    const partition::CoverageLevel& cl = coverage.levels[l];
    char buf[160];
    std::snprintf(buf, sizeof(buf),
                  "level %zu  tau_max %zu  cells %zu  members %zu/%zu/%zu  covered %.3f\n", l,
                  cl.tau_max, cl.cell_count, cl.min_members, cl.median_members, cl.max_members,
                  cl.covered_fraction);
    log << buf;
  }
  log << "fully covered " << coverage.fully_covered_fraction << " (" << coverage.excluded_samples
      << " excluded at finest) -> " << args.out << "\n";
}

TrainSummary run_train(const RunConfig& cfg, const TrainArgs& args, std::ostream& log) {
  if (cfg.precision == "f64") return run_train_typed<double>(cfg, args, log);
  return run_train_typed<float>(cfg, args, log);
}

void run_infer(const RunConfig& cfg, const InferArgs& args, std::ostream& log) {
  partition::PartitionHierarchy hierarchy = hierarchy_from_file(args.hierarchy);
  datakit::Checkpoint ckpt = datakit::read_checkpoint(args.checkpoint);
  std::string hhash = datakit::file_hash(args.hierarchy);
  if (hhash != ckpt.hierarchy_hash) {
    throw IntegrityError("checkpoint was trained against a different hierarchy (" +
                         ckpt.hierarchy_hash + " != " + hhash + ")");
  }
  if (ckpt.geo_cells.size() != hierarchy.levels.size()) {
    throw IntegrityError("checkpoint level count does not match the hierarchy");
  }
  for (size_t l = 0; l < hierarchy.levels.size(); ++l) {
    const auto& cells = hierarchy.levels[l].cells;
    if (ckpt.geo_cells[l].size() != cells.size()) {
      throw IntegrityError("checkpoint cell list at level " + std::to_string(l) +
                           " does not match the hierarchy");
    }
    for (size_t i = 0; i < cells.size(); ++i) {
      if (ckpt.geo_cells[l][i] != cells[i].id.to_string()) {
        throw IntegrityError("checkpoint cell order at level " + std::to_string(l) +
                             " does not match the hierarchy");
      }
    }
  }
  RunConfig ckpt_cfg = RunConfig::from_json(ckpt.config);

  // Geographic representation, in double for scoring.
  std::vector<autodiff::Tensor<double>> embeds;
  std::vector<double> taus;
  for (size_t l = 0; l < hierarchy.levels.size(); ++l) {
    std::string pre = "geo/level_" + std::to_string(l) + "/";
    auto eit = ckpt.tensors.find(pre + "embedding");
    auto tit = ckpt.tensors.find(pre + "log_tau");
    if (eit == ckpt.tensors.end() || tit == ckpt.tensors.end()) {
      throw DataError("checkpoint is missing tensors: " + pre + "embedding or " + pre +
                      "log_tau");
    }
    embeds.push_back(datakit::record_to_matrix<double>(eit->second, pre + "embedding"));
    taus.push_back(
        std::exp(datakit::record_to_matrix<double>(tit->second, pre + "log_tau")[0]));
  }
  inference::HierScorer scorer(hierarchy, std::move(embeds), std::move(taus),
                               cfg.inference.mode);

  std::vector<datakit::ManifestRecord> queries = load_split(args.manifest, cfg.inference.split);
  QueryFeatures feats =
      ckpt.precision == "f64"
          ? featurize_queries<double>(cfg, ckpt_cfg, ckpt, queries, dir_of(args.manifest))
          : featurize_queries<float>(cfg, ckpt_cfg, ckpt, queries, dir_of(args.manifest));

  std::vector<inference::HierPrediction> preds(queries.size());
  parallel_for(queries.size(), cfg.threads,
               [&](size_t i) { preds[i] = scorer.predict(feats.features[i]); });

  std::string csv = "query_id,lat,lon\n";
  nlohmann::json preds_json = nlohmann::json::array();
  char buf[160];
  for (size_t i = 0; i < preds.size(); ++i) {
    const inference::HierPrediction& p = preds[i];
    std::snprintf(buf, sizeof(buf), "%s,%.10f,%.10f\n", feats.ids[i].c_str(), p.location.lat,
                  p.location.lon);
    csv += buf;
    nlohmann::json top = nlohmann::json::array();
    for (size_t k = 0; k < std::min<size_t>(cfg.inference.top_k, p.ranked.size()); ++k) {
      top.push_back({{"cell_id", p.ranked[k].first.to_string()}, {"score", p.ranked[k].second}});
    }
    preds_json.push_back({{"query_id", feats.ids[i]},
                          {"lat", p.location.lat},
                          {"lon", p.location.lon},
                          {"cell_id", p.cell.to_string()},
                          {"joint_score", p.joint_score},
                          {"top_k", std::move(top)}});
  }
  write_text_file(args.out_csv, csv);
  if (!args.out_json.empty()) {
    nlohmann::json doc = {{"config", cfg.to_json()}, {"predictions", std::move(preds_json)}};
    write_text_file(args.out_json, doc.dump(2) + "\n");
  }
  log << "predicted " << preds.size() << " queries -> " << args.out_csv << "\n";
}

evalkit::ThresholdReport run_eval(const RunConfig& cfg, const EvalArgs& args, std::ostream& log) {
  std::vector<evalkit::CsvRow> preds = evalkit::read_location_csv(args.predictions);
  std::vector<evalkit::CsvRow> truth = evalkit::read_location_csv(args.truth);
  std::vector<evalkit::EvalRecord> records = evalkit::join_predictions(preds, truth);
  evalkit::ThresholdReport report = evalkit::gcd_accuracy(records, cfg.eval.thresholds_km);
  log << evalkit::render_report(report, evalkit::ReportFormat::kText);
  if (!args.out_json.empty()) {
    nlohmann::json doc = {
        {"config", cfg.to_json()},
        {"report",
         nlohmann::json::parse(evalkit::render_report(report, evalkit::ReportFormat::kJson))}};
    write_text_file(args.out_json, doc.dump(2) + "\n");
  }
  if (!args.out_csv.empty()) {
    write_text_file(args.out_csv, evalkit::render_report(report, evalkit::ReportFormat::kCsv));
  }
  return report;
}

datakit::SyntheticPaths run_synth(const RunConfig& cfg, const std::string& out_dir,
                                  std::ostream& log) {
  datakit::SyntheticPaths paths = datakit::generate_synthetic(cfg.synth, out_dir);
  write_text_file(out_dir + "/config.json", cfg.to_json().dump(2) + "\n");
  log << "wrote " << paths.manifest << ", " << paths.blob << ", " << paths.truth_csv << "\n";
  return paths;
}

void run_inspect(const std::string& path, std::ostream& out) {
  std::ifstream probe(path, std::ios::binary);
  if (!probe) throw DataError("cannot open " + path);
  char magic[4] = {0, 0, 0, 0};
  probe.read(magic, 4);
  probe.seekg(0);

  if (std::string_view(magic, 4) == "GSCK") {
    datakit::Checkpoint ckpt = datakit::read_checkpoint(path);
    out << "checkpoint  precision " << ckpt.precision << "  hierarchy " << ckpt.hierarchy_hash
        << "\n";
    out << "geo levels:";
    for (const auto& cells : ckpt.geo_cells) out << " " << cells.size();
    out << "\ntensors (" << ckpt.tensors.size() << "):\n";
    for (const auto& [name, rec] : ckpt.tensors) {
      out << "  " << name << "  [";
      for (size_t i = 0; i < rec.dims.size(); ++i) out << (i ? "x" : "") << rec.dims[i];
      out << "]\n";
    }
    return;
  }
  if (std::string_view(magic, 4) == "GSRG") {
    probe.seekg(0, std::ios::end);
    uint64_t size = static_cast<uint64_t>(probe.tellg());
    uint64_t offset = 0;
    size_t count = 0;
    out << "tensor blob " << path << "\n";
    while (offset < size) {
      datakit::TensorRecord rec = datakit::read_record(probe, offset, path);
      if (count < 8) {
        out << "  @" << offset << "  dtype " << static_cast<int>(rec.dtype) << "  [";
        for (size_t i = 0; i < rec.dims.size(); ++i) out << (i ? "x" : "") << rec.dims[i];
        out << "]\n";
      }
      offset += 8 + 8 * rec.dims.size() + rec.payload.size();
      ++count;
    }
    out << "  " << count << " records, " << size << " bytes\n";
    return;
  }

  // Text formats: manifest JSONL, hierarchy/report/prediction JSON, CSV.
  std::ifstream in(path);
  std::string first;
  std::getline(in, first);
  if (first.rfind("query_id,", 0) == 0) {
    size_t rows = 0;
    std::string line;
    while (std::getline(in, line)) {
      if (!line.empty()) ++rows;
    }
    out << "location csv  " << rows << " rows\n";
    return;
  }
  nlohmann::json doc;
  bool first_line_is_record = false;
  try {
    doc = nlohmann::json::parse(first);
    first_line_is_record = doc.is_object() && doc.contains("id") && doc.contains("rgb_blob");
  } catch (const nlohmann::json::exception&) {
    // Multi-line JSON documents are handled below.
  }
  if (first_line_is_record) {
    std::vector<datakit::ManifestRecord> records = datakit::read_manifest(path);
    std::map<std::string, size_t> by_split;
    std::set<int64_t> clusters;
    for (const auto& r : records) {
      ++by_split[r.split];
      if (r.cluster) clusters.insert(*r.cluster);
    }
    out << "manifest  " << records.size() << " records";
    if (!clusters.empty()) out << ", " << clusters.size() << " clusters";
    out << "\n";
    for (const auto& [split, n] : by_split) out << "  split " << split << ": " << n << "\n";
    return;
  }
  // Whole-file JSON documents.
  in.clear();
  in.seekg(0);
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("unrecognized artifact " + path + ": " + e.what());
  }
  if (doc.contains("levels") && doc.contains("parent_links")) {
    partition::PartitionHierarchy h = partition::hierarchy_from_json(doc);
    out << "hierarchy  tau_min " << h.tau_min << "  levels " << h.levels.size() << "\n";
    for (size_t l = 0; l < h.levels.size(); ++l) {
      out << "  level " << l << "  tau_max " << h.schedule[l] << "  cells "
          << h.levels[l].cells.size() << "\n";
    }
    return;
  }
  if (doc.contains("report")) {
    evalkit::ThresholdReport rep = evalkit::report_from_json(doc["report"]);
    out << evalkit::render_report(rep, evalkit::ReportFormat::kText);
    return;
  }
  if (doc.contains("thresholds_km") && doc.contains("fractions")) {
    evalkit::ThresholdReport rep = evalkit::report_from_json(doc);
    out << evalkit::render_report(rep, evalkit::ReportFormat::kText);
    return;
  }
  if (doc.contains("predictions")) {
    out << "predictions  " << doc["predictions"].size() << " queries\n";
    return;
  }
  throw DataError("unrecognized artifact: " + path);
}

}  // namespace geosurge::pipeline
