// Acceptance suite: one pass/fail line per criterion, nonzero exit on any
// failure. Budget-heavy criteria run real training at desk scale, so this
// binary takes several minutes.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>
#include <vector>

#include "geosurge/config.hpp"
#include "geosurge/inference.hpp"
#include "geosurge/pipeline.hpp"
#include "geosurge/trainer.hpp"
#include "partition_oracle.hpp"

using namespace geosurge;
using config::RunConfig;

namespace {

const std::string kWork = "/tmp/geosurge_acceptance";

int g_failures = 0;

void report(int criterion, bool pass, const std::string& detail) {
  std::printf("[%s] criterion %d: %s\n", pass ? "PASS" : "FAIL", criterion, detail.c_str());
  std::fflush(stdout);
  if (!pass) ++g_failures;
}

double now_s() {
  return std::chrono::duration<double>(
             std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

std::vector<partition::Sample> clustered_samples(uint64_t seed, size_t n, size_t clusters,
                                                 double spread_deg) {
  Rng rng(seed);
  std::vector<geodesy::GeoPoint> centers;
  for (size_t c = 0; c < clusters; ++c) {
    double z = rng.uniform(-1.0, 1.0);
    centers.emplace_back(std::asin(z) * 180.0 / std::numbers::pi, rng.uniform(-180.0, 180.0));
  }
  std::vector<partition::Sample> out;
  out.reserve(n);
  for (size_t i = 0; i < n; ++i) {
    const geodesy::GeoPoint& c = centers[rng.below(clusters)];
    double lat = std::clamp(c.lat + rng.normal(0.0, spread_deg), -90.0, 90.0);
    char buf[16];
    std::snprintf(buf, sizeof(buf), "s%06zu", i);
    out.push_back({buf, geodesy::GeoPoint(lat, c.lon + rng.normal(0.0, spread_deg)), i});
  }
  return out;
}

std::string read_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// ---- criterion 1: partition oracle equivalence -----------------------------

void criterion_1() {
  double t0 = now_s();
  size_t checked = 0;
  bool ok = true;
  std::string detail;
  for (uint64_t trial = 0; trial < 20 && ok; ++trial) {
    Rng rng(Rng::mix(0xACC1, trial));
    size_t n = 1000 + rng.below(4000);
    size_t clusters = 4 + rng.below(24);
    std::vector<partition::Sample> samples =
        clustered_samples(Rng::mix(0xDA7A, trial), n, clusters, 2.0 + rng.uniform() * 4.0);
    size_t tau_min = 1 + rng.below(6);
    size_t tau_max = tau_min + 15 + rng.below(120);
    partition::Partition p = partition::build_partition(samples, tau_min, tau_max);
    std::map<std::string, size_t> got;
    for (const auto& e : p.cells) got[e.id.to_string()] = e.member_count;
    std::map<std::string, size_t> want = testing::oracle_partition(samples, tau_min, tau_max);
    if (got != want) {
      ok = false;
      detail = "cell sets differ on trial " + std::to_string(trial);
    }
    ++checked;
  }
  double dt = now_s() - t0;
  if (ok && dt >= 10.0) {
    ok = false;
    detail = "runtime budget exceeded";
  }
  char buf[160];
  std::snprintf(buf, sizeof(buf),
                "partition equals brute-force oracle on %zu randomized datasets (%.1f s)",
                checked, dt);
  report(1, ok, ok ? buf : detail + " " + buf);
}

// ---- criterion 2: balance and nesting at 1e5 samples ------------------------

void criterion_2() {
  std::vector<partition::Sample> samples = clustered_samples(0xBA1A, 100000, 120, 3.0);
  std::vector<size_t> schedule = {2500, 1000, 500, 200, 100, 75, 50};
  partition::PartitionHierarchy h = partition::build_hierarchy(samples, 5, schedule);
  size_t balance_violations = 0, nesting_violations = 0, cells_total = 0;
  for (size_t l = 0; l < h.levels.size(); ++l) {
    for (const auto& cell : h.levels[l].cells) {
      ++cells_total;
      if (cell.member_count < 5 || cell.member_count > schedule[l]) ++balance_violations;
    }
  }
  for (const auto& fine : h.levels.back().cells) {
    auto it = h.parent_links.find(fine.id);
    if (it == h.parent_links.end() || it->second.size() != h.levels.size()) {
      ++nesting_violations;
      continue;
    }
    for (size_t l = 0; l < h.levels.size(); ++l) {
      // Exactly one ancestor per level: the linked one must exist and be a
      // prefix, and no other cell of that level may also be a prefix.
      if (!it->second[l].is_prefix_of(fine.id) || !h.levels[l].find(it->second[l])) {
        ++nesting_violations;
        break;
      }
      size_t prefixes = 0;
      for (int d = 0; d <= fine.id.depth(); ++d) {
        geodesy::CellId probe(fine.id.face());
        for (int k = 0; k < d; ++k) probe = probe.child(fine.id.digit(k));
        if (h.levels[l].find(probe)) ++prefixes;
      }
      if (prefixes != 1) {
        ++nesting_violations;
        break;
      }
    }
  }
  bool ok = balance_violations == 0 && nesting_violations == 0 && cells_total > 0;
  char buf[200];
  std::snprintf(buf, sizeof(buf),
                "balance and nesting on 1e5 samples, 7 levels, %zu cells: %zu balance / %zu "
                "nesting violations",
                cells_total, balance_violations, nesting_violations);
  report(2, ok, buf);
}

// ---- shared toy model for criteria 3 ---------------------------------------

struct ToyModel {
  partition::PartitionHierarchy hierarchy;
  std::vector<trainer::TrainSample<double>> samples;
  fusion::FusionConfig fcfg;
};

ToyModel build_toy() {
  ToyModel toy;
  datakit::SyntheticConfig scfg;
  scfg.n_clusters = 6;
  scfg.samples_per_cluster = 25;
  scfg.noise_sigma = 0.1;
  scfg.rgb_rows = 4;
  scfg.d_kv = 16;
  scfg.seg_h = 14;
  scfg.seg_w = 14;
  scfg.num_classes = 4;
  scfg.holdout_fraction = 0.0;
  scfg.seed = 321;
  std::string dir = kWork + "/toy";
  datakit::SyntheticPaths paths = datakit::generate_synthetic(scfg, dir);
  std::vector<datakit::ManifestRecord> records = datakit::read_manifest(paths.manifest);
  std::vector<partition::Sample> psamples;
  for (size_t i = 0; i < records.size(); ++i) {
    psamples.push_back({records[i].id, geodesy::GeoPoint(records[i].lat, records[i].lon), i});
  }
  std::vector<size_t> schedule = {80, 30};
  toy.hierarchy = partition::build_hierarchy(psamples, 1, schedule);

  toy.fcfg.d_s = 8;
  toy.fcfg.d_kv = scfg.d_kv;
  toy.fcfg.latent_dim = 4;
  toy.fcfg.heads = 2;
  toy.fcfg.blocks = 1;
  toy.fcfg.mlp_hidden = 12;
  toy.fcfg.out_dim = 16;
  toy.fcfg.num_classes = scfg.num_classes;
  toy.fcfg.seg_h = scfg.seg_h;
  toy.fcfg.seg_w = scfg.seg_w;

  std::vector<std::map<geodesy::CellId, size_t>> row_of(toy.hierarchy.levels.size());
  for (size_t l = 0; l < toy.hierarchy.levels.size(); ++l) {
    for (size_t i = 0; i < toy.hierarchy.levels[l].cells.size(); ++i) {
      row_of[l].emplace(toy.hierarchy.levels[l].cells[i].id, i);
    }
  }
  std::ifstream blob(paths.blob, std::ios::binary);
  for (const auto& r : records) {
    geodesy::GeoPoint loc(r.lat, r.lon);
    auto finest = partition::assign(loc, toy.hierarchy.levels.back());
    if (!finest) continue;
    trainer::TrainSample<double> ts;
    ts.id = r.id;
    ts.location = loc;
    for (size_t l = 0; l < toy.hierarchy.levels.size(); ++l) {
      ts.level_rows.push_back(row_of[l].at(toy.hierarchy.parent_links.at(*finest)[l]));
    }
    ts.rgb = datakit::record_to_matrix<double>(
        datakit::read_record(blob, r.rgb_blob.offset, "toy"), r.id);
    ts.seg = datakit::record_to_segmap(datakit::read_record(blob, r.seg_blob.offset, "toy"),
                                       r.id);
    toy.samples.push_back(std::move(ts));
  }
  return toy;
}

void criterion_3() {
  double t0 = now_s();
  ToyModel toy = build_toy();
  fusion::FusionParams<double> fparams = fusion::init_fusion<double>(toy.fcfg, 2024);
  geoembed::GeoRepresentation<double> geo =
      geoembed::init_embeddings<double>(toy.hierarchy, toy.fcfg.out_dim, 77);
  // A cross-cluster batch so every level carries informative negatives.
  std::vector<size_t> batch = {0, toy.samples.size() / 3, (2 * toy.samples.size()) / 3};
  trainer::TrainConfig tcfg;
  auto build = [&](autodiff::Tape<double>& t) {
    fusion::FusionVars<double> fv = fusion::bind_fusion(t, fparams);
    trainer::GeoVars<double> gv = trainer::bind_geo(t, geo);
    return trainer::batch_total_loss<double>(t, toy.samples, batch, fv, gv, toy.fcfg, tcfg)
        .total;
  };
  std::vector<autodiff::Param<double>*> params = fparams.params();
  for (auto* p : geo.params()) params.push_back(p);
  double err = autodiff::grad_check(build, params, 1e-5);
  double dt = now_s() - t0;
  size_t n_els = 0;
  for (auto* p : params) n_els += p->value.size();
  bool ok = err < 1e-4 && dt < 60.0;
  char buf[200];
  std::snprintf(buf, sizeof(buf),
                "full-pipeline grad check vs central differences: max rel err %.2e over %zu "
                "elements (%.1f s)",
                err, n_els, dt);
  report(3, ok, buf);
}

// ---- criterion 4: InfoNCE sanity ---------------------------------------------

void criterion_4() {
  using autodiff::Tensor;
  bool ok = true;
  std::string detail;

  auto nce = [](const Tensor<double>& V, const Tensor<double>& G, double tau) {
    autodiff::Tape<double> t;
    autodiff::Param<double> log_tau("lt", Tensor<double>::scalar(std::log(tau)));
    return t.val(trainer::info_nce_level(t, t.leaf(V), t.leaf(G), t.param(log_tau)))[0];
  };

  Tensor<double> v1 = Tensor<double>::from_rows({{1.0, 0.0}});
  if (nce(v1, v1, 0.07) != 0.0) {
    ok = false;
    detail = "B=1 loss not exactly zero";
  }

  Tensor<double> same(4, 3);
  for (size_t i = 0; i < 4; ++i) same.at(i, 0) = 1.0;
  double uniform_loss = nce(same, same, 0.3);
  if (std::abs(uniform_loss - std::log(4.0)) > 1e-6) {
    ok = false;
    detail = "uniform-similarity loss deviates from ln B";
  }

  Rng rng(4444);
  double target = 3.0 * std::log(64.0);
  Tensor<double> V(64, 768), G(64, 768);
  double total = 0.0;
  for (int level = 0; level < 3; ++level) {
    for (auto* m : {&V, &G}) {
      for (size_t i = 0; i < 64; ++i) {
        double norm = 0;
        for (size_t j = 0; j < 768; ++j) {
          m->at(i, j) = rng.normal();
          norm += m->at(i, j) * m->at(i, j);
        }
        norm = std::sqrt(norm);
        for (size_t j = 0; j < 768; ++j) m->at(i, j) /= norm;
      }
    }
    total += nce(V, G, 0.07);
  }
  if (std::abs(total - target) > 0.1 * target) {
    ok = false;
    detail = "random-init loss outside 10% of L ln B";
  }
  char buf[200];
  std::snprintf(buf, sizeof(buf),
                "InfoNCE sanity: B=1 exact zero, uniform ln B within 1e-6, random-init 3-level "
                "loss %.3f vs %.3f",
                total, target);
  report(4, ok, ok ? buf : detail);
}

// ---- criterion 5: hierarchical inference oracle --------------------------------

void criterion_5() {
  // Full enumeration hierarchy: depth-1, depth-3, depth-4 cells of all six
  // faces; 1536 finest cells.
  partition::PartitionHierarchy h;
  h.tau_min = 1;
  h.schedule = {1000, 100, 10};
  auto enumerate = [](int depth) {
    std::vector<geodesy::CellId> cells;
    std::vector<geodesy::CellId> frontier;
    for (int f = 0; f < 6; ++f) frontier.emplace_back(f);
    for (int d = 0; d < depth; ++d) {
      std::vector<geodesy::CellId> next;
      for (const auto& c : frontier) {
        for (int q = 0; q < 4; ++q) next.push_back(c.child(q));
      }
      frontier = std::move(next);
    }
    return frontier;
  };
  std::vector<int> depths = {1, 3, 4};
  for (size_t l = 0; l < depths.size(); ++l) {
    partition::Partition part;
    part.tau_min = 1;
    part.tau_max = h.schedule[l];
    for (const auto& c : enumerate(depths[l])) {
      partition::CellEntry e;
      e.id = c;
      e.member_count = 1;
      e.decoded_location = geodesy::cell_center(c);
      part.cells.push_back(e);
    }
    std::sort(part.cells.begin(), part.cells.end(),
              [](const auto& a, const auto& b) { return a.id < b.id; });
    h.levels.push_back(std::move(part));
  }
  for (const auto& fine : h.levels.back().cells) {
    std::vector<geodesy::CellId> chain;
    for (int d : depths) {
      geodesy::CellId probe(fine.id.face());
      for (int k = 0; k < d; ++k) probe = probe.child(fine.id.digit(k));
      chain.push_back(probe);
    }
    h.parent_links[fine.id] = chain;
  }

  Rng rng(5555);
  size_t dim = 24;
  std::vector<autodiff::Tensor<double>> embeds;
  std::vector<double> taus = {0.05, 0.1, 0.25};
  for (const auto& level : h.levels) {
    autodiff::Tensor<double> E(level.cells.size(), dim);
    for (size_t k = 0; k < E.size(); ++k) E[k] = rng.normal();
    embeds.push_back(std::move(E));
  }
  inference::HierScorer scorer(h, embeds, taus);

  // Brute-force triple loop: levels x finest cells x embedding dims.
  double max_dev = 0.0;
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<double> v(dim);
    double norm = 0;
    for (double& x : v) {
      x = rng.normal();
      norm += x * x;
    }
    norm = std::sqrt(norm);
    for (double& x : v) x /= norm;

    std::vector<std::vector<double>> probs;
    for (size_t l = 0; l < h.levels.size(); ++l) {
      const auto& E = embeds[l];
      std::vector<double> sims(E.rows());
      for (size_t i = 0; i < E.rows(); ++i) {
        double dot = 0, en = 0;
        for (size_t j = 0; j < dim; ++j) {
          dot += E.at(i, j) * v[j];
          en += E.at(i, j) * E.at(i, j);
        }
        sims[i] = dot / std::sqrt(en);
      }
      double m = *std::max_element(sims.begin(), sims.end());
      double z = 0;
      for (double& s : sims) {
        s = std::exp((s - m) / taus[l]);
        z += s;
      }
      for (double& s : sims) s /= z;
      probs.push_back(std::move(sims));
    }
    std::vector<double> expect;
    double sum = 0;
    for (const auto& fine : h.levels.back().cells) {
      double p = 1.0;
      const auto& chain = h.parent_links.at(fine.id);
      for (size_t l = 0; l < h.levels.size(); ++l) {
        const auto& cells = h.levels[l].cells;
        size_t row = std::lower_bound(cells.begin(), cells.end(), chain[l],
                                      [](const auto& e, const geodesy::CellId& id) {
                                        return e.id < id;
                                      }) -
                     cells.begin();
        p *= probs[l][row];
      }
      expect.push_back(p);
      sum += p;
    }
    for (double& p : expect) p /= sum;
    std::vector<double> got = scorer.hierarchical_scores(v);
    for (size_t i = 0; i < got.size(); ++i) {
      max_dev = std::max(max_dev, std::abs(got[i] - expect[i]));
    }
  }
  bool ok = max_dev < 1e-9;
  char buf[160];
  std::snprintf(buf, sizeof(buf),
                "hierarchical scores vs brute-force enumeration over %zu finest cells: max "
                "deviation %.2e",
                h.levels.back().cells.size(), max_dev);
  report(5, ok, buf);
}

// ---- criteria 6 and 9: end-to-end synthetic benchmark ---------------------------

RunConfig desk_config(uint64_t seed) {
  nlohmann::json doc = {
      {"seed", seed},
      {"partition", {{"tau_min", 5}, {"schedule", {2000, 500, 125}}}},
      {"fusion",
       {{"d_s", 32},
        {"d_kv", 64},
        {"latent_dim", 16},
        {"heads", 8},
        {"blocks", 1},
        {"mlp_hidden", 128},
        {"out_dim", 768},
        {"num_classes", 16},
        {"seg_h", 28},
        {"seg_w", 28}}},
      {"train",
       {{"batch_size", 64}, {"epochs_max", 20}, {"val_fraction", 0.01}, {"patience", 4}}},
      {"synth",
       {{"n_clusters", 50},
        {"samples_per_cluster", 200},
        {"noise_sigma", 0.1},
        {"rgb_rows", 17},
        {"d_kv", 64},
        {"seg_h", 28},
        {"seg_w", 28},
        {"num_classes", 16},
        {"geo_sigma_km", 50.0},
        {"holdout_fraction", 0.1}}}};
  return RunConfig::from_json(doc);
}

struct PipelineFiles {
  std::string hierarchy, checkpoint, pred_csv, pred_json, report, truth;
};

PipelineFiles run_full_pipeline(const RunConfig& cfg, const std::string& dir,
                                std::ostream& log) {
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  PipelineFiles f;
  f.hierarchy = dir + "/h.json";
  f.checkpoint = dir + "/m.ckpt";
  f.pred_csv = dir + "/pred.csv";
  f.pred_json = dir + "/pred.json";
  f.report = dir + "/report.json";
  std::string data = dir + "/data";
  datakit::SyntheticPaths paths = pipeline::run_synth(cfg, data, log);
  f.truth = paths.truth_csv;
  pipeline::run_partition(cfg, {paths.manifest, f.hierarchy}, log);
  pipeline::run_train(cfg, {paths.manifest, f.hierarchy, f.checkpoint, dir + "/log.jsonl"}, log);
  pipeline::run_infer(cfg, {paths.manifest, f.hierarchy, f.checkpoint, f.pred_csv, f.pred_json},
                      log);
  return f;
}

// Pinned after the first successful acceptance run; regression band is +/- 2
// percentage points per the stated tolerance.
constexpr double kPinned750 = 1.000;
constexpr double kPinned2500 = 1.000;

void criterion_6() {
  double t0 = now_s();
  RunConfig cfg = desk_config(7);
  std::ostringstream sink;
  PipelineFiles f = run_full_pipeline(cfg, kWork + "/e2e", sink);
  evalkit::ThresholdReport rep =
      pipeline::run_eval(cfg, {f.pred_csv, f.truth, f.report, ""}, sink);
  double dt = now_s() - t0;
  double at750 = rep.fractions[3], at2500 = rep.fractions[4];
  bool ok = at2500 >= 0.90 && at750 >= 0.70 && dt < 900.0;
  if (kPinned750 >= 0.0) {
    ok = ok && std::abs(at750 - kPinned750) <= 0.02 && std::abs(at2500 - kPinned2500) <= 0.02;
  }
  char buf[240];
  std::snprintf(buf, sizeof(buf),
                "end-to-end synthetic recovery: 750km %.1f%% (need >= 70), 2500km %.1f%% (need "
                ">= 90)%s (%.0f s)",
                100 * at750, 100 * at2500,
                kPinned750 >= 0.0 ? ", within 2pp of pinned values" : " [pins pending]", dt);
  report(6, ok, buf);
}

void criterion_9() {
  RunConfig cfg = desk_config(13);
  // Smaller dataset, same full pipeline, run twice.
  nlohmann::json doc = cfg.to_json();
  doc["synth"]["n_clusters"] = 12;
  doc["synth"]["samples_per_cluster"] = 60;
  doc["partition"]["schedule"] = {300, 120, 40};
  doc["train"]["epochs_max"] = 3;
  RunConfig small = RunConfig::from_json(doc);
  std::ostringstream sink;
  PipelineFiles a = run_full_pipeline(small, kWork + "/det_a", sink);
  pipeline::run_eval(small, {a.pred_csv, a.truth, a.report, ""}, sink);
  PipelineFiles b = run_full_pipeline(small, kWork + "/det_b", sink);
  pipeline::run_eval(small, {b.pred_csv, b.truth, b.report, ""}, sink);
  bool ckpt_same = read_bytes(a.checkpoint) == read_bytes(b.checkpoint);
  bool pred_same = read_bytes(a.pred_csv) == read_bytes(b.pred_csv) &&
                   read_bytes(a.pred_json) == read_bytes(b.pred_json);
  bool report_same = read_bytes(a.report) == read_bytes(b.report);
  bool ok = ckpt_same && pred_same && report_same;
  char buf[200];
  std::snprintf(buf, sizeof(buf),
                "determinism: checkpoints %s, predictions %s, reports %s byte-identical",
                ckpt_same ? "are" : "are NOT", pred_same ? "are" : "are NOT",
                report_same ? "are" : "are NOT");
  report(9, ok, buf);
}

// ---- criterion 7: ablation direction checks --------------------------------------

RunConfig ablation_config(uint64_t seed, bool fusion_enabled, bool deep) {
  nlohmann::json doc = {
      {"seed", seed},
      {"partition",
       {{"tau_min", 2},
        {"schedule", deep ? std::vector<size_t>{400, 100, 25} : std::vector<size_t>{25}}}},
      {"fusion",
       {{"enabled", fusion_enabled},
        {"d_s", 32},
        {"d_kv", 64},
        {"latent_dim", 16},
        {"heads", 8},
        {"blocks", 1},
        {"mlp_hidden", 128},
        {"out_dim", 768},
        {"num_classes", 16},
        {"seg_h", 28},
        {"seg_w", 28}}},
      {"train",
       {{"batch_size", 32},
        {"epochs_max", 15},
        {"val_fraction", 0.05},
        {"patience", 4},
        {"lr", 1e-3},
        {"lr_gamma", 0.8}}},
      {"eval", {{"thresholds_km", {25, 200, 750, 2500}}}},
      {"synth",
       {{"n_clusters", 20},
        {"samples_per_cluster", 80},
        {"noise_sigma", 16.0},
        {"rgb_rows", 17},
        {"d_kv", 64},
        {"seg_h", 28},
        {"seg_w", 28},
        {"num_classes", 16},
        {"geo_sigma_km", 10.0},
        {"holdout_fraction", 0.1}}}};
  return RunConfig::from_json(doc);
}

evalkit::ThresholdReport run_ablation(const RunConfig& cfg, const std::string& dir) {
  std::ostringstream sink;
  PipelineFiles f = run_full_pipeline(cfg, dir, sink);
  return pipeline::run_eval(cfg, {f.pred_csv, f.truth, f.report, ""}, sink);
}

void criterion_7() {
  double t0 = now_s();
  std::vector<uint64_t> seeds = {101, 102, 103};
  std::vector<double> deep_750, shallow_750, fused_25, probe_25;
  for (uint64_t seed : seeds) {
    std::string tag = std::to_string(seed);
    evalkit::ThresholdReport deep =
        run_ablation(ablation_config(seed, true, true), kWork + "/abl_deep_" + tag);
    evalkit::ThresholdReport shallow =
        run_ablation(ablation_config(seed, true, false), kWork + "/abl_shallow_" + tag);
    evalkit::ThresholdReport probe =
        run_ablation(ablation_config(seed, false, true), kWork + "/abl_probe_" + tag);
    deep_750.push_back(deep.fractions[2]);     // 750 km
    shallow_750.push_back(shallow.fractions[2]);
    fused_25.push_back(deep.fractions[0]);     // finest threshold, 25 km
    probe_25.push_back(probe.fractions[0]);
  }
  auto mean = [](const std::vector<double>& v) {
    double s = 0;
    for (double x : v) s += x;
    return s / double(v.size());
  };
  auto range = [](const std::vector<double>& v) {
    return *std::max_element(v.begin(), v.end()) - *std::min_element(v.begin(), v.end());
  };
  double depth_margin = mean(deep_750) - mean(shallow_750);
  double depth_band = std::max(range(deep_750), range(shallow_750));
  double fusion_margin = mean(fused_25) - mean(probe_25);
  double fusion_band = std::max(range(fused_25), range(probe_25));
  bool ok = depth_margin > depth_band && fusion_margin > fusion_band;
  double dt = now_s() - t0;
  char buf[280];
  std::snprintf(buf, sizeof(buf),
                "ablations over 3 seeds: depth-3 beats depth-1 at 750km by %.1fpp (noise band "
                "%.1fpp); fusion beats features-only at 25km by %.1fpp (band %.1fpp) (%.0f s)",
                100 * depth_margin, 100 * depth_band, 100 * fusion_margin, 100 * fusion_band,
                dt);
  report(7, ok, buf);
}

// ---- criterion 8: haversine examples and threshold monotonicity -------------------

void criterion_8() {
  bool ok = true;
  std::string detail = "haversine examples and monotone threshold fractions";
  if (geodesy::haversine_km({0, 0}, {0, 0}) != 0.0) {
    ok = false;
    detail = "identical points not zero";
  }
  if (std::abs(geodesy::haversine_km({0, 0}, {0, 180}) - std::numbers::pi * 6371.0) > 1e-6) {
    ok = false;
    detail = "antipodal distance deviates from pi R";
  }
  // Pinned from the independent pre-build oracle evaluation.
  if (std::abs(geodesy::haversine_km({48.8584, 2.2945}, {36.1126, -115.1728}) - 8733.18) > 0.1) {
    ok = false;
    detail = "Paris-Las Vegas distance off the pinned oracle value";
  }
  Rng rng(8888);
  for (int trial = 0; trial < 20 && ok; ++trial) {
    std::vector<evalkit::EvalRecord> recs;
    for (int i = 0; i < 1000; ++i) {
      geodesy::GeoPoint truth(rng.uniform(-85, 85), rng.uniform(-180, 180));
      geodesy::GeoPoint pred(rng.uniform(-85, 85), rng.uniform(-180, 180));
      recs.push_back(evalkit::make_record("q" + std::to_string(i), pred, truth));
    }
    evalkit::ThresholdReport rep = evalkit::gcd_accuracy(recs, evalkit::kDefaultThresholdsKm);
    for (size_t i = 1; i < rep.fractions.size(); ++i) {
      if (rep.fractions[i] < rep.fractions[i - 1]) {
        ok = false;
        detail = "threshold fractions not monotone";
      }
    }
  }
  report(8, ok, detail);
}

}  // namespace

int main() {
  std::filesystem::create_directories(kWork);
  criterion_1();
  criterion_2();
  criterion_3();
  criterion_4();
  criterion_5();
  criterion_6();
  criterion_7();
  criterion_8();
  criterion_9();
  if (g_failures == 0) {
    std::printf("all acceptance criteria passed\n");
    return 0;
  }
  std::printf("%d acceptance criteria FAILED\n", g_failures);
  return 1;
}
