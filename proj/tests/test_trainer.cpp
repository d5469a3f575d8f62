#include <doctest.h>

#include <cmath>
#include <fstream>
#include <numbers>
#include <vector>

#include "geosurge/datakit.hpp"
#include "geosurge/rng.hpp"
#include "geosurge/trainer.hpp"

using namespace geosurge;
using namespace geosurge::trainer;
using autodiff::Param;
using autodiff::Tape;
using autodiff::Var;

namespace {

// Unit-norm random rows.
autodiff::Tensor<double> random_unit_rows(Rng& rng, size_t rows, size_t cols) {
  autodiff::Tensor<double> t(rows, cols);
  for (size_t i = 0; i < rows; ++i) {
    double norm = 0;
    for (size_t j = 0; j < cols; ++j) {
      t.at(i, j) = rng.normal();
      norm += t.at(i, j) * t.at(i, j);
    }
    norm = std::sqrt(norm);
    for (size_t j = 0; j < cols; ++j) t.at(i, j) /= norm;
  }
  return t;
}

double info_nce_value(const autodiff::Tensor<double>& V, const autodiff::Tensor<double>& G,
                      double tau) {
  Tape<double> t;
  Param<double> log_tau("tau", autodiff::Tensor<double>::scalar(std::log(tau)));
  Var loss = info_nce_level(t, t.leaf(V), t.leaf(G), t.param(log_tau));
  return t.val(loss)[0];
}

}  // namespace

TEST_CASE("info_nce with batch size 1 is exactly zero") {
  autodiff::Tensor<double> v = autodiff::Tensor<double>::from_rows({{1.0, 0.0}});
  autodiff::Tensor<double> g = autodiff::Tensor<double>::from_rows({{0.0, 1.0}});
  CHECK(info_nce_value(v, g, 0.07) == 0.0);
}

TEST_CASE("uniform similarities give ln B") {
  // All rows identical: every pairwise similarity equals 1.
  autodiff::Tensor<double> v(4, 3), g(4, 3);
  for (size_t i = 0; i < 4; ++i) {
    v.at(i, 0) = 1.0;
    g.at(i, 0) = 1.0;
  }
  CHECK(info_nce_value(v, g, 0.5) == doctest::Approx(std::log(4.0)).epsilon(1e-9));
  CHECK(info_nce_value(v, g, 0.5) == doctest::Approx(1.3862943611).epsilon(1e-9));
}

TEST_CASE("B=2 identity similarity matrix at tau 1 matches the hand oracle") {
  // sims [[1,0],[0,1]]: loss = -ln(e / (e + 1)) = ln(1 + exp(-1)).
  autodiff::Tensor<double> v = autodiff::Tensor<double>::from_rows({{1, 0}, {0, 1}});
  autodiff::Tensor<double> g = v;
  CHECK(info_nce_value(v, g, 1.0) == doctest::Approx(0.3132616875182228).epsilon(1e-12));
}

TEST_CASE("non-unit rows are rejected") {
  autodiff::Tensor<double> v = autodiff::Tensor<double>::from_rows({{2.0, 0.0}});
  autodiff::Tensor<double> g = autodiff::Tensor<double>::from_rows({{1.0, 0.0}});
  Tape<double> t;
  Param<double> log_tau("tau", autodiff::Tensor<double>::scalar(0.0));
  CHECK_THROWS_AS(info_nce_level(t, t.leaf(v), t.leaf(g), t.param(log_tau)), DataError);
}

TEST_CASE("loss is invariant under a shared orthogonal rotation") {
  Rng rng(21);
  size_t d = 8, b = 5;
  autodiff::Tensor<double> V = random_unit_rows(rng, b, d);
  autodiff::Tensor<double> G = random_unit_rows(rng, b, d);
  // Gram-Schmidt on a random matrix gives the rotation.
  std::vector<std::vector<double>> Q(d, std::vector<double>(d));
  for (auto& row : Q) {
    for (double& x : row) x = rng.normal();
  }
  for (size_t i = 0; i < d; ++i) {
    for (size_t k = 0; k < i; ++k) {
      double dot = 0;
      for (size_t j = 0; j < d; ++j) dot += Q[i][j] * Q[k][j];
      for (size_t j = 0; j < d; ++j) Q[i][j] -= dot * Q[k][j];
    }
    double norm = 0;
    for (size_t j = 0; j < d; ++j) norm += Q[i][j] * Q[i][j];
    norm = std::sqrt(norm);
    for (size_t j = 0; j < d; ++j) Q[i][j] /= norm;
  }
  auto rotate = [&](const autodiff::Tensor<double>& M) {
    autodiff::Tensor<double> out(M.rows(), d);
    for (size_t i = 0; i < M.rows(); ++i) {
      for (size_t r = 0; r < d; ++r) {
        double s = 0;
        for (size_t j = 0; j < d; ++j) s += M.at(i, j) * Q[r][j];
        out.at(i, r) = s;
      }
    }
    return out;
  };
  double base = info_nce_value(V, G, 0.07);
  double rotated = info_nce_value(rotate(V), rotate(G), 0.07);
  CHECK(base == doctest::Approx(rotated).epsilon(1e-9));
}

TEST_CASE("loss is equivariant under paired batch shuffles") {
  Rng rng(23);
  autodiff::Tensor<double> V = random_unit_rows(rng, 6, 10);
  autodiff::Tensor<double> G = random_unit_rows(rng, 6, 10);
  std::vector<size_t> perm = {4, 2, 0, 5, 1, 3};
  autodiff::Tensor<double> Vp(6, 10), Gp(6, 10);
  for (size_t i = 0; i < 6; ++i) {
    for (size_t j = 0; j < 10; ++j) {
      Vp.at(i, j) = V.at(perm[i], j);
      Gp.at(i, j) = G.at(perm[i], j);
    }
  }
  CHECK(info_nce_value(V, G, 0.07) == doctest::Approx(info_nce_value(Vp, Gp, 0.07)).epsilon(1e-6));
}

TEST_CASE("same-cell negatives can be masked") {
  Rng rng(29);
  autodiff::Tensor<double> V = random_unit_rows(rng, 4, 8);
  autodiff::Tensor<double> G(4, 8);
  // Samples 0 and 1 share a cell (identical g rows).
  autodiff::Tensor<double> g_rows = random_unit_rows(rng, 3, 8);
  for (size_t j = 0; j < 8; ++j) {
    G.at(0, j) = g_rows.at(0, j);
    G.at(1, j) = g_rows.at(0, j);
    G.at(2, j) = g_rows.at(1, j);
    G.at(3, j) = g_rows.at(2, j);
  }
  std::vector<size_t> cells = {7, 7, 9, 11};
  Tape<double> t;
  Param<double> log_tau("tau", autodiff::Tensor<double>::scalar(std::log(0.07)));
  double masked = t.val(info_nce_level(t, t.leaf(V), t.leaf(G), t.param(log_tau), &cells))[0];
  double unmasked = info_nce_value(V, G, 0.07);
  CHECK(masked < unmasked);  // the duplicate negative no longer competes
}

TEST_CASE("random-init loss at B=64 is close to L ln B in 768 dims") {
  Rng rng(31);
  double target = std::log(64.0);
  for (int level = 0; level < 2; ++level) {
    autodiff::Tensor<double> V = random_unit_rows(rng, 64, 768);
    autodiff::Tensor<double> G = random_unit_rows(rng, 64, 768);
    double loss = info_nce_value(V, G, 0.07);
    CHECK(loss > 0.9 * target);
    CHECK(loss < 1.1 * target);
  }
}

TEST_CASE("adamw: zero gradient and no decay leaves parameters unchanged") {
  Param<double> w("w", autodiff::Tensor<double>::from_rows({{1.0, -2.0}}));
  auto before = w.value;
  AdamW<double> opt;
  Param<double>* params[] = {&w};
  w.zero_grad();
  opt.step(params, 0.1, 0.0);
  CHECK(w.value == before);
}

TEST_CASE("adamw first step with unit gradient moves by ~ -lr") {
  Param<double> w("w", autodiff::Tensor<double>::scalar(0.0));
  w.grad[0] = 1.0;
  AdamW<double> opt;
  Param<double>* params[] = {&w};
  opt.step(params, 0.1, 0.0);
  CHECK(w.value[0] == doctest::Approx(-0.0999999990).epsilon(1e-10));
}

TEST_CASE("adamw decoupled decay shrinks weights by (1 - lr wd)") {
  Param<double> w("w", autodiff::Tensor<double>::scalar(3.0));
  w.zero_grad();
  AdamW<double> opt;
  Param<double>* params[] = {&w};
  opt.step(params, 0.1, 0.01);
  CHECK(w.value[0] == doctest::Approx(3.0 * (1.0 - 0.1 * 0.01)).epsilon(1e-12));
}

TEST_CASE("early stopper: monotone worsening stops after patience+1 evaluations") {
  EarlyStopper stopper(4);
  int evals = 0;
  double val = 1.0;
  bool stopped = false;
  for (int i = 0; i < 100 && !stopped; ++i) {
    ++evals;
    stopped = stopper.observe(val);
    val += 0.1;  // strictly worsening
  }
  CHECK(stopped);
  CHECK(evals == 5);  // the initial evaluation plus 4 non-improvements
}

TEST_CASE("early stopper: improvement resets the counter") {
  EarlyStopper stopper(2);
  CHECK(!stopper.observe(1.0));
  CHECK(!stopper.observe(1.1));
  CHECK(!stopper.observe(0.9));  // new best resets
  CHECK(!stopper.observe(1.2));
  CHECK(stopper.observe(1.3));
  CHECK(stopper.best() == 0.9);
}

TEST_CASE("lr schedule: epoch 3 at gamma 0.5 gives 1.25e-5") {
  double lr0 = 1e-4;
  CHECK(lr0 * std::pow(0.5, 3) == doctest::Approx(1.25e-5).epsilon(1e-15));
}

// ---- end-to-end toy training ------------------------------------------------

namespace {

struct ToySetup {
  partition::PartitionHierarchy hierarchy;
  std::vector<TrainSample<double>> samples;
  fusion::FusionConfig fcfg;
};

ToySetup make_toy(uint64_t seed, size_t levels = 2) {
  ToySetup s;
  datakit::SyntheticConfig scfg;
  scfg.n_clusters = 6;
  scfg.samples_per_cluster = 30;
  scfg.noise_sigma = 0.1;
  scfg.rgb_rows = 5;
  scfg.d_kv = 12;
  scfg.seg_h = 14;
  scfg.seg_w = 14;
  scfg.num_classes = 5;
  scfg.holdout_fraction = 0.0;
  scfg.seed = seed;
  std::string dir = "/tmp/geosurge_toy_" + std::to_string(seed);
  datakit::SyntheticPaths paths = datakit::generate_synthetic(scfg, dir);
  std::vector<datakit::ManifestRecord> records = datakit::read_manifest(paths.manifest);

  std::vector<partition::Sample> psamples;
  for (size_t i = 0; i < records.size(); ++i) {
    psamples.push_back({records[i].id, geodesy::GeoPoint(records[i].lat, records[i].lon), i});
  }
  std::vector<size_t> schedule = levels == 1 ? std::vector<size_t>{60}
                                             : std::vector<size_t>{120, 60};
  s.hierarchy = partition::build_hierarchy(psamples, 1, schedule);

  s.fcfg.d_s = 8;
  s.fcfg.d_kv = scfg.d_kv;
  s.fcfg.latent_dim = 4;
  s.fcfg.heads = 2;
  s.fcfg.blocks = 1;
  s.fcfg.mlp_hidden = 16;
  s.fcfg.out_dim = 16;
  s.fcfg.num_classes = scfg.num_classes;
  s.fcfg.seg_h = scfg.seg_h;
  s.fcfg.seg_w = scfg.seg_w;

  std::vector<std::map<geodesy::CellId, size_t>> row_of(s.hierarchy.levels.size());
  for (size_t l = 0; l < s.hierarchy.levels.size(); ++l) {
    for (size_t i = 0; i < s.hierarchy.levels[l].cells.size(); ++i) {
      row_of[l].emplace(s.hierarchy.levels[l].cells[i].id, i);
    }
  }
  std::ifstream blob(dir + "/features.bin", std::ios::binary);
  REQUIRE(blob.good());
  for (const auto& r : records) {
    geodesy::GeoPoint loc(r.lat, r.lon);
    auto finest = partition::assign(loc, s.hierarchy.levels.back());
    if (!finest) continue;
    TrainSample<double> ts;
    ts.id = r.id;
    ts.location = loc;
    for (size_t l = 0; l < s.hierarchy.levels.size(); ++l) {
      ts.level_rows.push_back(row_of[l].at(s.hierarchy.parent_links.at(*finest)[l]));
    }
    ts.rgb = datakit::record_to_matrix<double>(
        datakit::read_record(blob, r.rgb_blob.offset, "features.bin"), r.id);
    ts.seg = datakit::record_to_segmap(
        datakit::read_record(blob, r.seg_blob.offset, "features.bin"), r.id);
    s.samples.push_back(std::move(ts));
  }
  return s;
}

}  // namespace

TEST_CASE("total loss: one level equals info_nce directly; L copies sum to L times") {
  ToySetup toy = make_toy(41, 1);
  fusion::FusionParams<double> fparams = fusion::init_fusion<double>(toy.fcfg, 3);
  geoembed::GeoRepresentation<double> geo1 =
      geoembed::init_embeddings<double>(toy.hierarchy, toy.fcfg.out_dim, 5);

  std::vector<size_t> batch = {0, 1, 2, 3, 4, 5, 6, 7};
  TrainConfig tcfg;

  // Single level: total == the level loss.
  Tape<double> t1;
  auto fv1 = fusion::bind_fusion(t1, fparams);
  auto gv1 = bind_geo(t1, geo1);
  BatchLoss<double> bl1 = batch_total_loss<double>(t1, toy.samples, batch, fv1, gv1, toy.fcfg, tcfg);
  CHECK(t1.val(bl1.total)[0] == doctest::Approx(bl1.per_level[0]).epsilon(1e-12));

  // A degenerate hierarchy of L identical levels: exactly L x the single loss.
  partition::PartitionHierarchy dup = toy.hierarchy;
  dup.schedule = {120, 60};  // schedule strings are not revalidated here
  dup.levels = {toy.hierarchy.levels[0], toy.hierarchy.levels[0]};
  for (auto& [fine, chain] : dup.parent_links) chain = {chain[0], chain[0]};
  geoembed::GeoRepresentation<double> geo2 = geoembed::init_embeddings<double>(dup, toy.fcfg.out_dim, 5);
  // Make both levels bit-identical copies of level 0.
  geo2.levels[1].embedding.value = geo2.levels[0].embedding.value;
  std::vector<TrainSample<double>> dup_samples = toy.samples;
  for (auto& s : dup_samples) s.level_rows = {s.level_rows[0], s.level_rows[0]};

  Tape<double> t2;
  auto fv2 = fusion::bind_fusion(t2, fparams);
  auto gv2 = bind_geo(t2, geo2);
  BatchLoss<double> bl2 = batch_total_loss<double>(t2, dup_samples, batch, fv2, gv2, toy.fcfg, tcfg);
  CHECK(t2.val(bl2.total)[0] == doctest::Approx(2.0 * bl2.per_level[0]).epsilon(1e-12));
}

TEST_CASE("one small step decreases the loss on a frozen batch") {
  ToySetup toy = make_toy(43);
  fusion::FusionParams<double> fparams = fusion::init_fusion<double>(toy.fcfg, 7);
  geoembed::GeoRepresentation<double> geo =
      geoembed::init_embeddings<double>(toy.hierarchy, toy.fcfg.out_dim, 9);
  // Stride across clusters; a single-cell batch has no negatives and a zero
  // gradient by construction.
  std::vector<size_t> batch;
  for (size_t i = 0; i < 16; ++i) batch.push_back((i * 17) % toy.samples.size());
  TrainConfig tcfg;

  std::vector<Param<double>*> params = fparams.params();
  for (auto* p : geo.params()) params.push_back(p);
  for (auto* p : params) p->zero_grad();

  Tape<double> t;
  auto fv = fusion::bind_fusion(t, fparams);
  auto gv = bind_geo(t, geo);
  BatchLoss<double> bl = batch_total_loss<double>(t, toy.samples, batch, fv, gv, toy.fcfg, tcfg);
  double before = t.val(bl.total)[0];
  t.backward(bl.total);
  AdamW<double> opt;
  opt.step(params, 1e-5, 0.0);
  Tape<double> t2;
  auto fv2 = fusion::bind_fusion(t2, fparams);
  auto gv2 = bind_geo(t2, geo);
  double after =
      t2.val(batch_total_loss<double>(t2, toy.samples, batch, fv2, gv2, toy.fcfg, tcfg).total)[0];
  CHECK(after < before);
}

TEST_CASE("full-pipeline gradient check on a 2-level toy hierarchy") {
  ToySetup toy = make_toy(47);
  fusion::FusionParams<double> fparams = fusion::init_fusion<double>(toy.fcfg, 11);
  geoembed::GeoRepresentation<double> geo =
      geoembed::init_embeddings<double>(toy.hierarchy, toy.fcfg.out_dim, 13);
  // Two samples from different clusters so every level sees a real negative.
  std::vector<size_t> batch = {0, toy.samples.size() / 2};
  REQUIRE(toy.samples[batch[0]].level_rows != toy.samples[batch[1]].level_rows);
  TrainConfig tcfg;

  std::vector<Param<double>*> params = fparams.params();
  for (auto* p : geo.params()) params.push_back(p);
  auto build = [&](Tape<double>& t) {
    auto fv = fusion::bind_fusion(t, fparams);
    auto gv = bind_geo(t, geo);
    return batch_total_loss<double>(t, toy.samples, batch, fv, gv, toy.fcfg, tcfg).total;
  };
  // Restrict the check to a manageable but representative subset: every
  // fusion tensor plus the first level's embedding and both temperatures.
  std::vector<Param<double>*> checked = fparams.params();
  checked.push_back(&geo.levels[0].log_tau);
  checked.push_back(&geo.levels[1].log_tau);
  double err = autodiff::grad_check(build, checked, 1e-5);
  CHECK(err < 1e-4);
}

TEST_CASE("fit: empty training set is an error") {
  std::vector<TrainSample<double>> none;
  fusion::FusionConfig fcfg;
  fusion::FusionParams<double> fparams = fusion::init_fusion<double>(fcfg, 1);
  partition::PartitionHierarchy h;
  geoembed::GeoRepresentation<double> geo;
  geo.dim = 8;
  TrainConfig tcfg;
  CHECK_THROWS_AS((fit<double>(none, fparams, fcfg, geo, tcfg)), DataError);
}

TEST_CASE("fit runs, logs epochs, and improves validation loss on the toy set") {
  ToySetup toy = make_toy(53);
  fusion::FusionParams<float> fparams = fusion::init_fusion<float>(toy.fcfg, 15);
  geoembed::GeoRepresentation<float> geo =
      geoembed::init_embeddings<float>(toy.hierarchy, toy.fcfg.out_dim, 17);
  std::vector<TrainSample<float>> samples;
  for (const auto& s : toy.samples) {
    TrainSample<float> f;
    f.id = s.id;
    f.location = s.location;
    f.level_rows = s.level_rows;
    f.rgb = s.rgb.cast<float>();
    f.seg = s.seg;
    samples.push_back(std::move(f));
  }
  TrainConfig tcfg;
  tcfg.batch_size = 16;
  tcfg.epochs_max = 5;
  tcfg.val_fraction = 0.1;
  tcfg.seed = 99;
  FitResult<float> res = fit<float>(samples, fparams, toy.fcfg, geo, tcfg);
  REQUIRE(!res.log.empty());
  CHECK(res.log[0].lr == doctest::Approx(1e-4));
  if (res.log.size() >= 2) CHECK(res.log[1].lr == doctest::Approx(5e-5));
  CHECK(res.best_val_loss <= res.log[0].val_loss);
  CHECK(res.log[0].per_level_losses.size() == 2);
  // Determinism: the same config and seed reproduce the same log.
  fusion::FusionParams<float> fparams2 = fusion::init_fusion<float>(toy.fcfg, 15);
  geoembed::GeoRepresentation<float> geo2 =
      geoembed::init_embeddings<float>(toy.hierarchy, toy.fcfg.out_dim, 17);
  FitResult<float> res2 = fit<float>(samples, fparams2, toy.fcfg, geo2, tcfg);
  REQUIRE(res2.log.size() == res.log.size());
  for (size_t e = 0; e < res.log.size(); ++e) {
    CHECK(res.log[e].train_loss == res2.log[e].train_loss);
    CHECK(res.log[e].val_loss == res2.log[e].val_loss);
  }
  CHECK(fparams.final_proj.value == fparams2.final_proj.value);
}
