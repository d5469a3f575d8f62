#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "geosurge/autodiff.hpp"
#include "geosurge/error.hpp"
#include "geosurge/fusion.hpp"
#include "geosurge/geoembed.hpp"
#include "geosurge/rng.hpp"

namespace geosurge::trainer {

using autodiff::Var;

struct TrainConfig {
  size_t batch_size = 64;  // full-scale runs use an effective batch of 1024
  double lr = 1e-4;
  double weight_decay = 1e-4;
  double lr_gamma = 0.5;
  size_t patience = 4;
  uint64_t seed = 42;
  size_t epochs_max = 20;
  double val_fraction = 0.01;
  size_t grad_accum = 1;
  bool mask_same_cell_negatives = false;

  void validate() const {
    if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
    if (lr <= 0) throw ConfigError("train: lr must be positive");
    if (lr_gamma <= 0 || lr_gamma > 1) throw ConfigError("train: lr_gamma must be in (0, 1]");
    if (weight_decay < 0) throw ConfigError("train: weight_decay must be >= 0");
    if (epochs_max < 1) throw ConfigError("train: epochs_max must be >= 1");
    if (val_fraction < 0 || val_fraction >= 1) {
      throw ConfigError("train: val_fraction must be in [0, 1)");
    }
    if (grad_accum < 1) throw ConfigError("train: grad_accum must be >= 1");
  }
};

// One loadable training record: ingested features plus the embedding row of
// the containing cell at every hierarchy level.
template <typename T>
struct TrainSample {
  std::string id;
  geodesy::GeoPoint location;
  autodiff::Tensor<T> rgb;
  fusion::SegMap seg;
  std::vector<size_t> level_rows;
};

// InfoNCE over one level: mean_i -log( exp(v_i.g_i/tau) / sum_j exp(v_i.g_j/tau) ),
// computed through log-sum-exp. Rows of V and G must be unit norm. When
// `cells` is given, negatives j != i sharing sample i's cell are masked out.
template <typename T>
Var info_nce_level(autodiff::Tape<T>& t, Var v_rows, Var g_rows, Var log_tau,
                   const std::vector<size_t>* cells = nullptr) {
  const autodiff::Tensor<T>&V = t.val(v_rows), &G = t.val(g_rows);
  if (!V.same_shape(G)) {
    throw DataError("info_nce: shape mismatch " + V.shape_str() + " vs " + G.shape_str());
  }
  auto check_unit = [](const autodiff::Tensor<T>& M, const char* which) {
    for (size_t i = 0; i < M.rows(); ++i) {
      double s = 0;
      for (size_t j = 0; j < M.cols(); ++j) s += double(M.at(i, j)) * double(M.at(i, j));
      if (std::abs(std::sqrt(s) - 1.0) > 1e-4) {
        throw DataError(std::string("info_nce: ") + which + " row " + std::to_string(i) +
                        " is not unit norm");
      }
    }
  };
  check_unit(V, "V");
  check_unit(G, "G");
  Var sims = t.matmul(v_rows, t.transpose(g_rows));
  Var inv_tau = t.exp(t.scale(log_tau, T{-1}));
  Var logits = t.scale_by(sims, inv_tau);
  if (cells) {
    size_t b = V.rows();
    if (cells->size() != b) throw DataError("info_nce: cell list size mismatch");
    autodiff::Tensor<T> mask(b, b);
    for (size_t i = 0; i < b; ++i) {
      for (size_t j = 0; j < b; ++j) {
        if (i != j && (*cells)[i] == (*cells)[j]) mask.at(i, j) = static_cast<T>(-1e9);
      }
    }
    logits = t.add(logits, t.leaf(std::move(mask)));
  }
  Var lse = t.log_sum_exp_rows(logits);
  Var pos = t.take_diag(logits);
  return t.mean_all(t.sub(lse, pos));
}

// Tape-bound handles for the geographic representation.
template <typename T>
struct GeoVars {
  struct Level {
    Var embedding, log_tau;
  };
  std::vector<Level> levels;
};

template <typename T>
GeoVars<T> bind_geo(autodiff::Tape<T>& t, geoembed::GeoRepresentation<T>& rep) {
  GeoVars<T> g;
  for (auto& le : rep.levels) {
    g.levels.push_back({t.param(le.embedding), t.param(le.log_tau)});
  }
  return g;
}

template <typename T>
struct BatchLoss {
  Var total;
  std::vector<double> per_level;
};

// Sum of per-level InfoNCE losses for one batch. Features are fused once per
// sample; each level contributes its own embedding rows and temperature.
template <typename T>
BatchLoss<T> batch_total_loss(autodiff::Tape<T>& t, std::span<const TrainSample<T>> samples,
                              std::span<const size_t> batch,
                              const fusion::FusionVars<T>& fv, const GeoVars<T>& gv,
                              const fusion::FusionConfig& fcfg, const TrainConfig& tcfg) {
  if (batch.empty()) throw DataError("batch_total_loss: empty batch");
  std::vector<Var> feats;
  feats.reserve(batch.size());
  for (size_t idx : batch) {
    const TrainSample<T>& s = samples[idx];
    feats.push_back(fusion::visual_feature(t, s.rgb, s.seg, fv, fcfg));
  }
  Var v_rows = feats.size() == 1 ? feats[0] : t.concat_rows(std::span<const Var>(feats));
  BatchLoss<T> out;
  out.total = Var{-1};
  for (size_t l = 0; l < gv.levels.size(); ++l) {
    std::vector<size_t> rows;
    rows.reserve(batch.size());
    for (size_t idx : batch) rows.push_back(samples[idx].level_rows[l]);
    Var g_rows = t.l2_normalize_rows(t.gather_rows(gv.levels[l].embedding, rows));
    Var loss_l = info_nce_level(t, v_rows, g_rows, gv.levels[l].log_tau,
                                tcfg.mask_same_cell_negatives ? &rows : nullptr);
    out.per_level.push_back(static_cast<double>(t.val(loss_l)[0]));
    out.total = out.total.id < 0 ? loss_l : t.add(out.total, loss_l);
  }
  return out;
}

// Decoupled weight decay: w -= lr * (m_hat / (sqrt(v_hat) + eps) + wd * w).
template <typename T>
class AdamW {
 public:
  explicit AdamW(double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : beta1_(beta1), beta2_(beta2), eps_(eps) {}

  size_t step_count() const { return t_; }

  void step(std::span<autodiff::Param<T>* const> params, double lr, double weight_decay) {
    if (m_.empty()) {
      for (autodiff::Param<T>* p : params) {
        m_.emplace_back(p->value.rows(), p->value.cols());
        v_.emplace_back(p->value.rows(), p->value.cols());
      }
    }
    if (m_.size() != params.size()) throw Error("AdamW: parameter list changed");
    ++t_;
    double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (size_t pi = 0; pi < params.size(); ++pi) {
      autodiff::Param<T>& p = *params[pi];
      if (!p.value.same_shape(m_[pi])) throw Error("AdamW: shape changed for " + p.name);
      for (size_t k = 0; k < p.value.size(); ++k) {
        double g = static_cast<double>(p.grad[k]);
        double m = beta1_ * static_cast<double>(m_[pi][k]) + (1.0 - beta1_) * g;
        double v = beta2_ * static_cast<double>(v_[pi][k]) + (1.0 - beta2_) * g * g;
        m_[pi][k] = static_cast<T>(m);
        v_[pi][k] = static_cast<T>(v);
        double m_hat = m / bc1;
        double v_hat = v / bc2;
        double w = static_cast<double>(p.value[k]);
        w -= lr * (m_hat / (std::sqrt(v_hat) + eps_) + weight_decay * w);
        p.value[k] = static_cast<T>(w);
      }
    }
  }

 private:
  double beta1_, beta2_, eps_;
  size_t t_ = 0;
  std::vector<autodiff::Tensor<T>> m_, v_;
};

// Stops after `patience` consecutive evaluations without improvement.
class EarlyStopper {
 public:
  explicit EarlyStopper(size_t patience) : patience_(patience) {}

  // Returns true when training should stop. `improved()` reports whether the
  // last observation set a new best.
  bool observe(double val_loss) {
    improved_ = val_loss < best_;
    if (improved_) {
      best_ = val_loss;
      bad_ = 0;
      return false;
    }
    return ++bad_ >= patience_;
  }

  bool improved() const { return improved_; }
  double best() const { return best_; }

 private:
  size_t patience_;
  double best_ = std::numeric_limits<double>::infinity();
  size_t bad_ = 0;
  bool improved_ = false;
};

struct EpochLog {
  size_t epoch = 0;
  double lr = 0;
  double train_loss = 0;
  double val_loss = 0;
  std::vector<double> per_level_losses;
  double wall_s = 0;
};

template <typename T>
struct FitResult {
  std::vector<EpochLog> log;
  double best_val_loss = 0;
  size_t epochs_run = 0;
  size_t val_count = 0;
};

// Epoch loop: seeded shuffle, batches, backward, AdamW, step-decayed lr, and
// early stopping on the validation total loss. On return the live params
// hold the best-validation snapshot.
template <typename T>
FitResult<T> fit(std::span<const TrainSample<T>> samples, fusion::FusionParams<T>& fparams,
                 const fusion::FusionConfig& fcfg, geoembed::GeoRepresentation<T>& geo,
                 const TrainConfig& cfg) {
  cfg.validate();
  if (samples.empty()) throw DataError("fit: empty training set");
  for (const TrainSample<T>& s : samples) {
    if (s.level_rows.size() != geo.level_count()) {
      throw DataError("fit: sample " + s.id + " lacks a cell index at every level");
    }
  }

  std::vector<size_t> ids(samples.size());
  for (size_t i = 0; i < ids.size(); ++i) ids[i] = i;
  Rng split_rng(Rng::mix(cfg.seed, 0x76616cULL));
  split_rng.shuffle(ids);
  size_t n_val = 0;
  if (cfg.val_fraction > 0 && samples.size() >= 2) {
    n_val = std::clamp<size_t>(
        static_cast<size_t>(std::llround(cfg.val_fraction * double(samples.size()))), 1,
        samples.size() - 1);
  }
  std::vector<size_t> val_ids(ids.begin(), ids.begin() + n_val);
  std::vector<size_t> train_ids(ids.begin() + n_val, ids.end());
  std::sort(val_ids.begin(), val_ids.end());
  std::sort(train_ids.begin(), train_ids.end());

  std::vector<autodiff::Param<T>*> params = fparams.params();
  for (autodiff::Param<T>* p : geo.params()) params.push_back(p);

  AdamW<T> opt;
  EarlyStopper stopper(cfg.patience);
  FitResult<T> res;
  std::vector<autodiff::Tensor<T>> best;

  auto snapshot = [&]() {
    best.clear();
    for (autodiff::Param<T>* p : params) best.push_back(p->value);
  };
  auto eval_split = [&](std::span<const size_t> split_ids) {
    double loss_sum = 0;
    size_t n = 0;
    for (size_t start = 0; start < split_ids.size(); start += cfg.batch_size) {
      size_t end = std::min(split_ids.size(), start + cfg.batch_size);
      autodiff::Tape<T> t;
      fusion::FusionVars<T> fv = fusion::bind_fusion(t, fparams);
      GeoVars<T> gv = bind_geo(t, geo);
      BatchLoss<T> bl = batch_total_loss<T>(t, samples, split_ids.subspan(start, end - start),
                                            fv, gv, fcfg, cfg);
      loss_sum += static_cast<double>(t.val(bl.total)[0]) * double(end - start);
      n += end - start;
    }
    return n == 0 ? 0.0 : loss_sum / double(n);
  };

  for (size_t epoch = 0; epoch < cfg.epochs_max; ++epoch) {
    auto t0 = std::chrono::steady_clock::now();
    double lr_e = cfg.lr * std::pow(cfg.lr_gamma, static_cast<double>(epoch));
    std::vector<size_t> order = train_ids;
    Rng epoch_rng(Rng::mix(cfg.seed, 1000 + epoch));
    epoch_rng.shuffle(order);

    double train_sum = 0;
    size_t train_n = 0;
    std::vector<double> level_sums(geo.level_count(), 0.0);
    size_t accum = 0;
    for (autodiff::Param<T>* p : params) p->zero_grad();
    for (size_t start = 0; start < order.size(); start += cfg.batch_size) {
      size_t end = std::min(order.size(), start + cfg.batch_size);
      autodiff::Tape<T> t;
      fusion::FusionVars<T> fv = fusion::bind_fusion(t, fparams);
      GeoVars<T> gv = bind_geo(t, geo);
      std::span<const size_t> batch(order.data() + start, end - start);
      BatchLoss<T> bl = batch_total_loss<T>(t, samples, batch, fv, gv, fcfg, cfg);
      double bloss = static_cast<double>(t.val(bl.total)[0]);
      train_sum += bloss * double(batch.size());
      train_n += batch.size();
      for (size_t l = 0; l < level_sums.size(); ++l) {
        level_sums[l] += bl.per_level[l] * double(batch.size());
      }
      t.backward(bl.total);
      if (++accum >= cfg.grad_accum) {
        opt.step(params, lr_e, cfg.weight_decay);
        for (autodiff::Param<T>* p : params) p->zero_grad();
        accum = 0;
      }
    }
    if (accum > 0) {
      opt.step(params, lr_e, cfg.weight_decay);
      for (autodiff::Param<T>* p : params) p->zero_grad();
    }

    double val_loss = val_ids.empty() ? train_sum / std::max<size_t>(train_n, 1)
                                      : eval_split(val_ids);
    ++res.val_count;

    EpochLog el;
    el.epoch = epoch;
    el.lr = lr_e;
    el.train_loss = train_n == 0 ? 0.0 : train_sum / double(train_n);
    el.val_loss = val_loss;
    for (double s : level_sums) el.per_level_losses.push_back(s / std::max<size_t>(train_n, 1));
    el.wall_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    res.log.push_back(el);
    res.epochs_run = epoch + 1;

    bool stop = stopper.observe(val_loss);
    if (stopper.improved()) snapshot();
    if (stop) break;
  }

  if (!best.empty()) {
    for (size_t pi = 0; pi < params.size(); ++pi) params[pi]->value = best[pi];
  }
  res.best_val_loss = stopper.best();
  return res;
}

}  // namespace geosurge::trainer
