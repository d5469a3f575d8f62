#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "geosurge/autodiff.hpp"
#include "geosurge/error.hpp"
#include "geosurge/rng.hpp"

namespace geosurge::fusion {

inline constexpr size_t kPatch = 14;
inline constexpr size_t kPatchArea = kPatch * kPatch;

// Per-pixel semantic class ids. Dimensions must be multiples of the patch
// size; ids must stay below the configured class count.
struct SegMap {
  size_t h = 0, w = 0;
  std::vector<uint8_t> classes;

  uint8_t at(size_t y, size_t x) const { return classes[y * w + x]; }
  uint8_t& at(size_t y, size_t x) { return classes[y * w + x]; }
};

enum class Activation { kGelu, kRelu };

struct FusionConfig {
  bool enabled = true;
  size_t d_s = 128;        // semantic token width; the stream stays this wide
  size_t d_kv = 1024;      // ingested RGB token width
  size_t latent_dim = 64;  // kv compression width
  size_t heads = 8;
  size_t blocks = 3;
  size_t mlp_hidden = 1024;
  size_t out_dim = 768;
  size_t num_classes = 150;
  size_t seg_h = 336, seg_w = 336;
  Activation activation = Activation::kGelu;
  bool rgb_encoder_block = false;

  size_t head_dim() const { return d_s / heads; }
  size_t rgb_head_dim() const { return d_kv / heads; }
  size_t n_patches() const { return (seg_h / kPatch) * (seg_w / kPatch); }
  size_t n_tokens() const { return n_patches() + 1; }

  void validate() const {
    if (d_s == 0 || d_kv == 0 || latent_dim == 0 || out_dim == 0 || heads == 0 ||
        mlp_hidden == 0 || num_classes == 0) {
      throw ConfigError("fusion: all dimensions must be positive");
    }
    if (blocks < 1 || blocks > 4) throw ConfigError("fusion: blocks must be in 1..4");
    if (d_s % heads != 0) throw ConfigError("fusion: d_s must be divisible by heads");
    if (rgb_encoder_block && d_kv % heads != 0) {
      throw ConfigError("fusion: d_kv must be divisible by heads for the rgb block");
    }
    if (seg_h % kPatch != 0 || seg_w % kPatch != 0) {
      throw ConfigError("fusion: seg dimensions must be multiples of " + std::to_string(kPatch));
    }
    if (num_classes > 256) throw ConfigError("fusion: at most 256 classes");
  }
};

template <typename T>
using Param = autodiff::Param<T>;
template <typename T>
using Tensor = autodiff::Tensor<T>;
using autodiff::Var;

template <typename T>
struct FusionParams {
  struct Head {
    Param<T> wq, wk, wv, wo;
  };
  // Self-attention over the stream lets the CLS row aggregate patch content;
  // without it no segmentation information could ever reach the fused CLS.
  struct Block {
    Param<T> ln_self_scale, ln_self_shift;
    std::vector<Head> self_heads;
    Param<T> ln1_scale, ln1_shift;
    Param<T> ln_kv_scale, ln_kv_shift;
    Param<T> w_down;
    std::vector<Head> heads;
    Param<T> ln2_scale, ln2_shift;
    Param<T> mlp_w1, mlp_b1, mlp_w2, mlp_b2;
  };
  struct RgbHead {
    Param<T> wq, wk, wv, wo;
  };
  struct RgbBlock {
    Param<T> ln1_scale, ln1_shift;
    std::vector<RgbHead> heads;
    Param<T> ln2_scale, ln2_shift;
    Param<T> mlp_w1, mlp_b1, mlp_w2, mlp_b2;
  };

  // Enabled path: the patch table realizes the linear projection of a
  // one-hot-encoded patch as a (position-in-patch, class) -> vector lookup.
  Param<T> patch_table;  // [196 * num_classes, d_s]
  Param<T> cls_token;    // [1, d_s]
  Param<T> pos_embed;    // [n_tokens, d_s]
  std::vector<Block> blocks;
  Param<T> final_ln_scale, final_ln_shift;
  Param<T> final_proj;  // [d_s, out_dim]
  std::optional<RgbBlock> rgb_block;

  // Disabled path: mean RGB token through a single projection.
  std::optional<Param<T>> feature_probe;  // [d_kv, out_dim]

  std::vector<Param<T>*> params() {
    std::vector<Param<T>*> out;
    auto push = [&out](Param<T>& p) { out.push_back(&p); };
    if (feature_probe) {
      push(*feature_probe);
      return out;
    }
    push(patch_table);
    push(cls_token);
    push(pos_embed);
    for (Block& b : blocks) {
      push(b.ln_self_scale);
      push(b.ln_self_shift);
      for (Head& h : b.self_heads) {
        push(h.wq);
        push(h.wk);
        push(h.wv);
        push(h.wo);
      }
      push(b.ln1_scale);
      push(b.ln1_shift);
      push(b.ln_kv_scale);
      push(b.ln_kv_shift);
      push(b.w_down);
      for (Head& h : b.heads) {
        push(h.wq);
        push(h.wk);
        push(h.wv);
        push(h.wo);
      }
      push(b.ln2_scale);
      push(b.ln2_shift);
      push(b.mlp_w1);
      push(b.mlp_b1);
      push(b.mlp_w2);
      push(b.mlp_b2);
    }
    push(final_ln_scale);
    push(final_ln_shift);
    push(final_proj);
    if (rgb_block) {
      push(rgb_block->ln1_scale);
      push(rgb_block->ln1_shift);
      for (RgbHead& h : rgb_block->heads) {
        push(h.wq);
        push(h.wk);
        push(h.wv);
        push(h.wo);
      }
      push(rgb_block->ln2_scale);
      push(rgb_block->ln2_shift);
      push(rgb_block->mlp_w1);
      push(rgb_block->mlp_b1);
      push(rgb_block->mlp_w2);
      push(rgb_block->mlp_b2);
    }
    return out;
  }

  size_t parameter_count() {
    size_t n = 0;
    for (Param<T>* p : params()) n += p->value.size();
    return n;
  }
};

namespace detail {

template <typename T>
Tensor<T> gaussian(Rng& rng, size_t rows, size_t cols, double sigma) {
  Tensor<T> t(rows, cols);
  for (size_t k = 0; k < t.size(); ++k) t[k] = static_cast<T>(rng.normal() * sigma);
  return t;
}

template <typename T>
Param<T> proj(Rng& rng, const std::string& name, size_t rows, size_t cols) {
  return Param<T>(name, gaussian<T>(rng, rows, cols, 1.0 / std::sqrt(static_cast<double>(rows))));
}

template <typename T>
Param<T> ones_param(const std::string& name, size_t cols) {
  return Param<T>(name, Tensor<T>::full(1, cols, T{1}));
}

template <typename T>
Param<T> zeros_param(const std::string& name, size_t rows, size_t cols) {
  return Param<T>(name, Tensor<T>(rows, cols));
}

}  // namespace detail

// Deterministic per seed; all projections N(0, 1/fan_in), positional
// embeddings and CLS N(0, 0.02^2), layer norms identity, biases zero.
template <typename T>
FusionParams<T> init_fusion(const FusionConfig& cfg, uint64_t seed) {
  cfg.validate();
  using namespace detail;
  Rng rng(Rng::mix(seed, 0x6675736eULL));  // module-specific stream
  FusionParams<T> P;
  if (!cfg.enabled) {
    P.feature_probe = proj<T>(rng, "fusion/feature_probe", cfg.d_kv, cfg.out_dim);
    return P;
  }
  P.patch_table = Param<T>("fusion/patch_table",
                           gaussian<T>(rng, kPatchArea * cfg.num_classes, cfg.d_s,
                                       1.0 / std::sqrt(static_cast<double>(kPatchArea))));
  P.cls_token = Param<T>("fusion/cls_token", gaussian<T>(rng, 1, cfg.d_s, 0.02));
  P.pos_embed = Param<T>("fusion/pos_embed", gaussian<T>(rng, cfg.n_tokens(), cfg.d_s, 0.02));
  for (size_t b = 0; b < cfg.blocks; ++b) {
    std::string pre = "fusion/block_" + std::to_string(b) + "/";
    typename FusionParams<T>::Block blk;
    blk.ln_self_scale = ones_param<T>(pre + "ln_self_scale", cfg.d_s);
    blk.ln_self_shift = zeros_param<T>(pre + "ln_self_shift", 1, cfg.d_s);
    for (size_t h = 0; h < cfg.heads; ++h) {
      std::string hp = pre + "self_head_" + std::to_string(h) + "/";
      typename FusionParams<T>::Head head;
      head.wq = proj<T>(rng, hp + "wq", cfg.d_s, cfg.head_dim());
      head.wk = proj<T>(rng, hp + "wk", cfg.d_s, cfg.head_dim());
      head.wv = proj<T>(rng, hp + "wv", cfg.d_s, cfg.head_dim());
      head.wo = proj<T>(rng, hp + "wo", cfg.head_dim(), cfg.d_s);
      blk.self_heads.push_back(std::move(head));
    }
    blk.ln1_scale = ones_param<T>(pre + "ln1_scale", cfg.d_s);
    blk.ln1_shift = zeros_param<T>(pre + "ln1_shift", 1, cfg.d_s);
    blk.ln_kv_scale = ones_param<T>(pre + "ln_kv_scale", cfg.d_kv);
    blk.ln_kv_shift = zeros_param<T>(pre + "ln_kv_shift", 1, cfg.d_kv);
    blk.w_down = proj<T>(rng, pre + "kv_down", cfg.d_kv, cfg.latent_dim);
    for (size_t h = 0; h < cfg.heads; ++h) {
      std::string hp = pre + "head_" + std::to_string(h) + "/";
      typename FusionParams<T>::Head head;
      head.wq = proj<T>(rng, hp + "wq", cfg.d_s, cfg.head_dim());
      head.wk = proj<T>(rng, hp + "wk", cfg.latent_dim, cfg.head_dim());
      head.wv = proj<T>(rng, hp + "wv", cfg.latent_dim, cfg.head_dim());
      head.wo = proj<T>(rng, hp + "wo", cfg.head_dim(), cfg.d_s);
      blk.heads.push_back(std::move(head));
    }
    blk.ln2_scale = ones_param<T>(pre + "ln2_scale", cfg.d_s);
    blk.ln2_shift = zeros_param<T>(pre + "ln2_shift", 1, cfg.d_s);
    blk.mlp_w1 = proj<T>(rng, pre + "mlp_w1", cfg.d_s, cfg.mlp_hidden);
    blk.mlp_b1 = zeros_param<T>(pre + "mlp_b1", 1, cfg.mlp_hidden);
    blk.mlp_w2 = proj<T>(rng, pre + "mlp_w2", cfg.mlp_hidden, cfg.d_s);
    blk.mlp_b2 = zeros_param<T>(pre + "mlp_b2", 1, cfg.d_s);
    P.blocks.push_back(std::move(blk));
  }
  P.final_ln_scale = ones_param<T>("fusion/final_ln_scale", cfg.d_s);
  P.final_ln_shift = zeros_param<T>("fusion/final_ln_shift", 1, cfg.d_s);
  P.final_proj = proj<T>(rng, "fusion/final_proj", cfg.d_s, cfg.out_dim);
  if (cfg.rgb_encoder_block) {
    std::string pre = "fusion/rgb_block/";
    typename FusionParams<T>::RgbBlock blk;
    blk.ln1_scale = ones_param<T>(pre + "ln1_scale", cfg.d_kv);
    blk.ln1_shift = zeros_param<T>(pre + "ln1_shift", 1, cfg.d_kv);
    for (size_t h = 0; h < cfg.heads; ++h) {
      std::string hp = pre + "head_" + std::to_string(h) + "/";
      typename FusionParams<T>::RgbHead head;
      head.wq = proj<T>(rng, hp + "wq", cfg.d_kv, cfg.rgb_head_dim());
      head.wk = proj<T>(rng, hp + "wk", cfg.d_kv, cfg.rgb_head_dim());
      head.wv = proj<T>(rng, hp + "wv", cfg.d_kv, cfg.rgb_head_dim());
      head.wo = proj<T>(rng, hp + "wo", cfg.rgb_head_dim(), cfg.d_kv);
      blk.heads.push_back(std::move(head));
    }
    blk.ln2_scale = ones_param<T>(pre + "ln2_scale", cfg.d_kv);
    blk.ln2_shift = zeros_param<T>(pre + "ln2_shift", 1, cfg.d_kv);
    blk.mlp_w1 = proj<T>(rng, pre + "mlp_w1", cfg.d_kv, 4 * cfg.d_kv);
    blk.mlp_b1 = zeros_param<T>(pre + "mlp_b1", 1, 4 * cfg.d_kv);
    blk.mlp_w2 = proj<T>(rng, pre + "mlp_w2", 4 * cfg.d_kv, cfg.d_kv);
    blk.mlp_b2 = zeros_param<T>(pre + "mlp_b2", 1, cfg.d_kv);
    P.rgb_block = std::move(blk);
  }
  return P;
}

// Tape-bound parameter handles; bind once per tape so shared weights appear
// as a single node even when a batch fuses many samples.
template <typename T>
struct FusionVars {
  struct Head {
    Var wq, wk, wv, wo;
  };
  struct Block {
    Var ln_self_scale, ln_self_shift;
    std::vector<Head> self_heads;
    Var ln1_scale, ln1_shift, ln_kv_scale, ln_kv_shift, w_down;
    std::vector<Head> heads;
    Var ln2_scale, ln2_shift, mlp_w1, mlp_b1, mlp_w2, mlp_b2;
  };
  Var patch_table, cls_token, pos_embed;
  std::vector<Block> blocks;
  Var final_ln_scale, final_ln_shift, final_proj;
  std::optional<Block> rgb_block;
  std::optional<Var> feature_probe;
};

template <typename T>
FusionVars<T> bind_fusion(autodiff::Tape<T>& t, FusionParams<T>& P) {
  FusionVars<T> v;
  if (P.feature_probe) {
    v.feature_probe = t.param(*P.feature_probe);
    return v;
  }
  v.patch_table = t.param(P.patch_table);
  v.cls_token = t.param(P.cls_token);
  v.pos_embed = t.param(P.pos_embed);
  auto bind_block = [&t](auto& blk) {
    typename FusionVars<T>::Block bv;
    bv.ln1_scale = t.param(blk.ln1_scale);
    bv.ln1_shift = t.param(blk.ln1_shift);
    for (auto& h : blk.heads) {
      bv.heads.push_back({t.param(h.wq), t.param(h.wk), t.param(h.wv), t.param(h.wo)});
    }
    bv.ln2_scale = t.param(blk.ln2_scale);
    bv.ln2_shift = t.param(blk.ln2_shift);
    bv.mlp_w1 = t.param(blk.mlp_w1);
    bv.mlp_b1 = t.param(blk.mlp_b1);
    bv.mlp_w2 = t.param(blk.mlp_w2);
    bv.mlp_b2 = t.param(blk.mlp_b2);
    return bv;
  };
  for (auto& blk : P.blocks) {
    typename FusionVars<T>::Block bv = bind_block(blk);
    bv.ln_self_scale = t.param(blk.ln_self_scale);
    bv.ln_self_shift = t.param(blk.ln_self_shift);
    for (auto& h : blk.self_heads) {
      bv.self_heads.push_back({t.param(h.wq), t.param(h.wk), t.param(h.wv), t.param(h.wo)});
    }
    bv.ln_kv_scale = t.param(blk.ln_kv_scale);
    bv.ln_kv_shift = t.param(blk.ln_kv_shift);
    bv.w_down = t.param(blk.w_down);
    v.blocks.push_back(std::move(bv));
  }
  v.final_ln_scale = t.param(P.final_ln_scale);
  v.final_ln_shift = t.param(P.final_ln_shift);
  v.final_proj = t.param(P.final_proj);
  if (P.rgb_block) v.rgb_block = bind_block(*P.rgb_block);
  return v;
}

// Patch tokens + CLS + positional embeddings; (n_patches + 1) x d_s.
template <typename T>
Var tokenize_segmap(autodiff::Tape<T>& t, const SegMap& m, const FusionVars<T>& v,
                    const FusionConfig& cfg) {
  if (m.h % kPatch != 0 || m.w % kPatch != 0 || m.h == 0 || m.w == 0) {
    throw DataError("tokenize_segmap: map " + std::to_string(m.h) + "x" +
                    std::to_string(m.w) + " not divisible by patch size");
  }
  size_t ph = m.h / kPatch, pw = m.w / kPatch;
  if (ph * pw + 1 != t.val(v.pos_embed).rows()) {
    throw DataError("tokenize_segmap: map yields " + std::to_string(ph * pw + 1) +
                    " tokens but positional table has " +
                    std::to_string(t.val(v.pos_embed).rows()));
  }
  std::vector<size_t> idx;
  idx.reserve(ph * pw * kPatchArea);
  for (size_t pr = 0; pr < ph; ++pr) {
    for (size_t pc = 0; pc < pw; ++pc) {
      for (size_t dy = 0; dy < kPatch; ++dy) {
        for (size_t dx = 0; dx < kPatch; ++dx) {
          size_t cls = m.at(pr * kPatch + dy, pc * kPatch + dx);
          if (cls >= cfg.num_classes) {
            throw DataError("tokenize_segmap: class id " + std::to_string(cls) +
                            " out of range (num_classes=" + std::to_string(cfg.num_classes) + ")");
          }
          idx.push_back((dy * kPatch + dx) * cfg.num_classes + cls);
        }
      }
    }
  }
  Var patch_tokens = t.sum_row_blocks(t.gather_rows(v.patch_table, std::move(idx)), kPatchArea);
  Var tokens = t.concat_rows({v.cls_token, patch_tokens});
  return t.add(tokens, v.pos_embed);
}

// Queries attend to kv compressed through the low-dimensional latent; keys
// and values are up-projected per head from the shared latent.
template <typename T>
Var latent_cross_attention(autodiff::Tape<T>& t, Var queries, Var kv,
                           const typename FusionVars<T>::Block& blk, const FusionConfig& cfg) {
  // Pre-norm applies to the kv side as well; ingested token scales vary.
  Var latent = t.matmul(t.layer_norm(kv, blk.ln_kv_scale, blk.ln_kv_shift), blk.w_down);
  T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(cfg.head_dim())));
  Var out{-1};
  for (const auto& h : blk.heads) {
    Var q = t.matmul(queries, h.wq);
    Var k = t.matmul(latent, h.wk);
    Var val = t.matmul(latent, h.wv);
    Var attn = t.softmax_rows(t.scale(t.matmul(q, t.transpose(k)), scale));
    Var head_out = t.matmul(t.matmul(attn, val), h.wo);
    out = out.id < 0 ? head_out : t.add(out, head_out);
  }
  return out;
}

template <typename T>
Var mlp_forward(autodiff::Tape<T>& t, Var x, const typename FusionVars<T>::Block& blk,
                const FusionConfig& cfg) {
  Var h = t.add_rowvec(t.matmul(x, blk.mlp_w1), blk.mlp_b1);
  h = cfg.activation == Activation::kGelu ? t.gelu(h) : t.relu(h);
  return t.add_rowvec(t.matmul(h, blk.mlp_w2), blk.mlp_b2);
}

template <typename T>
Var multi_head_self_attention(autodiff::Tape<T>& t, Var x_normed,
                              std::span<const typename FusionVars<T>::Head> heads,
                              size_t head_dim) {
  T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(head_dim)));
  Var out{-1};
  for (const auto& h : heads) {
    Var q = t.matmul(x_normed, h.wq);
    Var k = t.matmul(x_normed, h.wk);
    Var v = t.matmul(x_normed, h.wv);
    Var a = t.softmax_rows(t.scale(t.matmul(q, t.transpose(k)), scale));
    Var head_out = t.matmul(t.matmul(a, v), h.wo);
    out = out.id < 0 ? head_out : t.add(out, head_out);
  }
  return out;
}

// Pre-norm residual block: self-attention over the stream (the CLS row
// gathers segmentation content here), latent cross-attention to the RGB
// tokens, then the MLP.
template <typename T>
Var fusion_block(autodiff::Tape<T>& t, Var stream, Var kv,
                 const typename FusionVars<T>::Block& blk, const FusionConfig& cfg) {
  Var normed0 = t.layer_norm(stream, blk.ln_self_scale, blk.ln_self_shift);
  Var s0 = t.add(stream,
                 multi_head_self_attention<T>(t, normed0, blk.self_heads, cfg.head_dim()));
  Var normed = t.layer_norm(s0, blk.ln1_scale, blk.ln1_shift);
  Var s1 = t.add(s0, latent_cross_attention(t, normed, kv, blk, cfg));
  Var normed2 = t.layer_norm(s1, blk.ln2_scale, blk.ln2_shift);
  return t.add(s1, mlp_forward(t, normed2, blk, cfg));
}

// Standard pre-norm self-attention transformer block over the RGB tokens;
// stands in for the single unfrozen backbone block. Off by default.
template <typename T>
Var rgb_encoder_block(autodiff::Tape<T>& t, Var rgb, const typename FusionVars<T>::Block& blk,
                      const FusionConfig& cfg) {
  Var q = t.layer_norm(rgb, blk.ln1_scale, blk.ln1_shift);
  Var s1 = t.add(rgb, multi_head_self_attention<T>(t, q, blk.heads, cfg.rgb_head_dim()));
  Var normed2 = t.layer_norm(s1, blk.ln2_scale, blk.ln2_shift);
  return t.add(s1, mlp_forward(t, normed2, blk, cfg));
}

// Full module: tokenize, fuse through the blocks, take the fused CLS row,
// layer norm, project, normalize. Returns a 1 x out_dim unit row.
template <typename T>
Var fuse(autodiff::Tape<T>& t, const Tensor<T>& rgb, const SegMap& seg, const FusionVars<T>& v,
         const FusionConfig& cfg) {
  if (rgb.rows() < 2) throw DataError("fuse: rgb tokens need at least 2 rows");
  if (rgb.cols() != cfg.d_kv) {
    throw DataError("fuse: rgb token width " + std::to_string(rgb.cols()) +
                    " does not match configured d_kv " + std::to_string(cfg.d_kv));
  }
  Var kv = t.leaf(rgb);
  if (v.rgb_block) kv = rgb_encoder_block(t, kv, *v.rgb_block, cfg);
  Var stream = tokenize_segmap(t, seg, v, cfg);
  for (const auto& blk : v.blocks) stream = fusion_block(t, stream, kv, blk, cfg);
  Var cls = t.slice_rows(stream, 0, 1);
  Var normed = t.layer_norm(cls, v.final_ln_scale, v.final_ln_shift);
  return t.l2_normalize_rows(t.matmul(normed, v.final_proj));
}

// Visual feature with fusion disabled: mean RGB token through one projection.
template <typename T>
Var feature_probe_forward(autodiff::Tape<T>& t, const Tensor<T>& rgb, const FusionVars<T>& v) {
  Var kv = t.leaf(rgb);
  Tensor<T> ones(1, rgb.rows());
  ones.fill(T{1} / static_cast<T>(rgb.rows()));
  Var mean = t.matmul(t.leaf(std::move(ones)), kv);
  return t.l2_normalize_rows(t.matmul(mean, *v.feature_probe));
}

// One sample's visual representation, dispatching on the configured path.
template <typename T>
Var visual_feature(autodiff::Tape<T>& t, const Tensor<T>& rgb, const SegMap& seg,
                   const FusionVars<T>& v, const FusionConfig& cfg) {
  if (v.feature_probe) return feature_probe_forward(t, rgb, v);
  return fuse(t, rgb, seg, v, cfg);
}

}  // namespace geosurge::fusion
